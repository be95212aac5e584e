# trainer/probe.py
"""
姿态探针（阶段二）：冻结主干，只训练 Φ

- mlp   ：两个隐层 + dropout，回归骨盆为原点的关键点
- linear：单个线性层，回归图像坐标下的 2D 关键点，用 %-MSE 评估
特征在 no_grad 下一次性提取为 numpy 数组，主干参数不进入探针的优化器。
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from codec.checkpoint import save_checkpoint
from config import PELVIS_INDEX
from diffcore.layers import Linear, Module
from diffcore.rng import Rng
from diffcore.tensor import Tensor, dropout, no_grad, relu
from evalkit.metrics import mpjpe, mse_2d_percent, n_mpjpe
from losses.objectives import pose_loss
from schemas import ProbeConfig
from trainer.optimizer import Adam
from trainer.pipeline import PoseAutoencoder

STREAM_PROBE = 31
STD_FLOOR = 1e-12


class ProbeMLP(Module):
    def __init__(self, in_dim: int, out_dim: int, cfg: ProbeConfig, rng: Rng):
        self.kind = cfg.kind
        self.p = cfg.dropout
        if cfg.kind == "linear":
            self.layers = [Linear(in_dim, out_dim, rng.substream(0))]
        else:
            self.layers = [
                Linear(in_dim, cfg.hidden, rng.substream(0)),
                Linear(cfg.hidden, cfg.hidden, rng.substream(1)),
                Linear(cfg.hidden, out_dim, rng.substream(2)),
            ]

    def __call__(self, x: Tensor, rng: Optional[Rng] = None) -> Tensor:
        """rng 为空时关闭 dropout"""
        for i, layer in enumerate(self.layers[:-1]):
            x = relu(layer(x))
            x = dropout(x, self.p, rng.substream(i) if rng is not None else None, training=rng is not None)
        return self.layers[-1](x)


@dataclass
class ProbeData:
    features: np.ndarray          # N×d
    targets: np.ndarray           # N×(2K)
    keypoints: np.ndarray         # N×K×2，图像坐标
    centered: np.ndarray          # N×K×2，骨盆为原点


def collect_probe_data(model: PoseAutoencoder, clips: Sequence, which: str = "auto",
                       kind: str = "mlp") -> ProbeData:
    feats, kps, cents = [], [], []
    for clip in clips:
        feats.append(model.extract(clip.frames, which))
        kps.append(clip.keypoints)
        cents.append(clip.keypoints_centered)
    keypoints = np.concatenate(kps, axis=0)
    centered = np.concatenate(cents, axis=0)
    source = keypoints if kind == "linear" else centered
    return ProbeData(features=np.concatenate(feats, axis=0), targets=source.reshape(source.shape[0], -1),
                     keypoints=keypoints, centered=centered)


@dataclass
class ProbeResult:
    fraction: float
    seed: int
    which: str
    kind: str
    train_samples: int
    n_mpjpe: float
    mpjpe: float
    mse_percent: float
    losses: List[float] = field(default_factory=list)
    predictions: Optional[np.ndarray] = None

    def row(self) -> Dict:
        return {"fraction": self.fraction, "seed": self.seed, "which": self.which, "kind": self.kind,
                "train_samples": self.train_samples, "n_mpjpe": self.n_mpjpe, "mpjpe": self.mpjpe,
                "mse_percent": self.mse_percent}


class PoseProbe:
    """特征标准化 + Φ；常数维度（标准差为 0）直接输出其均值"""

    def __init__(self, in_dim: int, out_dim: int, cfg: ProbeConfig, seed: int):
        self.cfg = cfg
        self.net = ProbeMLP(in_dim, out_dim, cfg, Rng(seed, (STREAM_PROBE, 0)))
        self.x_mean = np.zeros(in_dim)
        self.x_scale = np.ones(in_dim)
        self.y_mean = np.zeros(out_dim)
        self.y_scale = np.ones(out_dim)

    def fit(self, x: np.ndarray, y: np.ndarray, seed: int) -> List[float]:
        self.x_mean = x.mean(axis=0)
        x_std = x.std(axis=0)
        self.x_scale = np.where(x_std > STD_FLOOR, x_std, 1.0)
        self.y_mean = y.mean(axis=0)
        y_std = y.std(axis=0)
        self.y_scale = np.where(y_std > STD_FLOOR, y_std, 0.0)
        xn = (x - self.x_mean) / self.x_scale
        yn = (y - self.y_mean) / np.where(self.y_scale > 0, self.y_scale, 1.0)

        opt = Adam(self.net.named_parameters(), self.cfg.learning_rate)
        n = x.shape[0]
        losses = []
        for epoch in range(self.cfg.epochs):
            rng = Rng(seed, (STREAM_PROBE, 1, epoch))
            order = rng.permutation(n)
            epoch_loss = 0.0
            for b, start in enumerate(range(0, n, self.cfg.batch_size)):
                idx = order[start:start + self.cfg.batch_size]
                pred = self.net(Tensor(xn[idx]), rng.substream(b))
                loss = pose_loss(pred, Tensor(yn[idx]))
                opt.zero_grad()
                loss.backward()
                opt.step()
                epoch_loss += loss.item() * len(idx)
            losses.append(epoch_loss / n)
        return losses

    def predict(self, x: np.ndarray) -> np.ndarray:
        with no_grad():
            out = self.net(Tensor((x - self.x_mean) / self.x_scale)).data
        return self.y_mean + out * self.y_scale

    def arrays(self) -> List[Tuple[str, np.ndarray]]:
        stats = [("stats.x_mean", self.x_mean), ("stats.x_scale", self.x_scale),
                 ("stats.y_mean", self.y_mean), ("stats.y_scale", self.y_scale)]
        return [(f"probe.{name}", p.data) for name, p in self.net.named_parameters()] + stats


def labeled_subset(n: int, fraction: float, seed: int) -> np.ndarray:
    """按种子打乱后取前 ⌊fraction·n⌋ 个；同一种子下小比例子集包含于大比例子集"""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"标注比例必须在 (0, 1] 内，当前 {fraction}")
    count = int(np.floor(fraction * n + 1e-9))
    if count < 1:
        raise ValueError(f"标注比例 {fraction} 在 {n} 个训练样本中不足 1 个样本")
    order = Rng(seed, (STREAM_PROBE, 2)).permutation(n)
    return np.sort(order[:count])


def train_probe(model: PoseAutoencoder, train_clips: Sequence, test_clips: Sequence, cfg: ProbeConfig,
                fraction: float, seed: int, which: str = "auto", out_path: Optional[str] = None,
                train_data: Optional[ProbeData] = None, test_data: Optional[ProbeData] = None) -> ProbeResult:
    """
    冻结 model，在 fraction 比例的训练帧上拟合探针，并在测试片段上报告 N-MPJPE / MPJPE / %-MSE
    train_data / test_data 可以传入已提取的特征以便在多个比例之间复用
    """
    model.freeze()
    if train_data is None:
        train_data = collect_probe_data(model, train_clips, which, cfg.kind)
    if test_data is None:
        test_data = collect_probe_data(model, test_clips, which, cfg.kind)
    subset = labeled_subset(train_data.features.shape[0], fraction, seed)
    probe = PoseProbe(train_data.features.shape[1], train_data.targets.shape[1], cfg, seed)
    losses = probe.fit(train_data.features[subset], train_data.targets[subset], seed)

    pred = probe.predict(test_data.features).reshape(test_data.keypoints.shape)
    if cfg.kind == "linear":
        pelvis = pred[:, PELVIS_INDEX:PELVIS_INDEX + 1, :]
        pred_centered = pred - pelvis
        image_size = float(model.frame_hw[1])
        mse = mse_2d_percent(pred, test_data.keypoints, image_size)
    else:
        pred_centered = pred
        mse = float("nan")
    result = ProbeResult(
        fraction=fraction, seed=seed, which=which, kind=cfg.kind, train_samples=int(len(subset)),
        n_mpjpe=n_mpjpe(pred_centered, test_data.centered), mpjpe=mpjpe(pred_centered, test_data.centered),
        mse_percent=mse, losses=losses, predictions=pred,
    )
    if out_path:
        save_checkpoint(out_path, probe.arrays(), {
            "kind": "probe", "probe": cfg.model_dump(mode="json"), "fraction": fraction, "seed": seed,
            "which": which, "metrics": result.row(),
        })
    print(f"📏 探针 [{which}/{cfg.kind}] fraction={fraction} seed={seed} "
          f"N-MPJPE={result.n_mpjpe:.3f} MPJPE={result.mpjpe:.3f}")
    return result
