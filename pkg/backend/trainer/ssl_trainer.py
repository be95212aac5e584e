# trainer/ssl_trainer.py
"""
自监督训练（阶段一）

每一步：采样一批四元组 → 前向管线 → 重建 + 对比 + 框先验 (+ 跟踪) → 一次 Adam 更新
- 每步的随机数来自 Rng(seed, (STREAM_STEP, step))，恢复训练不需要保存随机状态
- 每 eval_every 步在验证集上评估一次，连续 patience 次没有改善就早停
- checkpoint.ckpt 是最后一步（含优化器状态，可续训）；best.ckpt 是验证损失最低时的权重
- 损失出现 NaN 时抛出 TrainingDivergedError（带步数与各分量）
"""

import csv
import json
import os
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from codec.checkpoint import load_checkpoint, save_checkpoint
from diffcore.rng import Rng
from diffcore.tensor import Tensor, no_grad, take
from errors import TrainingDivergedError
from losses.objectives import (css_loss, dsl_quadruple_loss, reconstruction_loss, total_loss, track_loss,
                               triplet_loss)
from losses.perceptual import PerceptualPyramid
from sampling.sampler import QuadrupleSample, sample_batch, sample_equidistant
from schemas import ExperimentConfig
from stn.attention import box_prior_loss
from synth.dataset import SyntheticDataset
from trainer.optimizer import Adam
from trainer.pipeline import PoseAutoencoder, box_track_inputs, build_model, trajectory_residual

STREAM_STEP = 21
STREAM_VAL = 22
STREAM_LOCALIZE = 23
VAL_QUADRUPLES = 8
LOCALIZE_SAMPLES = 32
METRIC_FIELDS = ["step", "stage", "total", "reconst", "contrastive", "track", "prior", "val_reconst", "wall_time"]


@dataclass
class TrainResult:
    checkpoint: str
    steps: int
    best_checkpoint: str = ""
    best_step: int = -1
    history: List[Dict] = field(default_factory=list)
    initial_val: float = float("nan")
    best_val: float = float("nan")
    stopped_early: bool = False
    localization: Dict = field(default_factory=dict)


class SSLTrainer:
    def __init__(self, cfg: ExperimentConfig, dataset: SyntheticDataset, out_dir: str):
        self.cfg = cfg
        self.dataset = dataset
        self.out_dir = out_dir
        self.variant = cfg.train.resolved()
        self.model: PoseAutoencoder = build_model(cfg)
        self.optimizer = Adam(self.model.named_parameters(), cfg.train.learning_rate)
        self.pyramid = None
        if self.variant.decode and cfg.losses.rho_perceptual > 0:
            self.pyramid = PerceptualPyramid(cfg.model.perceptual_channels, cfg.model.perceptual_seed)
        self.sampling_mode = "dsl" if self.variant.contrastive in ("dsl", "none") else "css"
        self.step = 0
        self.best_val = float("inf")
        self.best_step = -1
        self.initial_val = float("nan")
        self.bad_evals = 0
        self.best_path = os.path.join(out_dir, "best.ckpt")
        self.started = time.time()

    # ---------- 阶段调度 ---------- #
    def stage_of(self, step: int) -> str:
        if self.cfg.train.gravity_schedule == "off":
            return "ssl"
        return "gravity-1" if step < self.cfg.train.gravity_stage1_steps else "gravity-2"

    def stage_weights(self, stage: str):
        """返回本阶段的 (alpha, gamma)；第一阶段只做定位，第二阶段去掉跟踪损失"""
        w = self.cfg.losses
        alpha = w.alpha if self.variant.contrastive != "none" else 0.0
        if stage == "gravity-1":
            return 0.0, w.gamma
        return alpha, 0.0

    # ---------- batch ---------- #
    def _gather(self, clips, quads: List[QuadrupleSample]):
        frames, backgrounds, video_ids = [], [], []
        for q in quads:
            clip = clips[q.clip_index]
            bg = self.dataset.background_for(clip, self.cfg.dataset.background)
            for t in q.indices:
                frames.append(clip.frames[t])
                backgrounds.append(bg)
                video_ids.append(q.clip_index)
        return np.stack(frames), np.stack(backgrounds), video_ids

    def _contrastive(self, rep: Tensor, quads: List[QuadrupleSample]) -> Optional[Tensor]:
        kind = self.variant.contrastive
        if kind == "none":
            return None
        q = len(quads)
        rows = [take(rep, np.arange(q) * 4 + j) for j in range(4)]
        r, n, inter, a = rows
        if kind == "dsl":
            d = np.array([[s.d_n, s.d_in, s.d_a] for s in quads], dtype=np.float64)
            return dsl_quadruple_loss(r, n, inter, a, d[:, 0], d[:, 1], d[:, 2], self.cfg.losses.d_max)
        if kind == "css":
            return css_loss(r, n, [inter, a], self.cfg.losses.temperature)
        # triplet：同一个正样本分别配两个负样本
        beta = self.cfg.losses.beta
        return (triplet_loss(r, n, a, beta) + triplet_loss(r, n, inter, beta)) * 0.5

    def _track(self, rng: Rng) -> Tensor:
        clips = self.dataset.train
        count = self.cfg.train.quadruples_per_batch
        frames = []
        for k in range(count):
            clip = clips[int(rng.integers(0, len(clips)))]
            idx = sample_equidistant(clip, self.cfg.sampler.gravity_spacing, rng.substream(k))
            frames.extend(clip.frames[t] for t in idx)
        boxes = self.model.boxes(Tensor(np.stack(frames)))
        u_y, scales = box_track_inputs(boxes, self.model.frame_hw[0], count)
        return track_loss(u_y, scales, self.cfg.losses.tau_order)

    def compute_losses(self, clips, quads: List[QuadrupleSample], rng: Optional[Rng], stage: str,
                       swap: bool = True) -> Dict[str, Optional[Tensor]]:
        alpha, gamma = self.stage_weights(stage)
        frames, backgrounds, video_ids = self._gather(clips, quads)
        swap = swap and self.cfg.train.swap_ti
        out = self.model.forward(frames, backgrounds, video_ids, rng=rng, swap=swap)
        comps: Dict[str, Optional[Tensor]] = {"reconst": None, "contrastive": None, "track": None, "prior": None}
        if self.variant.decode:
            comps["reconst"] = reconstruction_loss(Tensor(frames), out.recon, self.cfg.losses, self.pyramid)
        if alpha > 0:
            comps["contrastive"] = self._contrastive(out.representation(self.variant.latent_split), quads)
        if self.variant.stn:
            comps["prior"] = box_prior_loss(out.boxes)
        if gamma > 0 and rng is not None:
            comps["track"] = self._track(rng.substream(2))
        return comps

    # ---------- 单步 ---------- #
    def train_step(self) -> Dict:
        step = self.step
        stage = self.stage_of(step)
        rng = Rng(self.cfg.seed, (STREAM_STEP, step))
        quads = sample_batch(self.dataset.train, self.cfg.train.quadruples_per_batch, self.cfg.sampler,
                             rng.substream(0), mode=self.sampling_mode)
        comps = self.compute_losses(self.dataset.train, quads, rng.substream(1), stage)
        alpha, gamma = self.stage_weights(stage)
        total = total_loss(comps, self.cfg.losses, alpha=alpha, gamma=gamma)
        row = {"step": step, "stage": stage, "total": total.item()}
        for name, value in comps.items():
            row[name] = value.item() if value is not None else 0.0
        if not all(np.isfinite(row[k]) for k in ("total", "reconst", "contrastive", "track", "prior")):
            raise TrainingDivergedError(step, {k: row[k] for k in ("total", "reconst", "contrastive", "track", "prior")})
        self.optimizer.zero_grad()
        total.backward()
        self.optimizer.step()
        self.step += 1
        return row

    def validate(self) -> float:
        """验证集上的固定样本：解码模型看重建损失，不解码的模型看对比损失"""
        clips = self.dataset.val
        rng = Rng(self.cfg.seed, (STREAM_VAL, 0))
        quads = sample_batch(clips, VAL_QUADRUPLES, self.cfg.sampler, rng, mode=self.sampling_mode)
        with no_grad():
            comps = self.compute_losses(clips, quads, None, "ssl", swap=False)
        if comps["reconst"] is not None:
            return comps["reconst"].item()
        if comps["contrastive"] is None:
            return 0.0
        return comps["contrastive"].item()

    def localization_residual(self) -> float:
        """框中心在等距四帧上的常加速度残差（下落片段上的定位质量）"""
        return trajectory_residual(self.model, self.dataset.train, self.cfg.sampler.gravity_spacing,
                                   LOCALIZE_SAMPLES, Rng(self.cfg.seed, (STREAM_LOCALIZE, 0)))

    # ---------- 检查点 ---------- #
    def checkpoint_header(self) -> Dict:
        return {
            "kind": "ssl",
            "dims": {"n_tv": self.cfg.model.n_tv, "n_ti": self.cfg.model.n_ti,
                     "crop_size": self.cfg.model.crop_size, "canvas": list(self.cfg.puppet.canvas)},
            "config": self.cfg.model_dump(mode="json"),
            "step": self.step,
            "adam_t": self.optimizer.t,
            "trainer": {"best_val": self.best_val, "best_step": self.best_step, "bad_evals": self.bad_evals,
                        "initial_val": self.initial_val},
        }

    def save(self, path: str):
        arrays = self.model.parameter_arrays() + self.optimizer.state_arrays()
        save_checkpoint(path, arrays, self.checkpoint_header())

    def save_best(self):
        """只存模型权重，供探针与评估加载，不能用来续训"""
        save_checkpoint(self.best_path, self.model.parameter_arrays(), self.checkpoint_header())

    def load_best(self):
        """把模型权重换成 best.ckpt 里的"""
        _, arrays = load_checkpoint(self.best_path)
        self.model.load_arrays(arrays)

    def resume(self, path: str):
        header, arrays = load_checkpoint(path)
        self.model.load_arrays(arrays)
        self.optimizer.load_state(arrays, header["adam_t"])
        self.step = int(header["step"])
        state = header.get("trainer", {})
        self.best_val = float(state.get("best_val", float("inf")))
        self.best_step = int(state.get("best_step", -1))
        self.bad_evals = int(state.get("bad_evals", 0))
        self.initial_val = float(state.get("initial_val", float("nan")))
        print(f"🔁 从 {path} 恢复训练（step={self.step}）")

    # ---------- 主循环 ---------- #
    def _open_metrics(self):
        path = os.path.join(self.out_dir, "metrics.csv")
        fresh = self.step == 0 or not os.path.exists(path)
        f = open(path, "w" if fresh else "a", newline="", encoding="utf-8")
        writer = csv.DictWriter(f, fieldnames=METRIC_FIELDS, lineterminator="\n")
        if fresh:
            writer.writeheader()
        return f, writer

    def fit(self, max_steps: Optional[int] = None) -> TrainResult:
        """训练到 epochs × steps_per_epoch 步（或 max_steps 步后暂停），返回检查点路径与历史"""
        os.makedirs(self.out_dir, exist_ok=True)
        tc = self.cfg.train
        total_steps = tc.epochs * tc.steps_per_epoch
        stop_at = total_steps if max_steps is None else min(total_steps, self.step + max_steps)
        result = TrainResult(checkpoint=os.path.join(self.out_dir, "checkpoint.ckpt"), steps=self.step,
                             best_checkpoint=self.best_path)
        v = self.variant
        print(f"🧩 开始训练 variant={tc.variant} decode={v.decode} stn={v.stn} "
              f"contrastive={v.contrastive} split={v.latent_split} 共 {total_steps} 步")

        if self.step == 0:
            if os.path.exists(self.best_path):
                os.remove(self.best_path)
            self.initial_val = self.validate()
            print(f"   step 0 验证损失: {self.initial_val:.5f}")

        f, writer = self._open_metrics()
        try:
            while self.step < stop_at:
                if tc.gravity_schedule == "two-stage" and self.step == tc.gravity_stage1_steps and self.step > 0:
                    residual = self.localization_residual()
                    result.localization["stage1_end"] = residual
                    print(f"🔀 第一阶段结束（step={self.step}），框中心加速度残差 {residual:.4f}px")
                row = self.train_step()
                row["val_reconst"] = ""
                if self.step % tc.eval_every == 0 or self.step == stop_at:
                    val = self.validate()
                    row["val_reconst"] = val
                    improved = val < self.best_val - 1e-12
                    self.bad_evals = 0 if improved else self.bad_evals + 1
                    if improved:
                        self.best_val, self.best_step = val, self.step
                        self.save_best()
                    print(f"   step {self.step:5d} [{row['stage']}] total={row['total']:.5f} "
                          f"reconst={row['reconst']:.5f} contrastive={row['contrastive']:.5f} "
                          f"track={row['track']:.5f} val={val:.5f}")
                    if self.bad_evals >= tc.patience:
                        print(f"⏹️  验证损失连续 {tc.patience} 次未改善，早停于 step {self.step}")
                        result.stopped_early = True
                row["wall_time"] = round(time.time() - self.started, 3)
                writer.writerow(row)
                result.history.append(row)
                if result.stopped_early:
                    break
        finally:
            f.close()

        if tc.gravity_schedule == "two-stage" and "stage1_end" not in result.localization \
                and self.step <= tc.gravity_stage1_steps:
            result.localization["stage1_end"] = self.localization_residual()

        self.save(result.checkpoint)
        if not os.path.exists(self.best_path):
            # 一次验证都没做过时，最后一步即最佳
            self.best_step = self.step
            self.save_best()
        result.steps = self.step
        result.initial_val = self.initial_val
        result.best_val = self.best_val
        result.best_step = self.best_step
        print(f"✅ 训练完成，检查点已保存到 {result.checkpoint}，最佳权重（step {self.best_step}）在 {self.best_path}")
        return result


def write_config_copy(out_dir: str, config_text: Optional[str], cfg: ExperimentConfig):
    """输出目录里逐字保存一份配置文档"""
    os.makedirs(out_dir, exist_ok=True)
    text = config_text if config_text is not None else json.dumps(cfg.model_dump(mode="json"), indent=2,
                                                                   ensure_ascii=False) + "\n"
    with open(os.path.join(out_dir, "config.json"), "w", encoding="utf-8") as f:
        f.write(text)


def train_ssl(dataset: SyntheticDataset, cfg: ExperimentConfig, out_dir: str,
              resume_from: Optional[str] = None) -> TrainResult:
    trainer = SSLTrainer(cfg, dataset, out_dir)
    if resume_from:
        trainer.resume(resume_from)
    return trainer.fit()


def two_stage_gravity(dataset: SyntheticDataset, cfg: ExperimentConfig, out_dir: str) -> TrainResult:
    """
    第一阶段：重建 + 框先验 + 跟踪损失（不加对比项），先把主体定位学好
    第二阶段：重建 + 对比损失，跟踪损失去掉
    """
    if any(c.kind != "fall" for c in dataset.train):
        raise ValueError("两阶段重力训练需要下落片段数据集（dataset.kind = fall）")
    train = cfg.train.model_copy(update={"gravity_schedule": "two-stage"})
    cfg = cfg.model_copy(update={"train": train})
    trainer = SSLTrainer(cfg, dataset, out_dir)
    untrained = trainer.localization_residual()
    print(f"📐 未训练检测器的框中心加速度残差 {untrained:.4f}px")
    result = trainer.fit()
    result.localization["untrained"] = untrained
    return result
