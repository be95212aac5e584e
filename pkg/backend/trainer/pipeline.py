# trainer/pipeline.py
"""
整条前向管线：检测框 → 裁剪 → 编码（ti 用干净裁剪，tv 用抖动裁剪）→ 同视频交换 ti
→ 解码 → 贴回整帧 → 与背景合成

变体开关（decode / stn / latent_split）在这里生效；不拆分的模型把 tv、ti
都从干净裁剪编码，整段潜变量拼接后作为表示。
"""

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from codec.autoencoder import LatentCode, SplitAutoencoder, swap_ti
from codec.checkpoint import load_checkpoint
from diffcore.layers import Module
from diffcore.rng import Rng
from diffcore.tensor import Tensor, getitem, no_grad, reshape, scale
from sampling.sampler import jitter, sample_equidistant
from schemas import ExperimentConfig, VariantSpec
from stn.attention import BoxDetector, composite, crop, identity_boxes, paste

STREAM_INIT = 11
FEATURE_CHUNK = 64


@dataclass
class ForwardResult:
    boxes: Tensor
    crops: Tensor
    code: LatentCode
    rgb: Optional[Tensor] = None
    mask: Optional[Tensor] = None
    pasted: Optional[Tensor] = None
    pasted_mask: Optional[Tensor] = None
    recon: Optional[Tensor] = None

    def representation(self, split: bool) -> Tensor:
        """对比损失作用的向量：拆分模型用 tv，否则用整段潜变量"""
        return self.code.tv if split else self.code.joined()


class PoseAutoencoder(Module):
    def __init__(self, cfg: ExperimentConfig, rng: Rng):
        self.variant: VariantSpec = cfg.train.resolved()
        self.frame_hw = tuple(cfg.puppet.canvas)
        self.crop_hw = (cfg.model.crop_size, cfg.model.crop_size)
        self.sampler_cfg = cfg.sampler
        self.detector = None
        if self.variant.stn:
            self.detector = BoxDetector(self.frame_hw, cfg.model.detector_channels, rng.substream(0),
                                        downsample=cfg.model.detector_downsample, s_min=cfg.model.box_scale_min)
        self.codec = SplitAutoencoder(cfg.model, rng.substream(1))

    def boxes(self, x: Tensor) -> Tensor:
        return self.detector(x) if self.detector is not None else identity_boxes(x.shape[0])

    def encode(self, crops: Tensor, rng: Optional[Rng] = None) -> LatentCode:
        """rng 为空时不做颜色抖动（评估）"""
        if self.variant.latent_split:
            ti = self.codec.encode(crops, "ti")
            tv_input = jitter(crops, self.sampler_cfg, rng) if rng is not None else crops
            tv = self.codec.encode(tv_input, "tv")
            return LatentCode(tv=tv, ti=ti)
        feats = self.codec.features(crops)
        return LatentCode(tv=self.codec.tv_head(feats), ti=self.codec.ti_head(feats))

    def forward(self, frames: np.ndarray, backgrounds: Optional[np.ndarray], video_ids: Sequence,
                rng: Optional[Rng] = None, swap: bool = True) -> ForwardResult:
        """rng 为空即评估模式：不抖动、不交换"""
        x = Tensor(frames)
        boxes = self.boxes(x)
        crops = crop(x, boxes, self.crop_hw)
        code = self.encode(crops, rng.substream(0) if rng is not None else None)
        result = ForwardResult(boxes=boxes, crops=crops, code=code)
        if not self.variant.decode:
            return result
        dec_code = code
        if self.variant.latent_split and swap and rng is not None:
            dec_code = swap_ti(code, video_ids, rng.substream(1))
        rgb, mask = self.codec.decode(dec_code.tv, dec_code.ti)
        pasted, pasted_mask = paste(rgb, mask, boxes, self.frame_hw)
        result.rgb, result.mask = rgb, mask
        result.pasted, result.pasted_mask = pasted, pasted_mask
        result.recon = composite(pasted_mask, pasted, Tensor(backgrounds))
        return result

    # ---------- 冻结特征 ---------- #
    def extract(self, frames: np.ndarray, which: str = "auto") -> np.ndarray:
        """
        which: auto（拆分模型取 tv，否则取整段潜变量）| tv | ti | latent
        """
        if which == "auto":
            which = "tv" if self.variant.latent_split else "latent"
        out = []
        with no_grad():
            for start in range(0, frames.shape[0], FEATURE_CHUNK):
                x = Tensor(frames[start:start + FEATURE_CHUNK])
                code = self.encode(crop(x, self.boxes(x), self.crop_hw))
                if which == "tv":
                    out.append(code.tv.data)
                elif which == "ti":
                    out.append(code.ti.data)
                elif which == "latent":
                    out.append(code.joined().data)
                else:
                    raise ValueError(f"未知的特征类型: {which}")
        return np.concatenate(out, axis=0)

    def predict_boxes(self, frames: np.ndarray) -> np.ndarray:
        with no_grad():
            return self.boxes(Tensor(frames)).data.copy()

    def parameter_arrays(self) -> List[Tuple[str, np.ndarray]]:
        return [(name, p.data) for name, p in self.named_parameters()]

    def load_arrays(self, arrays: Dict[str, np.ndarray]):
        for name, p in self.named_parameters():
            if name not in arrays:
                raise ValueError(f"检查点缺少参数 {name}")
            if arrays[name].shape != p.shape:
                raise ValueError(f"参数 {name} 形状不符: {arrays[name].shape} vs {p.shape}")
            p.data = np.array(arrays[name], dtype=np.float64)


def build_model(cfg: ExperimentConfig, seed: Optional[int] = None) -> PoseAutoencoder:
    return PoseAutoencoder(cfg, Rng(cfg.seed if seed is None else seed, STREAM_INIT))


def load_model(path: str) -> Tuple[PoseAutoencoder, ExperimentConfig, Dict]:
    """从 SSL 检查点恢复模型与其实验配置"""
    header, arrays = load_checkpoint(path)
    if header.get("kind") != "ssl":
        raise ValueError(f"{path} 不是自监督训练的检查点（kind={header.get('kind')}）")
    cfg = ExperimentConfig.model_validate(header["config"])
    model = build_model(cfg)
    model.load_arrays(arrays)
    return model, cfg, header


def trajectory_residual(model: PoseAutoencoder, clips: Sequence, spacing: int, count: int, rng: Rng) -> float:
    """等距四帧上框中心 y（像素）的常加速度残差均值 |u₁ + 3u₃ − u₄ − 3u₂|"""
    h = model.frame_hw[0]
    residuals = []
    for k in range(count):
        clip = clips[int(rng.integers(0, len(clips)))]
        idx = sample_equidistant(clip, spacing, rng.substream(k))
        u_y = model.predict_boxes(clip.frames[list(idx)])[:, 3] * h / 2.0
        residuals.append(abs(u_y[0] + 3 * u_y[2] - u_y[3] - 3 * u_y[1]))
    return float(np.mean(residuals))


def box_track_inputs(boxes: Tensor, frame_h: int, groups: int) -> Tuple[Tensor, Tensor]:
    """N=4·groups 个框 → (groups×4 的 u_y 像素值, groups×4×2 的尺度)"""
    u_y = reshape(scale(getitem(boxes, (slice(None), 3)), frame_h / 2.0), (groups, 4))
    scales = reshape(getitem(boxes, (slice(None), slice(0, 2))), (groups, 4, 2))
    return u_y, scales

