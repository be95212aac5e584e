# sampling/sampler.py
"""
训练样本采样

- DSL 四元组：参考帧 r、近邻帧 n（正样本）、中间帧 in、远离帧 a（负样本），全部来自同一视频
- CSS / triplet 模式：中间帧的位置换成第二个远离帧（一个正样本、两个负样本）
- 等距四元组：自由落体跟踪损失使用的 (t, t+Δ, t+2Δ, t+3Δ)
- 颜色抖动：逐通道增益 + 全局亮度偏移，裁剪到 [0, 1]，只用于 E_tv 的输入
"""

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from diffcore.rng import Rng
from diffcore.tensor import Tensor, add, maximum, minimum, mul
from errors import SamplingError
from schemas import SamplerConfig

SAMPLING_MODES = ("dsl", "css")


@dataclass(frozen=True)
class QuadrupleSample:
    clip_index: int
    r: int
    n: int
    inter: int
    a: int
    mode: str = "dsl"

    @property
    def indices(self) -> Tuple[int, int, int, int]:
        return self.r, self.n, self.inter, self.a

    @property
    def d_n(self) -> int:
        return abs(self.n - self.r)

    @property
    def d_in(self) -> int:
        return abs(self.inter - self.r)

    @property
    def d_a(self) -> int:
        return abs(self.a - self.r)


def _length(clip) -> int:
    return int(clip) if isinstance(clip, (int, np.integer)) else int(clip.length)


def sample_quadruple(clip, cfg: SamplerConfig, rng: Rng, clip_index: int = 0, mode: str = "dsl") -> QuadrupleSample:
    """clip 可以是 VideoClip 或直接给出帧数 T"""
    if mode not in SAMPLING_MODES:
        raise ValueError(f"未知的采样模式: {mode}")
    T = _length(clip)
    required = 2 * cfg.d_max + 1
    if T < required:
        raise SamplingError(f"片段长度 {T} 不足以采样 d_max={cfg.d_max} 的四元组", required)

    r = int(rng.integers(0, T))
    d_n = int(rng.integers(1, cfg.d_near + 1))
    sides = [s for s in (-1, 1) if 0 <= r + s * d_n < T]
    n = r + sides[int(rng.integers(0, len(sides)))] * d_n

    t = np.arange(T)
    away = t[np.abs(t - r) >= cfg.d_max]
    a = int(away[int(rng.integers(0, len(away)))])

    if mode == "css":
        others = away[away != a]
        inter = int(others[int(rng.integers(0, len(others)))]) if len(others) else a
    else:
        # 中间帧与远离帧在同一侧，帧距严格介于 d_n 与 d_a 之间
        d_a = abs(a - r)
        d_in = int(rng.integers(d_n + 1, d_a))
        inter = r + int(np.sign(a - r)) * d_in
    return QuadrupleSample(clip_index=clip_index, r=r, n=int(n), inter=inter, a=a, mode=mode)


def sample_equidistant(clip, spacing: int, rng: Rng) -> Tuple[int, int, int, int]:
    T = _length(clip)
    if spacing < 1:
        raise ValueError(f"帧间隔 Δ 必须 ≥ 1，当前 {spacing}")
    required = 3 * spacing + 1
    if T < required:
        raise SamplingError(f"片段长度 {T} 不足以采样间隔 Δ={spacing} 的等距四元组", required)
    t1 = int(rng.integers(0, T - 3 * spacing))
    return t1, t1 + spacing, t1 + 2 * spacing, t1 + 3 * spacing


def sample_batch(clips: Sequence, count: int, cfg: SamplerConfig, rng: Rng, mode: str = "dsl") -> List[QuadrupleSample]:
    """随机选片段各采一个四元组，结果按片段编号排序，保证同一视频的帧在 batch 中相邻"""
    picks = []
    for k in range(count):
        ci = int(rng.integers(0, len(clips)))
        picks.append(sample_quadruple(clips[ci], cfg, rng.substream(k), clip_index=ci, mode=mode))
    return sorted(picks, key=lambda q: q.clip_index)


# ============== 颜色抖动 ============== #

def draw_jitter(n: int, cfg: SamplerConfig, rng: Rng) -> Tuple[np.ndarray, np.ndarray]:
    """返回 (N×3 增益, N 偏移)"""
    gain = rng.uniform(cfg.jitter_gain[0], cfg.jitter_gain[1], (n, 3))
    offset = rng.uniform(cfg.jitter_offset[0], cfg.jitter_offset[1], n)
    return gain, offset


def apply_jitter(crops: Tensor, gain: np.ndarray, offset: np.ndarray) -> Tensor:
    """clip(crop·gain_c + offset, 0, 1)，对裁剪可微"""
    shape = crops.shape
    g = np.broadcast_to(np.asarray(gain, dtype=np.float64).reshape(shape[0], shape[1], 1, 1), shape)
    o = np.broadcast_to(np.asarray(offset, dtype=np.float64).reshape(shape[0], 1, 1, 1), shape)
    return minimum(maximum(add(mul(crops, Tensor(g.copy())), Tensor(o.copy())), 0.0), 1.0)


def jitter(crops: Tensor, cfg: SamplerConfig, rng: Rng) -> Tensor:
    gain, offset = draw_jitter(crops.shape[0], cfg, rng)
    return apply_jitter(crops, gain, offset)
