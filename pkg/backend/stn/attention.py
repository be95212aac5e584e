# stn/attention.py
"""
空间注意力（STN）：预测主体框 → 可微裁剪 → 解码结果贴回整帧 → 与背景合成

框参数按列排列为 (s_x, s_y, u_x, u_y)，坐标为归一化坐标 [-1, 1]。
s 是框在该方向上占整帧的比例，s = 1、u = 0 即整帧。
"""

from typing import Sequence, Tuple

import numpy as np

from config import BOX_PRIOR_CENTER, BOX_PRIOR_SCALE
from diffcore.layers import Conv2d, Linear, Module
from diffcore.rng import Rng
from diffcore.tensor import (Tensor, add_scalar, affine_grid, avg_pool2d, concat, getitem, grid_sample,
                             inverse_affine_grid, mul, relu, reshape, scale, sigmoid, square, sub, tanh, tsum)


def _conv_out(n: int) -> int:
    # 3×3、stride 2、padding 1
    return (n + 2 - 3) // 2 + 1


def squash_box(raw: Tensor, s_min: float) -> Tensor:
    """原始输出 → 合法框：s ∈ (s_min, 1)，u ∈ (-1, 1)"""
    s = add_scalar(scale(sigmoid(getitem(raw, (slice(None), slice(0, 2)))), 1.0 - s_min), s_min)
    u = tanh(getitem(raw, (slice(None), slice(2, 4))))
    return concat([s, u], axis=1)


def scale_logit(target: float, s_min: float) -> float:
    """使 squash 后尺度恰为 target 的原始值"""
    p = (target - s_min) / (1.0 - s_min)
    return float(np.log(p / (1.0 - p)))


class BoxDetector(Module):
    """4 个 stride-2 卷积块 + 线性头，输入为下采样后的整帧"""

    def __init__(self, frame_hw: Tuple[int, int], channels: Sequence[int], rng: Rng,
                 downsample: int = 4, s_min: float = 0.05):
        self.downsample = downsample
        self.s_min = s_min
        h, w = frame_hw[0] // downsample, frame_hw[1] // downsample
        self.blocks = []
        in_ch = 3
        for i, ch in enumerate(channels):
            self.blocks.append(Conv2d(in_ch, ch, 3, rng.substream(i), stride=2, padding=1))
            in_ch = ch
            h, w = _conv_out(h), _conv_out(w)
        self.flat = in_ch * h * w
        self.head = Linear(self.flat, 4, rng.substream(len(channels)))
        # 初始时框居中、约为画面一半
        self.head.weight.data *= 0.1
        init = scale_logit(BOX_PRIOR_SCALE, s_min)
        self.head.bias.data[:] = [init, init, 0.0, 0.0]

    def __call__(self, frames: Tensor) -> Tensor:
        x = avg_pool2d(frames, self.downsample) if self.downsample > 1 else frames
        for block in self.blocks:
            x = relu(block(x))
        x = reshape(x, (x.shape[0], self.flat))
        return squash_box(self.head(x), self.s_min)


def predict_box(detector: BoxDetector, frames: Tensor) -> Tensor:
    """frames: N×3×H×W → N×4 框参数"""
    return detector(frames)


def identity_boxes(n: int) -> Tensor:
    """整帧框（不使用 STN 的变体）"""
    return Tensor(np.tile([1.0, 1.0, 0.0, 0.0], (n, 1)))


def crop(frames: Tensor, boxes: Tensor, out_hw: Tuple[int, int]) -> Tensor:
    """按框做仿射网格双线性采样，框外按零填充"""
    return grid_sample(frames, affine_grid(boxes, out_hw[0], out_hw[1]))


def paste(rgb: Tensor, mask: Tensor, boxes: Tensor, frame_hw: Tuple[int, int]) -> Tuple[Tensor, Tensor]:
    """逆 STN：把裁剪坐标系下的 RGB 与掩码重采样回整帧，框外掩码为 0"""
    grid = inverse_affine_grid(boxes, frame_hw[0], frame_hw[1])
    inside = footprint(grid)
    # 框边缘附近的双线性插值会取到框内像素，用足迹指示函数截断（反向时视为常数）
    d = mul(grid_sample(rgb, grid), Tensor(np.repeat(inside, rgb.shape[1], axis=1)))
    m = mul(grid_sample(mask, grid), Tensor(np.repeat(inside, mask.shape[1], axis=1)))
    return d, m


def footprint(grid: Tensor) -> np.ndarray:
    """整帧像素是否落在框内：|x| ≤ 1 且 |y| ≤ 1，返回 N×1×H×W 的 0/1 数组"""
    g = grid.data
    inside = (np.abs(g[..., 0]) <= 1.0) & (np.abs(g[..., 1]) <= 1.0)
    return inside[:, None].astype(np.float64)


def composite(mask: Tensor, fg: Tensor, bg: Tensor) -> Tensor:
    """Ĩ = M·D + (1 − M)·B，mask 为 N×1×H×W，按通道复制后逐元素混合"""
    channels = fg.shape[1]
    m = concat([mask] * channels, axis=1) if mask.shape[1] != channels else mask
    return mul(m, fg) + mul(1.0 - m, bg)


def box_prior_loss(boxes: Tensor) -> Tensor:
    """只约束 batch 均值：平均尺度 0.5、平均中心 0"""
    if boxes.shape[0] < 2:
        raise ValueError(f"box_prior_loss 需要 batch ≥ 2，当前 {boxes.shape[0]}")
    target = Tensor([BOX_PRIOR_SCALE, BOX_PRIOR_SCALE, BOX_PRIOR_CENTER, BOX_PRIOR_CENTER])
    return tsum(square(sub(boxes.mean(axis=0), target)))
