# codec/autoencoder.py
"""
拆分潜变量的自编码器

- 编码器 E_tv / E_ti 共享同一个卷积主干（同一份权重，两次使用），只有输出头不同
- 解码器：tv、ti 各过一个线性层 → 通道拼接 → 3 次 (双线性上采样 ×2 + 卷积) → 4 通道 sigmoid
  前 3 个通道为 RGB，最后 1 个通道为掩码
"""

from dataclasses import dataclass
from typing import Dict, Sequence, Tuple

import numpy as np

from diffcore.layers import Conv2d, Linear, Module
from diffcore.rng import Rng
from diffcore.tensor import Tensor, concat, getitem, relu, reshape, sigmoid, take, upsample2x
from errors import ShapeError
from schemas import ModelConfig


@dataclass
class LatentCode:
    """一个 batch 的潜变量，tv 为 N×n_tv，ti 为 N×n_ti"""
    tv: Tensor
    ti: Tensor

    def joined(self) -> Tensor:
        return concat([self.tv, self.ti], axis=1)


def _conv_out(n: int) -> int:
    return (n + 2 - 3) // 2 + 1


class SplitAutoencoder(Module):
    def __init__(self, cfg: ModelConfig, rng: Rng):
        self.n_tv = cfg.n_tv
        self.n_ti = cfg.n_ti
        self.crop_size = cfg.crop_size

        # 共享主干
        self.trunk = []
        in_ch, side = 3, cfg.crop_size
        for i, ch in enumerate(cfg.trunk_channels):
            self.trunk.append(Conv2d(in_ch, ch, 3, rng.substream(0, i), stride=2, padding=1))
            in_ch, side = ch, _conv_out(side)
        self.flat = in_ch * side * side
        self.tv_head = Linear(self.flat, cfg.n_tv, rng.substream(1))
        self.ti_head = Linear(self.flat, cfg.n_ti, rng.substream(2))

        # 解码器
        self.base = cfg.crop_size // 8
        self.feature_channels = cfg.decoder_feature_channels
        feat = self.feature_channels * self.base * self.base
        self.tv_fc = Linear(cfg.n_tv, feat, rng.substream(3))
        self.ti_fc = Linear(cfg.n_ti, feat, rng.substream(4))
        self.up = []
        in_ch = 2 * self.feature_channels
        for i, ch in enumerate(cfg.decoder_channels):
            self.up.append(Conv2d(in_ch, ch, 3, rng.substream(5, i), stride=1, padding=1))
            in_ch = ch
        self.out = Conv2d(in_ch, 4, 3, rng.substream(6), stride=1, padding=1)

    # ---------- 编码 ---------- #
    def features(self, crops: Tensor) -> Tensor:
        """主干输出（展平），两个头共用"""
        if crops.data.ndim != 4 or crops.shape[2:] != (self.crop_size, self.crop_size):
            raise ShapeError("encode", crops.shape, ("N", 3, self.crop_size, self.crop_size))
        x = crops
        for conv in self.trunk:
            x = relu(conv(x))
        return reshape(x, (x.shape[0], self.flat))

    def encode(self, crops: Tensor, which: str) -> Tensor:
        """which = tv | ti；tv 的输入应是颜色抖动后的裁剪，ti 的输入是干净裁剪，由调用方保证"""
        if which == "tv":
            return self.tv_head(self.features(crops))
        if which == "ti":
            return self.ti_head(self.features(crops))
        raise ValueError(f"未知的编码分量: {which}")

    # ---------- 解码 ---------- #
    def decode(self, tv: Tensor, ti: Tensor) -> Tuple[Tensor, Tensor]:
        if tv.data.ndim != 2 or tv.shape[1] != self.n_tv:
            raise ShapeError("decode(tv)", tv.shape, ("N", self.n_tv))
        if ti.data.ndim != 2 or ti.shape[1] != self.n_ti or ti.shape[0] != tv.shape[0]:
            raise ShapeError("decode(ti)", ti.shape, (tv.shape[0], self.n_ti))
        n, f, b = tv.shape[0], self.feature_channels, self.base
        a = reshape(relu(self.tv_fc(tv)), (n, f, b, b))
        c = reshape(relu(self.ti_fc(ti)), (n, f, b, b))
        x = concat([a, c], axis=1)
        for conv in self.up:
            x = relu(conv(upsample2x(x, "bilinear")))
        y = sigmoid(self.out(x))
        rgb = getitem(y, (slice(None), slice(0, 3)))
        mask = getitem(y, (slice(None), slice(3, 4)))
        return rgb, mask


def swap_permutation(video_ids: Sequence, rng: Rng) -> np.ndarray:
    """
    同一视频内的 ti 循环移位一位：组内先按随机顺序排列，再让每个成员取下一个成员的 ti
    单元素组保持不变
    """
    groups: Dict = {}
    for i, vid in enumerate(video_ids):
        groups.setdefault(vid, []).append(i)
    index = np.arange(len(video_ids))
    for vid in groups:
        members = np.asarray(groups[vid])
        if len(members) < 2:
            continue
        ordered = members[rng.permutation(len(members))]
        index[ordered] = np.roll(ordered, -1)
    return index


def swap_ti(code: LatentCode, video_ids: Sequence, rng: Rng) -> LatentCode:
    """tv 不动，ti 在同视频组内交换"""
    if len(video_ids) != code.ti.shape[0]:
        raise ShapeError("swap_ti", code.ti.shape, (len(video_ids),))
    return LatentCode(tv=code.tv, ti=take(code.ti, swap_permutation(video_ids, rng)))
