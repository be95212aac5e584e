# evalkit/swap_transfer.py
"""
解耦检验：用 A 的 tv 和 B 的 ti 解码，与两帧的真实值比较

- appearance-follows-ti：交换解码的掩码平均颜色更接近 B 的真实前景平均色（已知背景下求前景）
- pose-follows-tv      ：交换解码的掩码轮廓统计（质心 + 中心二阶矩）更接近 A 的真实前景轮廓，
                         真实轮廓用模型给该帧预测的框裁剪，与解码结果在同一坐标系
两者距离相等时记为通过。
"""

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from diffcore.rng import Rng
from diffcore.tensor import Tensor, no_grad
from stn.attention import crop
from synth.puppet import appearance_signature, foreground_mask
from trainer.pipeline import PoseAutoencoder

STREAM_SWAP = 41


@dataclass
class SwapTransferScore:
    appearance_follows_ti: float
    pose_follows_tv: float
    pairs: int


def masked_mean_color(rgb: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """rgb: N×3×h×w, mask: N×1×h×w → N×3"""
    w = mask.sum(axis=(1, 2, 3))
    total = (rgb * mask).sum(axis=(2, 3))
    return total / np.where(w > 0, w, 1.0)[:, None]


def silhouette_stats(mask: np.ndarray) -> np.ndarray:
    """N×1×h×w → N×5：(c_x, c_y, var_x, var_y, cov_xy)，坐标归一化到 [-1, 1]"""
    n, _, h, w = mask.shape
    ys = (2.0 * np.arange(h) + 1.0) / h - 1.0
    xs = (2.0 * np.arange(w) + 1.0) / w - 1.0
    m = mask[:, 0]
    total = np.maximum(m.sum(axis=(1, 2)), 1e-12)
    cx = (m * xs[None, None, :]).sum(axis=(1, 2)) / total
    cy = (m * ys[None, :, None]).sum(axis=(1, 2)) / total
    dx = xs[None, None, :] - cx[:, None, None]
    dy = ys[None, :, None] - cy[:, None, None]
    vxx = (m * dx * dx).sum(axis=(1, 2)) / total
    vyy = (m * dy * dy).sum(axis=(1, 2)) / total
    vxy = (m * dx * dy).sum(axis=(1, 2)) / total
    return np.stack([cx, cy, vxx, vyy, vxy], axis=1)


def decode_swapped(model: PoseAutoencoder, frames_a: np.ndarray, frames_b: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """(tv_A, ti_B) 的解码结果 (rgb, mask)，numpy 数组"""
    if not model.variant.decode:
        raise ValueError("交换检验需要带解码器的模型")
    with no_grad():
        codes = []
        for frames in (frames_a, frames_b):
            x = Tensor(frames)
            codes.append(model.encode(crop(x, model.boxes(x), model.crop_hw)))
        rgb, mask = model.codec.decode(codes[0].tv, codes[1].ti)
    return rgb.data, mask.data


def reference_stats(model: PoseAutoencoder, frames: np.ndarray, backgrounds: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """真实前景的 (平均颜色 N×3, 裁剪坐标系下的轮廓统计 N×5)"""
    colors = np.stack([appearance_signature(f, background=b) for f, b in zip(frames, backgrounds)])
    masks = np.stack([foreground_mask(f, b) for f, b in zip(frames, backgrounds)])[:, None]
    with no_grad():
        boxes = model.boxes(Tensor(frames))
        crop_masks = crop(Tensor(masks), boxes, model.crop_hw).data
    return colors, silhouette_stats(crop_masks)


def score_pairs(model: PoseAutoencoder, frames_a: np.ndarray, frames_b: np.ndarray,
                backgrounds_a: np.ndarray, backgrounds_b: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """逐对返回 (外观是否跟随 ti, 姿态是否跟随 tv) 两个布尔数组"""
    rgb_s, m_s = decode_swapped(model, frames_a, frames_b)
    col_s, st_s = masked_mean_color(rgb_s, m_s), silhouette_stats(m_s)
    col_a, st_a = reference_stats(model, frames_a, backgrounds_a)
    col_b, st_b = reference_stats(model, frames_b, backgrounds_b)
    appearance = np.linalg.norm(col_s - col_b, axis=1) <= np.linalg.norm(col_s - col_a, axis=1)
    pose = np.linalg.norm(st_s - st_a, axis=1) <= np.linalg.norm(st_s - st_b, axis=1)
    return appearance, pose


def sample_pairs(clips: Sequence, count: int, rng: Rng) -> List[Tuple[int, int, int, int]]:
    """(片段 A, 帧 A, 片段 B, 帧 B)，A、B 来自外观不同的片段"""
    labels = [c.appearance_label for c in clips]
    if len(set(labels)) < 2:
        raise ValueError("交换检验至少需要两个外观不同的片段")
    pairs = []
    while len(pairs) < count:
        i, j = (int(v) for v in rng.integers(0, len(clips), 2))
        if labels[i] == labels[j]:
            continue
        pairs.append((i, int(rng.integers(0, clips[i].length)), j, int(rng.integers(0, clips[j].length))))
    return pairs


def swap_transfer_score(model: PoseAutoencoder, clips: Sequence, count: int, rng: Rng,
                        chunk: int = 64) -> SwapTransferScore:
    pairs = sample_pairs(clips, count, rng)
    app, pose = [], []
    for start in range(0, len(pairs), chunk):
        part = pairs[start:start + chunk]
        fa = np.stack([clips[i].frames[t] for i, t, _, _ in part])
        fb = np.stack([clips[j].frames[t] for _, _, j, t in part])
        ba = np.stack([clips[i].background for i, _, _, _ in part])
        bb = np.stack([clips[j].background for _, _, j, _ in part])
        a, p = score_pairs(model, fa, fb, ba, bb)
        app.append(a)
        pose.append(p)
    app = np.concatenate(app)
    pose = np.concatenate(pose)
    score = SwapTransferScore(float(app.mean()), float(pose.mean()), len(pairs))
    print(f"🔄 交换检验 {score.pairs} 对: appearance-follows-ti={score.appearance_follows_ti:.3f}, "
          f"pose-follows-tv={score.pose_follows_tv:.3f}")
    return score
