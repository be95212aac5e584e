# losses/objectives.py
"""
全部训练目标，均为纯函数，输入输出都是 Tensor

批量约定：向量输入可以是单个向量 (d,) 或按行排列的 batch (N, d)，
batch 时逐行计算后取均值。
"""

from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from diffcore.tensor import (Tensor, add_scalar, concat, cosine_sim, getitem, logsumexp, maximum, mean,
                             mul, reshape, scale, square, sub, tabs, tsum)
from errors import ShapeError
from losses.perceptual import PerceptualPyramid
from schemas import LossWeights


def _rows(x: Tensor) -> Tensor:
    if x.data.ndim == 1:
        return reshape(x, (1, x.shape[0]))
    if x.data.ndim != 2:
        raise ShapeError("vector batch", x.shape, ("N", "d"))
    return x


def _column(x: Tensor, j: int) -> Tensor:
    return getitem(x, (slice(None), j))


# ============== 重建 ==============

def reconstruction_loss(target: Tensor, recon: Tensor, weights: LossWeights,
                        pyramid: Optional[PerceptualPyramid] = None) -> Tensor:
    """λ·mean((I − Ĩ)²) + ρ·Σ_l mean((F_l(I) − F_l(Ĩ))²)"""
    if target.shape != recon.shape:
        raise ShapeError("reconstruction_loss", target.shape, recon.shape)
    loss = scale(mean(square(sub(target, recon))), weights.lambda_pixel)
    if weights.rho_perceptual > 0:
        if pyramid is None:
            raise ValueError("rho_perceptual > 0 时需要提供感知特征金字塔")
        for f_t, f_r in zip(pyramid(target), pyramid(recon)):
            loss = loss + scale(mean(square(sub(f_t, f_r))), weights.rho_perceptual)
    return loss


# ============== 对比损失 ==============

def css_loss(ref: Tensor, pos: Tensor, negs: Sequence[Tensor], temperature: float) -> Tensor:
    """−log( exp(sim(r,p)/τ) / Σ_{p ∪ negs} exp(sim(r,·)/τ) )"""
    if len(negs) < 1:
        raise ValueError("css_loss 至少需要一个负样本")
    ref, pos = _rows(ref), _rows(pos)
    n = ref.shape[0]
    sims = [cosine_sim(ref, pos)] + [cosine_sim(ref, _rows(neg)) for neg in negs]
    logits = scale(concat([reshape(s, (n, 1)) for s in sims], axis=1), 1.0 / temperature)
    return mean(sub(logsumexp(logits, axis=1), _column(logits, 0)))


def triplet_loss(ref: Tensor, pos: Tensor, neg: Tensor, beta: float) -> Tensor:
    """max(0, ‖r − p‖² − ‖r − n‖² + β)"""
    ref, pos, neg = _rows(ref), _rows(pos), _rows(neg)
    d_pos = tsum(square(sub(ref, pos)), axis=1)
    d_neg = tsum(square(sub(ref, neg)), axis=1)
    return mean(maximum(add_scalar(sub(d_pos, d_neg), beta), 0.0))


def dsl_weights(d, d_max: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    相似权重在 [0, d_max/2] 上从 1 线性降到 0；
    相异权重在 [d_max/2, d_max] 上从 0 线性升到 1，之后保持 1
    """
    d = np.asarray(d, dtype=np.float64)
    if np.any(d < 0):
        raise ValueError("帧距 d 不能为负")
    if d_max <= 0:
        raise ValueError("d_max 必须为正")
    ratio = 2.0 * d / d_max
    near = d <= d_max / 2.0
    w_sim = np.where(near, 1.0 - ratio, 0.0)
    w_dis = np.where(near, 0.0, np.minimum(ratio - 1.0, 1.0))
    return w_sim, w_dis


def dsl_loss(m: Tensor, n: Tensor, d, d_max: float) -> Tensor:
    """w_sim(d)·|1 − sim(m, n)| + w_dis(d)·|sim(m, n)|；d 可以逐行给出"""
    m, n = _rows(m), _rows(n)
    w_sim, w_dis = dsl_weights(np.broadcast_to(np.asarray(d, dtype=np.float64), (m.shape[0],)), d_max)
    sim = cosine_sim(m, n)
    per_row = mul(tabs(add_scalar(scale(sim, -1.0), 1.0)), Tensor(w_sim)) + mul(tabs(sim), Tensor(w_dis))
    return mean(per_row)


def dsl_quadruple_loss(tv_r: Tensor, tv_n: Tensor, tv_in: Tensor, tv_a: Tensor,
                       d_n, d_in, d_a, d_max: float) -> Tensor:
    """参考帧分别与近邻、中间、远离帧的 DSL 之和"""
    d_n, d_in, d_a = (np.asarray(v, dtype=np.float64) for v in (d_n, d_in, d_a))
    if np.any(d_n <= 0) or np.any(d_in <= d_n) or np.any(d_a <= d_in):
        raise ValueError(f"四元组帧距需满足 0 < d_n < d_in < d_a，当前 d_n={d_n}, d_in={d_in}, d_a={d_a}")
    if np.any(d_a < d_max):
        raise ValueError(f"远离帧距 d_a={d_a} 小于 d_max={d_max}")
    return dsl_loss(tv_r, tv_n, d_n, d_max) + dsl_loss(tv_r, tv_a, d_a, d_max) + dsl_loss(tv_r, tv_in, d_in, d_max)


# ============== 跟踪损失（自由落体） ==============

def _quad(u: Tensor) -> Tensor:
    u = _rows(u)
    if u.shape[1] != 4:
        raise ShapeError("tracking", u.shape, ("N", 4))
    return u


def const_acc_loss(u_y: Tensor) -> Tensor:
    """‖(u₁ + 3u₃) − (u₄ + 3u₂)‖²：等距四帧的三阶差分为零当且仅当轨迹是二次的"""
    u = _quad(u_y)
    c = [_column(u, j) for j in range(4)]
    residual = (c[0] + scale(c[2], 3.0)) - (c[3] + scale(c[1], 3.0))
    return mean(square(residual))


def order_loss(u_y: Tensor, tau_order: float) -> Tensor:
    """Σ_t max(0, τ − (u_{t+1} − u_t))：下落要足够快且不能上升"""
    u = _quad(u_y)
    gaps = sub(getitem(u, (slice(None), slice(1, 4))), getitem(u, (slice(None), slice(0, 3))))
    return mean(tsum(maximum(add_scalar(scale(gaps, -1.0), tau_order), 0.0), axis=1))


def scale_loss(scales: Tensor) -> Tensor:
    """Σ_t ‖s_t − s_{t+1}‖²，scales 为 4×2 或 N×4×2"""
    s = reshape(scales, (1, 4, 2)) if scales.data.ndim == 2 else scales
    if s.data.ndim != 3 or s.shape[1:] != (4, 2):
        raise ShapeError("scale_loss", scales.shape, ("N", 4, 2))
    steps = sub(getitem(s, (slice(None), slice(1, 4))), getitem(s, (slice(None), slice(0, 3))))
    return mean(tsum(square(steps), axis=(1, 2)))


def track_loss(u_y: Tensor, scales: Tensor, tau_order: float) -> Tensor:
    return const_acc_loss(u_y) + order_loss(u_y, tau_order) + scale_loss(scales)


# ============== 组合 ==============

COMPONENTS = ("reconst", "contrastive", "track", "prior")


def total_loss(components: Dict[str, Optional[Tensor]], weights: LossWeights,
               alpha: Optional[float] = None, gamma: Optional[float] = None) -> Tensor:
    """
    L_reconst + α·L_contrastive + γ·L_track + w_prior·L_prior
    缺失（None）的分量贡献恰好为 0；alpha / gamma 用于按训练阶段覆盖权重
    """
    coef = {
        "reconst": 1.0,
        "contrastive": weights.alpha if alpha is None else alpha,
        "track": weights.gamma if gamma is None else gamma,
        "prior": weights.prior_weight,
    }
    unknown = set(components) - set(COMPONENTS)
    if unknown:
        raise ValueError(f"未知的损失分量: {sorted(unknown)}")
    total = Tensor(0.0)
    for name in COMPONENTS:
        value = components.get(name)
        if value is None or coef[name] == 0.0:
            continue
        total = total + scale(value, coef[name])
    return total


def pose_loss(pred: Tensor, labels: Tensor) -> Tensor:
    """样本平均的 ‖Φ(I_tv) − q‖²"""
    if pred.shape != labels.shape or pred.data.ndim != 2:
        raise ShapeError("pose_loss", pred.shape, labels.shape)
    return mean(tsum(square(sub(pred, labels)), axis=1))
