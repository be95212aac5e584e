# diffcore/gradcheck.py
"""
有限差分梯度校验

中心差分 (f(x+eps·e_i) − f(x−eps·e_i)) / (2·eps) 与反向传播结果逐分量比较，
误差定义为 |a−b| / max(1, |a|, |b|) 的最大值。
"""

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from diffcore.tensor import Tensor, no_grad


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_index: int
    nan_index: Optional[int] = None
    checked: int = 0

    @property
    def ok(self) -> bool:
        return self.nan_index is None

    def passed(self, tol: float) -> bool:
        return self.ok and self.max_rel_error < tol


def _compare(analytic: np.ndarray, numeric: np.ndarray, flat_indices) -> GradCheckReport:
    worst, worst_i, nan_i = 0.0, -1, None
    for k, i in enumerate(flat_indices):
        a, b = analytic[k], numeric[k]
        if not (np.isfinite(a) and np.isfinite(b)):
            nan_i = int(i) if nan_i is None else nan_i
            continue
        err = abs(a - b) / max(1.0, abs(a), abs(b))
        if err > worst:
            worst, worst_i = err, int(i)
    if nan_i is not None:
        worst = float("inf")
    return GradCheckReport(max_rel_error=float(worst), worst_index=worst_i, nan_index=nan_i,
                           checked=len(flat_indices))


def grad_check(f: Callable[[Tensor], Tensor], x, eps: float = 1e-5) -> GradCheckReport:
    """
    f: 输入 Tensor、输出标量 Tensor 的可微函数
    x: 检查点（Tensor 或数组）
    """
    x0 = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    xt = Tensor(x0.copy(), requires_grad=True)
    f(xt).backward()
    analytic = np.zeros(x0.size) if xt.grad is None else xt.grad.reshape(-1)

    numeric = np.zeros(x0.size)
    with no_grad():
        for i in range(x0.size):
            xp = x0.copy()
            xm = x0.copy()
            xp.flat[i] += eps
            xm.flat[i] -= eps
            numeric[i] = (f(Tensor(xp)).item() - f(Tensor(xm)).item()) / (2.0 * eps)
    return _compare(analytic, numeric, range(x0.size))


def grad_check_tensor(
    loss_fn: Callable[[], Tensor],
    target: Tensor,
    eps: float = 1e-5,
    indices: Optional[Sequence[int]] = None,
) -> GradCheckReport:
    """
    对闭包中使用的某个参数张量做校验（原地扰动后恢复）
    indices: 只检查这些扁平下标（大参数时抽样用）
    """
    flat = list(range(target.size)) if indices is None else [int(i) for i in indices]
    target.grad = None
    loss_fn().backward()
    grad = np.zeros(target.size) if target.grad is None else target.grad.reshape(-1)
    analytic = np.array([grad[i] for i in flat])

    numeric = np.zeros(len(flat))
    view = target.data.reshape(-1)
    with no_grad():
        for k, i in enumerate(flat):
            orig = view[i]
            view[i] = orig + eps
            fp = loss_fn().item()
            view[i] = orig - eps
            fm = loss_fn().item()
            view[i] = orig
            numeric[k] = (fp - fm) / (2.0 * eps)
    target.grad = None
    return _compare(analytic, numeric, flat)
