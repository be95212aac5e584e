# diffcore/tensor.py
"""
最小的稠密张量引擎（反向模式自动微分）

- 全部使用 float64，行优先存储
- 广播只允许发生在最前面的 batch 维（b.shape == a.shape[1:]）
- 每次 backward 按拓扑序把每个节点恰好访问一次
"""

import contextlib
import threading
from typing import Callable, Optional, Sequence

import numpy as np

from errors import DegenerateVectorError, ShapeError

_GRAD_STATE = threading.local()
NORM_EPS = 1e-12


def grad_enabled() -> bool:
    """每个线程各自记录是否构建计算图"""
    return getattr(_GRAD_STATE, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """在上下文内不记录计算图（评估、特征提取时使用）"""
    prev = grad_enabled()
    _GRAD_STATE.enabled = False
    try:
        yield
    finally:
        _GRAD_STATE.enabled = prev


class Tensor:
    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward_fn: Optional[Callable] = None
        self.op = "leaf"

    # ---------- 基本属性 ---------- #
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return int(self.data.size)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError("item", self.shape, ())
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    # ---------- 反向传播 ---------- #
    def backward(self, grad: Optional[np.ndarray] = None):
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward（非标量需显式给出梯度）", self.shape, ())
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != self.shape:
            raise ShapeError("backward", self.shape, grad.shape)

        # 拓扑排序（迭代 DFS，父节点先于子节点入列）
        order = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))

        self.grad = grad.copy() if self.grad is None else self.grad + grad
        for node in reversed(order):
            if node._backward_fn is None or node.grad is None:
                continue
            parent_grads = node._backward_fn(node.grad)
            for p, g in zip(node._parents, parent_grads):
                if g is None or not p.requires_grad:
                    continue
                p.grad = g.copy() if p.grad is None else p.grad + g

    # ---------- 运算符 ---------- #
    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return add_scalar(self, float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return sub(self, other)
        return add_scalar(self, -float(other))

    def __rsub__(self, other):
        return add_scalar(scale(self, -1.0), float(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable, op: str) -> Tensor:
    out = Tensor(data)
    out.op = op
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    return out


# ============== 逐元素 / 线性运算 ==============

def _broadcast_mode(op: str, a: Tensor, b: Tensor) -> str:
    if a.shape == b.shape:
        return "same"
    if a.data.ndim >= 1 and b.shape == a.shape[1:]:
        return "b_over_batch"
    if b.data.ndim >= 1 and a.shape == b.shape[1:]:
        return "a_over_batch"
    raise ShapeError(op, a.shape, b.shape)


def _reduce(g: np.ndarray, mode: str, which: str) -> np.ndarray:
    if (mode == "b_over_batch" and which == "b") or (mode == "a_over_batch" and which == "a"):
        return g.sum(axis=0)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    mode = _broadcast_mode("add", a, b)

    def backward(g):
        return _reduce(g, mode, "a"), _reduce(g, mode, "b")

    return _make(a.data + b.data, (a, b), backward, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    mode = _broadcast_mode("sub", a, b)

    def backward(g):
        return _reduce(g, mode, "a"), -_reduce(g, mode, "b")

    return _make(a.data - b.data, (a, b), backward, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    mode = _broadcast_mode("mul", a, b)

    def backward(g):
        return _reduce(g * b.data, mode, "a"), _reduce(g * a.data, mode, "b")

    return _make(a.data * b.data, (a, b), backward, "mul")


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make(a.data * c, (a,), lambda g: (g * c,), "scale")


def add_scalar(a: Tensor, c: float) -> Tensor:
    return _make(a.data + float(c), (a,), lambda g: (g,), "add_scalar")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)

    def backward(g):
        return g @ b.data.T, a.data.T @ g

    return _make(a.data @ b.data, (a, b), backward, "matmul")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def sigmoid(x: Tensor) -> Tensor:
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _make(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _make(y, (x,), lambda g: (g * (1.0 - y * y),), "tanh")


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return _make(y, (x,), lambda g: (g * y,), "exp")


def log(x: Tensor) -> Tensor:
    return _make(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def square(x: Tensor) -> Tensor:
    return _make(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,), "square")


def tabs(x: Tensor) -> Tensor:
    return _make(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),), "abs")


def maximum(x: Tensor, c: float) -> Tensor:
    """max(x, c)，c 为常数"""
    mask = x.data > c
    return _make(np.where(mask, x.data, c), (x,), lambda g: (g * mask,), "maximum")


def minimum(x: Tensor, c: float) -> Tensor:
    """min(x, c)，c 为常数"""
    mask = x.data < c
    return _make(np.where(mask, x.data, c), (x,), lambda g: (g * mask,), "minimum")


def _expand_reduced(g: np.ndarray, shape: tuple, axis) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g, shape)
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    axes = tuple(a % len(shape) for a in axes)
    return np.broadcast_to(np.expand_dims(g, axes), shape)


def tsum(x: Tensor, axis=None) -> Tensor:
    shape = x.shape
    return _make(np.sum(x.data, axis=axis), (x,), lambda g: (_expand_reduced(g, shape, axis).copy(),), "sum")


def mean(x: Tensor, axis=None) -> Tensor:
    shape = x.shape
    if axis is None:
        n = x.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        n = int(np.prod([shape[a] for a in axes]))
    return _make(np.mean(x.data, axis=axis), (x,), lambda g: (_expand_reduced(g, shape, axis) / n,), "mean")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise ShapeError("concat", *[u.shape for u in tensors])
    sizes = [t.shape[ax] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, cuts, axis=ax))

    return _make(np.concatenate([t.data for t in tensors], axis=ax), tensors, backward, "concat")


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    try:
        y = x.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", x.shape, shape)
    src = x.shape
    return _make(y, (x,), lambda g: (g.reshape(src),), "reshape")


def getitem(x: Tensor, key) -> Tensor:
    src = x.shape

    def backward(g):
        gx = np.zeros(src)
        np.add.at(gx, key, g)
        return (gx,)

    return _make(x.data[key], (x,), backward, "getitem")


def take(x: Tensor, indices) -> Tensor:
    """按第 0 维取行（可重复）"""
    idx = np.asarray(indices, dtype=np.int64)
    src = x.shape

    def backward(g):
        gx = np.zeros(src)
        np.add.at(gx, idx, g)
        return (gx,)

    return _make(x.data[idx], (x,), backward, "take")


def l2_norm(x: Tensor, axis=None) -> Tensor:
    n = np.sqrt(np.sum(x.data * x.data, axis=axis))
    shape = x.shape

    def backward(g):
        safe = np.where(n > 0, n, 1.0)
        return (_expand_reduced(g / safe, shape, axis) * x.data,)

    return _make(n, (x,), backward, "l2_norm")


def dot(a: Tensor, b: Tensor) -> Tensor:
    """向量点积；二维输入时逐行求点积"""
    if a.shape != b.shape or a.data.ndim not in (1, 2):
        raise ShapeError("dot", a.shape, b.shape)
    y = np.sum(a.data * b.data, axis=-1)

    def backward(g):
        ge = g[..., None] if a.data.ndim == 2 else g
        return ge * b.data, ge * a.data

    return _make(y, (a, b), backward, "dot")


def cosine_sim(a: Tensor, b: Tensor) -> Tensor:
    """sim(m, n) = mᵀn / (‖m‖‖n‖)；二维输入时逐行计算"""
    if a.shape != b.shape or a.data.ndim not in (1, 2):
        raise ShapeError("cosine_sim", a.shape, b.shape)
    na = np.sqrt(np.sum(a.data * a.data, axis=-1))
    nb = np.sqrt(np.sum(b.data * b.data, axis=-1))
    if np.any(na <= NORM_EPS) or np.any(nb <= NORM_EPS):
        raise DegenerateVectorError("cosine_sim: 输入向量范数为零（潜变量退化）")
    ab = np.sum(a.data * b.data, axis=-1)
    sim = ab / (na * nb)

    def backward(g):
        ex = (lambda v: v[..., None]) if a.data.ndim == 2 else (lambda v: v)
        ga = ex(g) * (b.data / ex(na * nb) - ex(sim) * a.data / ex(na * na))
        gb = ex(g) * (a.data / ex(na * nb) - ex(sim) * b.data / ex(nb * nb))
        return ga, gb

    return _make(sim, (a, b), backward, "cosine_sim")


def logsumexp(x: Tensor, axis: int = -1) -> Tensor:
    """log Σ exp(x)，先减去各行最大值（作为常数）再求和"""
    m = np.max(x.data, axis=axis, keepdims=True)
    shifted = sub(x, Tensor(np.broadcast_to(m, x.shape).copy()))
    return add(log(tsum(exp(shifted), axis=axis)), Tensor(np.squeeze(m, axis=axis)))


def dropout(x: Tensor, p: float, rng, training: bool = True) -> Tensor:
    if not training or p <= 0.0:
        return x
    keep = (rng.uniform(0.0, 1.0, x.shape) >= p).astype(np.float64) / (1.0 - p)
    return mul(x, Tensor(keep))


# ============== 卷积 / 采样 ==============

def conv2d(x: Tensor, w: Tensor, b: Optional[Tensor] = None, stride: int = 1, padding: int = 0) -> Tensor:
    """x: N×C×H×W, w: O×C×kh×kw, b: O；零填充，stride 为 1 或 2"""
    if x.data.ndim != 4 or w.data.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeError("conv2d", x.shape, w.shape)
    if b is not None and b.shape != (w.shape[0],):
        raise ShapeError("conv2d(bias)", w.shape, b.shape)
    if stride not in (1, 2):
        raise ValueError(f"conv2d: 不支持的 stride={stride}")
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    p, s = padding, stride
    ho = (h + 2 * p - kh) // s + 1
    wo = (wd + 2 * p - kw) // s + 1
    if ho < 1 or wo < 1:
        raise ShapeError("conv2d(输出为空)", x.shape, w.shape)
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p)))

    def window(i, j):
        return (slice(None), slice(None), slice(i, i + s * (ho - 1) + 1, s), slice(j, j + s * (wo - 1) + 1, s))

    out = np.zeros((n, o, ho, wo))
    for i in range(kh):
        for j in range(kw):
            out += np.einsum("nchw,oc->nohw", xp[window(i, j)], w.data[:, :, i, j], optimize=True)
    if b is not None:
        out += b.data[None, :, None, None]

    def backward(g):
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(w.data)
        for i in range(kh):
            for j in range(kw):
                win = window(i, j)
                gw[:, :, i, j] = np.einsum("nohw,nchw->oc", g, xp[win], optimize=True)
                gxp[win] += np.einsum("nohw,oc->nchw", g, w.data[:, :, i, j], optimize=True)
        gx = gxp[:, :, p:p + h, p:p + wd]
        gb = g.sum(axis=(0, 2, 3)) if b is not None else None
        return (gx, gw, gb) if b is not None else (gx, gw)

    parents = (x, w, b) if b is not None else (x, w)
    return _make(out, parents, backward, "conv2d")


def _bilinear_matrix(n: int) -> np.ndarray:
    """长度 n → 2n 的线性插值矩阵（align_corners=False，边界钳制）"""
    a = np.zeros((2 * n, n))
    for o in range(2 * n):
        src = min(max((o + 0.5) / 2.0 - 0.5, 0.0), n - 1.0)
        i0 = int(np.floor(src))
        i1 = min(i0 + 1, n - 1)
        w1 = src - i0
        a[o, i0] += 1.0 - w1
        a[o, i1] += w1
    return a


def upsample2x(x: Tensor, mode: str = "bilinear") -> Tensor:
    if x.data.ndim != 4:
        raise ShapeError("upsample2x", x.shape, ("N", "C", "H", "W"))
    if mode == "nearest":
        y = x.data.repeat(2, axis=2).repeat(2, axis=3)

        def backward(g):
            n, c, h2, w2 = g.shape
            return (g.reshape(n, c, h2 // 2, 2, w2 // 2, 2).sum(axis=(3, 5)),)

        return _make(y, (x,), backward, "upsample_nearest")
    if mode != "bilinear":
        raise ValueError(f"upsample2x: 未知插值方式 {mode}")
    ah = _bilinear_matrix(x.shape[2])
    aw = _bilinear_matrix(x.shape[3])
    y = np.einsum("ih,nchw,jw->ncij", ah, x.data, aw, optimize=True)

    def backward(g):
        return (np.einsum("ih,ncij,jw->nchw", ah, g, aw, optimize=True),)

    return _make(y, (x,), backward, "upsample_bilinear")


def avg_pool2d(x: Tensor, k: int) -> Tensor:
    n, c, h, w = x.shape
    if h % k or w % k:
        raise ShapeError(f"avg_pool2d(k={k})", x.shape)
    y = x.data.reshape(n, c, h // k, k, w // k, k).mean(axis=(3, 5))

    def backward(g):
        return (g.repeat(k, axis=2).repeat(k, axis=3) / (k * k),)

    return _make(y, (x,), backward, "avg_pool2d")


def grid_sample(img: Tensor, grid: Tensor) -> Tensor:
    """
    双线性采样，越界部分按零填充（align_corners=False 约定）
    img: N×C×H×W；grid: N×h×w×2，最后一维为归一化坐标 (x, y) ∈ [-1, 1]
    """
    if img.data.ndim != 4 or grid.data.ndim != 4 or grid.shape[-1] != 2 or grid.shape[0] != img.shape[0]:
        raise ShapeError("grid_sample", img.shape, grid.shape)
    n, c, hh, ww = img.shape
    px = ((grid.data[..., 0] + 1.0) * ww - 1.0) / 2.0
    py = ((grid.data[..., 1] + 1.0) * hh - 1.0) / 2.0
    x0 = np.floor(px).astype(np.int64)
    y0 = np.floor(py).astype(np.int64)
    wx1 = px - x0
    wy1 = py - y0
    wx0 = 1.0 - wx1
    wy0 = 1.0 - wy1
    nb = np.arange(n)[:, None, None]
    img_t = img.data.transpose(0, 2, 3, 1)

    def corner(yy, xx):
        valid = (xx >= 0) & (xx < ww) & (yy >= 0) & (yy < hh)
        yc = np.clip(yy, 0, hh - 1)
        xc = np.clip(xx, 0, ww - 1)
        vals = img_t[nb, yc, xc] * valid[..., None]
        return yc, xc, valid, vals

    c00 = corner(y0, x0)
    c01 = corner(y0, x0 + 1)
    c10 = corner(y0 + 1, x0)
    c11 = corner(y0 + 1, x0 + 1)
    weights = ((c00, wy0 * wx0), (c01, wy0 * wx1), (c10, wy1 * wx0), (c11, wy1 * wx1))
    out_t = sum(cr[3] * wgt[..., None] for cr, wgt in weights)

    def backward(g):
        g_t = g.transpose(0, 2, 3, 1)
        gimg = np.zeros_like(img.data)
        gimg_t = gimg.transpose(0, 2, 3, 1)
        for (yc, xc, valid, _), wgt in weights:
            np.add.at(gimg_t, (nb, yc, xc), g_t * (wgt * valid)[..., None])
        v00, v01, v10, v11 = c00[3], c01[3], c10[3], c11[3]
        dpx = np.sum(g_t * ((v01 - v00) * wy0[..., None] + (v11 - v10) * wy1[..., None]), axis=-1)
        dpy = np.sum(g_t * ((v10 - v00) * wx0[..., None] + (v11 - v01) * wx1[..., None]), axis=-1)
        ggrid = np.stack([dpx * ww / 2.0, dpy * hh / 2.0], axis=-1)
        return gimg, ggrid

    return _make(out_t.transpose(0, 3, 1, 2).copy(), (img, grid), backward, "grid_sample")


def _pixel_centers(n: int) -> np.ndarray:
    return (2.0 * np.arange(n) + 1.0) / n - 1.0


def affine_grid(box: Tensor, h: int, w: int) -> Tensor:
    """
    box: N×4，列为 (s_x, s_y, u_x, u_y)
    输出 N×h×w×2：x = u_x + s_x·x_out，y = u_y + s_y·y_out
    """
    if box.data.ndim != 2 or box.shape[1] != 4:
        raise ShapeError("affine_grid", box.shape, ("N", 4))
    xs = _pixel_centers(w)
    ys = _pixel_centers(h)
    b = box.data
    gx = b[:, 2, None, None] + b[:, 0, None, None] * xs[None, None, :]
    gy = b[:, 3, None, None] + b[:, 1, None, None] * ys[None, :, None]
    grid = np.stack(np.broadcast_arrays(gx, gy), axis=-1)

    def backward(g):
        gb = np.stack([
            np.sum(g[..., 0] * xs[None, None, :], axis=(1, 2)),
            np.sum(g[..., 1] * ys[None, :, None], axis=(1, 2)),
            np.sum(g[..., 0], axis=(1, 2)),
            np.sum(g[..., 1], axis=(1, 2)),
        ], axis=1)
        return (gb,)

    return _make(grid, (box,), backward, "affine_grid")


def inverse_affine_grid(box: Tensor, h: int, w: int) -> Tensor:
    """
    affine_grid 的逆映射：对整帧 h×w 的每个像素给出其在裁剪坐标系中的位置
    x_crop = (X − u_x) / s_x
    """
    if box.data.ndim != 2 or box.shape[1] != 4:
        raise ShapeError("inverse_affine_grid", box.shape, ("N", 4))
    xs = _pixel_centers(w)
    ys = _pixel_centers(h)
    sx, sy = box.data[:, 0, None, None], box.data[:, 1, None, None]
    ux, uy = box.data[:, 2, None, None], box.data[:, 3, None, None]
    dx = xs[None, None, :] - ux
    dy = ys[None, :, None] - uy
    gx = dx / sx
    gy = dy / sy
    grid = np.stack(np.broadcast_arrays(gx, gy), axis=-1)

    def backward(g):
        g0 = g[..., 0]
        g1 = g[..., 1]
        gb = np.stack([
            np.sum(g0 * (-dx / (sx * sx)), axis=(1, 2)),
            np.sum(g1 * (-dy / (sy * sy)), axis=(1, 2)),
            np.sum(g0 * (-1.0 / sx), axis=(1, 2)),
            np.sum(g1 * (-1.0 / sy), axis=(1, 2)),
        ], axis=1)
        return (gb,)

    return _make(grid, (box,), backward, "inverse_affine_grid")
