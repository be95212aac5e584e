# trainer/optimizer.py

from typing import Dict, List, Tuple

import numpy as np

from config import ADAM_BETAS, ADAM_EPS
from diffcore.tensor import Tensor


class Adam:
    """一阶/二阶矩自适应优化器，恒定学习率；没有梯度或已冻结的参数本步不更新"""

    def __init__(self, params: List[Tuple[str, Tensor]], lr: float,
                 betas: Tuple[float, float] = ADAM_BETAS, eps: float = ADAM_EPS):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m: Dict[str, np.ndarray] = {n: np.zeros_like(p.data) for n, p in self.params}
        self.v: Dict[str, np.ndarray] = {n: np.zeros_like(p.data) for n, p in self.params}

    def zero_grad(self):
        for _, p in self.params:
            p.grad = None

    def step(self):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params:
            if p.grad is None or not p.requires_grad:
                continue
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * p.grad * p.grad
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    # ---------- 状态读写（随检查点保存） ---------- #
    def state_arrays(self) -> List[Tuple[str, np.ndarray]]:
        out = []
        for name, _ in self.params:
            out.append((f"adam.m.{name}", self.m[name]))
            out.append((f"adam.v.{name}", self.v[name]))
        return out

    def load_state(self, arrays: Dict[str, np.ndarray], t: int):
        for name, _ in self.params:
            self.m[name] = np.array(arrays[f"adam.m.{name}"], dtype=np.float64)
            self.v[name] = np.array(arrays[f"adam.v.{name}"], dtype=np.float64)
        self.t = int(t)
