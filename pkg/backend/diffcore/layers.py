# diffcore/layers.py

from typing import Iterator, List, Tuple

import numpy as np

from diffcore.rng import Rng
from diffcore.tensor import Tensor, add, conv2d, matmul


class Module:
    """参数容器：按属性定义顺序收集 Tensor 参数与子模块"""

    def named_parameters(self, prefix: str = "") -> List[Tuple[str, Tensor]]:
        found = []
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor):
                found.append((full, value))
            elif isinstance(value, Module):
                found.extend(value.named_parameters(full + "."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        found.extend(item.named_parameters(f"{full}.{i}."))
        return found

    def parameters(self) -> Iterator[Tensor]:
        for _, p in self.named_parameters():
            yield p

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def freeze(self):
        """冻结：参数不再参与求导"""
        for p in self.parameters():
            p.requires_grad = False


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: Rng):
        # He 初始化
        std = np.sqrt(2.0 / in_features)
        self.weight = Tensor(rng.normal(0.0, std, (in_features, out_features)), requires_grad=True)
        self.bias = Tensor(np.zeros(out_features), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return add(matmul(x, self.weight), self.bias)


class Conv2d(Module):
    def __init__(self, in_ch: int, out_ch: int, kernel: int, rng: Rng, stride: int = 1, padding: int = 1):
        std = np.sqrt(2.0 / (in_ch * kernel * kernel))
        self.weight = Tensor(rng.normal(0.0, std, (out_ch, in_ch, kernel, kernel)), requires_grad=True)
        self.bias = Tensor(np.zeros(out_ch), requires_grad=True)
        self.stride = stride
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)
