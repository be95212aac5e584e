# diffcore/__init__.py
"""
diffcore - float64 张量与反向模式自动微分
"""

from .tensor import Tensor, no_grad
from .rng import Rng
from .gradcheck import GradCheckReport, grad_check, grad_check_tensor

__all__ = ['Tensor', 'no_grad', 'Rng', 'GradCheckReport', 'grad_check', 'grad_check_tensor']
