# evalkit/__init__.py
"""
评估工具 - 姿态误差指标、交换检验、基线对比与报告输出
"""

from .metrics import mpjpe, mse_2d_percent, n_mpjpe
from .swap_transfer import SwapTransferScore, swap_transfer_score

__all__ = ['mpjpe', 'mse_2d_percent', 'n_mpjpe', 'SwapTransferScore', 'swap_transfer_score']
