# tools/__init__.py
"""
工具模块 - 梯度校验套件（gradcheck 子命令）
"""

from .gradcheck_suite import GRAD_CASES, CaseResult, run_suite, tiny_experiment

__all__ = ['GRAD_CASES', 'CaseResult', 'run_suite', 'tiny_experiment']
