# evalkit/metrics.py

import numpy as np

from errors import ShapeError


def _check(pred: np.ndarray, label: np.ndarray):
    pred = np.asarray(pred, dtype=np.float64)
    label = np.asarray(label, dtype=np.float64)
    if pred.shape != label.shape or pred.ndim != 3:
        raise ShapeError("pose metric", pred.shape, label.shape)
    return pred, label


def mpjpe(pred: np.ndarray, label: np.ndarray) -> float:
    """平均关节位置误差（N×K×D）"""
    pred, label = _check(pred, label)
    return float(np.mean(np.linalg.norm(pred - label, axis=-1)))


def optimal_scale(pred: np.ndarray, label: np.ndarray) -> np.ndarray:
    """
    每个样本的最小二乘尺度 s* = ⟨p, l⟩ / ⟨p, p⟩（对全部关节坐标）
    预测全为零时 s* 记为 0
    """
    flat_p = pred.reshape(pred.shape[0], -1)
    flat_l = label.reshape(label.shape[0], -1)
    pp = np.sum(flat_p * flat_p, axis=1)
    pl = np.sum(flat_p * flat_l, axis=1)
    return np.where(pp > 0, pl / np.where(pp > 0, pp, 1.0), 0.0)


def n_mpjpe(pred: np.ndarray, label: np.ndarray) -> float:
    """先把预测按最优尺度对齐到标签，再算 MPJPE"""
    pred, label = _check(pred, label)
    s = optimal_scale(pred, label)
    return mpjpe(pred * s[:, None, None], label)


def mse_2d_percent(pred: np.ndarray, label: np.ndarray, image_size: float) -> float:
    """关键点平方距离的均值除以图像尺寸，以百分比表示"""
    pred, label = _check(pred, label)
    if image_size <= 0:
        raise ValueError("image_size 必须为正")
    return float(100.0 * np.mean(np.sum((pred - label) ** 2, axis=-1)) / image_size)
