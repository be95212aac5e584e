# synth/background.py

import numpy as np

BACKGROUND_METHODS = ("median", "first-last")


def estimate_background(frames: np.ndarray, method: str = "median") -> np.ndarray:
    """
    由整段视频估计静态背景，frames: T×3×H×W → 3×H×W

    median     逐像素、逐通道取中值
    first-last 第一帧的下半部分 + 最后一帧的上半部分（主体自上而下穿过画面的下落片段）
    """
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 4:
        raise ValueError(f"frames 需要 T×3×H×W，当前形状 {frames.shape}")
    if method == "median":
        if frames.shape[0] < 3:
            raise ValueError(f"中值背景至少需要 3 帧，当前 {frames.shape[0]} 帧")
        return np.median(frames, axis=0)
    if method == "first-last":
        if frames.shape[0] < 2:
            raise ValueError("first-last 背景至少需要 2 帧")
        h = frames.shape[2]
        bg = frames[-1].copy()
        bg[:, h // 2:, :] = frames[0][:, h // 2:, :]
        return bg
    raise ValueError(f"未知的背景估计方法: {method}（可选 {BACKGROUND_METHODS}）")
