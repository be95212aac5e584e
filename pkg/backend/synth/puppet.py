# synth/puppet.py
"""
二维木偶合成视频

- 骨架以骨盆为根：躯干向上到颈部，头部、两只手臂挂在颈部，两条腿挂在骨盆
- 关节角做均值回复随机游走（每步变化被截断到 max_step），保证时间上平滑
- 用抗锯齿的彩色胶囊绘制在每个片段自己的静态背景上
"""

import colorsys
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from config import PELVIS_INDEX
from diffcore.rng import Rng
from errors import TrajectoryError
from schemas import PuppetConfig

MIN_CANVAS = 32
FOREGROUND_THRESHOLD = 0.1

# 关节角顺序与均值（弧度，图像坐标 y 轴向下）
# 躯干、头、手臂相对躯干；腿是绝对方向，与躯干无关
ANGLE_NAMES = [
    "torso", "head",
    "left_shoulder", "left_elbow", "right_shoulder", "right_elbow",
    "left_hip", "left_knee", "right_hip", "right_knee",
]
ANGLE_MEANS = np.array([
    0.0, 0.0,
    np.pi + 0.6, 0.3, np.pi - 0.6, -0.3,
    np.pi / 2 + 0.25, 0.0, np.pi / 2 - 0.25, 0.0,
])

# 部位绘制顺序：腿、躯干、手臂、头
PART_NAMES = ["head", "torso", "arms", "legs"]


@dataclass(frozen=True)
class VideoClip:
    """一个片段的像素与全部真值；创建后不再修改"""
    clip_id: str
    frames: np.ndarray            # T×3×H×W, [0, 1]
    keypoints: np.ndarray         # T×K×2，像素坐标 (x, y)
    background: np.ndarray        # 3×H×W
    fg_fraction: np.ndarray       # T
    appearance: np.ndarray        # 4×3，按 PART_NAMES 顺序
    appearance_label: int
    kind: str = "pose"            # pose | fall
    meta: Dict = field(default_factory=dict)

    @property
    def length(self) -> int:
        return int(self.frames.shape[0])

    @property
    def timestamps(self) -> np.ndarray:
        return np.arange(self.length)

    @property
    def keypoints_centered(self) -> np.ndarray:
        """骨盆为原点的关键点（探针回归的目标）"""
        return self.keypoints - self.keypoints[:, PELVIS_INDEX:PELVIS_INDEX + 1, :]

    @property
    def pelvis(self) -> np.ndarray:
        return self.keypoints[:, PELVIS_INDEX, :]


# ============== 骨架几何 ==============

def _direction(angle: np.ndarray) -> np.ndarray:
    return np.stack([np.cos(angle), np.sin(angle)], axis=-1)


def skeleton_points(angles: np.ndarray, lengths: Dict[str, float]) -> Dict[str, np.ndarray]:
    """
    angles: T×10，返回以骨盆为原点的各骨架点（每个 T×2）
    """
    a = {name: angles[:, i] for i, name in enumerate(ANGLE_NAMES)}
    torso_abs = -np.pi / 2 + a["torso"]
    pelvis = np.zeros((angles.shape[0], 2))
    neck = pelvis + lengths["torso"] * _direction(torso_abs)
    head = neck + lengths["head"] * _direction(torso_abs + a["head"])
    pts = {"pelvis": pelvis, "neck": neck, "head": head}
    for side in ("left", "right"):
        upper = torso_abs + a[f"{side}_shoulder"]
        elbow = neck + lengths["upper_arm"] * _direction(upper)
        hand = elbow + lengths["lower_arm"] * _direction(upper + a[f"{side}_elbow"])
        hip = a[f"{side}_hip"]
        knee = pelvis + lengths["thigh"] * _direction(hip)
        foot = knee + lengths["shin"] * _direction(hip + a[f"{side}_knee"])
        pts.update({f"{side}_elbow": elbow, f"{side}_hand": hand, f"{side}_knee": knee, f"{side}_foot": foot})
    return pts


def _segments(pts: Dict[str, np.ndarray]) -> List[Tuple[str, str, str]]:
    # (部位, 起点, 终点)，按绘制顺序
    return [
        ("legs", "pelvis", "left_knee"), ("legs", "left_knee", "left_foot"),
        ("legs", "pelvis", "right_knee"), ("legs", "right_knee", "right_foot"),
        ("torso", "pelvis", "neck"),
        ("arms", "neck", "left_elbow"), ("arms", "left_elbow", "left_hand"),
        ("arms", "neck", "right_elbow"), ("arms", "right_elbow", "right_hand"),
    ]


def pose_step_bound(cfg: PuppetConfig) -> float:
    """
    相邻帧关键点位移上界（非下落片段，骨盆固定）
    每条链上第 i 个关节角转动 ≤ max_step，末端位移 ≤ max_step · Σ_i (第 i 个关节到末端的长度和)
    """
    L = cfg.limb_lengths
    chains = [
        [L["torso"], L["head"]],
        [L["torso"], L["upper_arm"], L["lower_arm"]],
        [L["thigh"], L["shin"]],
    ]
    return cfg.max_step * max(sum(sum(chain[i:]) for i in range(len(chain))) for chain in chains)


def puppet_reach(cfg: PuppetConfig) -> float:
    """骨盆到木偶任意可见像素的最大距离"""
    L = cfg.limb_lengths
    return max(
        L["torso"] + L["head"] + cfg.head_radius,
        L["torso"] + L["upper_arm"] + L["lower_arm"] + cfg.limb_radius,
        L["thigh"] + L["shin"] + cfg.limb_radius,
    ) + 1.0


# ============== 随机过程 ==============

def simulate_angles(cfg: PuppetConfig, T: int, rng: Rng) -> np.ndarray:
    """均值回复随机游走，返回 T×10 的关节角"""
    kappa, sigma = cfg.mean_reversion, cfg.noise_scale
    n = len(ANGLE_NAMES)
    stationary = 1.0 - (1.0 - kappa) ** 2
    init_std = sigma / np.sqrt(stationary) if stationary > 0 else sigma
    angles = np.empty((T, n))
    angles[0] = ANGLE_MEANS + np.clip(rng.normal(0.0, 1.0, n) * init_std, -3 * init_std, 3 * init_std) if sigma > 0 else ANGLE_MEANS
    noise = rng.normal(0.0, 1.0, (T, n))
    for t in range(1, T):
        step = kappa * (ANGLE_MEANS - angles[t - 1]) + sigma * noise[t]
        angles[t] = angles[t - 1] + np.clip(step, -cfg.max_step, cfg.max_step)
    return angles


def random_appearance(rng: Rng) -> np.ndarray:
    """每个片段一套配色：同一基色相，不同部位错开色相与明度"""
    base = rng.uniform(0.0, 1.0)
    offsets = [0.0, 0.08, 0.5, 0.58]
    colors = []
    for off in offsets:
        s = rng.uniform(0.55, 0.9)
        v = rng.uniform(0.75, 1.0)
        colors.append(colorsys.hsv_to_rgb((base + off) % 1.0, s, v))
    return np.array(colors)


def random_background(canvas: Tuple[int, int], rng: Rng) -> np.ndarray:
    """低对比度的平滑背景：竖直渐变 + 低频纹理，整体偏暗以区分前景"""
    h, w = canvas
    top = rng.uniform(0.05, 0.35, 3)
    bottom = rng.uniform(0.05, 0.35, 3)
    ys = np.linspace(0.0, 1.0, h)[:, None]
    xs = np.linspace(0.0, 1.0, w)[None, :]
    freq = rng.uniform(1.0, 3.0, 2)
    phase = rng.uniform(0.0, 2 * np.pi, 2)
    texture = 0.05 * np.sin(2 * np.pi * freq[0] * xs + phase[0]) * np.cos(2 * np.pi * freq[1] * ys + phase[1])
    bg = top[:, None, None] * (1 - ys)[None] + bottom[:, None, None] * ys[None] + texture[None]
    return np.clip(bg, 0.0, 1.0)


# ============== 渲染 ==============

def _segment_distance(px: np.ndarray, py: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    denom = float(ab @ ab)
    if denom <= 1e-12:
        return np.hypot(px - a[0], py - a[1])
    t = np.clip(((px - a[0]) * ab[0] + (py - a[1]) * ab[1]) / denom, 0.0, 1.0)
    return np.hypot(px - (a[0] + t * ab[0]), py - (a[1] + t * ab[1]))


def render_frame(pts: Dict[str, np.ndarray], background: np.ndarray, appearance: np.ndarray,
                 limb_radius: float, head_radius: float) -> Tuple[np.ndarray, float]:
    """
    pts: 单帧各骨架点的像素坐标；覆盖度 = clip(r + 0.5 − dist, 0, 1)
    返回 (3×H×W 图像, 前景覆盖率)
    """
    _, h, w = background.shape
    px = np.arange(w)[None, :] + 0.5
    py = np.arange(h)[:, None] + 0.5
    img = background.copy()
    alpha = np.zeros((h, w))
    part_color = dict(zip(PART_NAMES, appearance))
    for part, start, end in _segments(pts):
        d = _segment_distance(px, py, pts[start], pts[end])
        cov = np.clip(limb_radius + 0.5 - d, 0.0, 1.0)
        img = img * (1.0 - cov)[None] + part_color[part][:, None, None] * cov[None]
        alpha = 1.0 - (1.0 - alpha) * (1.0 - cov)
    d = np.hypot(px - pts["head"][0], py - pts["head"][1])
    cov = np.clip(head_radius + 0.5 - d, 0.0, 1.0)
    img = img * (1.0 - cov)[None] + part_color["head"][:, None, None] * cov[None]
    alpha = 1.0 - (1.0 - alpha) * (1.0 - cov)
    return np.clip(img, 0.0, 1.0), float(alpha.mean())


def _keypoint_array(pts: Dict[str, np.ndarray], names: Sequence[str]) -> np.ndarray:
    return np.stack([pts[n] for n in names], axis=1)


def _check_canvas(cfg: PuppetConfig, T: int):
    h, w = cfg.canvas
    if T < 4:
        raise ValueError(f"片段长度至少为 4，当前 T={T}")
    if h < MIN_CANVAS or w < MIN_CANVAS:
        raise ValueError(f"画布至少 {MIN_CANVAS}×{MIN_CANVAS}，当前 {h}×{w}")


def _render_clip(cfg: PuppetConfig, rel: Dict[str, np.ndarray], pelvis: np.ndarray, scale: np.ndarray,
                 rng: Rng, clip_id: str, label: int, kind: str, meta: Dict) -> VideoClip:
    appearance = np.asarray(cfg.appearance, dtype=np.float64) if cfg.appearance else random_appearance(rng.substream(1))
    background = random_background(tuple(cfg.canvas), rng.substream(2))
    T = pelvis.shape[0]
    h, w = cfg.canvas
    frames = np.empty((T, 3, h, w))
    fg = np.empty(T)
    placed = {name: pelvis + scale[:, None] * p for name, p in rel.items()}
    for t in range(T):
        frame_pts = {name: p[t] for name, p in placed.items()}
        frames[t], fg[t] = render_frame(frame_pts, background, appearance,
                                        cfg.limb_radius * scale[t], cfg.head_radius * scale[t])
    keypoints = _keypoint_array(placed, cfg.joint_names)
    return VideoClip(clip_id=clip_id, frames=frames, keypoints=keypoints, background=background,
                     fg_fraction=fg, appearance=appearance, appearance_label=label, kind=kind, meta=meta)


def generate_clip(cfg: PuppetConfig, T: int, rng: Rng, clip_id: str = "clip-0", label: int = 0) -> VideoClip:
    """骨盆固定在随机位置，姿态随时间平滑变化"""
    _check_canvas(cfg, T)
    h, w = cfg.canvas
    reach = puppet_reach(cfg)
    if 2 * reach >= min(h, w):
        raise ValueError(f"木偶尺寸（半径 {reach:.1f}px）超出画布 {h}×{w}")
    angles = simulate_angles(cfg, T, rng.substream(0))
    rel = skeleton_points(angles, cfg.limb_lengths)
    center = np.array([rng.uniform(reach, w - reach), rng.uniform(reach, h - reach)])
    pelvis = np.repeat(center[None], T, axis=0)
    return _render_clip(cfg, rel, pelvis, np.ones(T), rng, clip_id, label, "pose",
                        {"pelvis_start": center.tolist()})


def fall_positions(cfg: PuppetConfig, T: int, g, v0, p0) -> Tuple[np.ndarray, np.ndarray]:
    """
    骨盆轨迹 p(t) = 0.5·g·t² + v0·t + p0 在像素平面上的投影，返回 (T×2 位置, T 缩放)
    透视模式：以画布中心为主点，缩放 Z / (Z + depth(t))，depth(t) = depth_velocity · t
    """
    t = np.arange(T, dtype=np.float64)[:, None]
    g, v0, p0 = (np.asarray(v, dtype=np.float64).reshape(1, 2) for v in (g, v0, p0))
    world = 0.5 * g * t * t + v0 * t + p0
    if cfg.fall_mode == "orthographic":
        return world, np.ones(T)
    if cfg.fall_mode != "perspective":
        raise ValueError("generate_fall_clip 需要 fall_mode 为 orthographic 或 perspective")
    h, w = cfg.canvas
    c = np.array([[w / 2.0, h / 2.0]])
    z = cfg.camera_distance
    factor = z / (z + cfg.depth_velocity * t[:, 0])
    return c + (world - c) * factor[:, None], factor


def generate_fall_clip(cfg: PuppetConfig, T: int, g, v0, p0, rng: Rng,
                       clip_id: str = "fall-0", label: int = 0) -> VideoClip:
    """骨盆按抛体轨迹运动；轨迹离开画面时在第一个越界帧报错"""
    _check_canvas(cfg, T)
    h, w = cfg.canvas
    pelvis, scale = fall_positions(cfg, T, g, v0, p0)
    outside = (pelvis[:, 0] < 0) | (pelvis[:, 0] >= w) | (pelvis[:, 1] < 0) | (pelvis[:, 1] >= h)
    if np.any(outside):
        t_bad = int(np.argmax(outside))
        raise TrajectoryError(t_bad, pelvis[t_bad])
    angles = simulate_angles(cfg, T, rng.substream(0))
    rel = skeleton_points(angles, cfg.limb_lengths)
    meta = {"gravity": list(map(float, np.ravel(g))), "v0": list(map(float, np.ravel(v0))),
            "p0": list(map(float, np.ravel(p0))), "fall_mode": cfg.fall_mode}
    return _render_clip(cfg, rel, pelvis, scale, rng, clip_id, label, "fall", meta)


def foreground_mask(frame: np.ndarray, background: np.ndarray, threshold: float = FOREGROUND_THRESHOLD) -> np.ndarray:
    """与已知背景任一通道相差超过阈值的像素记为前景，返回 H×W 的 0/1 数组"""
    return (np.abs(frame - background).max(axis=0) > threshold).astype(np.float64)


def appearance_signature(frame: np.ndarray, mask: Optional[np.ndarray] = None,
                         background: Optional[np.ndarray] = None) -> np.ndarray:
    """前景掩码内的平均颜色；未给掩码时用与背景的差异估计前景"""
    if mask is None:
        if background is None:
            raise ValueError("需要 mask 或 background 之一")
        mask = foreground_mask(frame, background)
    weight = mask.sum()
    if weight <= 0:
        return np.zeros(frame.shape[0])
    return (frame * mask[None]).reshape(frame.shape[0], -1).sum(axis=1) / weight
