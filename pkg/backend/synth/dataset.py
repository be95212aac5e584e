# synth/dataset.py
"""
合成数据集的构建与读写

目录结构：
    <root>/dataset.json                 种子、生成配置、各划分的片段编号
    <root>/clips/<clip_id>/frames.bin   T×3×H×W 张量文件
    <root>/clips/<clip_id>/background.bin
    <root>/clips/<clip_id>/meta.json    关键点、外观标签、前景覆盖率，以及生成配置与种子

张量文件：魔数 b"PSVT" | u32 维数 | 每维 u64 长度 | 小端 float64 数据
"""

import json
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from diffcore.rng import Rng
from errors import TrajectoryError
from schemas import DatasetConfig, PuppetConfig
from synth.background import estimate_background
from synth.puppet import VideoClip, generate_clip, generate_fall_clip

TENSOR_MAGIC = b"PSVT"
STREAM_DATASET = 1
FALL_MARGIN = 4.0
FALL_ATTEMPTS = 20
SPLITS = ("train", "val", "test")


# ============== 张量文件 ============== #

def write_tensor_file(path: str, array: np.ndarray):
    array = np.ascontiguousarray(array, dtype="<f8")
    with open(path, "wb") as f:
        f.write(TENSOR_MAGIC)
        f.write(struct.pack("<I", array.ndim))
        f.write(struct.pack(f"<{array.ndim}Q", *array.shape))
        f.write(array.tobytes(order="C"))


def read_tensor_file(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != TENSOR_MAGIC:
            raise ValueError(f"{path}: 不是张量文件（魔数 {magic!r}）")
        (ndim,) = struct.unpack("<I", f.read(4))
        shape = struct.unpack(f"<{ndim}Q", f.read(8 * ndim))
        payload = f.read()
    expected = 8 * int(np.prod(shape))
    if len(payload) != expected:
        raise ValueError(f"{path}: 数据长度 {len(payload)} 与形状 {shape} 不符")
    return np.frombuffer(payload, dtype="<f8").reshape(shape).astype(np.float64)


# ============== 数据集 ============== #

@dataclass
class SyntheticDataset:
    train: List[VideoClip]
    val: List[VideoClip]
    test: List[VideoClip]
    seed: int = 0
    puppet: Dict = field(default_factory=dict)
    dataset: Dict = field(default_factory=dict)
    _bg_cache: Dict = field(default_factory=dict, repr=False)

    def split(self, name: str) -> List[VideoClip]:
        if name not in SPLITS:
            raise ValueError(f"未知的数据划分: {name}")
        return getattr(self, name)

    @property
    def all_clips(self) -> List[VideoClip]:
        return self.train + self.val + self.test

    def background_for(self, clip: VideoClip, method: str = "median") -> np.ndarray:
        """训练时合成用的背景；估计结果按片段缓存"""
        if method == "known":
            return clip.background
        key = (clip.clip_id, method)
        if key not in self._bg_cache:
            self._bg_cache[key] = estimate_background(clip.frames, method)
        return self._bg_cache[key]


def _fall_trajectory(puppet: PuppetConfig, data: DatasetConfig, rng: Rng):
    """抽取初速度并把起点放在能让整段轨迹留在画面内的位置"""
    h, w = puppet.canvas
    T = data.clip_length
    t = np.arange(T, dtype=np.float64)
    g = np.array([0.0, data.fall_gravity])
    v0 = np.array([rng.uniform(*data.fall_v0_x), rng.uniform(*data.fall_v0_y)])
    p0 = np.empty(2)
    for axis, extent in ((0, w), (1, h)):
        offset = 0.5 * g[axis] * t * t + v0[axis] * t
        low = FALL_MARGIN - offset.min()
        high = extent - FALL_MARGIN - offset.max()
        if low > high:
            raise ValueError(
                f"下落轨迹放不进 {h}×{w} 画布（T={T}, g={data.fall_gravity}），请减小 clip_length 或 fall_gravity")
        p0[axis] = rng.uniform(low, high)
    return g, v0, p0


def _make_clip(puppet: PuppetConfig, data: DatasetConfig, seed: int, index: int, split: str) -> VideoClip:
    rng = Rng(seed, (STREAM_DATASET, index))
    clip_id = f"{split}-{index:03d}"
    if data.kind == "pose":
        return generate_clip(puppet, data.clip_length, rng, clip_id=clip_id, label=index)
    last_error: Optional[TrajectoryError] = None
    for attempt in range(FALL_ATTEMPTS):
        g, v0, p0 = _fall_trajectory(puppet, data, rng.substream(10, attempt))
        try:
            return generate_fall_clip(puppet, data.clip_length, g, v0, p0, rng, clip_id=clip_id, label=index)
        except TrajectoryError as e:
            last_error = e
    raise last_error


def build_dataset(puppet: PuppetConfig, data: DatasetConfig, seed: int) -> SyntheticDataset:
    """按片段划分 train / val / test；每个片段独立的随机流，结果与线程数无关"""
    if data.kind == "fall" and puppet.fall_mode == "off":
        raise ValueError("fall 数据集需要 puppet.fall_mode 为 orthographic 或 perspective")
    plan = []
    for split in SPLITS:
        for _ in range(getattr(data, f"{split}_clips")):
            plan.append((len(plan), split))

    print(f"🧩 生成 {len(plan)} 个片段（{data.kind}，每段 {data.clip_length} 帧，workers={data.workers}）")
    if data.workers > 1:
        with ThreadPoolExecutor(max_workers=data.workers) as pool:
            clips = list(pool.map(lambda item: _make_clip(puppet, data, seed, item[0], item[1]), plan))
    else:
        clips = [_make_clip(puppet, data, seed, i, split) for i, split in plan]

    by_split = {s: [c for c, (_, split) in zip(clips, plan) if split == s] for s in SPLITS}
    print(f"✅ 数据集生成完成: train={len(by_split['train'])}, val={len(by_split['val'])}, test={len(by_split['test'])}")
    return SyntheticDataset(
        train=by_split["train"], val=by_split["val"], test=by_split["test"], seed=seed,
        puppet=puppet.model_dump(mode="json"), dataset=data.model_dump(mode="json"),
    )


def _dump_json(path: str, obj):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, ensure_ascii=False, indent=2, sort_keys=True)
        f.write("\n")


def save_dataset(ds: SyntheticDataset, root: str):
    os.makedirs(os.path.join(root, "clips"), exist_ok=True)
    splits = {s: [c.clip_id for c in ds.split(s)] for s in SPLITS}
    _dump_json(os.path.join(root, "dataset.json"),
               {"seed": ds.seed, "puppet": ds.puppet, "dataset": ds.dataset, "splits": splits})
    for split in SPLITS:
        for clip in ds.split(split):
            clip_dir = os.path.join(root, "clips", clip.clip_id)
            os.makedirs(clip_dir, exist_ok=True)
            write_tensor_file(os.path.join(clip_dir, "frames.bin"), clip.frames)
            write_tensor_file(os.path.join(clip_dir, "background.bin"), clip.background)
            _dump_json(os.path.join(clip_dir, "meta.json"), {
                "clip_id": clip.clip_id,
                "split": split,
                "kind": clip.kind,
                "appearance_label": clip.appearance_label,
                "appearance": clip.appearance.tolist(),
                "keypoints": clip.keypoints.tolist(),
                "fg_fraction": clip.fg_fraction.tolist(),
                "meta": clip.meta,
                # 片段的随机流为 Rng(seed, (STREAM_DATASET, 片段序号))，序号即 clip_id 的数字部分
                "generation": {"seed": ds.seed, "puppet": ds.puppet, "dataset": ds.dataset},
            })
    print(f"💾 数据集已保存到 {root}")


def load_dataset(root: str) -> SyntheticDataset:
    index_path = os.path.join(root, "dataset.json")
    if not os.path.exists(index_path):
        raise FileNotFoundError(f"找不到数据集索引 {index_path}，请先运行 gen")
    with open(index_path, "r", encoding="utf-8") as f:
        index = json.load(f)
    loaded = {}
    for split in SPLITS:
        clips = []
        for clip_id in index["splits"][split]:
            clip_dir = os.path.join(root, "clips", clip_id)
            with open(os.path.join(clip_dir, "meta.json"), "r", encoding="utf-8") as f:
                meta = json.load(f)
            clips.append(VideoClip(
                clip_id=clip_id,
                frames=read_tensor_file(os.path.join(clip_dir, "frames.bin")),
                keypoints=np.asarray(meta["keypoints"], dtype=np.float64),
                background=read_tensor_file(os.path.join(clip_dir, "background.bin")),
                fg_fraction=np.asarray(meta["fg_fraction"], dtype=np.float64),
                appearance=np.asarray(meta["appearance"], dtype=np.float64),
                appearance_label=int(meta["appearance_label"]),
                kind=meta["kind"],
                meta=meta["meta"],
            ))
        loaded[split] = clips
    return SyntheticDataset(train=loaded["train"], val=loaded["val"], test=loaded["test"],
                            seed=int(index["seed"]), puppet=index["puppet"], dataset=index["dataset"])
