# codec/checkpoint.py
"""
检查点文件格式

    b"PSCK" | u32 版本 | u64 头部长度 | UTF-8 JSON 头部 | 小端 float64 数据块

头部包含维度、实验配置以及参数表 [{"name", "shape"}]，数据块按参数表顺序紧密排列。
优化器的一阶/二阶矩也作为普通条目写入（名字前缀 adam.m. / adam.v.）。
"""

import json
import struct
from collections import OrderedDict
from typing import Dict, Iterable, Tuple

import numpy as np

CHECKPOINT_MAGIC = b"PSCK"
CHECKPOINT_VERSION = 1


def save_checkpoint(path: str, arrays: Iterable[Tuple[str, np.ndarray]], header: Dict):
    entries = [(name, np.ascontiguousarray(a, dtype="<f8")) for name, a in arrays]
    names = [n for n, _ in entries]
    if len(set(names)) != len(names):
        raise ValueError("检查点中存在重复的参数名")
    head = dict(header)
    head["params"] = [{"name": n, "shape": list(a.shape)} for n, a in entries]
    blob = json.dumps(head, ensure_ascii=False, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for _, a in entries:
            f.write(a.tobytes(order="C"))


def load_checkpoint(path: str) -> Tuple[Dict, "OrderedDict[str, np.ndarray]"]:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: 不是检查点文件（魔数 {magic!r}）")
        (version,) = struct.unpack("<I", f.read(4))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: 不支持的检查点版本 {version}")
        (head_len,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(head_len).decode("utf-8"))
        arrays: "OrderedDict[str, np.ndarray]" = OrderedDict()
        for entry in header["params"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = f.read(8 * count)
            if len(raw) != 8 * count:
                raise ValueError(f"{path}: 参数 {entry['name']} 数据不完整")
            arrays[entry["name"]] = np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)
    return header, arrays
