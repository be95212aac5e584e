# evalkit/report.py
"""
报告输出：探针基线对比表、CSV、PNG 图像网格
"""

import csv
import os
from typing import Dict, List, Optional, Sequence

import numpy as np
from PIL import Image

from diffcore.tensor import Tensor, no_grad
from schemas import ExperimentConfig, ProbeConfig
from stn.attention import composite, crop, paste
from synth.dataset import SyntheticDataset
from trainer.pipeline import PoseAutoencoder, build_model
from trainer.probe import collect_probe_data, train_probe

RANDOM_ENCODER_SEED_OFFSET = 7919
REPORT_FIELDS = ["variant", "source", "fraction", "seed", "train_samples", "n_mpjpe", "mpjpe", "mse_percent"]


def write_report_csv(rows: Sequence[Dict], path: str, fields: Optional[List[str]] = None):
    fields = fields or REPORT_FIELDS
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=fields, extrasaction="ignore", lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    print(f"📝 已写入 {path}（{len(rows)} 行）")


def probe_sources(model: PoseAutoencoder) -> Dict[str, str]:
    """对比的特征来源 → extract 的 which 参数；拆分模型额外比较 ti"""
    sources = {"tv": "auto"}
    if model.variant.latent_split:
        sources["ti"] = "ti"
    return sources


def probe_baseline_comparison(models: Dict[str, PoseAutoencoder], cfg: ExperimentConfig,
                              dataset: SyntheticDataset, probe_cfg: Optional[ProbeConfig] = None) -> List[Dict]:
    """
    对每个变体用同样的探针比较：(a) tv（不拆分时为整段潜变量）(b) ti (c) 随机初始化并冻结的编码器
    每个 (变体, 来源, 比例, 种子) 一行
    """
    probe_cfg = probe_cfg or cfg.probe
    rows = []
    for variant, model in models.items():
        random_model = build_model(cfg.model_copy(update={"train": cfg.train.model_copy(update={"variant": variant})}),
                                   seed=cfg.seed + RANDOM_ENCODER_SEED_OFFSET)
        candidates = [(name, model, which) for name, which in probe_sources(model).items()]
        candidates.append(("random", random_model, "auto"))
        for source, encoder, which in candidates:
            train_data = collect_probe_data(encoder, dataset.train, which, probe_cfg.kind)
            test_data = collect_probe_data(encoder, dataset.test, which, probe_cfg.kind)
            for fraction in probe_cfg.fractions:
                for seed in probe_cfg.seeds:
                    result = train_probe(encoder, dataset.train, dataset.test, probe_cfg, fraction, seed,
                                         which=which, train_data=train_data, test_data=test_data)
                    row = result.row()
                    row.update({"variant": variant, "source": source})
                    rows.append(row)
    return rows


def median_rows(rows: Sequence[Dict], keys: Sequence[str], values: Sequence[str]) -> List[Dict]:
    """按 keys 分组，对 values 取中位数（跨种子汇总）"""
    groups: Dict = {}
    for row in rows:
        groups.setdefault(tuple(row[k] for k in keys), []).append(row)
    out = []
    for key, members in groups.items():
        merged = dict(zip(keys, key))
        for v in values:
            merged[v] = float(np.median([m[v] for m in members]))
        merged["seeds"] = len(members)
        out.append(merged)
    return out


# ============== 图像 ============== #

def _to_uint8(img: np.ndarray) -> np.ndarray:
    """C×h×w（C = 1 或 3）→ h×w×3 uint8"""
    img = np.asarray(img, dtype=np.float64)
    if img.shape[0] == 1:
        img = np.repeat(img, 3, axis=0)
    return (np.clip(img, 0.0, 1.0).transpose(1, 2, 0) * 255.0 + 0.5).astype(np.uint8)


def save_image_grid(rows: Sequence[Sequence[np.ndarray]], path: str, pad: int = 2):
    """rows[i][j] 为 C×h×w 图像；各格按最大尺寸对齐，白色间隔"""
    cells = [[_to_uint8(img) for img in row] for row in rows]
    cell_h = max(c.shape[0] for row in cells for c in row)
    cell_w = max(c.shape[1] for row in cells for c in row)
    n_cols = max(len(row) for row in cells)
    canvas = np.full((len(cells) * (cell_h + pad) + pad, n_cols * (cell_w + pad) + pad, 3), 255, dtype=np.uint8)
    for i, row in enumerate(cells):
        for j, c in enumerate(row):
            y = pad + i * (cell_h + pad)
            x = pad + j * (cell_w + pad)
            canvas[y:y + c.shape[0], x:x + c.shape[1]] = c
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    Image.fromarray(canvas).save(path)
    print(f"🖼️  已保存图像 {path}")


def qualitative_rows(model: PoseAutoencoder, frames: np.ndarray, backgrounds: np.ndarray) -> List[List[np.ndarray]]:
    """每帧一行：输入、裁剪、解码 RGB、解码掩码、合成结果"""
    with no_grad():
        x = Tensor(frames)
        boxes = model.boxes(x)
        crops = crop(x, boxes, model.crop_hw)
        code = model.encode(crops)
        rgb, mask = model.codec.decode(code.tv, code.ti)
        d, m = paste(rgb, mask, boxes, model.frame_hw)
        recon = composite(m, d, Tensor(backgrounds))
    return [[frames[i], crops.data[i], rgb.data[i], mask.data[i], recon.data[i]] for i in range(frames.shape[0])]


def swap_grid_rows(model: PoseAutoencoder, frames_a: np.ndarray, frames_b: np.ndarray) -> List[List[np.ndarray]]:
    """
    交换网格：第一行为 B 帧（提供 ti），第一列为 A 帧（提供 tv），
    格 (i, j) 为 decode(tv_Ai, ti_Bj)
    """
    with no_grad():
        codes = []
        for frames in (frames_a, frames_b):
            x = Tensor(frames)
            codes.append(model.encode(crop(x, model.boxes(x), model.crop_hw)))
        a, b = codes
        blank = np.ones((3, model.crop_hw[0], model.crop_hw[1]))
        crops_b = crop(Tensor(frames_b), model.boxes(Tensor(frames_b)), model.crop_hw).data
        crops_a = crop(Tensor(frames_a), model.boxes(Tensor(frames_a)), model.crop_hw).data
        rows = [[blank] + [crops_b[j] for j in range(frames_b.shape[0])]]
        n_b = frames_b.shape[0]
        for i in range(frames_a.shape[0]):
            tv = Tensor(np.repeat(a.tv.data[i:i + 1], n_b, axis=0))
            rgb, mask = model.codec.decode(tv, b.ti)
            cells = rgb.data * mask.data + (1.0 - mask.data)
            rows.append([crops_a[i]] + [cells[j] for j in range(n_b)])
    return rows
