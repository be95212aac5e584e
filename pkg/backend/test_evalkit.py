#!/usr/bin/env python3
# test_evalkit.py - 姿态指标、交换检验、基线对比与报告输出测试

import csv
import os
import sys
import tempfile

import numpy as np
from numpy.testing import assert_allclose
from PIL import Image

from diffcore.rng import Rng
from errors import ShapeError
from evalkit.metrics import mpjpe, mse_2d_percent, n_mpjpe
from evalkit.report import (median_rows, probe_baseline_comparison, qualitative_rows, save_image_grid,
                            swap_grid_rows, write_report_csv)
from evalkit.swap_transfer import reference_stats, score_pairs, silhouette_stats, swap_transfer_score
from schemas import load_experiment_config
from synth.dataset import build_dataset
from synth.puppet import appearance_signature
from trainer.pipeline import build_model

CONFIG_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "configs")
_CACHE = {}


def print_separator(title):
    """打印分隔线"""
    print("\n" + "=" * 60)
    print(f"  {title}")
    print("=" * 60)


def tiny_setup():
    if not _CACHE:
        cfg, _ = load_experiment_config(os.path.join(CONFIG_DIR, "tiny.json"))
        _CACHE["cfg"] = cfg
        _CACHE["dataset"] = build_dataset(cfg.puppet, cfg.dataset, cfg.seed)
    return _CACHE["cfg"], _CACHE["dataset"]


# ---------- 指标 ---------- #

def test_n_mpjpe_examples():
    label = Rng(0).normal(size=(5, 6, 2))
    assert n_mpjpe(label, label) == 0.0
    assert n_mpjpe(2.0 * label, label) < 1e-12
    lab = np.array([[[0.0, 0.0, 1.0], [0.0, 0.0, -1.0]]])
    pred = np.array([[[0.0, 0.0, 1.0], [0.0, 0.0, 0.0]]])
    assert_allclose(n_mpjpe(pred, lab), 0.5)


def test_n_mpjpe_scale_invariance():
    rng = Rng(1)
    pred, label = rng.normal(size=(8, 6, 3)), rng.normal(size=(8, 6, 3))
    base = n_mpjpe(pred, label)
    for c in (0.01, 0.7, 3.0, 250.0):
        assert abs(n_mpjpe(c * pred, label) - base) < 1e-12


def test_zero_prediction_scores_label_norm():
    label = np.array([[[3.0, 4.0], [0.0, 0.0]]])
    assert_allclose(n_mpjpe(np.zeros_like(label), label), 2.5)
    assert_allclose(mpjpe(np.zeros_like(label), label), 2.5)


def test_mse_percent_examples():
    label = Rng(2).uniform(0, 100, size=(4, 6, 2))
    assert mse_2d_percent(label, label, 100.0) == 0.0
    shifted = label + np.array([1.0, 0.0])
    assert_allclose(mse_2d_percent(shifted, label, 100.0), 1.0)
    assert_allclose(mse_2d_percent(shifted, label, 200.0), 0.5)


def test_metrics_reject_shape_mismatch():
    try:
        mpjpe(np.zeros((2, 6, 2)), np.zeros((2, 5, 2)))
    except ShapeError:
        pass
    else:
        raise AssertionError("形状不符应报错")


# ---------- 交换检验 ---------- #

def test_silhouette_stats_of_centered_square():
    mask = np.zeros((1, 1, 8, 8))
    mask[..., 2:6, 2:6] = 1.0
    stats = silhouette_stats(mask)[0]
    assert_allclose(stats[:2], 0.0, atol=1e-12)
    assert_allclose(stats[2], stats[3])
    assert abs(stats[4]) < 1e-12


def test_identity_pairs_always_pass():
    cfg, ds = tiny_setup()
    model = build_model(cfg)
    frames = np.stack([ds.test[0].frames[t] for t in (0, 5, 11)])
    bg = np.stack([ds.test[0].background] * 3)
    appearance, pose = score_pairs(model, frames, frames, bg, bg)
    assert appearance.all() and pose.all()


def test_swap_score_is_permutation_invariant():
    cfg, ds = tiny_setup()
    model = build_model(cfg)
    fa = np.stack([ds.test[0].frames[t] for t in range(6)])
    fb = np.stack([ds.test[1].frames[t] for t in range(6)])
    ba, bb = np.stack([ds.test[0].background] * 6), np.stack([ds.test[1].background] * 6)
    perm = Rng(3).permutation(6)
    a1, p1 = score_pairs(model, fa, fb, ba, bb)
    a2, p2 = score_pairs(model, fa[perm], fb[perm], ba, bb)
    assert a1.mean() == a2.mean() and p1.mean() == p2.mean()
    score = swap_transfer_score(model, ds.test, 20, Rng(0, 41))
    assert score.pairs == 20
    assert 0.0 <= score.appearance_follows_ti <= 1.0 and 0.0 <= score.pose_follows_tv <= 1.0


def test_random_weights_score_near_chance():
    cfg, ds = tiny_setup()
    score = swap_transfer_score(build_model(cfg, seed=123), ds.test, 200, Rng(0, 41))
    assert 0.3 <= score.appearance_follows_ti <= 0.7
    assert 0.3 <= score.pose_follows_tv <= 0.7


def test_reference_color_is_foreground_signature():
    """参照颜色就是已知背景下的前景平均色"""
    cfg, ds = tiny_setup()
    model = build_model(cfg)
    clip = ds.test[1]
    frames, bg = clip.frames[:2], np.stack([clip.background] * 2)
    colors, stats = reference_stats(model, frames, bg)
    assert_allclose(colors[0], appearance_signature(frames[0], background=clip.background))
    assert stats.shape == (2, 5) and np.all(np.isfinite(stats))


# ---------- 报告 ---------- #

def test_baseline_comparison_rows():
    cfg, ds = tiny_setup()
    rows = probe_baseline_comparison({"DSL-STN": build_model(cfg)}, cfg, ds)
    # tv、ti、随机编码器 × 2 个比例 × 1 个种子
    assert len(rows) == 3 * 2 * 1
    assert {r["source"] for r in rows} == {"tv", "ti", "random"}
    assert all(np.isfinite(r["n_mpjpe"]) for r in rows)


def test_median_rows_and_csv():
    rows = [{"variant": "A", "fraction": 0.1, "n_mpjpe": v} for v in (3.0, 1.0, 2.0)]
    rows.append({"variant": "B", "fraction": 0.1, "n_mpjpe": 5.0})
    summary = median_rows(rows, ["variant", "fraction"], ["n_mpjpe"])
    assert summary[0] == {"variant": "A", "fraction": 0.1, "n_mpjpe": 2.0, "seeds": 3}
    assert summary[1]["seeds"] == 1
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "out", "summary.csv")
        write_report_csv(summary, path, ["variant", "fraction", "seeds", "n_mpjpe"])
        with open(path, encoding="utf-8") as f:
            loaded = list(csv.DictReader(f))
    assert [r["variant"] for r in loaded] == ["A", "B"]
    assert loaded[0]["n_mpjpe"] == "2.0"


def test_image_grids_are_written():
    cfg, ds = tiny_setup()
    model = build_model(cfg)
    clip = ds.test[0]
    frames = clip.frames[:2]
    rows = qualitative_rows(model, frames, np.stack([clip.background] * 2))
    assert len(rows) == 2 and len(rows[0]) == 5
    swap_rows = swap_grid_rows(model, clip.frames[:3], ds.test[1].frames[:2])
    assert len(swap_rows) == 4 and all(len(r) == 3 for r in swap_rows)
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "qualitative.png")
        save_image_grid(rows, path)
        with Image.open(path) as img:
            # 2 行 × 5 列，单元格按 32×32 对齐，间隔 2 像素
            assert img.size == (5 * 34 + 2, 2 * 34 + 2)
            assert img.mode == "RGB"


TESTS = [
    test_n_mpjpe_examples,
    test_n_mpjpe_scale_invariance,
    test_zero_prediction_scores_label_norm,
    test_mse_percent_examples,
    test_metrics_reject_shape_mismatch,
    test_silhouette_stats_of_centered_square,
    test_identity_pairs_always_pass,
    test_swap_score_is_permutation_invariant,
    test_random_weights_score_near_chance,
    test_reference_color_is_foreground_signature,
    test_baseline_comparison_rows,
    test_median_rows_and_csv,
    test_image_grids_are_written,
]


def main():
    print_separator("evalkit 测试")
    failed = 0
    for test in TESTS:
        try:
            test()
            print(f"✅ {test.__name__}")
        except Exception as e:
            failed += 1
            print(f"❌ {test.__name__}: {type(e).__name__}: {e}")
    print_separator("测试完成")
    print(f"{'✅ 全部通过' if not failed else f'❌ {failed} 项失败'}（共 {len(TESTS)} 项）")
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
