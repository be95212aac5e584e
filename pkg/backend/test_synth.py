#!/usr/bin/env python3
# test_synth.py - 合成木偶视频、下落轨迹、背景估计与数据集读写测试

import json
import os
import sys
import tempfile

import numpy as np
from numpy.testing import assert_allclose

from diffcore.rng import Rng
from errors import TrajectoryError
from schemas import DatasetConfig, PuppetConfig, load_experiment_config
from synth.background import estimate_background
from synth.dataset import build_dataset, load_dataset, read_tensor_file, save_dataset, write_tensor_file
from synth.puppet import (appearance_signature, fall_positions, generate_clip, generate_fall_clip, pose_step_bound,
                          random_background)

CONFIG_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "configs")


def print_separator(title):
    """打印分隔线"""
    print("\n" + "=" * 60)
    print(f"  {title}")
    print("=" * 60)


def tiny_config():
    cfg, _ = load_experiment_config(os.path.join(CONFIG_DIR, "tiny.json"))
    return cfg


def third_difference(u: np.ndarray, t: int, spacing: int) -> float:
    """u₁ + 3u₃ − u₄ − 3u₂，等距四帧"""
    u1, u2, u3, u4 = (u[t + k * spacing] for k in range(4))
    return u1 + 3 * u3 - u4 - 3 * u2


def test_same_seed_same_pixels():
    cfg = PuppetConfig()
    a = generate_clip(cfg, 12, Rng(5, 1))
    b = generate_clip(cfg, 12, Rng(5, 1))
    assert np.array_equal(a.frames, b.frames)
    assert np.array_equal(a.keypoints, b.keypoints)


def test_zero_noise_keeps_pose_fixed():
    cfg = PuppetConfig(noise_scale=0.0)
    clip = generate_clip(cfg, 10, Rng(0))
    assert np.array_equal(clip.keypoints, np.repeat(clip.keypoints[:1], 10, axis=0))


def test_keypoint_steps_respect_bound():
    cfg = PuppetConfig()
    clip = generate_clip(cfg, 300, Rng(1))
    steps = np.linalg.norm(np.diff(clip.keypoints, axis=0), axis=-1)
    assert steps.max() <= pose_step_bound(cfg) + 1e-9


def test_pose_clip_ground_truth():
    cfg = PuppetConfig()
    clip = generate_clip(cfg, 20, Rng(2))
    h, w = cfg.canvas
    assert clip.frames.shape == (20, 3, h, w)
    assert clip.frames.min() >= 0.0 and clip.frames.max() <= 1.0
    assert np.all((clip.keypoints >= 0) & (clip.keypoints[..., 0] < w) & (clip.keypoints[..., 1] < h))
    assert np.all(clip.keypoints_centered[:, 1] == 0.0)
    assert np.all((clip.fg_fraction > 0) & (clip.fg_fraction < 0.3))
    assert_allclose(clip.timestamps, np.arange(20))


def test_canvas_too_small_rejected():
    try:
        generate_clip(PuppetConfig(canvas=(16, 16)), 10, Rng(0))
    except ValueError:
        pass
    else:
        raise AssertionError("画布过小应报错")


def test_fall_second_difference_constant():
    cfg = PuppetConfig(fall_mode="orthographic")
    clip = generate_fall_clip(cfg, 5, (0.0, 2.0), (0.0, 0.0), (32.0, 20.0), Rng(0))
    assert_allclose(np.diff(clip.pelvis[:, 1], n=2), 2.0, atol=1e-12)


def test_uniform_horizontal_motion():
    cfg = PuppetConfig(fall_mode="orthographic")
    pos, _ = fall_positions(cfg, 20, (0.0, 0.0), (1.0, 0.0), (10.0, 30.0))
    assert_allclose(np.diff(pos[:, 0], n=2), 0.0, atol=1e-12)


def test_orthographic_third_difference_vanishes():
    cfg = PuppetConfig(fall_mode="orthographic")
    pos, _ = fall_positions(cfg, 40, (0.1, 0.04), (0.3, -0.7), (20.0, 25.0))
    for spacing in (1, 3, 5):
        for t in range(0, 40 - 3 * spacing):
            assert abs(third_difference(pos[:, 1], t, spacing)) < 1e-9


def test_perspective_approaches_orthographic():
    def worst(distance):
        cfg = PuppetConfig(fall_mode="perspective", camera_distance=distance)
        pos, _ = fall_positions(cfg, 40, (0.0, 0.04), (0.1, -0.3), (32.0, 20.0))
        return max(abs(third_difference(pos[:, 1], t, 5)) for t in range(40 - 15))
    near, far = worst(640.0), worst(6400.0)
    assert near > 1e-6
    assert near >= 5.0 * far


def test_fall_leaving_frame_reports_first_index():
    cfg = PuppetConfig(fall_mode="orthographic")
    try:
        generate_fall_clip(cfg, 20, (0.0, 1.0), (0.0, 0.0), (32.0, 32.0), Rng(0))
    except TrajectoryError as e:
        # 32 + 0.5·t² ≥ 64 ⇔ t ≥ 8
        assert e.t == 8
    else:
        raise AssertionError("轨迹离开画面应抛出 TrajectoryError")


def test_median_background_examples():
    frame = Rng(0).uniform(size=(3, 4, 4))
    assert_allclose(estimate_background(np.stack([frame] * 5)), frame)
    outlier = np.stack([frame, frame, np.ones_like(frame)])
    assert_allclose(estimate_background(outlier), frame)


def test_median_background_recovers_known_background():
    background = random_background((64, 64), Rng(3))
    frames = np.repeat(background[None], 30, axis=0)
    for t in range(30):
        # 6×6 的前景块每帧右移 2 像素
        frames[t, :, 20 + t % 5:26 + t % 5, 2 * t:2 * t + 6] = [[[0.9]], [[0.2]], [[0.6]]]
    assert np.mean(np.any(frames != background[None], axis=1), axis=(1, 2)).max() < 0.3
    est = estimate_background(frames, "median")
    assert np.max(np.abs(est - background)) < 0.05


def test_first_last_background_for_fall_clip():
    cfg = PuppetConfig(fall_mode="orthographic")
    clip = generate_fall_clip(cfg, 40, (0.0, 0.02), (0.0, 0.0), (32.0, 14.0), Rng(4))
    est = estimate_background(clip.frames, "first-last")
    assert_allclose(est[:, 32:], clip.frames[0][:, 32:])
    assert_allclose(est[:, :32], clip.frames[-1][:, :32])


def test_tensor_file_layout():
    arr = Rng(0).normal(size=(2, 3, 4))
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "x.bin")
        write_tensor_file(path, arr)
        with open(path, "rb") as f:
            raw = f.read()
        assert raw[:4] == b"PSVT"
        assert len(raw) == 4 + 4 + 3 * 8 + arr.size * 8
        assert np.array_equal(read_tensor_file(path), arr)
        with open(path, "wb") as f:
            f.write(b"XXXX" + raw[4:])
        try:
            read_tensor_file(path)
        except ValueError:
            pass
        else:
            raise AssertionError("魔数错误应报错")


def test_dataset_splits_by_clip_and_round_trips():
    cfg = tiny_config()
    ds = build_dataset(cfg.puppet, cfg.dataset, cfg.seed)
    ids = [c.clip_id for c in ds.all_clips]
    assert len(ids) == len(set(ids)) == 6
    assert len({c.appearance_label for c in ds.all_clips}) == 6
    with tempfile.TemporaryDirectory() as tmp:
        save_dataset(ds, tmp)
        loaded = load_dataset(tmp)
    for a, b in zip(ds.all_clips, loaded.all_clips):
        assert a.clip_id == b.clip_id
        assert np.array_equal(a.frames, b.frames)
        assert np.array_equal(a.keypoints, b.keypoints)
        assert a.appearance_label == b.appearance_label


def test_parallel_build_matches_serial():
    cfg = tiny_config()
    serial = build_dataset(cfg.puppet, cfg.dataset, 3)
    threaded = build_dataset(cfg.puppet, cfg.dataset.model_copy(update={"workers": 3}), 3)
    for a, b in zip(serial.all_clips, threaded.all_clips):
        assert np.array_equal(a.frames, b.frames)


def test_fall_dataset_requires_fall_mode():
    cfg = tiny_config()
    try:
        build_dataset(cfg.puppet, DatasetConfig(kind="fall"), 0)
    except ValueError:
        pass
    else:
        raise AssertionError("fall 数据集需要 fall_mode")


def test_clip_meta_records_generation_config():
    cfg = tiny_config()
    ds = build_dataset(cfg.puppet, cfg.dataset, cfg.seed)
    clip = ds.test[0]
    with tempfile.TemporaryDirectory() as tmp:
        save_dataset(ds, tmp)
        with open(os.path.join(tmp, "clips", clip.clip_id, "meta.json"), encoding="utf-8") as f:
            meta = json.load(f)
    gen = meta["generation"]
    assert gen["seed"] == cfg.seed
    # 只凭片段自己的 meta.json 即可重新生成同样的像素
    again = build_dataset(PuppetConfig.model_validate(gen["puppet"]), DatasetConfig.model_validate(gen["dataset"]),
                          gen["seed"])
    assert np.array_equal(again.test[0].frames, clip.frames)


def test_appearance_label_recoverable_from_single_frame():
    cfg = tiny_config()
    ds = build_dataset(cfg.puppet, cfg.dataset, cfg.seed)
    clips = ds.all_clips
    sig = [np.stack([appearance_signature(f, background=c.background) for f in c.frames]) for c in clips]
    # 偶数帧求各片段质心，奇数帧按最近质心分类
    centroids = np.stack([s[0::2].mean(axis=0) for s in sig])
    correct, total = 0, 0
    for label, s in enumerate(sig):
        d = np.linalg.norm(s[1::2, None, :] - centroids[None], axis=2)
        correct += int(np.sum(np.argmin(d, axis=1) == label))
        total += len(d)
    assert total == sum(c.length // 2 for c in clips)
    assert correct / total >= 0.95, f"{correct}/{total}"
TESTS = [
    test_same_seed_same_pixels,
    test_zero_noise_keeps_pose_fixed,
    test_keypoint_steps_respect_bound,
    test_pose_clip_ground_truth,
    test_canvas_too_small_rejected,
    test_fall_second_difference_constant,
    test_uniform_horizontal_motion,
    test_orthographic_third_difference_vanishes,
    test_perspective_approaches_orthographic,
    test_fall_leaving_frame_reports_first_index,
    test_median_background_examples,
    test_median_background_recovers_known_background,
    test_first_last_background_for_fall_clip,
    test_tensor_file_layout,
    test_dataset_splits_by_clip_and_round_trips,
    test_parallel_build_matches_serial,
    test_fall_dataset_requires_fall_mode,
    test_clip_meta_records_generation_config,
    test_appearance_label_recoverable_from_single_frame,
]


def main():
    print_separator("synth 测试")
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
