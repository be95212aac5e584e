#!/usr/bin/env python3
# test_stn.py - 框预测、裁剪、贴回与合成测试

import sys

import numpy as np
from numpy.testing import assert_allclose

from diffcore.rng import Rng
from diffcore.tensor import Tensor, tsum
from stn.attention import BoxDetector, box_prior_loss, composite, crop, identity_boxes, paste, predict_box


def print_separator(title):
    """打印分隔线"""
    print("\n" + "=" * 60)
    print(f"  {title}")
    print("=" * 60)


def smooth_image(h: int, w: int) -> np.ndarray:
    yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    return np.stack([
        0.5 + 0.25 * np.sin(2 * np.pi * xx / w),
        0.5 + 0.25 * np.cos(2 * np.pi * yy / h),
        0.5 + 0.2 * np.sin(2 * np.pi * (xx + yy) / (h + w)),
    ])[None]


def test_identity_box_crop_is_exact():
    frames = Rng(0).uniform(size=(2, 3, 16, 16))
    out = crop(Tensor(frames), identity_boxes(2), (16, 16))
    assert np.max(np.abs(out.data - frames)) < 1e-9


def test_crop_between_two_pixels_is_midpoint():
    frame = np.zeros((1, 1, 1, 2))
    frame[..., 1] = 1.0
    # 输出一个像素，位于两个像素中心的正中间（x = 0）
    out = crop(Tensor(frame), Tensor([[0.5, 1.0, 0.0, 0.0]]), (1, 1))
    assert_allclose(out.data.ravel(), [0.5], atol=1e-12)


def test_box_outside_frame_gives_zeros():
    frames = Rng(1).uniform(size=(1, 3, 8, 8))
    out = crop(Tensor(frames), Tensor([[0.2, 0.2, 3.0, 3.0]]), (4, 4))
    assert np.all(out.data == 0.0)


def test_paste_identity_with_full_mask():
    rgb = Rng(2).uniform(size=(1, 3, 16, 16))
    mask = np.ones((1, 1, 16, 16))
    pasted, pasted_mask = paste(Tensor(rgb), Tensor(mask), identity_boxes(1), (16, 16))
    assert np.max(np.abs(pasted.data - rgb)) < 1e-9
    assert np.max(np.abs(pasted_mask.data - 1.0)) < 1e-9
    out = composite(pasted_mask, pasted, Tensor(np.zeros_like(rgb)))
    assert np.max(np.abs(out.data - rgb)) < 1e-9


def test_crop_then_paste_round_trip():
    frame = smooth_image(32, 32)
    box = Tensor([[0.5, 0.5, 0.0, 0.0]])
    patch = crop(Tensor(frame), box, (12, 12))
    back, mask = paste(patch, Tensor(np.ones((1, 1, 12, 12))), box, (32, 32))
    inner = (slice(None), slice(None), slice(10, 22), slice(10, 22))
    assert np.max(np.abs(back.data[inner] - frame[inner])) < 2e-2
    # 框外掩码为 0
    assert np.all(mask.data[..., :4, :] == 0.0)


def test_composite_limits():
    fg = Tensor(np.full((1, 3, 2, 2), 0.8))
    bg = Tensor(np.full((1, 3, 2, 2), 0.2))
    assert_allclose(composite(Tensor(np.zeros((1, 1, 2, 2))), fg, bg).data, bg.data)
    assert_allclose(composite(Tensor(np.ones((1, 1, 2, 2))), fg, bg).data, fg.data)
    half = composite(Tensor(np.full((1, 1, 2, 2), 0.5)), Tensor(np.ones((1, 3, 2, 2))), Tensor(np.zeros((1, 3, 2, 2))))
    assert_allclose(half.data, 0.5)


def test_zero_weight_detector_starts_centered():
    detector = BoxDetector((32, 32), [2, 2, 2, 2], Rng(0), downsample=2)
    detector.head.weight.data[:] = 0.0
    boxes = predict_box(detector, Tensor(Rng(1).uniform(size=(3, 3, 32, 32))))
    assert_allclose(boxes.data, np.tile([0.5, 0.5, 0.0, 0.0], (3, 1)), atol=1e-12)


def test_detector_outputs_stay_in_range():
    detector = BoxDetector((32, 32), [2, 2, 2, 2], Rng(3), downsample=2, s_min=0.05)
    detector.head.weight.data *= 100.0
    boxes = predict_box(detector, Tensor(Rng(4).uniform(size=(5, 3, 32, 32)))).data
    assert np.all((boxes[:, :2] >= 0.05) & (boxes[:, :2] <= 1.0))
    assert np.all(np.abs(boxes[:, 2:]) <= 1.0)


def test_box_prior_examples():
    assert box_prior_loss(Tensor([[0.5, 0.5, 0.0, 0.0], [0.5, 0.5, 0.0, 0.0]])).item() == 0.0
    # 对称分布的框，均值恰为先验
    symmetric = Tensor([[0.3, 0.4, -0.5, 0.2], [0.7, 0.6, 0.5, -0.2]])
    assert abs(box_prior_loss(symmetric).item()) < 1e-24
    shifted = Tensor([[0.7, 0.5, 0.0, 0.0], [0.7, 0.5, 0.0, 0.0]])
    assert_allclose(box_prior_loss(shifted).item(), 0.04, atol=1e-12)


def test_box_prior_needs_batch():
    try:
        box_prior_loss(Tensor([[0.5, 0.5, 0.0, 0.0]]))
    except ValueError:
        pass
    else:
        raise AssertionError("batch < 2 应报错")


def test_paste_is_zero_outside_footprint():
    # 框边缘落在两个像素中心之间，双线性插值会跨过边缘
    box = Tensor([[0.31, 0.31, 0.0, 0.0]])
    rgb, mask = paste(Tensor(np.ones((1, 3, 16, 16))), Tensor(np.ones((1, 1, 16, 16))), box, (64, 64))
    centers = (2.0 * np.arange(64) + 1.0) / 64 - 1.0
    outside = (np.abs(centers)[:, None] > 0.31) | (np.abs(centers)[None, :] > 0.31)
    assert np.all(mask.data[0, 0][outside] == 0.0)
    assert np.all(rgb.data[0][:, outside] == 0.0)
    assert_allclose(mask.data[0, 0, 32, 32], 1.0, atol=1e-12)


def test_paste_footprint_for_random_boxes():
    rng = Rng(5)
    for k in range(10):
        s = rng.uniform(0.15, 0.8, 2)
        u = rng.uniform(-0.4, 0.4, 2)
        box = Tensor([[s[0], s[1], u[0], u[1]]])
        _, mask = paste(Tensor(np.ones((1, 3, 8, 8))), Tensor(np.ones((1, 1, 8, 8))), box, (40, 40))
        centers = (2.0 * np.arange(40) + 1.0) / 40 - 1.0
        outside = (np.abs(centers - u[1])[:, None] > s[1]) | (np.abs(centers - u[0])[None, :] > s[0])
        assert np.all(mask.data[0, 0][outside] == 0.0), k


def test_composite_background_gradient_is_one_minus_mask():
    rng = Rng(6)
    m = rng.uniform(size=(2, 1, 4, 4))
    fg = Tensor(rng.uniform(size=(2, 3, 4, 4)))
    bg = Tensor(rng.uniform(size=(2, 3, 4, 4)), requires_grad=True)
    tsum(composite(Tensor(m), fg, bg)).backward()
    assert np.max(np.abs(bg.grad - np.repeat(1.0 - m, 3, axis=1))) < 1e-12


TESTS = [
    test_identity_box_crop_is_exact,
    test_crop_between_two_pixels_is_midpoint,
    test_box_outside_frame_gives_zeros,
    test_paste_identity_with_full_mask,
    test_crop_then_paste_round_trip,
    test_composite_limits,
    test_zero_weight_detector_starts_centered,
    test_detector_outputs_stay_in_range,
    test_box_prior_examples,
    test_box_prior_needs_batch,
    test_paste_is_zero_outside_footprint,
    test_paste_footprint_for_random_boxes,
    test_composite_background_gradient_is_one_minus_mask,
]


def main():
    print_separator("stn 测试")
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
