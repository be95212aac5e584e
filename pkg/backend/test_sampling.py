#!/usr/bin/env python3
# test_sampling.py - 四元组采样、等距采样与颜色抖动测试

import sys

import numpy as np
from numpy.testing import assert_allclose

from diffcore.rng import Rng
from diffcore.tensor import Tensor
from errors import SamplingError
from sampling.sampler import apply_jitter, jitter, sample_batch, sample_equidistant, sample_quadruple
from schemas import SamplerConfig


def print_separator(title):
    """打印分隔线"""
    print("\n" + "=" * 60)
    print(f"  {title}")
    print("=" * 60)


def test_quadruple_constraints_hold():
    cfg = SamplerConfig(d_near=2, d_max=20)
    rng = Rng(0)
    seen_dn, seen_da = set(), set()
    for k in range(1000):
        q = sample_quadruple(100, cfg, rng.substream(k))
        assert all(0 <= i < 100 for i in q.indices)
        assert 0 < q.d_n <= 2
        assert q.d_a >= 20
        assert q.d_n < q.d_in < q.d_a
        # 中间帧与远离帧在参考帧同侧
        assert np.sign(q.inter - q.r) == np.sign(q.a - q.r)
        seen_dn.add(q.d_n)
        seen_da.add(q.d_a)
    assert seen_dn == {1, 2}
    assert max(seen_da) > 60


def test_css_mode_uses_two_far_frames():
    cfg = SamplerConfig(d_near=2, d_max=20)
    for k in range(200):
        q = sample_quadruple(60, cfg, Rng(1, k), mode="css")
        assert q.d_in >= 20 and q.d_a >= 20
        assert q.inter != q.a


def test_short_clip_rejected_with_required_length():
    cfg = SamplerConfig(d_near=2, d_max=20)
    try:
        sample_quadruple(40, cfg, Rng(0))
    except SamplingError as e:
        assert e.required == 41
    else:
        raise AssertionError("T = 2·d_max 应被拒绝")
    sample_quadruple(41, cfg, Rng(0))


def test_quadruple_stream_is_deterministic():
    cfg = SamplerConfig()
    a = [sample_quadruple(80, cfg, Rng(4, k)) for k in range(20)]
    b = [sample_quadruple(80, cfg, Rng(4, k)) for k in range(20)]
    assert a == b


def test_batch_groups_frames_by_clip():
    cfg = SamplerConfig()
    batch = sample_batch([60, 70, 80, 90], 12, cfg, Rng(5))
    ids = [q.clip_index for q in batch]
    assert ids == sorted(ids)


def test_equidistant_sampling():
    assert sample_equidistant(4, 1, Rng(0)) == (0, 1, 2, 3)
    for k in range(50):
        t = sample_equidistant(30, 3, Rng(2, k))
        assert np.all(np.diff(t) == 3)
        assert 0 <= t[0] and t[3] < 30
    assert sample_equidistant(30, 3, Rng(7)) == sample_equidistant(30, 3, Rng(7))
    try:
        sample_equidistant(9, 3, Rng(0))
    except SamplingError as e:
        assert e.required == 10
    else:
        raise AssertionError("片段过短应报错")


def test_jitter_examples():
    crop = Tensor(np.full((1, 3, 2, 2), 0.5))
    assert_allclose(apply_jitter(crop, np.ones((1, 3)), np.zeros(1)).data, crop.data)
    assert_allclose(apply_jitter(crop, np.full((1, 3), 1.2), np.zeros(1)).data, 0.6)
    bright = Tensor(np.full((1, 3, 2, 2), 0.95))
    assert_allclose(apply_jitter(bright, np.ones((1, 3)), np.full(1, 0.2)).data, 1.0)


def test_jitter_stays_in_unit_range():
    crops = Tensor(Rng(3).uniform(size=(4, 3, 8, 8)))
    out = jitter(crops, SamplerConfig(), Rng(6)).data
    assert out.min() >= 0.0 and out.max() <= 1.0
    assert not np.allclose(out, crops.data)


def test_quadruple_draws_cover_every_admissible_frame():
    T, cfg = 60, SamplerConfig(d_near=2, d_max=10)
    rng = Rng(3)
    r_count = np.zeros(T, dtype=int)
    seen = {"n": set(), "inter": set(), "a": set(), "d_n": set(), "d_a": set()}
    for k in range(10_000):
        q = sample_quadruple(T, cfg, rng.substream(k))
        r_count[q.r] += 1
        seen["n"].add(q.n)
        seen["inter"].add(q.inter)
        seen["a"].add(q.a)
        seen["d_n"].add(q.d_n)
        seen["d_a"].add(q.d_a)
    # 参考帧近似均匀：期望每帧约 167 次
    assert r_count.min() > 100 and r_count.max() < 250
    assert seen["n"] == set(range(T))
    assert seen["a"] == set(range(T))
    assert seen["inter"] >= set(range(5, T - 5))
    assert seen["d_n"] == {1, 2}
    assert seen["d_a"] >= set(range(10, 50))
    assert min(seen["d_a"]) == 10
TESTS = [
    test_quadruple_constraints_hold,
    test_css_mode_uses_two_far_frames,
    test_short_clip_rejected_with_required_length,
    test_quadruple_stream_is_deterministic,
    test_batch_groups_frames_by_clip,
    test_equidistant_sampling,
    test_jitter_examples,
    test_jitter_stays_in_unit_range,
    test_quadruple_draws_cover_every_admissible_frame,
]


def main():
    print_separator("sampling 测试")
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
