#!/usr/bin/env python3
# test_diffcore.py - 张量引擎与梯度校验测试

import sys
import threading

import numpy as np
from numpy.testing import assert_allclose

from diffcore.gradcheck import grad_check
from diffcore.layers import Conv2d, Linear, Module
from diffcore.rng import Rng
from diffcore.tensor import (Tensor, add, concat, conv2d, cosine_sim, getitem, logsumexp, matmul, mean, mul,
                             no_grad, relu, scale, sigmoid, square, take, tsum, upsample2x)
from errors import DegenerateVectorError, ShapeError
from tools.gradcheck_suite import run_suite


def print_separator(title):
    """打印分隔线"""
    print("\n" + "=" * 60)
    print(f"  {title}")
    print("=" * 60)


def test_relu_forward_and_backward():
    x = Tensor([-1.0, 2.0], requires_grad=True)
    y = relu(x)
    assert_allclose(y.data, [0.0, 2.0])
    tsum(y).backward()
    assert_allclose(x.grad, [0.0, 1.0])


def test_mean_gradient():
    x = Tensor([1.0, 2.0, 3.0, 4.0], requires_grad=True)
    y = mean(x)
    assert y.item() == 2.5
    y.backward()
    assert_allclose(x.grad, [0.25] * 4)


def test_matmul_identity():
    a = Rng(0).normal(size=(3, 3))
    assert_allclose(matmul(Tensor(np.eye(3)), Tensor(a)).data, a, atol=1e-15)


def test_shared_node_accumulates_once():
    # y = x·x + x：x 被用了三次，梯度 2x + 1
    x = Tensor([3.0, -2.0], requires_grad=True)
    y = tsum(add(mul(x, x), x))
    y.backward()
    assert_allclose(x.grad, [7.0, -3.0])


def test_broadcast_only_over_batch_axis():
    a = Tensor(np.ones((4, 3)))
    assert add(a, Tensor([1.0, 2.0, 3.0])).shape == (4, 3)
    try:
        add(a, Tensor(np.ones((4, 1))))
    except ShapeError as e:
        assert "add" in str(e)
    else:
        raise AssertionError("形状不兼容时应抛出 ShapeError")


def test_cosine_examples():
    def sim(m, n):
        return cosine_sim(Tensor(m), Tensor(n)).item()
    assert sim([1.0, 0.0], [1.0, 0.0]) == 1.0
    assert sim([1.0, 0.0], [0.0, 1.0]) == 0.0
    assert sim([1.0, 0.0], [-2.0, 0.0]) == -1.0


def test_cosine_rejects_zero_vector():
    try:
        cosine_sim(Tensor([0.0, 0.0]), Tensor([1.0, 0.0]))
    except DegenerateVectorError:
        pass
    else:
        raise AssertionError("零向量应抛出 DegenerateVectorError")


def test_getitem_take_concat_gradients():
    x = Tensor(np.arange(6.0).reshape(3, 2), requires_grad=True)
    y = tsum(getitem(x, (slice(None), 1))) + tsum(take(x, [0, 0, 2])) + tsum(concat([x, x], axis=1))
    y.backward()
    expected = np.full((3, 2), 2.0)
    expected[:, 1] += 1.0
    expected[0] += 2.0
    expected[2] += 1.0
    assert_allclose(x.grad, expected)


def test_logsumexp_matches_numpy():
    x = Rng(1).normal(size=(4, 5))
    assert_allclose(logsumexp(Tensor(x), axis=1).data, np.log(np.exp(x).sum(axis=1)), atol=1e-12)


def test_grad_check_sum_of_squares():
    x = Rng(2).normal(size=10)
    report = grad_check(lambda t: tsum(square(t)), x)
    assert report.max_rel_error < 1e-6


def test_grad_check_cosine_against_fixed_vector():
    b = Tensor(Rng(3).normal(size=5))
    report = grad_check(lambda t: cosine_sim(t, b), Rng(4).normal(size=5))
    assert report.passed(1e-4)


def test_grad_check_conv_and_upsample():
    rng = Rng(5)
    w = Tensor(rng.normal(size=(2, 3, 3, 3)))
    report = grad_check(lambda t: tsum(square(upsample2x(conv2d(t, w, None, stride=2, padding=1)))),
                        rng.normal(size=(1, 3, 6, 6)))
    assert report.passed(1e-4)


def test_no_grad_skips_graph():
    x = Tensor([1.0], requires_grad=True)
    with no_grad():
        y = scale(x, 2.0)
    assert not y.requires_grad
    assert scale(x, 2.0).requires_grad


def test_no_grad_is_per_thread():
    x = Tensor([1.0], requires_grad=True)
    inside, release = threading.Event(), threading.Event()

    def worker():
        with no_grad():
            inside.set()
            release.wait(5)

    t = threading.Thread(target=worker)
    t.start()
    inside.wait(5)
    y = scale(x, 2.0)
    release.set()
    t.join()
    assert y.requires_grad


def test_module_collects_nested_parameters():
    class Net(Module):
        def __init__(self):
            self.fc = Linear(4, 2, Rng(0, 1))
            self.convs = [Conv2d(3, 2, 3, Rng(0, 2))]

    names = [n for n, _ in Net().named_parameters()]
    assert names == ["fc.weight", "fc.bias", "convs.0.weight", "convs.0.bias"]


def test_rng_streams_are_reproducible_and_independent():
    a = Rng(7, (1, 2)).normal(size=4)
    b = Rng(7, (1, 2)).normal(size=4)
    c = Rng(7, (1, 3)).normal(size=4)
    assert_allclose(a, b, atol=0)
    assert not np.allclose(a, c)
    assert_allclose(Rng(7, 1).substream(2).normal(size=4), a, atol=0)


def _two_losses(x: Tensor, w: Tensor):
    h = matmul(x, w)
    l1 = tsum(square(h))
    l2 = mean(sigmoid(h)) + tsum(cosine_sim(h, Tensor(np.ones(h.shape))))
    return l1, l2


def _leaves(seed: int):
    rng = Rng(seed)
    return (Tensor(rng.normal(size=(4, 3)), requires_grad=True),
            Tensor(rng.normal(size=(3, 2)) + 2.0, requires_grad=True))


def test_gradients_are_additive_over_losses():
    x, w = _leaves(7)
    _two_losses(x, w)[0].backward()
    g1 = (x.grad.copy(), w.grad.copy())
    x, w = _leaves(7)
    _two_losses(x, w)[1].backward()
    g2 = (x.grad.copy(), w.grad.copy())
    x, w = _leaves(7)
    l1, l2 = _two_losses(x, w)
    add(l1, l2).backward()
    assert_allclose(x.grad, g1[0] + g2[0], rtol=0, atol=1e-12)
    assert_allclose(w.grad, g1[1] + g2[1], rtol=0, atol=1e-12)


def test_repeated_forward_backward_is_bit_identical():
    runs = []
    for _ in range(2):
        x, w = _leaves(8)
        l1, l2 = _two_losses(x, w)
        total = add(l1, l2)
        total.backward()
        runs.append((total.data.copy(), x.grad.copy(), w.grad.copy()))
    for a, b in zip(runs[0], runs[1]):
        assert np.array_equal(a, b)


def test_primitive_grad_cases_pass():
    names = ["l2_norm", "dot", "matmul", "elementwise", "clamp", "reductions", "concat_reshape", "conv2d",
             "resample"]
    results = run_suite(configs=3, seed=0, only=names)
    assert sorted(results) == sorted(names)
    failing = [name for name, r in results.items() if not r.passed]
    assert not failing, failing
TESTS = [
    test_relu_forward_and_backward,
    test_mean_gradient,
    test_matmul_identity,
    test_shared_node_accumulates_once,
    test_broadcast_only_over_batch_axis,
    test_cosine_examples,
    test_cosine_rejects_zero_vector,
    test_getitem_take_concat_gradients,
    test_logsumexp_matches_numpy,
    test_grad_check_sum_of_squares,
    test_grad_check_cosine_against_fixed_vector,
    test_grad_check_conv_and_upsample,
    test_no_grad_skips_graph,
    test_no_grad_is_per_thread,
    test_module_collects_nested_parameters,
    test_rng_streams_are_reproducible_and_independent,
    test_gradients_are_additive_over_losses,
    test_repeated_forward_backward_is_bit_identical,
    test_primitive_grad_cases_pass,
]


def main():
    print_separator("diffcore 测试")
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
