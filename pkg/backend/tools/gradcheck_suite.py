# tools/gradcheck_suite.py
"""
梯度校验套件 - 对每个可微算子在若干组随机配置下做中心差分校验

每个用例接收一个 Rng，返回该配置下所有检查中最差的 GradCheckReport。
端到端用例在极小模型上跑完整的总损失图，采样部分参数分量检查。
"""

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from codec.autoencoder import SplitAutoencoder
from diffcore.gradcheck import GradCheckReport, grad_check, grad_check_tensor
from diffcore.rng import Rng
from diffcore.tensor import (Tensor, avg_pool2d, concat, conv2d, cosine_sim, dot, exp, getitem, grid_sample, l2_norm, log,
                             logsumexp, matmul, maximum, mean, minimum, mul, reshape, sigmoid, square, tabs, take,
                             tanh, tsum, upsample2x)
from losses.objectives import (const_acc_loss, css_loss, dsl_loss, dsl_quadruple_loss, order_loss,
                               reconstruction_loss, scale_loss, total_loss, track_loss, triplet_loss)
from losses.perceptual import PerceptualPyramid
from schemas import ExperimentConfig, LossWeights, ModelConfig
from stn.attention import box_prior_loss, composite, crop, paste
from trainer.pipeline import PoseAutoencoder, box_track_inputs

OP_TOLERANCE = 1e-4
GRAPH_TOLERANCE = 1e-3
DEFAULT_CONFIGS = 20


def _worst(reports: Sequence[GradCheckReport]) -> GradCheckReport:
    failing = [r for r in reports if not r.ok]
    if failing:
        return failing[0]
    return max(reports, key=lambda r: r.max_rel_error)


def _weighted_sum(x: Tensor, w: np.ndarray) -> Tensor:
    """把张量输出压成标量，随机权重避免梯度恰好抵消"""
    return tsum(mul(x, Tensor(w)))


def _random_boxes(rng: Rng, n: int) -> np.ndarray:
    s = rng.uniform(0.3, 0.9, (n, 2))
    u = rng.uniform(-0.3, 0.3, (n, 2))
    return np.concatenate([s, u], axis=1)


# ============== 基础算子 ============== #

def _dims(rng: Rng):
    return int(rng.integers(1, 4)), int(rng.integers(2, 6))


def case_l2_norm(rng: Rng) -> GradCheckReport:
    n, d = _dims(rng)
    w = rng.normal(size=n)
    return _worst([
        grad_check(lambda x: _weighted_sum(l2_norm(x, axis=1), w), rng.normal(size=(n, d))),
        grad_check(l2_norm, rng.normal(size=d)),
    ])


def case_dot(rng: Rng) -> GradCheckReport:
    n, d = _dims(rng)
    a, b = rng.normal(size=(n, d)), rng.normal(size=(n, d))
    w = rng.normal(size=n)
    return _worst([
        grad_check(lambda x: _weighted_sum(dot(x, Tensor(b)), w), a),
        grad_check(lambda x: _weighted_sum(dot(Tensor(a), x), w), b),
        grad_check(lambda x: dot(x, Tensor(b[0])), a[0]),
    ])


def case_matmul(rng: Rng) -> GradCheckReport:
    n, k = _dims(rng)
    m = int(rng.integers(1, 5))
    a, b = rng.normal(size=(n, k)), rng.normal(size=(k, m))
    w = rng.normal(size=(n, m))
    return _worst([
        grad_check(lambda x: _weighted_sum(matmul(x, Tensor(b)), w), a),
        grad_check(lambda x: _weighted_sum(matmul(Tensor(a), x), w), b),
    ])


def case_elementwise(rng: Rng) -> GradCheckReport:
    """sigmoid / tanh / exp / log / square / abs"""
    shape = (int(rng.integers(1, 4)), int(rng.integers(2, 6)))
    w = rng.normal(size=shape)
    x = rng.normal(size=shape)
    # abs 在 0 处不可导，log 只在正数上定义
    away = np.sign(x) * (np.abs(x) + 0.1)
    return _worst([
        grad_check(lambda t: _weighted_sum(sigmoid(t), w), x),
        grad_check(lambda t: _weighted_sum(tanh(t), w), x),
        grad_check(lambda t: _weighted_sum(exp(t), w), x),
        grad_check(lambda t: _weighted_sum(log(t), w), rng.uniform(0.2, 3.0, shape)),
        grad_check(lambda t: _weighted_sum(square(t), w), x),
        grad_check(lambda t: _weighted_sum(tabs(t), w), away),
    ])


def case_clamp(rng: Rng) -> GradCheckReport:
    """maximum / minimum，输入离阈值至少 0.1"""
    shape = (int(rng.integers(1, 4)), int(rng.integers(2, 6)))
    c = float(rng.uniform(-0.5, 0.5))
    offset = rng.uniform(0.1, 1.0, shape) * np.where(rng.uniform(size=shape) < 0.5, -1.0, 1.0)
    w = rng.normal(size=shape)
    return _worst([
        grad_check(lambda t: _weighted_sum(maximum(t, c), w), c + offset),
        grad_check(lambda t: _weighted_sum(minimum(t, c), w), c + offset),
    ])


def case_reductions(rng: Rng) -> GradCheckReport:
    """tsum / mean / logsumexp，按轴与全局"""
    shape = (int(rng.integers(1, 4)), int(rng.integers(2, 5)), int(rng.integers(2, 5)))
    x = rng.normal(size=shape)
    w1 = rng.normal(size=(shape[0], shape[2]))
    w2 = rng.normal(size=shape[:2])
    return _worst([
        grad_check(tsum, x),
        grad_check(mean, x),
        grad_check(lambda t: _weighted_sum(tsum(t, axis=1), w1), x),
        grad_check(lambda t: _weighted_sum(mean(t, axis=(0, 2)), w2[0]), x),
        grad_check(lambda t: _weighted_sum(logsumexp(t, axis=-1), w2), x),
    ])


def case_concat_reshape(rng: Rng) -> GradCheckReport:
    n = int(rng.integers(1, 4))
    a, b = rng.normal(size=(n, 2, 3)), rng.normal(size=(n, 1, 3))
    w_cat = rng.normal(size=(n, 3, 3))
    w_flat = rng.normal(size=(n, 6))
    return _worst([
        grad_check(lambda x: _weighted_sum(concat([x, Tensor(b)], axis=1), w_cat), a),
        grad_check(lambda x: _weighted_sum(concat([Tensor(a), x], axis=1), w_cat), b),
        grad_check(lambda x: _weighted_sum(reshape(x, (n, 6)), w_flat), a),
    ])


def case_conv2d(rng: Rng) -> GradCheckReport:
    """stride 1 与 stride 2，分别对输入、卷积核、偏置"""
    reports = []
    for stride in (1, 2):
        x = rng.normal(size=(2, 2, 6, 6))
        w = rng.normal(size=(3, 2, 3, 3))
        b = rng.normal(size=3)
        out = conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride, padding=1).shape
        wts = rng.normal(size=out)

        def f(xt, wt, bt, s=stride, g=wts):
            return _weighted_sum(conv2d(xt, wt, bt, stride=s, padding=1), g)
        reports += [
            grad_check(lambda t: f(t, Tensor(w), Tensor(b)), x),
            grad_check(lambda t: f(Tensor(x), t, Tensor(b)), w),
            grad_check(lambda t: f(Tensor(x), Tensor(w), t), b),
        ]
    return _worst(reports)


def case_resample(rng: Rng) -> GradCheckReport:
    """最近邻 / 双线性上采样、平均池化、网格采样"""
    x = rng.normal(size=(2, 2, 4, 4))
    w_up = rng.normal(size=(2, 2, 8, 8))
    w_pool = rng.normal(size=(2, 2, 2, 2))
    grid = rng.uniform(-1.1, 1.1, (2, 3, 3, 2))
    w_grid = rng.normal(size=(2, 2, 3, 3))
    return _worst([
        grad_check(lambda t: _weighted_sum(upsample2x(t, "nearest"), w_up), x),
        grad_check(lambda t: _weighted_sum(upsample2x(t, "bilinear"), w_up), x),
        grad_check(lambda t: _weighted_sum(avg_pool2d(t, 2), w_pool), x),
        grad_check(lambda t: _weighted_sum(grid_sample(t, Tensor(grid)), w_grid), x),
        grad_check(lambda g: _weighted_sum(grid_sample(Tensor(x), g), w_grid), grid),
    ])


# ============== 损失与模块 ============== #

def case_cosine(rng: Rng) -> GradCheckReport:
    n, d = int(rng.integers(1, 4)), int(rng.integers(2, 7))
    b = Tensor(rng.normal(size=(n, d)))
    w = rng.normal(size=n)
    return grad_check(lambda x: _weighted_sum(cosine_sim(x, b), w), rng.normal(size=(n, d)))


def case_css(rng: Rng) -> GradCheckReport:
    n, d = int(rng.integers(1, 4)), int(rng.integers(2, 6))
    tau = float(rng.uniform(0.1, 1.0))

    def f(x):
        return css_loss(getitem(x, 0), getitem(x, 1), [getitem(x, 2), getitem(x, 3)], tau)
    return grad_check(f, rng.normal(size=(4, n, d)))


def case_triplet(rng: Rng) -> GradCheckReport:
    n, d = int(rng.integers(1, 4)), int(rng.integers(2, 6))
    beta = float(rng.uniform(0.5, 2.0))
    return grad_check(lambda x: triplet_loss(getitem(x, 0), getitem(x, 1), getitem(x, 2), beta),
                      rng.normal(size=(3, n, d)))


def case_dsl(rng: Rng) -> GradCheckReport:
    n, d = int(rng.integers(1, 4)), int(rng.integers(2, 6))
    d_max = float(rng.integers(4, 21))
    dist = rng.integers(0, int(2 * d_max), n).astype(np.float64)
    return grad_check(lambda x: dsl_loss(getitem(x, 0), getitem(x, 1), dist, d_max), rng.normal(size=(2, n, d)))


def case_dsl_quadruple(rng: Rng) -> GradCheckReport:
    n, d = int(rng.integers(1, 4)), int(rng.integers(2, 6))
    d_max = 10.0
    d_n = rng.integers(1, 3, n)
    d_in = d_n + rng.integers(1, 6, n)
    d_a = np.maximum(d_in + 1, 10 + rng.integers(0, 5, n))

    def f(x):
        return dsl_quadruple_loss(getitem(x, 0), getitem(x, 1), getitem(x, 2), getitem(x, 3), d_n, d_in, d_a, d_max)
    return grad_check(f, rng.normal(size=(4, n, d)))


def case_tracking(rng: Rng) -> GradCheckReport:
    n = int(rng.integers(1, 4))
    tau = float(rng.uniform(0.0, 2.0))
    u = rng.normal(0.0, 5.0, (n, 4))
    scales = Tensor(rng.uniform(0.2, 0.9, (n, 4, 2)))
    reports = [
        grad_check(const_acc_loss, u),
        grad_check(lambda x: order_loss(x, tau), u),
        grad_check(scale_loss, scales.data),
        grad_check(lambda x: track_loss(x, scales, tau), u),
    ]
    return _worst(reports)


def case_reconstruction(rng: Rng) -> GradCheckReport:
    weights = LossWeights(lambda_pixel=float(rng.uniform(0.5, 2.0)), rho_perceptual=float(rng.uniform(0.5, 2.0)))
    pyramid = PerceptualPyramid([2, 2, 2], int(rng.integers(0, 1000)))
    target = Tensor(rng.uniform(size=(2, 3, 8, 8)))
    return grad_check(lambda x: reconstruction_loss(target, x, weights, pyramid), rng.uniform(size=(2, 3, 8, 8)))


def case_box_prior(rng: Rng) -> GradCheckReport:
    return grad_check(box_prior_loss, _random_boxes(rng, int(rng.integers(2, 6))))


def case_crop(rng: Rng) -> GradCheckReport:
    n, h, w, out = 2, 8, 8, (5, 5)
    frames = rng.uniform(size=(n, 3, h, w))
    boxes = _random_boxes(rng, n)
    wts = rng.normal(size=(n, 3) + out)
    return _worst([
        grad_check(lambda x: _weighted_sum(crop(x, Tensor(boxes), out), wts), frames),
        grad_check(lambda b: _weighted_sum(crop(Tensor(frames), b, out), wts), boxes),
    ])


def case_paste(rng: Rng) -> GradCheckReport:
    n, size, frame = 2, 5, (8, 8)
    rgb = rng.uniform(size=(n, 3, size, size))
    mask = rng.uniform(size=(n, 1, size, size))
    boxes = _random_boxes(rng, n)
    w_d = rng.normal(size=(n, 3) + frame)
    w_m = rng.normal(size=(n, 1) + frame)

    def f(rgb_t, mask_t, box_t):
        d, m = paste(rgb_t, mask_t, box_t, frame)
        return _weighted_sum(d, w_d) + _weighted_sum(m, w_m)
    return _worst([
        grad_check(lambda x: f(x, Tensor(mask), Tensor(boxes)), rgb),
        grad_check(lambda x: f(Tensor(rgb), x, Tensor(boxes)), mask),
        grad_check(lambda b: f(Tensor(rgb), Tensor(mask), b), boxes),
    ])


def case_composite(rng: Rng) -> GradCheckReport:
    shape = (2, 3, 4, 4)
    mask = rng.uniform(size=(2, 1, 4, 4))
    fg = rng.uniform(size=shape)
    bg = rng.uniform(size=shape)
    w = rng.normal(size=shape)
    return _worst([
        grad_check(lambda x: _weighted_sum(composite(x, Tensor(fg), Tensor(bg)), w), mask),
        grad_check(lambda x: _weighted_sum(composite(Tensor(mask), x, Tensor(bg)), w), fg),
        grad_check(lambda x: _weighted_sum(composite(Tensor(mask), Tensor(fg), x), w), bg),
    ])


def _tiny_codec(rng: Rng) -> SplitAutoencoder:
    cfg = ModelConfig(n_tv=3, n_ti=2, crop_size=8, trunk_channels=[2, 2, 2, 2], decoder_channels=[2, 2, 2],
                      decoder_feature_channels=2)
    return SplitAutoencoder(cfg, rng)


def case_encode(rng: Rng) -> GradCheckReport:
    codec = _tiny_codec(rng.substream(0))
    w_tv = rng.normal(size=(2, 3))
    w_ti = rng.normal(size=(2, 2))

    def f(x):
        return _weighted_sum(codec.encode(x, "tv"), w_tv) + _weighted_sum(codec.encode(x, "ti"), w_ti)
    crops = rng.uniform(size=(2, 3, 8, 8))
    return _worst([
        grad_check(f, crops),
        grad_check_tensor(lambda: f(Tensor(crops)), codec.tv_head.weight),
    ])


def case_decode(rng: Rng) -> GradCheckReport:
    codec = _tiny_codec(rng.substream(0))
    tv = rng.normal(size=(2, 3))
    ti = rng.normal(size=(2, 2))
    w_rgb = rng.normal(size=(2, 3, 8, 8))
    w_mask = rng.normal(size=(2, 1, 8, 8))

    def f(tv_t, ti_t):
        rgb, mask = codec.decode(tv_t, ti_t)
        return _weighted_sum(rgb, w_rgb) + _weighted_sum(mask, w_mask)
    return _worst([
        grad_check(lambda x: f(x, Tensor(ti)), tv),
        grad_check(lambda x: f(Tensor(tv), x), ti),
    ])


def tiny_experiment(seed: int = 0) -> ExperimentConfig:
    """16×16 画面、8×8 裁剪、2 通道主干的完整实验配置"""
    return ExperimentConfig.model_validate({
        "seed": seed,
        "puppet": {"canvas": [16, 16]},
        "model": {"n_tv": 3, "n_ti": 2, "crop_size": 8, "trunk_channels": [2, 2, 2, 2],
                  "decoder_channels": [2, 2, 2], "decoder_feature_channels": 2,
                  "detector_channels": [2, 2, 2, 2], "detector_downsample": 2, "perceptual_channels": [2, 2, 2]},
        "sampler": {"d_near": 1, "d_max": 10, "gravity_spacing": 2},
        "losses": {"tau_order": 0.5},
    })


def case_total_graph(rng: Rng) -> GradCheckReport:
    """检测 → 裁剪 → 编码（抖动）→ 交换 → 解码 → 贴回 → 合成 → 重建 + DSL + 框先验 + 跟踪"""
    cfg = tiny_experiment(int(rng.integers(0, 2 ** 31)))
    model = PoseAutoencoder(cfg, rng.substream(0))
    pyramid = PerceptualPyramid(cfg.model.perceptual_channels, cfg.model.perceptual_seed)
    frames = rng.uniform(size=(8, 3, 16, 16))
    backgrounds = rng.uniform(size=(8, 3, 16, 16))
    video_ids = [0, 0, 0, 0, 1, 1, 1, 1]
    step_rng = rng.substream(1)
    d = np.array([[1.0, 4.0, 11.0], [2.0, 5.0, 12.0]])

    def loss_fn():
        out = model.forward(frames, backgrounds, video_ids, rng=step_rng, swap=True)
        tv = out.representation(True)
        rows = [take(tv, np.arange(2) * 4 + j) for j in range(4)]
        u_y, scales = box_track_inputs(out.boxes, 16, 2)
        comps = {
            "reconst": reconstruction_loss(Tensor(frames), out.recon, cfg.losses, pyramid),
            "contrastive": dsl_quadruple_loss(*rows, d[:, 0], d[:, 1], d[:, 2], cfg.losses.d_max),
            "prior": box_prior_loss(out.boxes),
            "track": track_loss(u_y, scales, cfg.losses.tau_order),
        }
        return total_loss(comps, cfg.losses)

    targets = [model.detector.head.weight, model.detector.head.bias, model.codec.tv_head.weight,
               model.codec.ti_head.weight, model.codec.out.weight]
    reports = []
    for k, param in enumerate(targets):
        idx = rng.substream(2, k).choice(param.size, size=min(4, param.size), replace=False)
        reports.append(grad_check_tensor(loss_fn, param, eps=1e-6, indices=idx))
    return _worst(reports)


# ============== 套件 ============== #

@dataclass
class GradCase:
    name: str
    fn: Callable[[Rng], GradCheckReport]
    tolerance: float = OP_TOLERANCE


@dataclass
class CaseResult:
    name: str
    tolerance: float
    configs: int
    max_rel_error: float
    failures: List[int] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures


GRAD_CASES: List[GradCase] = [
    GradCase("l2_norm", case_l2_norm),
    GradCase("dot", case_dot),
    GradCase("matmul", case_matmul),
    GradCase("elementwise", case_elementwise),
    GradCase("clamp", case_clamp),
    GradCase("reductions", case_reductions),
    GradCase("concat_reshape", case_concat_reshape),
    GradCase("conv2d", case_conv2d),
    GradCase("resample", case_resample),
    GradCase("cosine_sim", case_cosine),
    GradCase("css_loss", case_css),
    GradCase("triplet_loss", case_triplet),
    GradCase("dsl_loss", case_dsl),
    GradCase("dsl_quadruple_loss", case_dsl_quadruple),
    GradCase("track_loss", case_tracking),
    GradCase("reconstruction_loss", case_reconstruction),
    GradCase("box_prior_loss", case_box_prior),
    GradCase("crop", case_crop),
    GradCase("paste", case_paste),
    GradCase("composite", case_composite),
    GradCase("encode", case_encode),
    GradCase("decode", case_decode),
    GradCase("total_loss_graph", case_total_graph, GRAPH_TOLERANCE),
]


def run_suite(configs: int = DEFAULT_CONFIGS, seed: int = 0, only: Optional[Sequence[str]] = None) -> Dict[str, CaseResult]:
    """每个用例跑 configs 组随机配置（Rng(seed, (用例序号, 配置序号))）"""
    unknown = sorted(set(only or []) - {c.name for c in GRAD_CASES})
    if unknown:
        raise ValueError(f"未知的梯度校验用例: {unknown}")
    results = {}
    for i, case in enumerate(GRAD_CASES):
        if only and case.name not in only:
            continue
        worst, failures = 0.0, []
        for c in range(configs):
            report = case.fn(Rng(seed, (i, c)))
            worst = max(worst, report.max_rel_error)
            if not report.passed(case.tolerance):
                failures.append(c)
        result = CaseResult(case.name, case.tolerance, configs, worst, failures)
        results[case.name] = result
        mark = "✅" if result.passed else "❌"
        print(f"{mark} {case.name:<22s} max_rel_error={worst:.2e} (tol {case.tolerance:.0e}, {configs} 组)")
    return results
