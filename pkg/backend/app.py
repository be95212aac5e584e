# app.py
"""
命令行入口

    python app.py gen         --config configs/default.json --out data/synthetic
    python app.py train-ssl   --config configs/default.json --out runs/dsl
    python app.py train-probe --checkpoint runs/dsl/best.ckpt --out runs/dsl/probe
    python app.py eval        --checkpoint runs/dsl/best.ckpt --out runs/dsl/eval
    python app.py swap-demo   --checkpoint runs/dsl/best.ckpt --out runs/dsl/swap
    python app.py bg-estimate --config configs/fall.json --out runs/bg
    python app.py gradcheck
    python app.py ablate      --config configs/default.json --out runs/ablation

退出码：0 成功；2 配置错误（打印键路径）；1 运行时错误
"""

import argparse
import json
import os
import sys
from typing import Optional, Tuple

import numpy as np

from diffcore.rng import Rng
from errors import ConfigError
from evalkit.report import (probe_baseline_comparison, qualitative_rows, save_image_grid, swap_grid_rows,
                            write_report_csv)
from evalkit.swap_transfer import STREAM_SWAP, sample_pairs, swap_transfer_score
from schemas import ExperimentConfig, load_experiment_config
from synth.background import estimate_background
from synth.dataset import SyntheticDataset, build_dataset, load_dataset, save_dataset
from tools.gradcheck_suite import DEFAULT_CONFIGS, run_suite
from trainer.ablation import run_ablation
from trainer.pipeline import PoseAutoencoder, load_model
from trainer.probe import collect_probe_data, train_probe
from trainer.ssl_trainer import train_ssl, two_stage_gravity, write_config_copy

PROBE_FIELDS = ["which", "kind", "fraction", "seed", "train_samples", "n_mpjpe", "mpjpe", "mse_percent"]
BACKGROUND_FIELDS = ["clip_id", "kind", "method", "max_abs_error", "mean_fg_fraction"]
GRADCHECK_FIELDS = ["name", "tolerance", "configs", "max_rel_error", "passed"]
DEMO_FRAMES = 4


# ============== 公共部分 ============== #

def load_context(args) -> Tuple[ExperimentConfig, Optional[str]]:
    """读取配置并应用 --seed / --paper-scale；返回 (生效配置, 原始文本)"""
    if args.config:
        cfg, text = load_experiment_config(args.config)
    else:
        cfg, text = ExperimentConfig(), None
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("seed", f"种子必须为非负整数，当前 {args.seed}")
        cfg = ExperimentConfig.model_validate({**cfg.model_dump(), "seed": args.seed})
    if args.paper_scale:
        cfg = cfg.apply_paper_scale()
        print(f"📐 切换到全尺寸（{cfg.paper_dataset}）: n_tv={cfg.model.n_tv}, n_ti={cfg.model.n_ti}, "
              f"crop={cfg.model.crop_size}, d_near={cfg.sampler.d_near}, d_max={cfg.sampler.d_max}")
    return cfg, text


def prepare_out(out_dir: str, cfg: ExperimentConfig, text: Optional[str], args) -> str:
    """输出目录里逐字回显配置；命令行覆盖过的字段另存生效配置"""
    write_config_copy(out_dir, text, cfg)
    if text is not None and (args.seed is not None or args.paper_scale):
        with open(os.path.join(out_dir, "config.resolved.json"), "w", encoding="utf-8") as f:
            json.dump(cfg.model_dump(mode="json"), f, ensure_ascii=False, indent=2)
            f.write("\n")
    return out_dir


def get_dataset(args, cfg: ExperimentConfig) -> SyntheticDataset:
    """--dataset 指定目录时读取，否则按配置与种子重新生成（结果相同）"""
    path = getattr(args, "dataset", None)
    if path:
        print(f"📥 读取数据集 {path}")
        return load_dataset(path)
    return build_dataset(cfg.puppet, cfg.dataset, cfg.seed)


def load_checkpoint_model(args) -> Tuple[PoseAutoencoder, ExperimentConfig]:
    model, model_cfg, header = load_model(args.checkpoint)
    print(f"📥 已加载检查点 {args.checkpoint}（variant={model_cfg.train.variant}, step={header['step']}）")
    return model, model_cfg


def _dump_json(path: str, obj):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, ensure_ascii=False, indent=2, sort_keys=True)
        f.write("\n")


# ============== 子命令 ============== #

def cmd_gen(args) -> int:
    cfg, text = load_context(args)
    out = args.out or cfg.dataset_dir
    ds = build_dataset(cfg.puppet, cfg.dataset, cfg.seed)
    save_dataset(ds, out)
    prepare_out(out, cfg, text, args)
    return 0


def cmd_train_ssl(args) -> int:
    cfg, text = load_context(args)
    out = prepare_out(args.out or os.path.join(cfg.output_dir, "ssl"), cfg, text, args)
    dataset = get_dataset(args, cfg)
    if cfg.train.gravity_schedule == "two-stage" and not args.resume:
        result = two_stage_gravity(dataset, cfg, out)
    else:
        result = train_ssl(dataset, cfg, out, resume_from=args.resume)
    _dump_json(os.path.join(out, "train_summary.json"), {
        "checkpoint": os.path.basename(result.checkpoint), "steps": result.steps,
        "best_checkpoint": os.path.basename(result.best_checkpoint), "best_step": result.best_step,
        "initial_val": result.initial_val, "best_val": result.best_val,
        "stopped_early": result.stopped_early, "localization": result.localization,
    })
    return 0


def cmd_train_probe(args) -> int:
    cfg, text = load_context(args)
    model, model_cfg = load_checkpoint_model(args)
    out = prepare_out(args.out or os.path.join(os.path.dirname(args.checkpoint), "probe"), cfg, text, args)
    dataset = get_dataset(args, model_cfg)
    fractions = [args.fraction] if args.fraction is not None else cfg.probe.fractions
    train_data = collect_probe_data(model, dataset.train, args.which, cfg.probe.kind)
    test_data = collect_probe_data(model, dataset.test, args.which, cfg.probe.kind)
    rows = []
    for fraction in fractions:
        for seed in cfg.probe.seeds:
            path = os.path.join(out, f"probe-{fraction:g}-seed{seed}.ckpt")
            result = train_probe(model, dataset.train, dataset.test, cfg.probe, fraction, seed, which=args.which,
                                 out_path=path, train_data=train_data, test_data=test_data)
            rows.append(result.row())
    write_report_csv(rows, os.path.join(out, "probe.csv"), PROBE_FIELDS)
    return 0


def cmd_eval(args) -> int:
    cfg, text = load_context(args)
    model, model_cfg = load_checkpoint_model(args)
    out = prepare_out(args.out or os.path.join(os.path.dirname(args.checkpoint), "eval"), cfg, text, args)
    dataset = get_dataset(args, model_cfg)
    rows = probe_baseline_comparison({model_cfg.train.variant: model}, model_cfg, dataset, cfg.probe)
    write_report_csv(rows, os.path.join(out, "baseline.csv"))

    clip = dataset.test[0]
    idx = np.linspace(0, clip.length - 1, DEMO_FRAMES).astype(int)
    if model.variant.decode:
        bg = np.stack([dataset.background_for(clip, model_cfg.dataset.background)] * len(idx))
        save_image_grid(qualitative_rows(model, clip.frames[idx], bg), os.path.join(out, "qualitative.png"))
        score = swap_transfer_score(model, dataset.test, args.pairs, Rng(model_cfg.seed, (STREAM_SWAP, 0)))
        _dump_json(os.path.join(out, "swap_transfer.json"), score.__dict__)
    else:
        print("⚠️  该变体没有解码器，跳过定性图与交换检验")
    return 0


def cmd_swap_demo(args) -> int:
    cfg, text = load_context(args)
    model, model_cfg = load_checkpoint_model(args)
    out = prepare_out(args.out or os.path.join(os.path.dirname(args.checkpoint), "swap"), cfg, text, args)
    dataset = get_dataset(args, model_cfg)
    rng = Rng(model_cfg.seed, (STREAM_SWAP, 1))
    pairs = sample_pairs(dataset.test, DEMO_FRAMES, rng)
    frames_a = np.stack([dataset.test[i].frames[t] for i, t, _, _ in pairs])
    frames_b = np.stack([dataset.test[j].frames[t] for _, _, j, t in pairs])
    save_image_grid(swap_grid_rows(model, frames_a, frames_b), os.path.join(out, "swap_grid.png"))
    score = swap_transfer_score(model, dataset.test, args.pairs, Rng(model_cfg.seed, (STREAM_SWAP, 0)))
    _dump_json(os.path.join(out, "swap_transfer.json"), score.__dict__)
    return 0


def cmd_bg_estimate(args) -> int:
    cfg, text = load_context(args)
    out = prepare_out(args.out or os.path.join(cfg.output_dir, "background"), cfg, text, args)
    dataset = get_dataset(args, cfg)
    rows, grid = [], []
    for clip in dataset.all_clips:
        est = estimate_background(clip.frames, args.method)
        err = float(np.max(np.abs(est - clip.background)))
        rows.append({"clip_id": clip.clip_id, "kind": clip.kind, "method": args.method,
                     "max_abs_error": err, "mean_fg_fraction": float(np.mean(clip.fg_fraction))})
        grid.append([clip.frames[0], est, clip.background])
        print(f"   {clip.clip_id}: 最大误差 {err:.4f}")
    write_report_csv(rows, os.path.join(out, "background.csv"), BACKGROUND_FIELDS)
    save_image_grid(grid, os.path.join(out, "background.png"))
    return 0


def cmd_gradcheck(args) -> int:
    results = run_suite(configs=args.configs, seed=args.seed or 0, only=args.only)
    if args.out:
        rows = [{"name": r.name, "tolerance": r.tolerance, "configs": r.configs,
                 "max_rel_error": r.max_rel_error, "passed": r.passed} for r in results.values()]
        write_report_csv(rows, os.path.join(args.out, "gradcheck.csv"), GRADCHECK_FIELDS)
    failed = [name for name, r in results.items() if not r.passed]
    if failed:
        print(f"❌ 梯度校验未通过: {', '.join(failed)}")
        return 1
    print(f"✅ 全部 {len(results)} 项梯度校验通过")
    return 0


def cmd_ablate(args) -> int:
    cfg, text = load_context(args)
    out = prepare_out(args.out or os.path.join(cfg.output_dir, "ablation"), cfg, text, args)
    dataset = get_dataset(args, cfg)
    run_ablation(cfg, dataset, out)
    return 0


# ============== 参数解析 ============== #

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="app.py", description="无监督姿态表示学习：合成数据、训练、探针与评估")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, fn, help_text: str, dataset: bool = True, checkpoint: bool = False):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON 配置文件，缺省使用内置默认值")
        p.add_argument("--out", help="输出目录")
        p.add_argument("--seed", type=int, help="覆盖配置中的种子")
        p.add_argument("--paper-scale", action="store_true", help="切换到全尺寸的维度与采样距离")
        if dataset:
            p.add_argument("--dataset", help="已生成的数据集目录，缺省时按配置重新生成")
        if checkpoint:
            p.add_argument("--checkpoint", required=True, help="自监督训练的检查点")
        p.set_defaults(func=fn)
        return p

    add("gen", cmd_gen, "生成合成数据集", dataset=False)
    p = add("train-ssl", cmd_train_ssl, "自监督训练（含两阶段重力训练）")
    p.add_argument("--resume", help="从检查点继续训练")
    p = add("train-probe", cmd_train_probe, "冻结主干训练姿态探针", checkpoint=True)
    p.add_argument("--fraction", type=float, help="只训练这一个标注比例")
    p.add_argument("--which", default="auto", choices=["auto", "tv", "ti", "latent"], help="探针输入特征")
    p = add("eval", cmd_eval, "基线对比、交换检验与定性图", checkpoint=True)
    p.add_argument("--pairs", type=int, default=200, help="交换检验的帧对数")
    p = add("swap-demo", cmd_swap_demo, "交换网格图", checkpoint=True)
    p.add_argument("--pairs", type=int, default=200, help="交换检验的帧对数")
    p = add("bg-estimate", cmd_bg_estimate, "由视频估计背景并与真实背景比较")
    p.add_argument("--method", default="median", choices=["median", "first-last"])
    p = add("gradcheck", cmd_gradcheck, "完整梯度校验套件", dataset=False)
    p.add_argument("--configs", type=int, default=DEFAULT_CONFIGS, help="每个算子的随机配置组数")
    p.add_argument("--only", nargs="*", help="只运行这些用例")
    add("ablate", cmd_ablate, "运行消融矩阵并输出对比表")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"❌ {e}", file=sys.stderr)
        return 2
    except Exception as e:
        print(f"❌ {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
