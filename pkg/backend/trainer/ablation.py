# trainer/ablation.py
"""
消融矩阵：每个变体 × 每个种子训练一次，再对每个标注比例训练探针

输出：
    ablation_runs.csv  每个 (变体, 种子, 比例) 一行
    ablation.csv       每个 (变体, 比例) 一行，跨种子取中位数
"""

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Tuple

from evalkit.report import median_rows, write_report_csv
from schemas import ExperimentConfig
from synth.dataset import SyntheticDataset
from trainer.probe import collect_probe_data, train_probe
from trainer.ssl_trainer import SSLTrainer, write_config_copy

RUN_FIELDS = ["variant", "seed", "fraction", "steps", "best_val", "train_samples", "n_mpjpe", "mpjpe", "mse_percent"]
SUMMARY_FIELDS = ["variant", "fraction", "seeds", "n_mpjpe", "mpjpe", "mse_percent", "best_val"]


def variant_config(cfg: ExperimentConfig, variant: str, seed: int) -> ExperimentConfig:
    """按预设切换变体（清除单项覆盖），训练种子为 cfg.seed + seed"""
    train = cfg.train.model_copy(update={"variant": variant, "decode": None, "stn": None,
                                         "contrastive": None, "latent_split": None})
    return ExperimentConfig.model_validate({**cfg.model_dump(), "seed": cfg.seed + seed,
                                            "train": train.model_dump()})


def run_single(cfg: ExperimentConfig, dataset: SyntheticDataset, variant: str, seed: int,
               out_dir: str) -> List[Dict]:
    run_cfg = variant_config(cfg, variant, seed)
    run_dir = os.path.join(out_dir, variant, f"seed-{seed}")
    write_config_copy(run_dir, None, run_cfg)
    trainer = SSLTrainer(run_cfg, dataset, run_dir)
    result = trainer.fit()
    trainer.load_best()

    train_data = collect_probe_data(trainer.model, dataset.train, "auto", cfg.probe.kind)
    test_data = collect_probe_data(trainer.model, dataset.test, "auto", cfg.probe.kind)
    rows = []
    for fraction in cfg.probe.fractions:
        probe = train_probe(trainer.model, dataset.train, dataset.test, cfg.probe, fraction, seed,
                            train_data=train_data, test_data=test_data)
        row = probe.row()
        row.update({"variant": variant, "seed": seed, "steps": result.steps, "best_val": result.best_val})
        rows.append(row)
    return rows


def run_ablation(cfg: ExperimentConfig, dataset: SyntheticDataset, out_dir: str) -> Tuple[List[Dict], List[Dict]]:
    """返回 (逐次运行的行, 汇总行)，并写出两个 CSV"""
    jobs = [(v, s) for v in cfg.ablate_variants for s in cfg.probe.seeds]
    print(f"🧩 消融矩阵：{len(cfg.ablate_variants)} 个变体 × {len(cfg.probe.seeds)} 个种子")
    if cfg.train.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.train.workers) as pool:
            parts = list(pool.map(lambda job: run_single(cfg, dataset, job[0], job[1], out_dir), jobs))
    else:
        parts = [run_single(cfg, dataset, v, s, out_dir) for v, s in jobs]
    runs = [row for part in parts for row in part]

    summary = median_rows(runs, ["variant", "fraction"], ["n_mpjpe", "mpjpe", "mse_percent", "best_val"])
    write_report_csv(runs, os.path.join(out_dir, "ablation_runs.csv"), RUN_FIELDS)
    write_report_csv(summary, os.path.join(out_dir, "ablation.csv"), SUMMARY_FIELDS)
    for row in summary:
        print(f"   {row['variant']:>10s} fraction={row['fraction']:<6} N-MPJPE(中位数)={row['n_mpjpe']:.3f}")
    return runs, summary
