#!/usr/bin/env python3
# test_cli.py - 配置校验与命令行子命令测试

import csv
import glob
import json
import os
import sys
import tempfile

from app import main as cli
from errors import ConfigError
from schemas import ExperimentConfig, load_experiment_config, parse_experiment_config

CONFIG_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "configs")
TINY = os.path.join(CONFIG_DIR, "tiny.json")
DEFAULT = os.path.join(CONFIG_DIR, "default.json")
# default.json 在参考 CPU 上的实测耗时（秒）
SECONDS_PER_STEP = 1.29
SECONDS_PER_VALIDATION = 0.95
TIME_BUDGET = 30 * 60


def print_separator(title):
    """打印分隔线"""
    print("\n" + "=" * 60)
    print(f"  {title}")
    print("=" * 60)


def read_csv(path):
    with open(path, encoding="utf-8") as f:
        return list(csv.DictReader(f))


def config_error_path(text: str) -> str:
    try:
        parse_experiment_config(text)
    except ConfigError as e:
        return e.key_path
    raise AssertionError(f"应当报配置错误: {text}")


def test_config_errors_name_key_path():
    assert config_error_path('{"train": {"variant": "bogus"}}') == "train.variant"
    assert config_error_path('{"colour": 1}') == "colour"
    assert config_error_path('{"sampler": {"d_near": 0}}') == "sampler.d_near"
    assert config_error_path('{"train": {"variant": "no-decode", "latent_split": true}}') == "train"
    assert config_error_path('{"seed": ') == "<document>"
    assert config_error_path("[1, 2]") == "<document>"


def test_shipped_configs_parse():
    for path in sorted(glob.glob(os.path.join(CONFIG_DIR, "*.json"))):
        cfg, text = load_experiment_config(path)
        assert json.loads(text)
        assert cfg.losses.d_max == cfg.sampler.d_max, path


def test_default_run_fits_time_budget():
    cfg, _ = load_experiment_config(DEFAULT)
    assert (cfg.dataset.train_clips, cfg.dataset.clip_length, tuple(cfg.puppet.canvas)) == (8, 300, (64, 64))
    assert cfg.train.variant == "DSL-STN"
    steps = cfg.train.epochs * cfg.train.steps_per_epoch
    projected = steps * SECONDS_PER_STEP + (steps // cfg.train.eval_every + 1) * SECONDS_PER_VALIDATION
    # 留两成余量给数据生成与机器差异
    assert projected <= 0.8 * TIME_BUDGET, f"预计 {projected / 60:.1f} 分钟"
def test_full_scale_switches_dimensions():
    cfg = ExperimentConfig().apply_paper_scale("h36m")
    assert (cfg.model.n_tv, cfg.model.n_ti, cfg.model.crop_size) == (600, 129, 128)
    assert (cfg.sampler.d_near, cfg.sampler.d_max) == (10, 200)
    assert cfg.dataset.clip_length >= 401
    ski = ExperimentConfig().apply_paper_scale("ski")
    assert ski.losses.lambda_pixel == 0.05 and ski.losses.alpha == 0.01


def test_bad_config_exits_with_2():
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "bad.json")
        with open(path, "w", encoding="utf-8") as f:
            f.write('{"train": {"variant": "bogus"}}')
        assert cli(["gen", "--config", path, "--out", os.path.join(tmp, "out")]) == 2
        assert cli(["gen", "--config", TINY, "--seed", "-1", "--out", os.path.join(tmp, "out")]) == 2


def test_runtime_error_exits_with_1():
    with tempfile.TemporaryDirectory() as tmp:
        missing = os.path.join(tmp, "missing.ckpt")
        assert cli(["train-probe", "--config", TINY, "--checkpoint", missing]) == 1


def test_gen_is_byte_identical():
    with tempfile.TemporaryDirectory() as tmp:
        a, b = os.path.join(tmp, "a"), os.path.join(tmp, "b")
        assert cli(["gen", "--config", TINY, "--out", a]) == 0
        assert cli(["gen", "--config", TINY, "--out", b]) == 0
        files_a = sorted(os.path.relpath(p, a) for p in glob.glob(os.path.join(a, "**", "*"), recursive=True)
                         if os.path.isfile(p))
        files_b = sorted(os.path.relpath(p, b) for p in glob.glob(os.path.join(b, "**", "*"), recursive=True)
                         if os.path.isfile(p))
        assert files_a == files_b and "config.json" in files_a
        for rel in files_a:
            with open(os.path.join(a, rel), "rb") as fa, open(os.path.join(b, rel), "rb") as fb:
                assert fa.read() == fb.read(), rel
        with open(os.path.join(a, "config.json"), encoding="utf-8") as f, open(TINY, encoding="utf-8") as g:
            assert f.read() == g.read()


def test_gradcheck_subset():
    assert cli(["gradcheck", "--configs", "2", "--only", "cosine_sim", "dsl_loss", "crop"]) == 0
    assert cli(["gradcheck", "--configs", "1", "--only", "no_such_case"]) == 1


def test_train_probe_and_eval_end_to_end():
    with tempfile.TemporaryDirectory() as tmp:
        data, run = os.path.join(tmp, "data"), os.path.join(tmp, "run")
        assert cli(["gen", "--config", TINY, "--out", data]) == 0
        assert cli(["train-ssl", "--config", TINY, "--dataset", data, "--out", run]) == 0
        ckpt = os.path.join(run, "best.ckpt")
        with open(os.path.join(run, "train_summary.json"), encoding="utf-8") as f:
            summary = json.load(f)
        assert summary["steps"] == 4 and summary["best_checkpoint"] == "best.ckpt"
        assert os.path.exists(os.path.join(run, "checkpoint.ckpt")) and os.path.exists(ckpt)
        assert len(read_csv(os.path.join(run, "metrics.csv"))) == 4

        probe_dir = os.path.join(run, "probe")
        assert cli(["train-probe", "--config", TINY, "--checkpoint", ckpt, "--dataset", data,
                    "--fraction", "1.0", "--out", probe_dir]) == 0
        assert os.path.exists(os.path.join(probe_dir, "probe-1-seed0.ckpt"))
        assert len(read_csv(os.path.join(probe_dir, "probe.csv"))) == 1

        eval_dir = os.path.join(run, "eval")
        assert cli(["eval", "--config", TINY, "--checkpoint", ckpt, "--dataset", data,
                    "--pairs", "10", "--out", eval_dir]) == 0
        rows = read_csv(os.path.join(eval_dir, "baseline.csv"))
        assert len(rows) == 3 * 2
        assert os.path.exists(os.path.join(eval_dir, "qualitative.png"))
        with open(os.path.join(eval_dir, "swap_transfer.json"), encoding="utf-8") as f:
            assert json.load(f)["pairs"] == 10

        swap_dir = os.path.join(run, "swap")
        assert cli(["swap-demo", "--config", TINY, "--checkpoint", ckpt, "--dataset", data,
                    "--pairs", "10", "--out", swap_dir]) == 0
        assert os.path.exists(os.path.join(swap_dir, "swap_grid.png"))


def test_bg_estimate_writes_report():
    with tempfile.TemporaryDirectory() as tmp:
        assert cli(["bg-estimate", "--config", TINY, "--out", tmp]) == 0
        rows = read_csv(os.path.join(tmp, "background.csv"))
        assert len(rows) == 6
        assert os.path.exists(os.path.join(tmp, "background.png"))


def test_ablate_writes_summary():
    with tempfile.TemporaryDirectory() as tmp:
        assert cli(["ablate", "--config", TINY, "--seed", "1", "--out", tmp]) == 0
        rows = read_csv(os.path.join(tmp, "ablation.csv"))
        assert len(rows) == 3 * 2
        assert os.path.exists(os.path.join(tmp, "config.resolved.json"))


TESTS = [
    test_config_errors_name_key_path,
    test_shipped_configs_parse,
    test_default_run_fits_time_budget,
    test_full_scale_switches_dimensions,
    test_bad_config_exits_with_2,
    test_runtime_error_exits_with_1,
    test_gen_is_byte_identical,
    test_gradcheck_subset,
    test_train_probe_and_eval_end_to_end,
    test_bg_estimate_writes_report,
    test_ablate_writes_summary,
]


def main():
    print_separator("命令行测试")
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
