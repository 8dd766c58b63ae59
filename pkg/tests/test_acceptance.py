"""Acceptance gate: one test per headline criterion, each printing a PASS/FAIL line."""

import csv
import json
import time

import numpy as np
import pytest

from uvmamba import cli, verify
from uvmamba.model import ModelConfig, UVMamba
from uvmamba.training import TrainConfig, lr_schedule, synth_dataset, train_loop

DESK = {"stage_channels": [32, 64, 128, 256], "ssm_state_size": 8, "dcn_groups": 4}


@pytest.fixture
def report(capsys):
    def emit(name, ok, detail):
        with capsys.disabled():
            print(f"\n[acceptance] {'PASS' if ok else 'FAIL'} {name}: {detail}")
        return ok

    return emit


def test_gradient_suite(report):
    start = time.perf_counter()
    results = verify.grad_suite(seeds=range(10))
    elapsed = time.perf_counter() - start
    failed = [r.name for r in results if not r.passed]
    ok = report("gradient suite", not failed and elapsed < 300,
                f"{len(results)} ops x 10 seeds, tol {verify.GRAD_TOL}, eps {verify.GRAD_EPS}, "
                f"{elapsed:.1f}s, failures {failed or 'none'}")
    assert ok


def test_zoh_matches_ode_integration(report):
    rng = np.random.default_rng([0, 3])
    errs = [verify.zoh_ode_draw(rng) for _ in range(50)]
    ok = report("ZOH vs RK4", max(errs) <= 1e-6, f"max abs err {max(errs):.2e} over 50 draws (N<=4, L<=64)")
    assert ok


def test_memory_decay(report):
    rng = np.random.default_rng(11)
    draws = [verify.memory_decay_draw(rng)[0] for _ in range(200)]
    ok = report("memory decay", all(draws), f"{sum(draws)}/200 impulse responses strictly decreasing")
    assert ok


def test_scan_paths_exhaustive(report):
    results = verify.scan_suite(max_side=16)
    ok = report("scan paths", all(r.passed for r in results),
                "; ".join(f"{r.name} {'ok' if r.passed else r.detail}" for r in results))
    assert ok


def test_deformable_reduction_and_linearity(report):
    results = verify.deform_suite()
    ok = report("deformable reduction", all(r.passed for r in results),
                "; ".join(f"{r.name}: {r.detail}" for r in results))
    assert ok


def test_shape_contract(report):
    cfg = ModelConfig()
    model = UVMamba(cfg, seed=0)
    problems = []
    for size in (64, 128):
        x = np.random.default_rng(size).random((1, 3, size, size)).astype(np.float32)
        feats = model.forward_features(x)
        for i, (f, c) in enumerate(zip(feats, cfg.stage_channels)):
            want = (1, c, size // 2 ** (i + 2), size // 2 ** (i + 2))
            if f.shape != want:
                problems.append(f"{size}: stage {i + 1} {f.shape} != {want}")
        logits = model(x)
        if logits.shape != (1, cfg.num_classes, size, size):
            problems.append(f"{size}: logits {logits.shape}")
    ok = report("shape contract", not problems, "; ".join(problems) or "64^2 and 128^2 stage and logit sizes exact")
    assert ok


@pytest.mark.slow
def test_overfit_run(tmp_path, capsys, report):
    config = {"model": DESK,
              "train": {"loss": "dice", "base_lr": 2e-3, "warmup_epochs": 5, "total_epochs": 75,
                        "batch_size": 8, "eval_every": 25},
              "data": {"synthetic": [32, 64, 64], "seed": 0}}
    path = tmp_path / "overfit.json"
    path.write_text(json.dumps(config))
    steps = 75 * 32 // 8
    start = time.perf_counter()
    assert cli.main(["train", "--config", str(path), "--threads", "1", "--out", str(tmp_path / "run")]) == 0
    capsys.readouterr()
    assert cli.main(["eval", "--checkpoint", str(tmp_path / "run" / "best.json"),
                     "--synthetic", "32,64,64", "--seed", "0"]) == 0
    metrics = json.loads(capsys.readouterr().out)
    minutes = (time.perf_counter() - start) / 60
    ok = report("overfit", metrics["iou"] >= 0.95 and steps <= 2000 and minutes <= 30,
                f"train-set IoU {metrics['iou']:.4f} after {steps} steps in {minutes:.1f} min on one core")
    assert ok


def test_ablation_harness(tmp_path, capsys, report):
    config = {"model": DESK, "train": {"warmup_epochs": 1, "total_epochs": 3, "batch_size": 4, "val_fraction": 0.25}}
    path = tmp_path / "ablate.json"
    path.write_text(json.dumps(config))
    code = cli.main(["ablate", "--config", str(path), "--synthetic", "8,64,64", "--seed", "0", "--threads", "1",
                     "--out", str(tmp_path / "abl")])
    capsys.readouterr()
    rows = list(csv.DictReader(open(tmp_path / "abl" / "ablation.csv"))) if code == 0 else []
    params = {r["mode"]: int(r["params"]) for r in rows}
    finite = all(np.isfinite(float(r["final_loss"])) for r in rows)
    ok = (code == 0 and len(rows) == 5 and finite and params["serial"] == params["reverse"]
          and params["sade_only"] < params["serial"])
    ok = report("ablation harness", ok, f"exit {code}, params {params}, finite losses {finite}")
    assert ok


def test_schedule_endpoints(tmp_path, report):
    base = 1e-3
    direct = lr_schedule(500, 500, 50, base) == 1e-6 and lr_schedule(50, 500, 50, base) == base
    cfg = ModelConfig(stage_channels=(8, 16, 24, 32), ssm_state_size=4, blocks_per_stage=1)
    tc = TrainConfig(base_lr=base, warmup_epochs=1, total_epochs=3, batch_size=2, eval_every=3)
    result = train_loop(cfg, tc, synth_dataset(4, 32, 32, seed=0))
    lrs = result.step_lrs  # 2 steps per epoch, warmup ends at step 2
    ok = report("schedule endpoints", direct and lrs[-1] == 1e-6 and lrs[2] == base and lrs[0] == 0.0
                and result.history[-1]["lr"] == 1e-6,
                f"lr per step {[f'{v:.3g}' for v in lrs]}, final {lrs[-1]!r}, end of warmup {lrs[2]!r}")
    assert ok


def test_determinism(tmp_path, capsys, report):
    config = {"model": DESK, "train": {"warmup_epochs": 1, "total_epochs": 3, "batch_size": 4}}
    path = tmp_path / "det.json"
    path.write_text(json.dumps(config))
    for run in ("a", "b"):
        assert cli.main(["train", "--config", str(path), "--synthetic", "8,64,64", "--seed", "5",
                         "--threads", "1", "--out", str(tmp_path / run)]) == 0
    capsys.readouterr()
    same = {name: (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
            for name in ("history.csv", "best.bin", "best.json")}
    ok = report("determinism", all(same.values()), f"byte-identical outputs: {same}")
    assert ok
