"""``uvmamba`` command line: train, eval, infer, verify, scan-demo, ablate, make-data.

Exit codes: 0 success, 1 verification failure, 2 usage or configuration
error, 3 non-finite loss, 4 unreadable or incompatible checkpoint.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .autodiff import functional as F
from .autodiff.tensor import NonFiniteError
from .checkpoint import CheckpointError, load_checkpoint
from .model.config import ConfigError, ModelConfig
from .model.network import count_params_flops
from .scan_paths import DIRECTIONS, scan_order
from .training import data as D
from .training.loop import TrainConfig, evaluate, train_loop

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_NONFINITE, EXIT_CHECKPOINT = 0, 1, 2, 3, 4
LOSS_FLAGS = {"ce": "cross_entropy", "dice": "dice"}
ABLATION_VARIANTS = (
    ("serial", {"position_mode": "serial"}),
    ("parallel", {"position_mode": "parallel"}),
    ("reverse", {"position_mode": "reverse"}),
    ("sade_only", {"use_mssm": False}),
    ("mssm_only", {"use_sade": False}),
)
OVERLAY_TINT = np.array([1.0, 0.15, 0.1])[:, None, None]


class UsageError(Exception):
    """Bad flags, config or inputs; maps to exit code 2."""


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    synthetic: tuple[int, int, int] | None = (32, 64, 64)
    data_dir: str | None = None
    data_seed: int = 0

    def to_dict(self) -> dict:
        return {
            "model": self.model.to_dict(),
            "train": self.train.to_dict(),
            "data": {"synthetic": list(self.synthetic) if self.synthetic else None,
                     "dir": self.data_dir, "seed": self.data_seed},
        }


def parse_synthetic(text: str) -> tuple[int, int, int]:
    try:
        n, h, w = (int(v) for v in text.split(","))
    except ValueError:
        raise UsageError(f"--synthetic expects n,H,W (three integers), got {text!r}") from None
    if n < 0 or h < 1 or w < 1:
        raise UsageError(f"--synthetic values must be non-negative sizes, got {text!r}")
    return n, h, w


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except ValueError as exc:
        raise UsageError(f"config file {path} is not valid JSON: {exc}") from None


def resolve_config(args) -> RunConfig:
    """Config file values, then command-line overrides. Unknown keys are rejected."""
    raw = _read_json(args.config) if getattr(args, "config", None) else {}
    unknown = set(raw) - {"model", "train", "data"}
    if unknown:
        raise ConfigError(f"unknown top-level config keys: {sorted(unknown)}")
    model_d = dict(raw.get("model", {}))
    train_d = dict(raw.get("train", {}))
    data_d = dict(raw.get("data", {}))
    bad = set(data_d) - {"synthetic", "dir", "seed"}
    if bad:
        raise ConfigError(f"unknown data config keys: {sorted(bad)}")

    if getattr(args, "mode", None):
        model_d["position_mode"] = args.mode
    if getattr(args, "seed", None) is not None:
        train_d["seed"] = args.seed
        data_d["seed"] = args.seed
    if getattr(args, "epochs", None) is not None:
        train_d["total_epochs"] = args.epochs
    if getattr(args, "lr", None) is not None:
        train_d["base_lr"] = args.lr
    if getattr(args, "loss", None):
        train_d["loss"] = LOSS_FLAGS[args.loss]
    if getattr(args, "synthetic", None):
        data_d["synthetic"] = list(parse_synthetic(args.synthetic))
        data_d["dir"] = None
    if getattr(args, "data", None):
        data_d["dir"] = args.data
        data_d["synthetic"] = None

    if "stage_channels" in model_d:
        model_d["stage_channels"] = tuple(model_d["stage_channels"])
    model = ModelConfig.from_dict(model_d)
    train = TrainConfig.from_dict(train_d)
    synthetic = data_d.get("synthetic", None if data_d.get("dir") else [32, 64, 64])
    return RunConfig(model, train, tuple(synthetic) if synthetic else None,
                     data_d.get("dir"), int(data_d.get("seed", train.seed)))


def load_data(cfg: RunConfig) -> list:
    if cfg.data_dir:
        try:
            return D.load_dataset(cfg.data_dir)
        except (FileNotFoundError, ValueError, OSError) as exc:
            raise UsageError(str(exc)) from None
    if cfg.synthetic is None:
        raise UsageError("no data: pass --data DIR or --synthetic n,H,W")
    try:
        return D.synth_dataset(*cfg.synthetic, seed=cfg.data_seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _out_dir(args, default: str) -> Path:
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


# --------------------------------------------------------------------- commands

def cmd_train(args) -> int:
    from .plotting import plot_history

    cfg = resolve_config(args)
    samples = load_data(cfg)
    if not samples:
        raise UsageError("dataset is empty")
    out = _out_dir(args, "runs/train")
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")
    result = train_loop(cfg.model, cfg.train, samples, out_dir=out, log=_log)
    plot_history(result.history, out / "history.png")
    print(json.dumps({"best_iou": result.best_iou, "checkpoint": str(result.checkpoint),
                      "history": str(out / "history.csv")}))
    return EXIT_OK


def cmd_eval(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    cfg = resolve_config(args)
    samples = load_data(cfg)
    if not samples:
        raise UsageError("dataset is empty")
    metrics = evaluate(model, samples)
    print(json.dumps(metrics))
    return EXIT_OK


def _infer_paths(out: str) -> tuple[Path, Path]:
    path = Path(out)
    return path, path.with_name(f"{path.stem}_mask.png")


def cmd_infer(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    try:
        image = D.read_image(args.image)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read image {args.image}: {exc}") from None
    _, H, W = image.shape
    Hp, Wp = -(-H // 32) * 32, -(-W // 32) * 32
    batch = image[None]
    if (Hp, Wp) != (H, W):
        _log(f"input {H}x{W} is not divisible by 32; resized to {Hp}x{Wp} for the network")
        batch = F.bilinear_resize(batch, Hp, Wp).data
    logits = model(batch)
    if (Hp, Wp) != (H, W):
        logits = F.bilinear_resize(logits, H, W)
    mask = logits.data[0].argmax(axis=0).astype(np.uint8)
    overlay = np.where(mask[None] == 1, 0.5 * image + 0.5 * OVERLAY_TINT, image)
    overlay_path, mask_path = _infer_paths(args.out)
    overlay_path.parent.mkdir(parents=True, exist_ok=True)
    D.write_image(overlay_path, overlay)
    D.write_mask(mask_path, mask)
    print(json.dumps({"overlay": str(overlay_path), "mask": str(mask_path),
                      "foreground_fraction": float(mask.mean())}))
    return EXIT_OK


def cmd_verify(args) -> int:
    from . import verify

    if args.suite == "grad" or args.suite == "all":
        results = verify.grad_suite(seeds=range(args.seeds))
        if args.suite == "all":
            results += [r for s in verify.SUITES if s != "grad" for r in verify.run_suite(s)]
    else:
        results = verify.run_suite(args.suite)
    for r in results:
        print(r.line(), flush=True)
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} properties passed")
    return EXIT_VERIFY if failed else EXIT_OK


def cmd_scan_demo(args) -> int:
    from .plotting import plot_scan_orders

    H, W = args.height, args.width
    if H < 1 or W < 1:
        raise UsageError("--height and --width must be positive")
    out = _out_dir(args, "runs/scan-demo")
    orders = {d: scan_order(d, H, W).perm for d in DIRECTIONS}
    with open(out / "scan_orders.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["direction", "step", "token", "row", "col"])
        for d, perm in orders.items():
            for step, tok in enumerate(perm):
                writer.writerow([d, step, int(tok), int(tok) // W, int(tok) % W])
    plot_scan_orders(orders, H, W, out / "scan_orders.png")
    print(json.dumps({"csv": str(out / "scan_orders.csv"), "figure": str(out / "scan_orders.png")}))
    return EXIT_OK


def run_ablation(cfg: RunConfig, samples, out: Path) -> list[dict]:
    rows = []
    for name, overrides in ABLATION_VARIANTS:
        model_cfg = replace(cfg.model, **{"position_mode": "serial", **overrides})
        size = count_params_flops(model_cfg, *samples[0].image.shape[1:])
        _log(f"ablation variant {name}: {size['params']} parameters")
        result = train_loop(model_cfg, cfg.train, samples, out_dir=out / name, log=_log)
        last = result.history[-1]
        rows.append({"mode": name, "params": size["params"], "flops": size["flops"],
                     "final_loss": last["loss"], "final_iou": last["iou"], "best_iou": result.best_iou})
    return rows


def cmd_ablate(args) -> int:
    from .plotting import plot_ablation

    cfg = resolve_config(args)
    samples = load_data(cfg)
    if not samples:
        raise UsageError("dataset is empty")
    out = _out_dir(args, "runs/ablate")
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")
    rows = run_ablation(cfg, samples, out)
    with open(out / "ablation.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    plot_ablation(rows, out / "ablation.png")
    print(json.dumps({"csv": str(out / "ablation.csv"), "figure": str(out / "ablation.png")}))
    return EXIT_OK


def cmd_make_data(args) -> int:
    n, H, W = parse_synthetic(args.synthetic)
    try:
        samples = D.synth_dataset(n, H, W, seed=args.seed or 0)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = _out_dir(args, "data/synthetic")
    D.save_dataset(samples, out)
    print(json.dumps({"dir": str(out), "samples": n}))
    return EXIT_OK


# ----------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="seed for weights, data order and synthetic data")
    common.add_argument("--threads", type=int, default=None, help="BLAS thread cap; 1 gives bit-reproducible runs")
    common.add_argument("--out", default=None, help="output directory (or file for infer)")

    run = argparse.ArgumentParser(add_help=False)
    run.add_argument("--config", default=None, help="JSON file with model/train/data sections")
    run.add_argument("--synthetic", default=None, metavar="n,H,W", help="generate a synthetic dataset")
    run.add_argument("--data", default=None, metavar="DIR", help="directory of <id>.png / <id>_mask.png pairs")

    trainish = argparse.ArgumentParser(add_help=False)
    trainish.add_argument("--epochs", type=int, default=None)
    trainish.add_argument("--lr", type=float, default=None)
    trainish.add_argument("--loss", choices=sorted(LOSS_FLAGS), default=None)
    trainish.add_argument("--mode", choices=("serial", "parallel", "reverse"), default=None)

    parser = argparse.ArgumentParser(prog="uvmamba", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common, run, trainish], help="train a model")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common, run], help="metrics JSON for a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", parents=[common], help="overlay and mask PNG for one image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.set_defaults(func=cmd_infer, out="overlay.png")

    p = sub.add_parser("verify", parents=[common], help="run property suites")
    p.add_argument("suite", choices=("grad", "scan", "zoh", "deform", "all"))
    p.add_argument("--seeds", type=int, default=10, help="seeds per gradient case")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("scan-demo", parents=[common], help="CSV and heatmaps of the eight scan orders")
    p.add_argument("--height", type=int, default=6)
    p.add_argument("--width", type=int, default=8)
    p.set_defaults(func=cmd_scan_demo)

    p = sub.add_parser("ablate", parents=[common, run, trainish], help="train the five encoder variants")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("make-data", parents=[common], help="write a synthetic PNG dataset")
    p.add_argument("--synthetic", required=True, metavar="n,H,W")
    p.set_defaults(func=cmd_make_data)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        with threadpool_limits(limits=args.threads):
            return args.func(args)
    except (UsageError, ConfigError) as exc:
        _log(f"error: {exc}")
        return EXIT_USAGE
    except NonFiniteError as exc:
        _log(f"error: {exc}")
        return EXIT_NONFINITE
    except CheckpointError as exc:
        _log(f"checkpoint error: {exc}")
        return EXIT_CHECKPOINT


if __name__ == "__main__":
    sys.exit(main())
