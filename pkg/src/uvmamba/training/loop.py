"""Epoch loop: augment, forward, loss, backward, AdamW under the warmup + cosine schedule."""

from __future__ import annotations

import csv
import math
from contextlib import contextmanager
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from ..autodiff.tensor import NonFiniteError, Tape
from ..checkpoint import save_checkpoint
from ..model.config import ConfigError, ModelConfig
from ..model.network import UVMamba
from ..ssm import StepSizeError
from .data import SegSample, augment, stack_batch
from .losses import segmentation_loss
from .metrics import Confusion, confusion, metrics_from_confusion
from .optim import AdamState, adamw_step, lr_schedule

LOSSES = ("cross_entropy", "dice")
HISTORY_FIELDS = ("epoch", "loss", "iou", "acc", "oa", "lr")


@dataclass(frozen=True)
class TrainConfig:
    base_lr: float = 1e-3
    min_lr: float = 1e-6
    warmup_epochs: int = 2
    total_epochs: int = 40
    loss: str = "dice"
    seed: int = 0
    batch_size: int = 8
    weight_decay: float = 0.01
    hflip: bool = True
    vflip: bool = True
    rotate: bool = True
    val_fraction: float = 0.0  # 0 evaluates on the training split
    eval_every: int = 1

    def __post_init__(self):
        if not 0 < self.min_lr <= self.base_lr:
            raise ConfigError(f"need 0 < min_lr <= base_lr, got {self.min_lr}, {self.base_lr}")
        if not 0 <= self.warmup_epochs < self.total_epochs:
            raise ConfigError(f"need 0 <= warmup_epochs < total_epochs, got {self.warmup_epochs}, {self.total_epochs}")
        if self.loss not in LOSSES:
            raise ConfigError(f"loss must be one of {LOSSES}, got {self.loss!r}")
        if self.batch_size < 1 or self.eval_every < 1:
            raise ConfigError("batch_size and eval_every must be >= 1")
        if not 0 <= self.val_fraction < 1:
            raise ConfigError(f"val_fraction must lie in [0, 1), got {self.val_fraction}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class TrainResult:
    model: UVMamba
    history: list[dict]
    best_iou: float
    checkpoint: Path | None
    step_lrs: list[float]


def split_dataset(data: Sequence[SegSample], val_fraction: float, seed: int):
    if val_fraction == 0:
        return list(data), list(data)
    n_val = max(1, int(round(len(data) * val_fraction)))
    if n_val >= len(data):
        raise ConfigError(f"validation split of {n_val} leaves no training samples")
    order = np.random.default_rng([seed, 1]).permutation(len(data))
    return [data[i] for i in order[n_val:]], [data[i] for i in order[:n_val]]


def evaluate(model: UVMamba, samples: Sequence[SegSample], batch_size: int = 8) -> dict[str, float]:
    """Micro-averaged foreground IoU / ACC / OA over ``samples``."""
    total = Confusion(0, 0, 0, 0)
    for i in range(0, len(samples), batch_size):
        images, masks = stack_batch(samples[i:i + batch_size])
        total = total + confusion(model.predict(images) == 1, masks == 1)
    return metrics_from_confusion(total)


def write_history(path, history: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=HISTORY_FIELDS)
        writer.writeheader()
        for row in history:
            writer.writerow({k: repr(row[k]) if isinstance(row[k], float) else row[k] for k in HISTORY_FIELDS})


@contextmanager
def _divergence_guard(epoch: int, step: int, lr: float):
    try:
        yield
    except StepSizeError as exc:
        # the softplus step size only underflows to zero once the weights have blown up
        raise NonFiniteError(f"diverged at epoch {epoch}, step {step}, lr {lr:.3g}: {exc}") from exc


def train_loop(model_cfg: ModelConfig, train_cfg: TrainConfig, data: Sequence[SegSample],
               out_dir=None, log: Callable[[str], None] | None = None) -> TrainResult:
    """Train from scratch; keep the checkpoint with the best held-out IoU.

    The schedule is evaluated at step index ``s`` of ``S`` optimizer steps
    with ``total_steps = S - 1``, so the first step uses lr 0 and the last
    uses exactly ``min_lr``.
    """
    if not data:
        raise ConfigError("training data is empty")
    train, val = split_dataset(data, train_cfg.val_fraction, train_cfg.seed)
    steps_per_epoch = math.ceil(len(train) / train_cfg.batch_size)
    last_step = train_cfg.total_epochs * steps_per_epoch - 1
    warmup = train_cfg.warmup_epochs * steps_per_epoch
    if warmup >= last_step:
        raise ConfigError(f"warmup of {warmup} steps leaves no decay phase in {last_step + 1} steps")

    model = UVMamba(model_cfg, seed=train_cfg.seed)
    params = model.parameters()
    state = AdamState.zeros_like(params)
    rng = np.random.default_rng([train_cfg.seed, 0])
    out_dir = Path(out_dir) if out_dir is not None else None
    ckpt_path = out_dir / "best.json" if out_dir is not None else None
    history: list[dict] = []
    best_iou, step, lr = -1.0, 0, 0.0
    step_lrs: list[float] = []

    for epoch in range(train_cfg.total_epochs):
        order = rng.permutation(len(train))
        losses = []
        for b in range(steps_per_epoch):
            batch = [augment(train[i], rng, train_cfg.hflip, train_cfg.vflip, train_cfg.rotate)
                     for i in order[b * train_cfg.batch_size:(b + 1) * train_cfg.batch_size]]
            images, masks = stack_batch(batch)
            lr = lr_schedule(step, last_step, warmup, train_cfg.base_lr, train_cfg.min_lr)
            step_lrs.append(lr)
            with _divergence_guard(epoch, step, lr), Tape() as tape:
                loss = segmentation_loss(model(images), masks, train_cfg.loss)
            value = float(loss.data)
            if not math.isfinite(value):
                raise NonFiniteError(f"non-finite loss {value} at epoch {epoch}, step {step}, lr {lr:.3g}")
            tape.backward(loss, wrt=params)
            adamw_step(params, [p.grad for p in params], state, lr, wd=train_cfg.weight_decay)
            model.zero_grad()
            losses.append(value)
            step += 1

        row = {"epoch": epoch, "loss": float(np.mean(losses)), "iou": math.nan, "acc": math.nan,
               "oa": math.nan, "lr": lr}
        final = epoch == train_cfg.total_epochs - 1
        if (epoch + 1) % train_cfg.eval_every == 0 or final:
            with _divergence_guard(epoch, step, lr):
                row.update(evaluate(model, val, train_cfg.batch_size))
            if row["iou"] > best_iou:
                best_iou = row["iou"]
                if ckpt_path is not None:
                    save_checkpoint(ckpt_path, model, {"epoch": epoch, "iou": best_iou,
                                                       "train_config": train_cfg.to_dict()})
        history.append(row)
        if out_dir is not None:
            write_history(out_dir / "history.csv", history)
        if log is not None:
            log(f"epoch {epoch:3d}  loss {row['loss']:.4f}  iou {row['iou']:.4f}  lr {lr:.3g}")
    return TrainResult(model, history, best_iou, ckpt_path, step_lrs)
