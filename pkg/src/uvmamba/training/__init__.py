"""Losses, metrics, optimizer, schedule, data and the training loop."""

from .data import (
    SegSample,
    augment,
    load_dataset,
    read_image,
    read_mask,
    save_dataset,
    stack_batch,
    synth_dataset,
    write_image,
    write_mask,
)
from .loop import HISTORY_FIELDS, TrainConfig, TrainResult, evaluate, split_dataset, train_loop, write_history
from .losses import cross_entropy_loss, dice_loss, foreground_probs, segmentation_loss
from .metrics import Confusion, confusion, metrics_from_confusion, seg_metrics
from .optim import AdamState, adamw_step, lr_schedule

__all__ = [
    "SegSample", "augment", "synth_dataset", "load_dataset", "save_dataset", "read_image", "read_mask",
    "write_image", "write_mask", "stack_batch",
    "TrainConfig", "TrainResult", "train_loop", "evaluate", "split_dataset", "write_history", "HISTORY_FIELDS",
    "cross_entropy_loss", "dice_loss", "foreground_probs", "segmentation_loss",
    "Confusion", "confusion", "metrics_from_confusion", "seg_metrics",
    "AdamState", "adamw_step", "lr_schedule",
]
