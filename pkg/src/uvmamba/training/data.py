"""Samples, augmentation, the synthetic settlement generator and PNG dataset IO."""

from __future__ import annotations

from pathlib import Path
from typing import NamedTuple

import numpy as np
from PIL import Image

FG_FRACTION = (0.05, 0.40)


class SegSample(NamedTuple):
    image: np.ndarray  # (3, H, W) float32 in [0, 1]
    mask: np.ndarray   # (H, W) uint8 in {0, 1}
    name: str = ""


def validate_sample(sample: SegSample) -> None:
    img, mask = sample.image, sample.mask
    if img.ndim != 3 or img.shape[0] != 3:
        raise ValueError(f"image must be (3, H, W), got {img.shape}")
    if mask.shape != img.shape[1:]:
        raise ValueError(f"mask {mask.shape} does not match image {img.shape[1:]}")
    if not np.isin(mask, (0, 1)).all():
        raise ValueError("mask must be binary")


def augment(sample: SegSample, rng: np.random.Generator, hflip=True, vflip=True, rotate=True) -> SegSample:
    """Random horizontal flip, vertical flip (each p=0.5) and right-angle rotation.

    The three draws are always consumed, so the random stream does not depend
    on which transforms are enabled.
    """
    do_h, do_v = rng.random(2) < 0.5
    k = int(rng.integers(4))
    img, mask = sample.image, sample.mask
    if hflip and do_h:
        img, mask = img[:, :, ::-1], mask[:, ::-1]
    if vflip and do_v:
        img, mask = img[:, ::-1, :], mask[::-1, :]
    if rotate and k:
        img, mask = np.rot90(img, k, axes=(1, 2)), np.rot90(mask, k)
    return SegSample(np.ascontiguousarray(img), np.ascontiguousarray(mask), sample.name)


def _smooth_noise(rng, H, W, cell):
    coarse = rng.random((H // cell + 2, W // cell + 2))
    rows = np.arange(H) / cell
    cols = np.arange(W) / cell
    r0, c0 = rows.astype(int), cols.astype(int)
    fr, fc = (rows - r0)[:, None], (cols - c0)[None, :]
    top = coarse[r0][:, c0] * (1 - fc) + coarse[r0][:, c0 + 1] * fc
    bot = coarse[r0 + 1][:, c0] * (1 - fc) + coarse[r0 + 1][:, c0 + 1] * fc
    return top * (1 - fr) + bot * fr


def _background(rng, H, W):
    base = np.array([0.35, 0.45, 0.30]) + rng.uniform(-0.05, 0.05, 3)
    field = _smooth_noise(rng, H, W, cell=max(H // 8, 2))
    img = base[:, None, None] + 0.25 * (field[None] - 0.5)
    return img + rng.normal(0, 0.03, (3, H, W))


def _blob_rects(rng, H, W):
    lo, hi = FG_FRACTION
    while True:
        mask = np.zeros((H, W), dtype=bool)
        rects = []
        for _ in range(int(rng.integers(1, 4))):
            h = int(rng.integers(H // 6, H // 2 + 1))
            w = int(rng.integers(W // 6, W // 2 + 1))
            r = int(rng.integers(0, H - h + 1))
            c = int(rng.integers(0, W - w + 1))
            rects.append((r, c, h, w))
            mask[r:r + h, c:c + w] = True
        if lo <= mask.mean() <= hi:
            return mask, rects


def _paint_cells(rng, img, rect):
    """Fill a rectangle with a dense grid of small jittered roofs over dark alleys."""
    r, c, h, w = rect
    img[:, r:r + h, c:c + w] = np.array([0.22, 0.20, 0.20])[:, None, None]
    y = r
    while y < r + h:
        ch = int(rng.integers(2, 5))
        x = c + int(rng.integers(0, 2))
        while x < c + w:
            cw = int(rng.integers(2, 5))
            roof = np.array([0.75, 0.45, 0.35]) + rng.uniform(-0.15, 0.15, 3)
            img[:, y:min(y + ch, r + h), x:min(x + cw, c + w)] = roof[:, None, None]
            x += cw + 1
        y += ch + 1


def synth_sample(rng: np.random.Generator, H: int, W: int, name: str = "") -> SegSample:
    img = _background(rng, H, W)
    mask, rects = _blob_rects(rng, H, W)
    for rect in rects:
        _paint_cells(rng, img, rect)
    img += rng.normal(0, 0.02, img.shape)
    return SegSample(np.clip(img, 0, 1).astype(np.float32), mask.astype(np.uint8), name)


def synth_dataset(n: int, H: int, W: int, seed: int) -> list[SegSample]:
    """``n`` synthetic aerial tiles; sample ``i`` depends only on ``(seed, i, H, W)``."""
    if H % 32 or W % 32:
        raise ValueError(f"synthetic tiles must be divisible by 32, got {H}x{W}")
    children = np.random.SeedSequence(seed).spawn(n)
    return [synth_sample(np.random.default_rng(s), H, W, f"{i:04d}") for i, s in enumerate(children)]


def read_image(path) -> np.ndarray:
    """RGB PNG (or any Pillow-readable file) as float32 (3, H, W) in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def write_image(path, image: np.ndarray) -> None:
    arr = np.clip(np.round(np.asarray(image).transpose(1, 2, 0) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path)


def read_mask(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"))
    return (arr >= 128).astype(np.uint8)


def write_mask(path, mask: np.ndarray) -> None:
    Image.fromarray((np.asarray(mask) > 0).astype(np.uint8) * 255, mode="L").save(path)


def save_dataset(samples, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, s in enumerate(samples):
        stem = s.name or f"{i:04d}"
        write_image(directory / f"{stem}.png", s.image)
        write_mask(directory / f"{stem}_mask.png", s.mask)


def load_dataset(directory) -> list[SegSample]:
    """Read ``<id>.png`` / ``<id>_mask.png`` pairs sorted by id."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {directory}")
    samples = []
    for mask_path in sorted(directory.glob("*_mask.png")):
        stem = mask_path.name[: -len("_mask.png")]
        image_path = directory / f"{stem}.png"
        if not image_path.exists():
            raise FileNotFoundError(f"mask {mask_path.name} has no matching image {image_path.name}")
        sample = SegSample(read_image(image_path), read_mask(mask_path), stem)
        validate_sample(sample)
        samples.append(sample)
    return samples


def stack_batch(samples) -> tuple[np.ndarray, np.ndarray]:
    return np.stack([s.image for s in samples]), np.stack([s.mask for s in samples])
