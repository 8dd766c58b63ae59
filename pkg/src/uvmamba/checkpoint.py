"""Model checkpoints: a JSON manifest next to a raw little-endian float32 blob.

The blob starts with the 5-byte magic ``UVMB1``; each manifest entry gives a
tensor's name, shape, dtype and byte offset into the blob (offsets count from
the start of the file, so the first tensor sits at offset 5).
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .model.config import ConfigError, ModelConfig
from .model.network import UVMamba

MAGIC = b"UVMB1"
FORMAT_VERSION = 1
_DTYPE = np.dtype("<f4")


class CheckpointError(Exception):
    """Unreadable, corrupt or incompatible checkpoint."""


def save_checkpoint(path, model: UVMamba, extra: dict | None = None) -> Path:
    """Write ``<path>`` (manifest) and ``<path stem>.bin`` (blob). Returns the manifest path."""
    path = Path(path)
    blob_path = path.with_suffix(".bin")
    entries, chunks, offset = [], [MAGIC], len(MAGIC)
    for name, p in model.named_parameters():
        arr = np.ascontiguousarray(p.data, dtype=_DTYPE)
        entries.append({"name": name, "shape": list(arr.shape), "dtype": "float32", "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    manifest = {
        "format": MAGIC.decode(),
        "version": FORMAT_VERSION,
        "blob": blob_path.name,
        "model_config": model.cfg.to_dict(),
        "tensors": entries,
        "extra": extra or {},
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    blob_path.write_bytes(b"".join(chunks))
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    try:
        manifest = json.loads(path.read_text())
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"cannot read manifest {path}: {exc}") from exc
    if manifest.get("format") != MAGIC.decode() or manifest.get("version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format {manifest.get('format')!r} "
                              f"version {manifest.get('version')!r}")
    blob_path = path.parent / manifest.get("blob", "")
    try:
        blob = blob_path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read blob {blob_path}: {exc}") from exc
    if blob[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{blob_path}: bad magic {blob[:len(MAGIC)]!r}")
    tensors = {}
    for e in manifest["tensors"]:
        if e.get("dtype") != "float32":
            raise CheckpointError(f"{e['name']}: unsupported dtype {e.get('dtype')!r}")
        count = int(np.prod(e["shape"], dtype=np.int64))
        end = e["offset"] + count * _DTYPE.itemsize
        if e["offset"] < len(MAGIC) or end > len(blob):
            raise CheckpointError(f"{e['name']}: byte range [{e['offset']}, {end}) outside blob")
        arr = np.frombuffer(blob, dtype=_DTYPE, count=count, offset=e["offset"])
        tensors[e["name"]] = arr.reshape(e["shape"]).astype(np.float32)
    return manifest, tensors


def load_checkpoint(path) -> tuple[UVMamba, dict]:
    """Rebuild the model described by the manifest and fill in its weights."""
    manifest, tensors = read_checkpoint(path)
    try:
        cfg = ModelConfig.from_dict({**manifest["model_config"],
                                     "stage_channels": tuple(manifest["model_config"]["stage_channels"])})
    except (KeyError, TypeError, ConfigError) as exc:
        raise CheckpointError(f"{path}: invalid model config: {exc}") from exc
    model = UVMamba(cfg, seed=0)
    try:
        model.load_state_dict(tensors)
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: {exc}") from exc
    return model, manifest
