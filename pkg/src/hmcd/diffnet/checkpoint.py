"""Model checkpoints: one safetensors file, architecture header in its metadata."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from safetensors import safe_open
from safetensors.torch import load_file, save_file

from ..errors import CheckpointMismatchError, SchemaError
from .model import DiffNet, ModelConfig

CHECKPOINT_SCHEMA_VERSION = "1"
_HEADER_KEY = "hmcd"


def save_checkpoint(path: str | Path, model: DiffNet, anchors, extra: dict | None = None) -> None:
    cfg = model.cfg
    header = {
        "schema": CHECKPOINT_SCHEMA_VERSION,
        "preset": cfg.preset,
        "input_size": cfg.input_size,
        "raster_channels": cfg.raster_channels,
        "temporal": cfg.temporal,
        "anchors": np.asarray(anchors, dtype=float).tolist(),
        **(extra or {}),
    }
    tensors = {k: v.detach().contiguous().cpu() for k, v in model.state_dict().items()}
    save_file(tensors, str(path), metadata={_HEADER_KEY: json.dumps(header, sort_keys=True)})


def read_header(path: str | Path) -> dict:
    with safe_open(str(path), framework="pt") as fh:
        meta = fh.metadata() or {}
    if _HEADER_KEY not in meta:
        raise SchemaError(f"{path}: not a change-detection checkpoint (missing header)")
    return json.loads(meta[_HEADER_KEY])


def load_checkpoint(path: str | Path, expect_preset: str | None = None,
                    expect_temporal: bool | None = None) -> tuple[DiffNet, np.ndarray, dict]:
    """Rebuild the model from a checkpoint; returns (model, anchors, header)."""
    header = read_header(path)
    if expect_preset is not None and header["preset"] != expect_preset:
        raise CheckpointMismatchError(
            f"checkpoint was trained with preset {header['preset']!r}, expected {expect_preset!r}")
    if expect_temporal is not None and bool(header["temporal"]) != expect_temporal:
        raise CheckpointMismatchError(
            f"checkpoint temporal={header['temporal']} but temporal={expect_temporal} was requested")
    cfg = ModelConfig(header["preset"], int(header["input_size"]),
                      int(header["raster_channels"]), bool(header["temporal"]))
    model = DiffNet(cfg)
    state = load_file(str(path))
    try:
        model.load_state_dict(state, strict=True)
    except RuntimeError as exc:
        raise CheckpointMismatchError(f"{path}: weights do not fit preset {cfg.preset!r}: {exc}") from exc
    model.eval()
    return model, np.asarray(header["anchors"], dtype=float), header


def init_from_checkpoint(model: DiffNet, path: str | Path) -> np.ndarray:
    """Copy weights of a compatible checkpoint into ``model``; returns its anchors.

    Meant for fine-tuning a recurrent model from a single-frame one: the
    recurrent cell may be absent from the checkpoint and keeps its fresh
    initialization. Every other tensor must be present and fit.
    """
    header = read_header(path)
    cfg = model.cfg
    for key, want in (("preset", cfg.preset), ("input_size", cfg.input_size),
                      ("raster_channels", cfg.raster_channels)):
        if header[key] != want:
            raise CheckpointMismatchError(f"{path}: {key}={header[key]!r} does not match the model ({want!r})")
    state = load_file(str(path))
    try:
        missing, unexpected = model.load_state_dict(state, strict=False)
    except RuntimeError as exc:
        raise CheckpointMismatchError(f"{path}: weights do not fit the model: {exc}") from exc
    missing = [k for k in missing if not k.startswith("lstm.")]
    if missing or unexpected:
        raise CheckpointMismatchError(f"{path}: missing {missing}, unexpected {list(unexpected)}")
    return np.asarray(header["anchors"], dtype=float)
