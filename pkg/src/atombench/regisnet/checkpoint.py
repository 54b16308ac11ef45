"""Checkpoint file: one JSON header line, then little-endian float64 tensors.

The header lists every tensor as ``{"stage", "name", "shape"}`` in payload
order: all coarse-stage tensors, then all fine-stage tensors, each in
:func:`param_shapes` order.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .model import ModelConfig, param_shapes

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def _layout(cfg: ModelConfig):
    for stage, geom in (("coarse", cfg.coarse), ("fine", cfg.fine)):
        for name, shape in param_shapes(cfg, geom):
            yield stage, name, tuple(shape)


def save_checkpoint(path, cfg: ModelConfig, coarse: dict, fine: dict, extra: dict | None = None) -> None:
    stages = {"coarse": coarse, "fine": fine}
    tensors, chunks = [], []
    for stage, name, shape in _layout(cfg):
        arr = np.asarray(stages[stage][name], dtype="<f8")
        if arr.shape != shape:
            raise CheckpointError(f"{stage}.{name} has shape {arr.shape}, expected {shape}")
        tensors.append({"stage": stage, "name": name, "shape": list(shape)})
        chunks.append(arr.tobytes(order="C"))
    header = {"version": FORMAT_VERSION, "config": cfg.to_dict(), "tensors": tensors}
    if extra:
        header["extra"] = extra
    blob = json.dumps(header, sort_keys=True).encode("utf-8") + b"\n" + b"".join(chunks)
    Path(path).write_bytes(blob)


def load_checkpoint(path):
    """Returns ``(config, coarse_params, fine_params, header)``."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"missing checkpoint: {path}")
    raw = path.read_bytes()
    cut = raw.find(b"\n")
    if cut < 0:
        raise CheckpointError(f"{path}: no header line")
    try:
        header = json.loads(raw[:cut].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: bad header ({exc})") from None
    if header.get("version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {header.get('version')!r}")
    cfg = ModelConfig.from_dict(header["config"])
    expected = [(s, n, tuple(sh)) for s, n, sh in _layout(cfg)]
    listed = [(t["stage"], t["name"], tuple(t["shape"])) for t in header["tensors"]]
    if listed != expected:
        raise CheckpointError(f"{path}: tensor table does not match the config")
    payload = memoryview(raw)[cut + 1 :]
    stages = {"coarse": {}, "fine": {}}
    pos = 0
    for stage, name, shape in expected:
        count = int(np.prod(shape, dtype=np.int64))
        end = pos + 8 * count
        if end > len(payload):
            raise CheckpointError(f"{path}: payload truncated at {stage}.{name}")
        stages[stage][name] = np.frombuffer(payload[pos:end], dtype="<f8").reshape(shape).astype(np.float64)
        pos = end
    if pos != len(payload):
        raise CheckpointError(f"{path}: {len(payload) - pos} trailing payload bytes")
    return cfg, stages["coarse"], stages["fine"], header
