"""Ranking predictions and the ``preds.bin`` interchange file.

File layout: one UTF-8 JSON header line
``{"version": 1, "k": k, "count": n, "n_classes": 27, "split": ..., "source": ...}``
followed by ``n`` records of ``27`` u8 coarse indices (full ranking) and
``k * 27`` u8 fine indices (the fine ranking for each of the top-k coarse
blocks, in coarse rank order).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1
N_CLASSES = 27


class PredictionsError(ValueError):
    pass


@dataclass
class Predictions:
    coarse: np.ndarray
    fine: np.ndarray
    k: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.coarse = np.asarray(self.coarse, dtype=np.uint8)
        self.fine = np.asarray(self.fine, dtype=np.uint8)
        n = self.coarse.shape[0]
        if self.coarse.shape != (n, N_CLASSES):
            raise PredictionsError(f"coarse rankings must be (n, {N_CLASSES}), got {self.coarse.shape}")
        if self.fine.shape != (n, self.k, N_CLASSES):
            raise PredictionsError(f"fine rankings must be (n, k, {N_CLASSES}), got {self.fine.shape}")

    def __len__(self):
        return self.coarse.shape[0]

    def __eq__(self, other):
        if not isinstance(other, Predictions):
            return NotImplemented
        return self.k == other.k and np.array_equal(self.coarse, other.coarse) and np.array_equal(self.fine, other.fine)

    @classmethod
    def from_lists(cls, items, k: int, meta=None) -> "Predictions":
        """``items``: iterable of (coarse_ranking, fine_rankings_for_top_k)."""
        items = list(items)
        coarse = np.array([c for c, _ in items], dtype=np.uint8).reshape(len(items), N_CLASSES)
        fine = np.array([f for _, f in items], dtype=np.uint8).reshape(len(items), k, N_CLASSES)
        return cls(coarse, fine, k, dict(meta or {}))


def write_predictions(preds: Predictions, path) -> None:
    header = {"version": FORMAT_VERSION, "k": preds.k, "count": len(preds), "n_classes": N_CLASSES}
    header.update({k: v for k, v in preds.meta.items() if k not in header})
    body = np.concatenate(
        [preds.coarse.reshape(len(preds), -1), preds.fine.reshape(len(preds), -1)], axis=1
    ).astype("u1")
    Path(path).write_bytes(json.dumps(header, sort_keys=True).encode() + b"\n" + body.tobytes())


def read_predictions(path) -> Predictions:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"missing predictions file: {path}")
    raw = path.read_bytes()
    cut = raw.find(b"\n")
    if cut < 0:
        raise PredictionsError(f"{path}: no header line")
    try:
        header = json.loads(raw[:cut].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise PredictionsError(f"{path}: bad header ({exc})") from None
    if header.get("version") != FORMAT_VERSION:
        raise PredictionsError(f"{path}: unsupported predictions header")
    k, n = int(header["k"]), int(header["count"])
    width = N_CLASSES * (1 + k)
    body = np.frombuffer(raw[cut + 1 :], dtype=np.uint8)
    if body.size != n * width:
        raise PredictionsError(f"{path}: expected {n * width} payload bytes, found {body.size}")
    body = body.reshape(n, width)
    meta = {key: v for key, v in header.items() if key not in ("version", "k", "count", "n_classes")}
    return Predictions(body[:, :N_CLASSES], body[:, N_CLASSES:].reshape(n, k, N_CLASSES), k, meta)
