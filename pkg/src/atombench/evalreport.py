"""k-5 hierarchical accuracy, random-guess baselines and multi-run reports."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .predictions import N_CLASSES, Predictions


class EvalError(ValueError):
    pass


def topk_hit(ranking, positives: int, k: int) -> bool:
    if k < 1:
        raise EvalError("k must be >= 1")
    return any((positives >> int(i)) & 1 for i in list(ranking)[:k])


def _masks(samples):
    """(n,) coarse masks and (n, 27) fine masks (zero where the coarse bit is unset)."""
    coarse = np.array([s.labels.coarse_mask for s in samples], dtype=np.int64)
    fine = np.zeros((len(samples), N_CLASSES), dtype=np.int64)
    for i, s in enumerate(samples):
        for c, m in s.labels.fine_masks.items():
            fine[i, c] = m
    return coarse, fine


def _member(rankings: np.ndarray, masks: np.ndarray) -> np.ndarray:
    """Boolean ``rankings`` membership: bit ``rankings[..., j]`` of the broadcast mask."""
    return ((masks[..., None] >> rankings.astype(np.int64)) & 1).astype(bool)


def _check(preds: Predictions, samples, k: int):
    if k < 1:
        raise EvalError("k must be >= 1")
    if len(preds) != len(samples):
        raise EvalError(f"{len(preds)} predictions for {len(samples)} samples")
    if not len(samples):
        raise EvalError("no samples to score")


def high_error_hits(preds: Predictions, samples, k: int = 5, match: str = "any") -> np.ndarray:
    _check(preds, samples, k)
    coarse, _ = _masks(samples)
    inside = _member(preds.coarse[:, :k], coarse)
    if match == "any":
        return inside.any(axis=1)
    if match == "all":
        return inside.sum(axis=1) == np.array([bin(int(m)).count("1") for m in coarse])
    raise EvalError(f"unknown match rule {match!r}")


def low_error_hits(preds: Predictions, samples, k: int = 5) -> np.ndarray:
    """Gate on coarse success; score the fine top-k of the best-ranked correct coarse block."""
    _check(preds, samples, k)
    if preds.fine.shape[1] < k:
        raise EvalError(f"predictions carry fine rankings for {preds.fine.shape[1]} coarse blocks, need {k}")
    coarse, fine = _masks(samples)
    inside = _member(preds.coarse[:, :k], coarse)
    gated = inside.any(axis=1)
    first = inside.argmax(axis=1)
    rows = np.arange(len(samples))
    chosen = preds.coarse[rows, first].astype(np.int64)
    fine_mask = fine[rows, chosen]
    fine_hit = _member(preds.fine[rows, first, :k], fine_mask).any(axis=1)
    return gated & fine_hit


def high_error_accuracy(preds: Predictions, samples, k: int = 5, match: str = "any") -> float:
    return 100.0 * float(high_error_hits(preds, samples, k, match).mean())


def low_error_accuracy(preds: Predictions, samples, k: int = 5) -> float:
    return 100.0 * float(low_error_hits(preds, samples, k).mean())


def analytic_random_baseline(k: int, n_classes: int = N_CLASSES, levels: int = 1) -> float:
    """Top-k hit rate of a uniform ranking for one positive label per level."""
    if not 1 <= k <= n_classes:
        raise EvalError(f"k={k} must be in [1, {n_classes}]")
    if levels not in (1, 2):
        raise EvalError("levels must be 1 or 2")
    return 100.0 * (k / n_classes) ** levels


def random_predictions(n: int, k: int, rng: np.random.Generator) -> Predictions:
    """Independent uniform coarse and fine rankings."""
    coarse = rng.permuted(np.tile(np.arange(N_CLASSES, dtype=np.uint8), (n, 1)), axis=1)
    fine = rng.permuted(np.tile(np.arange(N_CLASSES, dtype=np.uint8), (n, k, 1)), axis=2)
    return Predictions(coarse, fine, k, {"source": "uniform-random"})


def monte_carlo_random_baseline(samples, trials: int = 100_000, k: int = 5, seed: int = 0):
    """Score uniform-random rankings on ``trials`` draws (with replacement) from ``samples``.

    Returns ``(high, low, high_se, low_se)`` in percent.
    """
    rng = np.random.default_rng(seed)
    picks = rng.integers(len(samples), size=trials)
    drawn = [samples[i] for i in picks]
    preds = random_predictions(trials, k, rng)
    hi = high_error_hits(preds, drawn, k)
    lo = low_error_hits(preds, drawn, k)
    se = lambda h: 100.0 * float(np.sqrt(h.mean() * (1 - h.mean()) / trials))  # noqa: E731
    return 100.0 * float(hi.mean()), 100.0 * float(lo.mean()), se(hi), se(lo)


@dataclass
class EvalReport:
    high_error_mean: float
    high_error_std: float
    low_error_mean: float
    low_error_std: float
    k: int
    runs: int
    counts: dict = field(default_factory=dict)
    mode: str | None = None
    split: str | None = None
    std_kind: str = "population"
    per_run: list = field(default_factory=list)

    def __post_init__(self):
        for v in (self.high_error_mean, self.low_error_mean):
            if not 0.0 <= v <= 100.0:
                raise EvalError(f"accuracy {v} outside [0, 100]")
        if self.runs < 1 or self.high_error_std < 0 or self.low_error_std < 0:
            raise EvalError("invalid report statistics")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def to_table(self) -> str:
        rows = [
            ("metric", f"k-{self.k} acc (%)", "std", "runs"),
            ("high error", f"{self.high_error_mean:.2f}", f"{self.high_error_std:.2f}", str(self.runs)),
            ("low error", f"{self.low_error_mean:.2f}", f"{self.low_error_std:.2f}", str(self.runs)),
        ]
        widths = [max(len(r[i]) for r in rows) for i in range(4)]
        return "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows)


def multi_seed_report(results, k: int = 5, **tags) -> EvalReport:
    """``results``: sequence of (high_error_pct, low_error_pct) per run; population std."""
    arr = np.asarray(list(results), dtype=np.float64).reshape(-1, 2)
    if not len(arr):
        raise EvalError("no runs to report")
    return EvalReport(
        high_error_mean=float(arr[:, 0].mean()),
        high_error_std=float(arr[:, 0].std()),
        low_error_mean=float(arr[:, 1].mean()),
        low_error_std=float(arr[:, 1].std()),
        k=k,
        runs=len(arr),
        per_run=[list(map(float, r)) for r in arr],
        **tags,
    )


def write_hits_csv(path, runs_hits) -> None:
    """One row per (run, sample): run, sample, high_hit, low_hit."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run", "sample", "high_hit", "low_hit"])
        for r, (hi, lo) in enumerate(runs_hits):
            for i, (a, b) in enumerate(zip(hi, lo)):
                w.writerow([r, i, int(a), int(b)])
