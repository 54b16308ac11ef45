"""Central finite-difference checks against analytic gradients."""
from __future__ import annotations

import numpy as np


def relative_error(analytic: float, numeric: float, floor: float = 1e-8) -> float:
    """|a - n| / max(|a|, |n|, floor); the floor keeps exactly-zero gradients from dividing by 0."""
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def sample_coordinates(params: dict, count: int, rng: np.random.Generator):
    """``count`` distinct (name, index) pairs drawn uniformly over all scalar parameters."""
    names = list(params)
    sizes = np.array([params[n].size for n in names])
    total = int(sizes.sum())
    flat = rng.choice(total, size=min(count, total), replace=False)
    bounds = np.cumsum(sizes)
    out = []
    for f in np.sort(flat):
        k = int(np.searchsorted(bounds, f, side="right"))
        offset = int(f - (bounds[k - 1] if k else 0))
        out.append((names[k], np.unravel_index(offset, params[names[k]].shape)))
    return out


def check_gradients(loss_fn, params: dict, grads: dict, count: int = 200, step: float = 1e-4, rng=None):
    """Max relative error and per-coordinate rows ``(name, index, analytic, numeric, rel)``.

    ``loss_fn(params) -> float`` is re-evaluated with one coordinate nudged by
    ``±step``; ``params`` is restored afterwards.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    rows = []
    for name, idx in sample_coordinates(params, count, rng):
        arr = params[name]
        old = arr[idx]
        arr[idx] = old + step
        up = loss_fn(params)
        arr[idx] = old - step
        down = loss_fn(params)
        arr[idx] = old
        numeric = (up - down) / (2 * step)
        analytic = float(grads[name][idx])
        rows.append((name, tuple(int(i) for i in idx), analytic, numeric, relative_error(analytic, numeric)))
    return max(r[4] for r in rows), rows
