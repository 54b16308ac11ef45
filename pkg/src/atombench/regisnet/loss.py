"""Asymmetric multi-label loss with a closed-form per-logit gradient."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ASLConfig:
    gamma_pos: float = 0.0
    gamma_neg: float = 4.0
    margin: float = 0.05
    eps: float = 1e-8


def logistic(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _pow(x, gamma):
    # x**0 == 1 even at x == 0
    return np.ones_like(x) if gamma == 0 else x**gamma


def _dpow(x, gamma):
    if gamma == 0:
        return np.zeros_like(x)
    if gamma == 1:
        return np.ones_like(x)
    return gamma * x ** (gamma - 1)


def asl_terms_from_prob(p, targets, cfg: ASLConfig = ASLConfig()):
    """Per-class loss contributions and d(contribution)/dp for probabilities ``p``.

    ``p`` is clamped to ``[eps, 1 - eps]``; a positive at the upper clamp is a
    fully confident prediction and contributes exactly zero.
    """
    p = np.asarray(p, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("ASL targets must be binary")
    lo, hi = cfg.eps, 1.0 - cfg.eps
    pc = np.clip(p, lo, hi)
    live = (p > lo) & (p < hi)

    q = 1.0 - pc
    log_p = np.log(pc)
    pos = -_pow(q, cfg.gamma_pos) * log_p
    dpos = _dpow(q, cfg.gamma_pos) * log_p - _pow(q, cfg.gamma_pos) / pc
    saturated = pc >= hi
    pos = np.where(saturated, 0.0, pos)

    pm = np.maximum(pc - cfg.margin, 0.0)
    log_q = np.log1p(-pm)
    neg = -_pow(pm, cfg.gamma_neg) * log_q
    dneg = -(_dpow(pm, cfg.gamma_neg) * log_q - _pow(pm, cfg.gamma_neg) / (1.0 - pm))
    dneg = np.where(pc > cfg.margin, dneg, 0.0)
    neg = np.where(pm > 0.0, neg, 0.0)

    contrib = y * pos + (1.0 - y) * neg
    dcontrib = np.where(live, y * dpos + (1.0 - y) * dneg, 0.0)
    return contrib, dcontrib


def asl_contributions(logits, targets, cfg: ASLConfig = ASLConfig()):
    """Per-class contributions and their gradients with respect to the logits."""
    z = np.asarray(logits, dtype=np.float64)
    p = logistic(z)
    contrib, dp = asl_terms_from_prob(p, targets, cfg)
    return contrib, dp * p * (1.0 - p)


def asl_loss(logits, targets, cfg: ASLConfig = ASLConfig()):
    """Mean-over-classes (and over leading batch axes) ASL and its gradient w.r.t. ``logits``."""
    contrib, grad = asl_contributions(logits, targets, cfg)
    n = contrib.size
    return float(contrib.sum() / n), grad / n
