"""Adam training of the coarse and fine stages, and hierarchical prediction."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..blockgrid import DEFAULT_GRID, coarse_origin, extract_coarse_block, mask_indices, one_hot
from .autodiff import NumericError
from .model import ModelConfig, forward_stage, init_params, loss_and_grads, stage_logits, volume_patches

log = logging.getLogger(__name__)

_INIT_TAG = 0x696E6974
_SHUFFLE_TAG = 0x73687566
_TEACHER_TAG = 0x74656368


class TrainingError(RuntimeError):
    """Training cannot start (bad or empty data)."""


class DivergenceError(TrainingError):
    """Loss or gradients went non-finite."""


class Adam:
    def __init__(self, params: dict, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        # a blown-up step shows as non-finite parameters; the trainer reports it
        with np.errstate(invalid="ignore", over="ignore"):
            self._update(params, grads)

    def _update(self, params: dict, grads: dict) -> None:
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for k in params:
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            params[k] = params[k] - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


class PatchCache:
    """Coarse-stage patches per volume and fine-stage patches per (volume, coarse block)."""

    def __init__(self, volumes: dict, cfg: ModelConfig):
        self.volumes = volumes
        self.cfg = cfg
        self._coarse = {}
        self._fine = {}

    def coarse(self, vid: int) -> np.ndarray:
        if vid not in self._coarse:
            self._coarse[vid] = volume_patches(self.volumes[vid].data, self.cfg.coarse)
        return self._coarse[vid]

    def fine(self, vid: int, block: int) -> np.ndarray:
        key = (vid, block)
        if key not in self._fine:
            ox, oy, oz = coarse_origin(block, DEFAULT_GRID)
            s = DEFAULT_GRID.coarse_size
            crop = self.volumes[vid].data[ox : ox + s, oy : oy + s, oz : oz + s]
            self._fine[key] = volume_patches(crop, self.cfg.fine)
        return self._fine[key]


@dataclass
class TrainResult:
    coarse: dict
    fine: dict
    config: ModelConfig
    loss_curve: list = field(default_factory=list)


def train(samples, volumes: dict, cfg: ModelConfig = ModelConfig(), seed: int = 0, progress=None) -> TrainResult:
    """Train both stages on ``samples``; the fine stage is teacher-forced.

    Per sample and epoch the fine stage sees the crop of one positive coarse
    block, picked uniformly from the sample's own seeded stream.
    """
    samples = list(samples)
    if not samples:
        raise TrainingError("training split is empty")
    missing = {s.volume_id for s in samples} - set(volumes)
    if missing:
        raise TrainingError(f"no volume data for ids {sorted(missing)}")

    rng_c = np.random.default_rng([seed, _INIT_TAG, 0])
    rng_f = np.random.default_rng([seed, _INIT_TAG, 1])
    coarse = init_params(cfg, cfg.coarse, rng_c)
    fine = init_params(cfg, cfg.fine, rng_f)
    opt_c = Adam(coarse, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
    opt_f = Adam(fine, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
    cache = PatchCache(volumes, cfg)

    pixels = np.stack([s.pixels.astype(np.float64) for s in samples])
    coarse_targets = np.stack([one_hot(s.labels.coarse_mask) for s in samples])
    positives = [mask_indices(s.labels.coarse_mask) for s in samples]

    curve = []
    n = len(samples)
    for epoch in range(cfg.epochs):
        order = np.random.default_rng([seed, _SHUFFLE_TAG, epoch]).permutation(n)
        picks = [
            positives[i][int(np.random.default_rng([seed, _TEACHER_TAG, epoch, i]).integers(len(positives[i])))]
            for i in range(n)
        ]
        sums = np.zeros(2)
        for start in range(0, n, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            try:
                vp = np.stack([cache.coarse(samples[i].volume_id) for i in batch])
                loss_c, g, _ = loss_and_grads(vp, pixels[batch], coarse_targets[batch], coarse, cfg)
                opt_c.step(coarse, g)

                vp = np.stack([cache.fine(samples[i].volume_id, picks[i]) for i in batch])
                tgt = np.stack([one_hot(samples[i].labels.fine_masks[picks[i]]) for i in batch])
                loss_f, g, _ = loss_and_grads(vp, pixels[batch], tgt, fine, cfg)
                opt_f.step(fine, g)
            except NumericError as exc:
                raise DivergenceError(f"divergence in epoch {epoch}: {exc}") from None
            for stage, params in (("coarse", coarse), ("fine", fine)):
                bad = [k for k, v in params.items() if not np.all(np.isfinite(v))]
                if bad:
                    raise DivergenceError(f"divergence in epoch {epoch}: non-finite {stage} parameter {bad[0]}")
            sums += np.array([loss_c, loss_f]) * len(batch)
        row = (epoch, float(sums[0] / n), float(sums[1] / n))
        if not all(np.isfinite(row[1:])):
            raise DivergenceError(f"divergence in epoch {epoch}: non-finite loss")
        curve.append(row)
        log.debug("epoch %d coarse %.6f fine %.6f", *row)
        if progress is not None:
            progress(*row)
    return TrainResult(coarse, fine, cfg, curve)


def rank_desc(scores) -> np.ndarray:
    """Indices by descending score, ties broken by ascending index."""
    return np.argsort(-np.asarray(scores, dtype=np.float64), axis=-1, kind="stable")


def predict_batch(samples, volumes: dict, coarse: dict, fine: dict, cfg: ModelConfig, k: int = 5, batch_size: int = 64):
    """Coarse rankings (n, 27) and fine rankings (n, k, 27) for each top-k coarse block."""
    samples = list(samples)
    n = len(samples)
    nc = DEFAULT_GRID.n_coarse
    if not 1 <= k <= nc:
        raise ValueError(f"k must be in [1, {nc}]")
    cache = PatchCache(volumes, cfg)
    coarse_rank = np.zeros((n, nc), dtype=np.uint8)
    fine_rank = np.zeros((n, k, DEFAULT_GRID.n_fine), dtype=np.uint8)
    for start in range(0, n, batch_size):
        idx = range(start, min(n, start + batch_size))
        px = np.stack([samples[i].pixels.astype(np.float64) for i in idx])
        vp = np.stack([cache.coarse(samples[i].volume_id) for i in idx])
        ranks = rank_desc(stage_logits(vp, px, coarse, cfg))
        coarse_rank[start : start + len(idx)] = ranks
        fine_px = np.repeat(px, k, axis=0)
        fine_vp = np.stack([cache.fine(samples[i].volume_id, int(b)) for j, i in enumerate(idx) for b in ranks[j, :k]])
        fr = rank_desc(stage_logits(fine_vp, fine_px, fine, cfg)).reshape(len(idx), k, -1)
        fine_rank[start : start + len(idx)] = fr
    return coarse_rank, fine_rank


def predict_hierarchical(vol, pixels, coarse: dict, fine: dict, cfg: ModelConfig = ModelConfig(), k: int = 5):
    """Top-k coarse blocks for one slice, each with the fine stage's top-k blocks.

    Returns ``(coarse_ranking, {coarse_index: fine_ranking})`` where
    ``coarse_ranking`` is the full descending order and each fine ranking is
    truncated to ``k``.
    """
    if vol.dims != (DEFAULT_GRID.volume_side,) * 3:
        raise ValueError(f"expected a {DEFAULT_GRID.volume_side}^3 volume, got {vol.dims}")
    order = rank_desc(forward_stage(vol, pixels, coarse, cfg))
    fine_lists = {}
    for c in order[:k]:
        block = extract_coarse_block(vol, int(c))
        fine_lists[int(c)] = [int(i) for i in rank_desc(forward_stage(block, pixels, fine, cfg))[:k]]
    return [int(i) for i in order], fine_lists
