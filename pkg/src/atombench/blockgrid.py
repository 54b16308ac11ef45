"""Two-level sliding-window block grid and slice-to-block membership labels.

Coarse blocks are cubes of side ``coarse_size`` placed every ``coarse_stride``
voxels over the volume; each coarse block is tiled the same way by fine blocks.
Block indices are x-major: ``idx = ix * n * n + iy * n + iz`` with ``n`` blocks
per axis.  A block with integer origin ``o`` and side ``s`` covers the inclusive
voxel-center extent ``[o, o + s - 1]`` on every axis.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .volume import Volume, VolumeError


class Rule(str, Enum):
    CORNERS = "corners"
    ALL_POINTS = "all_points"


@dataclass(frozen=True)
class BlockGridConfig:
    volume_side: int = 20
    coarse_size: int = 10
    coarse_stride: int = 5
    fine_size: int = 6
    fine_stride: int = 2

    def __post_init__(self):
        for span, size, stride, name in (
            (self.volume_side, self.coarse_size, self.coarse_stride, "coarse"),
            (self.coarse_size, self.fine_size, self.fine_stride, "fine"),
        ):
            if size < 1 or stride < 1 or size > span or (span - size) % stride:
                raise ValueError(
                    f"{name} grid does not tile: span={span}, size={size}, stride={stride}"
                )

    @property
    def coarse_per_axis(self) -> int:
        return (self.volume_side - self.coarse_size) // self.coarse_stride + 1

    @property
    def fine_per_axis(self) -> int:
        return (self.coarse_size - self.fine_size) // self.fine_stride + 1

    @property
    def n_coarse(self) -> int:
        return self.coarse_per_axis**3

    @property
    def n_fine(self) -> int:
        return self.fine_per_axis**3


DEFAULT_GRID = BlockGridConfig()


@dataclass(frozen=True)
class BlockIndex:
    level: str
    idx: int
    parent: int | None = None


@dataclass(frozen=True)
class LabelSet:
    """Coarse membership bits plus one fine mask per set coarse bit."""

    coarse_mask: int
    fine_masks: dict = field(default_factory=dict)

    def __post_init__(self):
        bits = set(mask_indices(self.coarse_mask))
        if bits != set(self.fine_masks):
            raise ValueError(
                f"fine_masks keys {sorted(self.fine_masks)} do not match coarse bits {sorted(bits)}"
            )

    @property
    def coarse(self) -> list[int]:
        return mask_indices(self.coarse_mask)

    def is_usable(self) -> bool:
        """At least one coarse positive carries a nonzero fine mask."""
        return any(self.fine_masks.values())

    def __hash__(self):
        return hash((self.coarse_mask, tuple(sorted(self.fine_masks.items()))))


def mask_indices(mask: int) -> list[int]:
    out, i = [], 0
    while mask:
        if mask & 1:
            out.append(i)
        mask >>= 1
        i += 1
    return out


def indices_to_mask(indices) -> int:
    mask = 0
    for i in indices:
        mask |= 1 << int(i)
    return mask


def _decode(idx: int, n: int) -> tuple[int, int, int]:
    return idx // (n * n), (idx // n) % n, idx % n


def coarse_origin(idx, cfg: BlockGridConfig = DEFAULT_GRID) -> tuple[int, int, int]:
    if isinstance(idx, BlockIndex):
        if idx.level != "coarse":
            raise ValueError("coarse_origin needs a coarse-level index")
        idx = idx.idx
    if not 0 <= idx < cfg.n_coarse:
        raise IndexError(f"coarse index {idx} out of range [0, {cfg.n_coarse})")
    return tuple(s * cfg.coarse_stride for s in _decode(idx, cfg.coarse_per_axis))


def fine_origin(parent: int, idx: int, cfg: BlockGridConfig = DEFAULT_GRID) -> tuple[int, int, int]:
    if not 0 <= idx < cfg.n_fine:
        raise IndexError(f"fine index {idx} out of range [0, {cfg.n_fine})")
    base = coarse_origin(parent, cfg)
    steps = _decode(idx, cfg.fine_per_axis)
    return tuple(b + s * cfg.fine_stride for b, s in zip(base, steps))


def block_contains(origin, size: int, points) -> bool:
    hi = [o + size - 1 for o in origin]
    for p in points:
        for a in range(3):
            if not origin[a] <= p[a] <= hi[a]:
                return False
    return True


def _test_points(pose, rule: Rule) -> np.ndarray:
    from .slicing import pose_corners, sample_points

    rule = Rule(rule)
    return pose_corners(pose) if rule is Rule.CORNERS else sample_points(pose)


def _axis_steps(lo: np.ndarray, hi: np.ndarray, base, size: int, stride: int, n: int):
    """Per-axis step indices ``s`` with ``base + s*stride <= lo`` and ``hi <= base + s*stride + size - 1``."""
    steps = []
    for a in range(3):
        # the division can round; widen by one and settle with exact comparisons
        first = max(0, math.ceil((hi[a] - (size - 1) - base[a]) / stride) - 1)
        last = min(n - 1, math.floor((lo[a] - base[a]) / stride) + 1)
        steps.append(
            [
                s
                for s in range(first, last + 1)
                if base[a] + s * stride <= lo[a] and hi[a] <= base[a] + s * stride + size - 1
            ]
        )
    return steps


def labels_from_points(points, cfg: BlockGridConfig = DEFAULT_GRID) -> LabelSet:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    nc, nf = cfg.coarse_per_axis, cfg.fine_per_axis
    coarse_mask = 0
    fine_masks = {}
    sx, sy, sz = _axis_steps(lo, hi, (0, 0, 0), cfg.coarse_size, cfg.coarse_stride, nc)
    for ix in sx:
        for iy in sy:
            for iz in sz:
                c = (ix * nc + iy) * nc + iz
                coarse_mask |= 1 << c
                base = (ix * cfg.coarse_stride, iy * cfg.coarse_stride, iz * cfg.coarse_stride)
                fx, fy, fz = _axis_steps(lo, hi, base, cfg.fine_size, cfg.fine_stride, nf)
                fine = 0
                for jx in fx:
                    for jy in fy:
                        for jz in fz:
                            fine |= 1 << ((jx * nf + jy) * nf + jz)
                fine_masks[c] = fine
    return LabelSet(coarse_mask, dict(sorted(fine_masks.items())))


def compute_labels(pose, cfg: BlockGridConfig = DEFAULT_GRID, rule: Rule | str = Rule.CORNERS) -> LabelSet:
    """Blocks whose inclusive extent contains every tested point of ``pose``.

    Containment in an axis-aligned box only depends on the per-axis min/max of
    the tested points, so each axis contributes an interval of feasible block
    steps and the label set is their product.
    """
    return labels_from_points(_test_points(pose, rule), cfg)


def oracle_labels(pose, cfg: BlockGridConfig = DEFAULT_GRID, rule: Rule | str = Rule.CORNERS) -> LabelSet:
    pts = [tuple(float(c) for c in p) for p in _test_points(pose, rule)]
    coarse_mask = 0
    fine_masks = {}
    for c in range(cfg.n_coarse):
        if not block_contains(coarse_origin(c, cfg), cfg.coarse_size, pts):
            continue
        coarse_mask |= 1 << c
        fine = 0
        for f in range(cfg.n_fine):
            if block_contains(fine_origin(c, f, cfg), cfg.fine_size, pts):
                fine |= 1 << f
        fine_masks[c] = fine
    return LabelSet(coarse_mask, fine_masks)


def one_hot(mask: int, n: int = 27) -> np.ndarray:
    return np.array([(mask >> i) & 1 for i in range(n)], dtype=np.float64)


def extract_coarse_block(vol: Volume, idx: int, cfg: BlockGridConfig = DEFAULT_GRID) -> Volume:
    side = cfg.volume_side
    if vol.dims != (side, side, side):
        raise VolumeError(f"expected a {side}^3 volume, got dims {vol.dims}")
    ox, oy, oz = coarse_origin(idx, cfg)
    s = cfg.coarse_size
    return Volume(vol.data[ox : ox + s, oy : oy + s, oz : oz + s].copy(), normalized=vol.normalized)
