"""Exhaustive SSD pose search and pose-to-ranking conversion.

A non-learning reference: recover the slice pose by brute force over a
discrete pose set, then rank blocks by the labels of the recovered pose.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .blockgrid import DEFAULT_GRID, BlockGridConfig, LabelSet, compute_labels, mask_indices
from .slicing import SlicePose, _AXIS_FRAMES, easy_pose, sample_points
from .volume import Volume, trilinear_sample_many

GRID = 4


@dataclass(frozen=True)
class PoseCandidate:
    pose: SlicePose
    ssd: float

    def __post_init__(self):
        if not (np.isfinite(self.ssd) and self.ssd >= 0):
            raise ValueError(f"ssd must be finite and non-negative, got {self.ssd}")


class EasyPoseTable:
    """Every axis-aligned 4x4 window of a volume, enumerated axis, depth, origin_a, origin_b."""

    def __init__(self, vol: Volume):
        self.dims = vol.dims
        data = vol.data.astype(np.float64)
        blocks, self.index = [], []
        for axis in range(3):
            plane_axes = [a for a in range(3) if a != axis]
            # move the normal axis first; remaining axes keep (x, y, z) order = (u, v)
            planes = np.moveaxis(data, axis, 0)
            win = sliding_window_view(planes, (GRID, GRID), axis=(1, 2))
            n_a = self.dims[plane_axes[0]] - GRID + 1
            n_b = self.dims[plane_axes[1]] - GRID + 1
            blocks.append(win.reshape(-1, GRID * GRID))
            self.index.append((axis, self.dims[axis], n_a, n_b))
        self.pixels = np.concatenate(blocks)

    def __len__(self):
        return self.pixels.shape[0]

    def pose(self, flat: int) -> SlicePose:
        for axis, depth_n, n_a, n_b in self.index:
            size = depth_n * n_a * n_b
            if flat < size:
                depth, rest = divmod(flat, n_a * n_b)
                oa, ob = divmod(rest, n_b)
                return easy_pose(axis, depth, oa, ob, GRID)
            flat -= size
        raise IndexError("pose index out of range")


def _ssd(table: np.ndarray, pixels) -> np.ndarray:
    q = np.asarray(pixels, dtype=np.float64).reshape(-1)
    diff = table - q
    return np.einsum("ij,ij->i", diff, diff)


def exhaustive_search_easy(vol: Volume, pixels, table: EasyPoseTable | None = None) -> list[PoseCandidate]:
    """All axis-aligned poses that reach the global minimum SSD, in enumeration order."""
    table = table or EasyPoseTable(vol)
    ssd = _ssd(table.pixels, pixels)
    best = ssd.min()
    return [PoseCandidate(table.pose(int(i)), float(best)) for i in np.flatnonzero(ssd == best)]


def cube_rotation_frames() -> list[tuple[tuple, tuple]]:
    """(u, v) for the 24 proper rotations of the cube: signed axis pairs, u perpendicular to v."""
    axes = [tuple(float(s) if i == a else 0.0 for i in range(3)) for a in range(3) for s in (1, -1)]
    return [(u, v) for u, v in itertools.product(axes, axes) if np.dot(u, v) == 0]


def default_frames() -> list[tuple[tuple, tuple]]:
    frames = [_AXIS_FRAMES[a] for a in (2, 1, 0)]
    for f in cube_rotation_frames():
        if f not in frames:
            frames.append(f)
    return frames


@dataclass(frozen=True)
class HardSearchGrid:
    center_step: float = 0.5
    frames: tuple | None = None

    def orientation_frames(self):
        return list(self.frames) if self.frames is not None else default_frames()


def exhaustive_search_hard(vol: Volume, pixels, grid: HardSearchGrid = HardSearchGrid(), chunk: int = 8192) -> PoseCandidate:
    """Lowest-SSD pose over frames x center lattice; ties keep the first in enumeration order."""
    frames = grid.orientation_frames()
    if not frames or not grid.center_step > 0:
        raise ValueError("hard search grid is empty")
    q = np.asarray(pixels, dtype=np.float64).reshape(-1)
    upper = np.asarray(vol.dims, dtype=np.float64) - 1.0
    axes = [np.arange(0.0, u + 1e-9, grid.center_step) for u in upper]
    centers = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    best = None
    for u, v in frames:
        offsets = sample_points(SlicePose((0.0, 0.0, 0.0), u, v, GRID, 1.0))
        lo = -offsets.min(axis=0)
        hi = upper - offsets.max(axis=0)
        ok = np.all((centers >= lo) & (centers <= hi), axis=1)
        cand = centers[ok]
        for start in range(0, len(cand), chunk):
            c = cand[start : start + chunk]
            vals = trilinear_sample_many(vol, c[:, None, :] + offsets[None, :, :])
            ssd = ((vals - q) ** 2).sum(axis=1)
            i = int(np.argmin(ssd))
            if best is None or ssd[i] < best[0]:
                best = (float(ssd[i]), tuple(c[i]), u, v)
    if best is None:
        raise ValueError("no in-bounds pose in the search grid")
    ssd, center, u, v = best
    return PoseCandidate(SlicePose(center, u, v, GRID, 1.0), ssd)


def labels_to_ranking(labels: LabelSet, k: int = 5, cfg: BlockGridConfig = DEFAULT_GRID):
    """Positives first (ascending), then the rest ascending; fine rankings for the top-k coarse."""

    def order(mask: int, n: int) -> list[int]:
        pos = mask_indices(mask)
        return pos + [i for i in range(n) if not (mask >> i) & 1]

    coarse = order(labels.coarse_mask, cfg.n_coarse)
    fine = [order(labels.fine_masks.get(c, 0), cfg.n_fine) for c in coarse[:k]]
    return coarse, fine


def pose_to_prediction(pose: SlicePose, cfg: BlockGridConfig = DEFAULT_GRID, k: int = 5):
    return labels_to_ranking(compute_labels(pose, cfg), k, cfg)
