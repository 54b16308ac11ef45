"""Slice poses (axis-aligned and oblique) and 4x4 slice extraction."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .blockgrid import DEFAULT_GRID, BlockGridConfig, Rule, compute_labels
from .volume import Volume, trilinear_sample_many

ORTHO_TOL = 1e-9
BOUNDS_TOL = 1e-9


class PoseError(ValueError):
    pass


class PoseExhaustedError(RuntimeError):
    """Rejection sampling ran out of attempts."""


@dataclass(frozen=True)
class SlicePose:
    center: tuple[float, float, float]
    u: tuple[float, float, float]
    v: tuple[float, float, float]
    grid: int = 4
    spacing: float = 1.0

    def __post_init__(self):
        for name in ("center", "u", "v"):
            vec = tuple(float(c) for c in getattr(self, name))
            if len(vec) != 3 or not all(np.isfinite(vec)):
                raise PoseError(f"pose {name} must be a finite 3-vector, got {vec}")
            object.__setattr__(self, name, vec)
        u, v = np.asarray(self.u), np.asarray(self.v)
        if (
            abs(np.linalg.norm(u) - 1.0) > ORTHO_TOL
            or abs(np.linalg.norm(v) - 1.0) > ORTHO_TOL
            or abs(float(u @ v)) > ORTHO_TOL
        ):
            raise PoseError(f"pose frame is not orthonormal: u={self.u}, v={self.v}")
        if int(self.grid) < 1 or not self.spacing > 0:
            raise PoseError("pose grid and spacing must be positive")

    def in_bounds(self, dims, tol: float = 0.0) -> bool:
        pts = sample_points(self)
        upper = np.asarray(dims, dtype=np.float64) - 1.0
        return bool(np.all(pts >= -tol) and np.all(pts <= upper + tol))


def sample_points(pose: SlicePose) -> np.ndarray:
    """(grid*grid, 3) sample coordinates in row-major order (i along u, j along v)."""
    g = pose.grid
    offs = (np.arange(g, dtype=np.float64) - (g - 1) / 2.0) * pose.spacing
    c, u, v = (np.asarray(a, dtype=np.float64) for a in (pose.center, pose.u, pose.v))
    pts = c + offs[:, None, None] * u + offs[None, :, None] * v
    return pts.reshape(g * g, 3)


def pose_corners(pose: SlicePose) -> np.ndarray:
    g = pose.grid
    pts = sample_points(pose)
    return pts[[0, g - 1, (g - 1) * g, g * g - 1]]


_AXIS_FRAMES = {
    0: ((0.0, 1.0, 0.0), (0.0, 0.0, 1.0)),
    1: ((1.0, 0.0, 0.0), (0.0, 0.0, 1.0)),
    2: ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0)),
}


def easy_pose(axis: int, depth: int, origin_a: int, origin_b: int, grid: int = 4) -> SlicePose:
    """Axis-aligned pose normal to ``axis`` at plane ``depth``; window origin on the two in-plane axes."""
    u, v = _AXIS_FRAMES[axis]
    half = (grid - 1) / 2.0
    center = [0.0, 0.0, 0.0]
    center[axis] = float(depth)
    a, b = [i for i in range(3) if i != axis]
    center[a] = origin_a + half
    center[b] = origin_b + half
    return SlicePose(tuple(center), u, v, grid=grid, spacing=1.0)


def random_pose_easy(rng: np.random.Generator, dims=(20, 20, 20), grid: int = 4) -> SlicePose:
    dims = tuple(int(n) for n in dims)
    if min(dims) < grid:
        raise PoseError(f"easy poses need every dim >= {grid}, got {dims}")
    axis = int(rng.integers(3))
    depth = int(rng.integers(dims[axis]))
    a, b = [i for i in range(3) if i != axis]
    oa = int(rng.integers(dims[a] - grid + 1))
    ob = int(rng.integers(dims[b] - grid + 1))
    return easy_pose(axis, depth, oa, ob, grid)


def quaternion_matrix(q) -> np.ndarray:
    w, x, y, z = q / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def random_rotation(rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    q = rng.standard_normal(4)
    while not np.linalg.norm(q) > 1e-12:
        q = rng.standard_normal(4)
    r = quaternion_matrix(q)
    u = r[:, 0] / np.linalg.norm(r[:, 0])
    # Gram-Schmidt pass keeps the pair orthonormal to ~1e-16
    v = r[:, 1] - (r[:, 1] @ u) * u
    return u, v / np.linalg.norm(v)


def random_pose_hard(
    rng: np.random.Generator,
    dims=(20, 20, 20),
    max_attempts: int = 1000,
    cfg: BlockGridConfig = DEFAULT_GRID,
    rule: Rule | str = Rule.CORNERS,
    grid: int = 4,
    spacing: float = 1.0,
) -> SlicePose:
    """Rejection-sample an oblique pose that lies in the volume and carries a usable label."""
    if max_attempts < 1:
        raise ValueError("max_attempts must be >= 1")
    upper = np.asarray(dims, dtype=np.float64) - 1.0
    for _ in range(max_attempts):
        u, v = random_rotation(rng)
        center = rng.uniform(0.0, 1.0, size=3) * upper
        pose = SlicePose(tuple(center), tuple(u), tuple(v), grid=grid, spacing=spacing)
        if not pose.in_bounds(dims):
            continue
        if compute_labels(pose, cfg, rule).is_usable():
            return pose
    raise PoseExhaustedError(f"no acceptable hard pose in {max_attempts} attempts")


def extract_slice(vol: Volume, pose: SlicePose) -> np.ndarray:
    if not pose.in_bounds(vol.dims, tol=BOUNDS_TOL):
        raise PoseError(f"slice pose leaves the {vol.dims} volume")
    return trilinear_sample_many(vol, sample_points(pose))
