"""3D scalar volumes: atomvol file I/O, phantoms, normalization and trilinear resampling.

Coordinates are in voxel-center units: voxel ``(i, j, k)`` sits at the point
``(i, j, k)``.  Intensities are stored as float32 (the on-disk precision) and
all interpolation arithmetic is done in float64.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
from scipy import ndimage

FORMAT_VERSION = 1


class VolumeError(ValueError):
    """Raised for malformed volumes or atomvol files."""


@dataclass(frozen=True, eq=False)
class Volume:
    data: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float32)
        if data.ndim != 3:
            raise VolumeError(f"volume data must be 3D, got shape {data.shape}")
        if min(data.shape) < 2:
            raise VolumeError(f"every volume dimension must be >= 2, got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise VolumeError("volume contains non-finite intensities")
        if self.normalized and data.size and (data.min() < 0.0 or data.max() > 1.0):
            raise VolumeError("normalized volume has intensities outside [0, 1]")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(n) for n in self.data.shape)

    def __eq__(self, other):
        if not isinstance(other, Volume):
            return NotImplemented
        return (
            self.normalized == other.normalized
            and self.dims == other.dims
            and np.array_equal(self.data.view(np.uint32), other.data.view(np.uint32))
        )

    def __getitem__(self, index):
        return float(self.data[index])


class PhantomKind(str, Enum):
    BLOBS = "blobs"
    SMOOTH_NOISE = "smooth-noise"
    SHELLS = "shells"


@dataclass(frozen=True)
class PhantomSpec:
    kind: PhantomKind | str
    dims: tuple[int, int, int] = (20, 20, 20)
    seed: int = 0
    component_count: int = 6

    def __post_init__(self):
        try:
            object.__setattr__(self, "kind", PhantomKind(self.kind))
        except ValueError:
            raise VolumeError(f"unknown phantom kind {self.kind!r}") from None
        object.__setattr__(self, "dims", tuple(int(n) for n in self.dims))
        if len(self.dims) != 3 or min(self.dims) < 2:
            raise VolumeError(f"phantom dims must be three integers >= 2, got {self.dims}")
        if self.component_count < 1:
            raise VolumeError("component_count must be positive")
        if not 0 <= int(self.seed) < 2**64:
            raise VolumeError("seed must be a 64-bit unsigned integer")


def _paths(path) -> tuple[Path, Path]:
    path = Path(path)
    if path.suffix in (".json", ".bin"):
        path = path.with_suffix("")
    return path.with_name(path.name + ".json"), path.with_name(path.name + ".bin")


def save_volume(vol: Volume, path) -> None:
    """Write ``<path>.json`` (header) and ``<path>.bin`` (f32le payload)."""
    header_path, payload_path = _paths(path)
    header = {
        "version": FORMAT_VERSION,
        "dims": list(vol.dims),
        "dtype": "f32le",
        "normalized": bool(vol.normalized),
    }
    payload = vol.data.astype("<f4", copy=False).tobytes(order="C")
    header_path.write_text(json.dumps(header, sort_keys=True) + "\n", encoding="utf-8")
    payload_path.write_bytes(payload)


def load_volume(path) -> Volume:
    header_path, payload_path = _paths(path)
    for p in (header_path, payload_path):
        if not p.is_file():
            raise FileNotFoundError(f"missing atomvol file: {p}")
    try:
        header = json.loads(header_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise VolumeError(f"{header_path}: invalid JSON header ({exc})") from None
    if header.get("version") != FORMAT_VERSION:
        raise VolumeError(f"{header_path}: unsupported version {header.get('version')!r}")
    if header.get("dtype") != "f32le":
        raise VolumeError(f"{header_path}: unsupported dtype {header.get('dtype')!r}")
    dims = tuple(int(n) for n in header["dims"])
    if len(dims) != 3:
        raise VolumeError(f"{header_path}: dims must have three entries")
    raw = payload_path.read_bytes()
    expected = int(np.prod(dims)) * 4
    if len(raw) != expected:
        raise VolumeError(
            f"{payload_path}: payload has {len(raw)} bytes, header dims {dims} need {expected}"
        )
    data = np.frombuffer(raw, dtype="<f4").reshape(dims)
    if not np.all(np.isfinite(data)):
        raise VolumeError(f"{payload_path}: non-finite intensity in payload")
    return Volume(data.astype(np.float32), normalized=bool(header.get("normalized", False)))


def list_volumes(directory) -> list[Path]:
    """Sorted atomvol stems in ``directory``; sort order defines volume ids."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"volume directory not found: {directory}")
    return sorted(p.with_suffix("") for p in directory.glob("*.json") if p.with_suffix(".bin").is_file())


def normalize(vol: Volume) -> Volume:
    data = vol.data.astype(np.float64)
    if not np.all(np.isfinite(data)):
        raise VolumeError("cannot normalize a volume with non-finite intensities")
    lo, hi = data.min(), data.max()
    if hi == lo:
        return Volume(np.zeros(vol.dims, dtype=np.float32), normalized=True)
    out = ((data - lo) / (hi - lo)).astype(np.float32)
    return Volume(np.clip(out, 0.0, 1.0), normalized=True)


def trilinear_sample_many(vol: Volume, points) -> np.ndarray:
    """Vectorized trilinear interpolation with clamp-to-edge; ``points`` is (..., 3)."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.shape[-1] != 3:
        raise VolumeError(f"points must have a trailing axis of length 3, got {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise VolumeError("non-finite sample point")
    data = vol.data
    flat = pts.reshape(-1, 3)
    upper = np.asarray(vol.dims, dtype=np.float64) - 1.0
    flat = np.clip(flat, 0.0, upper)
    base = np.floor(flat)
    # the top lattice plane has no right neighbour; step back one cell there
    base = np.minimum(base, upper - 1.0)
    frac = flat - base
    i0 = base.astype(np.intp)
    x, y, z = i0[:, 0], i0[:, 1], i0[:, 2]
    fx, fy, fz = frac[:, 0], frac[:, 1], frac[:, 2]
    gx, gy, gz = 1.0 - fx, 1.0 - fy, 1.0 - fz

    def at(dx, dy, dz):
        return data[x + dx, y + dy, z + dz].astype(np.float64)

    out = (
        at(0, 0, 0) * (gx * gy * gz)
        + at(1, 0, 0) * (fx * gy * gz)
        + at(0, 1, 0) * (gx * fy * gz)
        + at(0, 0, 1) * (gx * gy * fz)
        + at(1, 1, 0) * (fx * fy * gz)
        + at(1, 0, 1) * (fx * gy * fz)
        + at(0, 1, 1) * (gx * fy * fz)
        + at(1, 1, 1) * (fx * fy * fz)
    )
    return out.reshape(pts.shape[:-1])


def trilinear_sample(vol: Volume, point) -> float:
    return float(trilinear_sample_many(vol, np.asarray(point, dtype=np.float64)[None, :])[0])


def downsample(vol: Volume, target) -> Volume:
    """Resample to ``target`` dims; output index ``t`` maps to input coordinate ``t*(N-1)/(T-1)``."""
    target = tuple(int(t) for t in target)
    if len(target) != 3 or min(target) < 2:
        raise VolumeError(f"downsample target components must be >= 2, got {target}")
    axes = [
        np.arange(t, dtype=np.float64) * ((n - 1) / (t - 1)) for n, t in zip(vol.dims, target)
    ]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    out = trilinear_sample_many(vol, grid)
    # float64 rounding may step one ulp outside the neighbour range
    out = np.clip(out, float(vol.data.min()), float(vol.data.max()))
    return Volume(out.astype(np.float32), normalized=vol.normalized)


def _coords(dims):
    return np.meshgrid(*[np.arange(n, dtype=np.float64) for n in dims], indexing="ij")


def _blobs(spec: PhantomSpec, rng: np.random.Generator) -> np.ndarray:
    x, y, z = _coords(spec.dims)
    dims = np.asarray(spec.dims, dtype=np.float64)
    field = np.zeros(spec.dims)
    for _ in range(spec.component_count):
        c = rng.uniform(0.0, dims - 1.0)
        sigma = rng.uniform(0.08, 0.25) * dims
        amp = rng.uniform(0.3, 1.0) * rng.choice([-1.0, 1.0])
        r2 = ((x - c[0]) / sigma[0]) ** 2 + ((y - c[1]) / sigma[1]) ** 2 + ((z - c[2]) / sigma[2]) ** 2
        field += amp * np.exp(-0.5 * r2)
    return field


def _smooth_noise(spec: PhantomSpec, rng: np.random.Generator) -> np.ndarray:
    noise = rng.standard_normal(spec.dims)
    sigma = max(1.0, min(spec.dims) / 8.0)
    return ndimage.gaussian_filter(noise, sigma=sigma, mode="reflect")


def _shells(spec: PhantomSpec, rng: np.random.Generator) -> np.ndarray:
    x, y, z = _coords(spec.dims)
    dims = np.asarray(spec.dims, dtype=np.float64)
    center = (dims - 1.0) / 2.0
    # normalized radius: 0 at the center, 1 at the corners
    r = np.sqrt(
        ((x - center[0]) / center[0]) ** 2
        + ((y - center[1]) / center[1]) ** 2
        + ((z - center[2]) / center[2]) ** 2
    ) / np.sqrt(3.0)
    n_shells = 4
    radii = np.sort(rng.uniform(0.1, 0.9, size=n_shells))
    width = 0.03
    # sum of decreasing sigmoids: a smooth staircase, monotone in r
    return sum(1.0 / (1.0 + np.exp((r - rk) / width)) for rk in radii) + 0.25 * (1.0 - r)


_GENERATORS = {
    PhantomKind.BLOBS: _blobs,
    PhantomKind.SMOOTH_NOISE: _smooth_noise,
    PhantomKind.SHELLS: _shells,
}


def generate_phantom(spec: PhantomSpec) -> Volume:
    rng = np.random.default_rng(int(spec.seed))
    field = _GENERATORS[spec.kind](spec, rng)
    return normalize(Volume(field.astype(np.float32)))


def shell_profile_value(spec: PhantomSpec, point) -> float:
    """Raw (pre-normalization) shells intensity at ``point``; used as an independent check."""
    rng = np.random.default_rng(int(spec.seed))
    radii = np.sort(rng.uniform(0.1, 0.9, size=4))
    dims = np.asarray(spec.dims, dtype=np.float64)
    center = (dims - 1.0) / 2.0
    r = float(np.linalg.norm((np.asarray(point, dtype=np.float64) - center) / center) / np.sqrt(3.0))
    return float(sum(1.0 / (1.0 + np.exp((r - rk) / 0.03)) for rk in radii) + 0.25 * (1.0 - r))
