"""Slice/volume/label pairing, split protocols and the binary dataset format.

Dataset directory layout::

    manifest.json            version, mode, split, ratios, master_seed, rule,
                             volume_ids, counts, ...
    train.bin val.bin test.bin
    volumes/vol_XXXX.{json,bin}   the 20^3 volumes the records refer to

Record layout (little-endian)::

    volume_id u32 | 16 x f32 pixels | 12 x f32 corners | coarse_mask u32 |
    one fine_mask u32 per set coarse bit, ascending coarse index
"""
from __future__ import annotations

import json
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .blockgrid import DEFAULT_GRID, LabelSet, Rule, compute_labels, mask_indices, oracle_labels
from .slicing import (
    PoseExhaustedError,
    SlicePose,
    extract_slice,
    pose_corners,
    random_pose_easy,
    random_pose_hard,
)
from .volume import Volume, load_volume, save_volume

FORMAT_VERSION = 1
SPLITS = ("train", "val", "test")
PIXELS = 16
VOLUME_SIDE = DEFAULT_GRID.volume_side

# stream tags, kept apart from (seed, volume, slice) triples by length
_POSES_TAG = int.from_bytes(b"poses", "little")
_SPLIT_TAG = int.from_bytes(b"split", "little")

_HEAD = struct.Struct("<I16f12fI")
_U32 = struct.Struct("<I")


class DatasetError(ValueError):
    pass


@dataclass(eq=False)
class SliceSample:
    volume_id: int
    pixels: np.ndarray
    corners: np.ndarray
    labels: LabelSet
    pose: SlicePose | None = None

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float32).reshape(PIXELS)
        self.corners = np.asarray(self.corners, dtype=np.float32).reshape(4, 3)
        if not np.all(np.isfinite(self.pixels)):
            raise DatasetError("sample pixels must be finite")

    def __eq__(self, other):
        if not isinstance(other, SliceSample):
            return NotImplemented
        return (
            self.volume_id == other.volume_id
            and self.pixels.tobytes() == other.pixels.tobytes()
            and self.corners.tobytes() == other.corners.tobytes()
            and self.labels == other.labels
        )

    def key(self) -> tuple:
        return (self.volume_id, self.corners.tobytes())


@dataclass(frozen=True)
class DatasetConfig:
    mode: str = "easy"
    slices_per_volume: int = 152
    split: str = "none"
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    master_seed: int = 0
    rule: str = "corners"
    max_attempts: int = 1000

    def __post_init__(self):
        if self.mode not in ("easy", "hard"):
            raise DatasetError(f"mode must be easy or hard, got {self.mode!r}")
        if self.split not in ("pos", "vol", "none"):
            raise DatasetError(f"split must be pos, vol or none, got {self.split!r}")
        ratios = tuple(float(r) for r in self.ratios)
        if len(ratios) != 3 or min(ratios) <= 0 or abs(sum(ratios) - 1.0) > 1e-9:
            raise DatasetError(f"ratios must be three positive numbers summing to 1, got {ratios}")
        object.__setattr__(self, "ratios", ratios)
        Rule(self.rule)
        if self.slices_per_volume < 1:
            raise DatasetError("slices_per_volume must be positive")
        if not 0 <= int(self.master_seed) < 2**64:
            raise DatasetError("master_seed must be a 64-bit unsigned integer")


@dataclass
class Dataset:
    train: list
    val: list
    test: list
    manifest: dict = field(default_factory=dict)

    def split(self, name: str) -> list:
        if name not in SPLITS:
            raise DatasetError(f"unknown split {name!r}")
        return getattr(self, name)


def split_counts(n: int, ratios) -> tuple[int, int, int]:
    """Floor for train and val, remainder to test."""
    n_train = int(np.floor(n * ratios[0] + 1e-9))
    n_val = int(np.floor(n * ratios[1] + 1e-9))
    return n_train, n_val, n - n_train - n_val


def sample_rng(master_seed: int, *stream: int) -> np.random.Generator:
    return np.random.default_rng([int(master_seed), *(int(s) for s in stream)])


def _draw_pose(rng, cfg: DatasetConfig) -> SlicePose:
    dims = (VOLUME_SIDE,) * 3
    if cfg.mode == "easy":
        return random_pose_easy(rng, dims)
    return random_pose_hard(rng, dims, max_attempts=cfg.max_attempts, rule=cfg.rule)


def _pose_list(cfg: DatasetConfig, stream_of) -> list[SlicePose]:
    """``slices_per_volume`` distinct poses; slice ``k`` draws from ``stream_of(k)``.

    A duplicate of an earlier pose is redrawn from the same stream, so a
    (volume, pose) pair never repeats.
    """
    seen, poses = set(), []
    for k in range(cfg.slices_per_volume):
        rng = stream_of(k)
        try:
            pose = _draw_pose(rng, cfg)
            for _ in range(cfg.max_attempts):
                if pose not in seen:
                    break
                pose = _draw_pose(rng, cfg)
            else:
                raise PoseExhaustedError("could not draw a distinct pose")
        except PoseExhaustedError as exc:
            raise PoseExhaustedError(f"slice {k}: {exc}") from None
        seen.add(pose)
        poses.append(pose)
    return poses


def make_sample(vol: Volume, volume_id: int, pose: SlicePose, rule: str = "corners") -> SliceSample:
    return SliceSample(
        volume_id=volume_id,
        pixels=extract_slice(vol, pose),
        corners=pose_corners(pose),
        labels=compute_labels(pose, DEFAULT_GRID, rule),
        pose=pose,
    )


def _check_volumes(volumes):
    if not volumes:
        raise DatasetError("volume list is empty")
    side = (VOLUME_SIDE,) * 3
    for i, vol in enumerate(volumes):
        if vol.dims != side:
            raise DatasetError(f"volume {i} has dims {vol.dims}, expected {side}")


def generate_dataset(
    volumes: list[Volume],
    cfg: DatasetConfig,
    volume_ids: list[int] | None = None,
    workers: int = 1,
) -> Dataset:
    _check_volumes(volumes)
    ids = list(range(len(volumes))) if volume_ids is None else [int(i) for i in volume_ids]
    if len(ids) != len(volumes) or len(set(ids)) != len(ids):
        raise DatasetError("volume_ids must be unique and match the volume list")

    shared = None
    if cfg.split == "pos":
        try:
            shared = _pose_list(cfg, lambda k: sample_rng(cfg.master_seed, _POSES_TAG, k))
        except PoseExhaustedError as exc:
            raise PoseExhaustedError(f"shared pose list, {exc}") from None

    def per_volume(i: int) -> list[SliceSample]:
        poses = shared
        if poses is None:
            try:
                poses = _pose_list(cfg, lambda k: sample_rng(cfg.master_seed, i, k))
            except PoseExhaustedError as exc:
                raise PoseExhaustedError(f"volume {i}, {exc}") from None
        return [make_sample(volumes[i], ids[i], p, cfg.rule) for p in poses]

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per = list(pool.map(per_volume, range(len(volumes))))
    else:
        per = [per_volume(i) for i in range(len(volumes))]

    parts = {name: [] for name in SPLITS}
    if cfg.split == "vol":
        for samples in per:
            n_train, n_val, _ = split_counts(len(samples), cfg.ratios)
            parts["train"] += samples[:n_train]
            parts["val"] += samples[n_train : n_train + n_val]
            parts["test"] += samples[n_train + n_val :]
    else:
        order = sample_rng(cfg.master_seed, _SPLIT_TAG).permutation(len(volumes))
        n_train, n_val, _ = split_counts(len(volumes), cfg.ratios)
        groups = {
            "train": order[:n_train],
            "val": order[n_train : n_train + n_val],
            "test": order[n_train + n_val :],
        }
        for name, members in groups.items():
            for i in sorted(int(m) for m in members):
                parts[name] += per[i]

    for name in SPLITS:
        samples = parts[name]
        # 1% spot check against the brute-force labeller
        for s in samples[::100]:
            if oracle_labels(s.pose, DEFAULT_GRID, cfg.rule) != s.labels:
                raise DatasetError(f"label re-verification failed in split {name}")

    manifest = {
        "version": FORMAT_VERSION,
        "mode": cfg.mode,
        "split": cfg.split,
        "ratios": list(cfg.ratios),
        "master_seed": int(cfg.master_seed),
        "rule": cfg.rule,
        "slices_per_volume": cfg.slices_per_volume,
        "volume_ids": ids,
        "counts": {name: len(parts[name]) for name in SPLITS},
    }
    return Dataset(parts["train"], parts["val"], parts["test"], manifest)


def encode_sample(s: SliceSample) -> bytes:
    coarse = s.labels.coarse_mask
    if coarse >> 27:
        raise DatasetError("coarse mask exceeds 27 bits")
    out = [_HEAD.pack(s.volume_id, *s.pixels.tolist(), *s.corners.reshape(-1).tolist(), coarse)]
    for c in mask_indices(coarse):
        out.append(_U32.pack(s.labels.fine_masks[c]))
    return b"".join(out)


def decode_samples(buf: bytes, source: str = "<buffer>") -> list[SliceSample]:
    samples, pos, n = [], 0, len(buf)
    while pos < n:
        if pos + _HEAD.size > n:
            raise DatasetError(f"{source}: truncated record at byte {pos}")
        fields = _HEAD.unpack_from(buf, pos)
        pos += _HEAD.size
        coarse = fields[-1]
        if coarse >> 27:
            raise DatasetError(f"{source}: coarse mask has bits above 27 at byte {pos - 4}")
        bits = mask_indices(coarse)
        if pos + 4 * len(bits) > n:
            raise DatasetError(f"{source}: truncated record at byte {pos}")
        fine = {}
        for c in bits:
            fine[c] = _U32.unpack_from(buf, pos)[0]
            pos += 4
        samples.append(
            SliceSample(
                volume_id=fields[0],
                pixels=np.array(fields[1:17], dtype=np.float32),
                corners=np.array(fields[17:29], dtype=np.float32),
                labels=LabelSet(coarse, fine),
            )
        )
    return samples


def volume_stem(volume_id: int) -> str:
    return f"vol_{volume_id:04d}"


def write_dataset(dataset: Dataset, directory, volumes: dict | None = None) -> None:
    """Write manifest, split files and (optionally) the referenced volumes."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = dict(dataset.manifest)
    manifest["counts"] = {name: len(dataset.split(name)) for name in SPLITS}
    if volumes is not None:
        vdir = directory / "volumes"
        vdir.mkdir(exist_ok=True)
        for vid in sorted(volumes):
            save_volume(volumes[vid], vdir / volume_stem(vid))
        manifest["volumes_dir"] = "volumes"
    for name in SPLITS:
        (directory / f"{name}.bin").write_bytes(b"".join(encode_sample(s) for s in dataset.split(name)))
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    dataset.manifest = manifest


def read_manifest(directory) -> dict:
    path = Path(directory) / "manifest.json"
    if not path.is_file():
        raise FileNotFoundError(f"missing dataset manifest: {path}")
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{path}: invalid JSON ({exc})") from None
    if manifest.get("version") != FORMAT_VERSION:
        raise DatasetError(f"{path}: unsupported dataset version {manifest.get('version')!r}")
    return manifest


def read_dataset(directory) -> Dataset:
    directory = Path(directory)
    manifest = read_manifest(directory)
    parts = {}
    for name in SPLITS:
        path = directory / f"{name}.bin"
        if not path.is_file():
            raise FileNotFoundError(f"missing split file: {path}")
        parts[name] = decode_samples(path.read_bytes(), str(path))
        expected = manifest.get("counts", {}).get(name)
        if expected is not None and expected != len(parts[name]):
            raise DatasetError(f"{path}: manifest says {expected} records, found {len(parts[name])}")
    return Dataset(parts["train"], parts["val"], parts["test"], manifest)


def load_dataset_volumes(directory, manifest: dict | None = None, volumes_dir=None) -> dict[int, Volume]:
    directory = Path(directory)
    manifest = manifest or read_manifest(directory)
    vdir = Path(volumes_dir) if volumes_dir is not None else directory / manifest.get("volumes_dir", "volumes")
    return {int(vid): load_volume(vdir / volume_stem(int(vid))) for vid in manifest["volume_ids"]}
