import numpy as np
import pytest

from atombench.blockgrid import oracle_labels
from atombench.dataset import (
    SPLITS,
    DatasetConfig,
    DatasetError,
    decode_samples,
    encode_sample,
    generate_dataset,
    load_dataset_volumes,
    read_dataset,
    split_counts,
    write_dataset,
)
from atombench.slicing import PoseExhaustedError
from atombench.volume import Volume


def _ids(samples):
    return {s.volume_id for s in samples}


def test_split_none_disjoint(phantoms):
    ds = generate_dataset(phantoms, DatasetConfig(slices_per_volume=10, split="none"))
    train, val, test = (_ids(ds.split(n)) for n in SPLITS)
    assert len(train) == 8 and len(val) == 1 and len(test) == 1
    assert not train & test and not train & val and not val & test
    assert ds.manifest["counts"] == {"train": 80, "val": 10, "test": 10}


def test_split_pos_shared_positions(phantoms):
    ds = generate_dataset(phantoms, DatasetConfig(slices_per_volume=12, split="pos", mode="hard"))
    by_vol = {}
    for name in SPLITS:
        for s in ds.split(name):
            by_vol.setdefault(s.volume_id, []).append(s.corners)
    ref = by_vol[0]
    for corners in by_vol.values():
        assert len(corners) == 12
        assert all(np.array_equal(a, b) for a, b in zip(ref, corners))


def test_split_vol_everywhere_no_duplicates(phantoms):
    ds = generate_dataset(phantoms, DatasetConfig(slices_per_volume=20, split="vol"))
    for name in SPLITS:
        assert _ids(ds.split(name)) == set(range(10))
    keys = [s.key() for name in SPLITS for s in ds.split(name)]
    assert len(keys) == len(set(keys)) == 200


def test_labels_reverify(phantoms):
    ds = generate_dataset(phantoms[:3], DatasetConfig(slices_per_volume=30, split="vol", mode="hard"))
    for name in SPLITS:
        for s in ds.split(name):
            assert s.labels == oracle_labels(s.pose)
            assert s.labels.is_usable()


def test_deterministic_across_workers(phantoms):
    cfg = DatasetConfig(slices_per_volume=15, split="none", mode="hard", master_seed=99)
    a = generate_dataset(phantoms, cfg, workers=1)
    b = generate_dataset(phantoms, cfg, workers=4)
    for name in SPLITS:
        assert a.split(name) == b.split(name)


def test_seed_changes_output(phantoms):
    a = generate_dataset(phantoms[:2], DatasetConfig(slices_per_volume=5, split="vol", master_seed=1))
    b = generate_dataset(phantoms[:2], DatasetConfig(slices_per_volume=5, split="vol", master_seed=2))
    assert a.train != b.train


def test_split_counts():
    assert split_counts(10, (0.8, 0.1, 0.1)) == (8, 1, 1)
    assert split_counts(7, (0.5, 0.25, 0.25)) == (3, 1, 3)
    assert split_counts(152, (0.8, 0.1, 0.1)) == (121, 15, 16)


def test_config_validation():
    with pytest.raises(DatasetError):
        DatasetConfig(ratios=(0.5, 0.5, 0.1))
    with pytest.raises(DatasetError):
        DatasetConfig(mode="medium")
    with pytest.raises(DatasetError):
        DatasetConfig(split="patients")


def test_generate_errors(phantoms):
    with pytest.raises(DatasetError):
        generate_dataset([], DatasetConfig())
    with pytest.raises(DatasetError):
        generate_dataset([Volume(np.zeros((10, 10, 10)))], DatasetConfig())
    with pytest.raises(PoseExhaustedError, match="volume 0"):
        generate_dataset(phantoms[:1], DatasetConfig(mode="hard", max_attempts=1, slices_per_volume=50))


def test_write_read_round_trip(tmp_path, phantoms):
    ds = generate_dataset(phantoms, DatasetConfig(slices_per_volume=100, split="vol", mode="hard"))
    write_dataset(ds, tmp_path / "d", volumes=dict(enumerate(phantoms)))
    back = read_dataset(tmp_path / "d")
    total = 0
    for name in SPLITS:
        assert back.split(name) == ds.split(name)
        total += len(back.split(name))
    assert total == 1000
    vols = load_dataset_volumes(tmp_path / "d")
    assert all(vols[i] == phantoms[i] for i in range(10))


def test_write_twice_identical_bytes(tmp_path, phantoms):
    cfg = DatasetConfig(slices_per_volume=10, split="pos")
    for d in ("a", "b"):
        write_dataset(generate_dataset(phantoms, cfg), tmp_path / d)
    for f in ("manifest.json", "train.bin", "val.bin", "test.bin"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_truncation_detected(tmp_path, phantoms):
    ds = generate_dataset(phantoms[:2], DatasetConfig(slices_per_volume=10, split="vol"))
    write_dataset(ds, tmp_path)
    raw = (tmp_path / "train.bin").read_bytes()
    (tmp_path / "train.bin").write_bytes(raw[:-3])
    with pytest.raises(DatasetError, match="truncated"):
        read_dataset(tmp_path)


def test_version_mismatch(tmp_path, phantoms):
    write_dataset(generate_dataset(phantoms[:1], DatasetConfig(slices_per_volume=10)), tmp_path)
    text = (tmp_path / "manifest.json").read_text().replace('"version": 1', '"version": 2')
    (tmp_path / "manifest.json").write_text(text)
    with pytest.raises(DatasetError, match="version"):
        read_dataset(tmp_path)


def test_record_layout(phantoms):
    ds = generate_dataset(phantoms[:1], DatasetConfig(slices_per_volume=10, split="vol"))
    s = ds.train[0]
    raw = encode_sample(s)
    n_coarse = bin(s.labels.coarse_mask).count("1")
    assert len(raw) == 4 + 64 + 48 + 4 + 4 * n_coarse
    assert int.from_bytes(raw[:4], "little") == s.volume_id
    assert np.array_equal(np.frombuffer(raw[4:68], "<f4"), s.pixels)
    assert int.from_bytes(raw[116:120], "little") == s.labels.coarse_mask
    assert decode_samples(raw) == [s]
