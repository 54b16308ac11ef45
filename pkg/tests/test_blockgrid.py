import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from atombench.blockgrid import (
    DEFAULT_GRID,
    BlockGridConfig,
    BlockIndex,
    LabelSet,
    block_contains,
    coarse_origin,
    compute_labels,
    extract_coarse_block,
    fine_origin,
    indices_to_mask,
    labels_from_points,
    mask_indices,
    one_hot,
    oracle_labels,
)
from atombench.slicing import SlicePose, easy_pose, random_pose_easy, random_pose_hard
from atombench.volume import Volume, VolumeError


def test_default_counts():
    assert DEFAULT_GRID.n_coarse == 27
    assert DEFAULT_GRID.n_fine == 27
    assert DEFAULT_GRID.n_coarse * DEFAULT_GRID.n_fine == 729


def test_config_rejects_bad_tiling():
    with pytest.raises(ValueError):
        BlockGridConfig(coarse_stride=3)
    with pytest.raises(ValueError):
        BlockGridConfig(fine_size=7)


@pytest.mark.parametrize("idx,origin", [(0, (0, 0, 0)), (26, (10, 10, 10)), (13, (5, 5, 5)), (1, (0, 0, 5)), (9, (5, 0, 0))])
def test_coarse_origin(idx, origin):
    assert coarse_origin(idx) == origin


def test_coarse_origin_block_index():
    assert coarse_origin(BlockIndex("coarse", 13)) == (5, 5, 5)
    with pytest.raises(IndexError):
        coarse_origin(27)


@pytest.mark.parametrize("parent,idx,origin", [(0, 0, (0, 0, 0)), (0, 26, (4, 4, 4)), (26, 13, (12, 12, 12))])
def test_fine_origin(parent, idx, origin):
    assert fine_origin(parent, idx) == origin


def test_fine_origin_range():
    with pytest.raises(IndexError):
        fine_origin(0, 27)
    with pytest.raises(IndexError):
        fine_origin(27, 0)


def test_block_contains():
    assert block_contains((0, 0, 0), 10, [(0, 0, 0), (9, 9, 9)])
    assert not block_contains((0, 0, 0), 10, [(9.001, 0, 0)])
    assert not block_contains((5, 5, 5), 6, [(4.9, 6, 6)])


def test_labels_corner_window():
    pose = SlicePose((1.5, 1.5, 0), (1, 0, 0), (0, 1, 0))
    labels = compute_labels(pose)
    assert labels.coarse_mask == 1
    assert labels.fine_masks == {0: 1}
    assert labels == oracle_labels(pose)


def test_labels_mid_window():
    # spans [2,5] x [2,5] at z = 4
    pose = easy_pose(2, 4, 2, 2)
    labels = compute_labels(pose)
    assert labels.coarse == [0]
    fine = mask_indices(labels.fine_masks[0])
    assert len(fine) == 12
    assert fine == sorted(x * 9 + y * 3 + z for x in (0, 1) for y in (0, 1) for z in (0, 1, 2))
    assert labels == oracle_labels(pose)


def test_labels_coarse_without_fine():
    # a 10-voxel wide grid fits coarse block 0 but no 6^3 fine block
    pose = SlicePose((4.5, 4.5, 0), (1, 0, 0), (0, 1, 0), grid=4, spacing=3.0)
    labels = compute_labels(pose)
    assert labels.coarse_mask == 1 and labels.fine_masks == {0: 0}
    assert not labels.is_usable()
    assert labels == oracle_labels(pose)


def test_oracle_equivalence_random(rng):
    for i in range(2000):
        pose = random_pose_hard(rng) if i % 2 else random_pose_easy(rng)
        for rule in ("corners", "all_points"):
            assert compute_labels(pose, rule=rule) == oracle_labels(pose, rule=rule)


def test_rules_agree(rng):
    for _ in range(2000):
        pose = random_pose_hard(rng)
        assert compute_labels(pose, rule="corners") == compute_labels(pose, rule="all_points")


def test_nesting(rng):
    cfg = DEFAULT_GRID
    for p, f in itertools.product(range(27), range(27)):
        fo = np.array(fine_origin(p, f))
        pts = fo + rng.uniform(0, cfg.fine_size - 1, size=(4, 3))
        assert block_contains(fine_origin(p, f), cfg.fine_size, pts)
        assert block_contains(coarse_origin(p), cfg.coarse_size, pts)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(*[st.floats(0, 19)] * 3), min_size=1, max_size=6))
def test_labels_from_points_vs_brute_force(points):
    labels = labels_from_points(points)
    for c in range(27):
        inside = block_contains(coarse_origin(c), 10, points)
        assert bool(labels.coarse_mask >> c & 1) == inside
        if inside:
            for f in range(27):
                assert bool(labels.fine_masks[c] >> f & 1) == block_contains(fine_origin(c, f), 6, points)


def test_labelset_invariant():
    with pytest.raises(ValueError):
        LabelSet(0b11, {0: 1})
    assert LabelSet(0b101, {0: 1, 2: 0}).coarse == [0, 2]


def test_one_hot():
    assert not one_hot(0).any()
    e0 = np.zeros(27)
    e0[0] = 1
    assert np.array_equal(one_hot(1), e0)
    v = one_hot(indices_to_mask([0, 13, 26]))
    assert v.sum() == 3 and v[13] == 1


def test_extract_coarse_block(rng):
    vol = Volume(rng.random((20, 20, 20)))
    assert np.array_equal(extract_coarse_block(vol, 0).data, vol.data[:10, :10, :10])
    assert np.array_equal(extract_coarse_block(vol, 26).data, vol.data[10:, 10:, 10:])
    const = extract_coarse_block(Volume(np.full((20, 20, 20), 0.4)), 7)
    assert const.dims == (10, 10, 10) and np.all(const.data == np.float32(0.4))
    with pytest.raises(VolumeError):
        extract_coarse_block(Volume(np.zeros((10, 10, 10))), 0)
