import numpy as np
import pytest

from atombench.baseline import (
    EasyPoseTable,
    HardSearchGrid,
    PoseCandidate,
    cube_rotation_frames,
    default_frames,
    exhaustive_search_easy,
    exhaustive_search_hard,
    labels_to_ranking,
    pose_to_prediction,
)
from atombench.blockgrid import LabelSet, compute_labels
from atombench.slicing import easy_pose, extract_slice, random_pose_easy, random_pose_hard
from atombench.volume import Volume


def test_table_size_and_order(phantoms):
    table = EasyPoseTable(phantoms[0])
    assert len(table) == 3 * 20 * 17 * 17 == 17_340
    assert table.pose(0) == easy_pose(0, 0, 0, 0)
    assert table.pose(17_339) == easy_pose(2, 19, 16, 16)
    for flat in (0, 500, 9000, 17_339):
        assert np.array_equal(table.pixels[flat], extract_slice(phantoms[0], table.pose(flat)))
    with pytest.raises(IndexError):
        table.pose(17_340)


def test_easy_query_found(phantoms, rng):
    vol = phantoms[3]
    table = EasyPoseTable(vol)
    for _ in range(50):
        pose = random_pose_easy(rng)
        found = exhaustive_search_easy(vol, extract_slice(vol, pose), table)
        assert found[0].ssd == 0.0
        assert pose in [c.pose for c in found]


def test_easy_constant_volume_all_tie():
    vol = Volume(np.full((20, 20, 20), 0.5))
    found = exhaustive_search_easy(vol, np.full(16, 0.5))
    assert len(found) == 17_340 and all(c.ssd == 0 for c in found)


def test_easy_far_query(phantoms):
    found = exhaustive_search_easy(phantoms[0], np.full(16, 2.0))
    assert found[0].ssd >= 16


def test_candidate_validation():
    pose = easy_pose(0, 0, 0, 0)
    with pytest.raises(ValueError):
        PoseCandidate(pose, -1.0)
    with pytest.raises(ValueError):
        PoseCandidate(pose, float("nan"))


def test_frames():
    frames = cube_rotation_frames()
    assert len(frames) == 24 and len(set(frames)) == 24
    for u, v in frames:
        assert np.dot(u, v) == 0
    d = default_frames()
    assert len(d) == 24 and set(d) == set(frames)
    assert d[0] == ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0))


def test_hard_search_easy_query(phantoms, rng):
    vol = phantoms[4]
    pose = random_pose_easy(rng)
    best = exhaustive_search_hard(vol, extract_slice(vol, pose))
    assert best.ssd == 0.0


def test_hard_search_nested_grids(phantoms, rng):
    vol = phantoms[5]
    px = extract_slice(vol, random_pose_hard(rng))
    coarse = exhaustive_search_hard(vol, px, HardSearchGrid(center_step=1.0))
    fine = exhaustive_search_hard(vol, px, HardSearchGrid(center_step=0.5))
    assert 0 <= fine.ssd <= coarse.ssd and np.isfinite(fine.ssd)


def test_hard_search_empty_grid(phantoms):
    with pytest.raises(ValueError):
        exhaustive_search_hard(phantoms[0], np.zeros(16), HardSearchGrid(frames=()))
    with pytest.raises(ValueError):
        exhaustive_search_hard(phantoms[0], np.zeros(16), HardSearchGrid(center_step=0))


def test_ssd_zero_iff_exact(phantoms, rng):
    vol = phantoms[6]
    table = EasyPoseTable(vol)
    pose = random_pose_easy(rng)
    px = extract_slice(vol, pose)
    for c in exhaustive_search_easy(vol, px, table):
        assert np.max(np.abs(extract_slice(vol, c.pose) - px)) <= 1e-12
    nudged = px.copy()
    nudged[3] += 1e-3
    assert exhaustive_search_easy(vol, nudged, table)[0].ssd > 0


def test_ranking_rules():
    coarse, fine = labels_to_ranking(LabelSet(0, {}))
    assert coarse == list(range(27))
    assert fine == [list(range(27))] * 5
    coarse, fine = labels_to_ranking(LabelSet((1 << 3) | (1 << 7), {3: 0b100, 7: 0b1}))
    assert coarse[:2] == [3, 7] and sorted(coarse) == list(range(27))
    assert fine[0][0] == 2 and fine[1][0] == 0


def test_pose_to_prediction_true_pose(rng):
    for _ in range(100):
        pose = random_pose_hard(rng)
        coarse, fine = pose_to_prediction(pose)
        labels = compute_labels(pose)
        assert coarse[0] in labels.fine_masks
        assert labels.fine_masks[coarse[0]] >> fine[0][0] & 1
