import math

import numpy as np
import pytest

from posekit.errors import DimMismatch
from posekit.pose import Part, PoseSequence, Skeleton, part_distance

from conftest import make_sequence


def test_part_distance_identity():
    a = Part("p", [1.0, 2.0, 3.0], 0.9)
    assert part_distance(a, a) == 0.0


def test_part_distance_345():
    a = Part("p", [0.0, 0.0, 0.0], 1.0)
    b = Part("p", [3.0, 4.0, 0.0], 1.0)
    assert part_distance(a, b) == pytest.approx(5.0, abs=1e-12)


def test_part_distance_matches_scalar_loop(rng):
    for _ in range(50):
        d = int(rng.integers(2, 6))
        ca = rng.normal(size=d)
        cb = rng.normal(size=d)
        a = Part("a", ca, 0.5)
        b = Part("b", cb, 0.5)
        acc = 0.0
        for i in range(d):
            acc += (ca[i] - cb[i]) ** 2
        assert part_distance(a, b) == pytest.approx(math.sqrt(acc), abs=1e-12)


def test_part_distance_is_a_metric(rng):
    for _ in range(100):
        pts = [Part("p", rng.normal(size=3), 1.0) for _ in range(3)]
        a, b, c = pts
        assert part_distance(a, b) == pytest.approx(part_distance(b, a), abs=1e-12)
        assert part_distance(a, b) >= 0
        assert part_distance(a, c) <= part_distance(a, b) + part_distance(b, c) + 1e-12


def test_part_arithmetic_never_touches_score():
    a = Part("p", [1.0, 2.0], 0.7)
    b = Part("q", [10.0, 20.0], 0.2)
    assert np.allclose((a + b).coords, [11.0, 22.0])
    assert (a + b).score == 0.7
    assert np.allclose((a - b).coords, [-9.0, -18.0])
    assert np.allclose((2.0 * a).coords, [2.0, 4.0])
    assert (a * 3).score == 0.7


def test_part_dim_mismatch():
    a = Part("p", [1.0, 2.0], 0.7)
    b = Part("q", [1.0, 2.0, 3.0], 0.7)
    with pytest.raises(DimMismatch):
        part_distance(a, b)


def test_part_rejects_out_of_range_score():
    with pytest.raises(ValueError):
        Part("p", [0.0, 0.0], 1.5)


def test_skeleton_part_set_enforced():
    s0 = Skeleton({"a": Part("a", [0.0, 0.0], 1.0)}, frame_index=0)
    s1 = Skeleton({"b": Part("b", [0.0, 0.0], 1.0)}, frame_index=1)
    with pytest.raises(ValueError, match="part set"):
        PoseSequence([s0, s1], dims=2, fps=30, part_order=["a"])


def test_frame_indices_strictly_increasing():
    s0 = Skeleton({"a": Part("a", [0.0, 0.0], 1.0)}, frame_index=5)
    s1 = Skeleton({"a": Part("a", [0.0, 0.0], 1.0)}, frame_index=5)
    with pytest.raises(ValueError, match="strictly increasing"):
        PoseSequence([s0, s1], dims=2, fps=30, part_order=["a"])


def test_sequence_roundtrip_through_skeletons(rng):
    seq = make_sequence(rng, n_frames=7, with_behaviors=True)
    rebuilt = PoseSequence(list(seq), dims=seq.dims, fps=seq.fps,
                           part_order=seq.part_order, score_threshold=seq.score_threshold)
    assert rebuilt.equals(seq)


def test_valid_mask_and_accessors(rng):
    seq = make_sequence(rng, n_frames=10, invalid_fraction=0.4)
    mask = seq.valid_mask()
    assert mask.shape == (10, 3)
    for j, name in enumerate(seq.part_order):
        assert np.array_equal(seq.valid_mask(name), mask[:, j])
        assert np.array_equal(seq.part_coords(name), seq.coords[:, j])
