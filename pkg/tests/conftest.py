import numpy as np
import pytest

from posekit.pose import PoseSequence


def make_sequence(
    rng: np.random.Generator,
    n_frames: int = 20,
    parts: tuple[str, ...] = ("snout", "neck", "tail"),
    dims: int = 3,
    fps: float = 30.0,
    threshold: float = 0.6,
    invalid_fraction: float = 0.0,
    with_behaviors: bool = False,
) -> PoseSequence:
    coords = rng.uniform(-100, 100, size=(n_frames, len(parts), dims))
    scores = rng.uniform(threshold, 1.0, size=(n_frames, len(parts)))
    if invalid_fraction > 0:
        mask = rng.random((n_frames, len(parts))) < invalid_fraction
        scores[mask] = rng.uniform(0, threshold * 0.99, size=mask.sum())
    behaviors = None
    if with_behaviors:
        pool = ["rearing", "grooming", "still"]
        behaviors = [
            frozenset(rng.choice(pool, size=rng.integers(0, 3), replace=False))
            for _ in range(n_frames)
        ]
    return PoseSequence.from_arrays(
        parts, coords, scores, fps=fps, score_threshold=threshold, behaviors=behaviors
    )


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240817)
