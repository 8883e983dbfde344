"""Dimension-independent trajectory denoising filters.

Every filter maps a PoseSequence to a new PoseSequence of identical
length, dims, fps, part order, and frame indices, and treats each part
independently. A part-frame is "valid" when its score reaches the
sequence's score threshold; filters either smooth coordinates, fill
invalid gaps, or invalidate outliers by dropping scores to zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptySequence, EvenWindow
from .pose import PoseSequence

ZERO_SCATTER_GUARD = 1e-12


@dataclass(frozen=True)
class KalmanParams:
    """Constant-acceleration filter knobs; all strictly positive.

    ``process_noise`` scales the white-jerk process covariance,
    ``measurement_noise`` is the position measurement variance for a
    score-1.0 observation (divided by score for weaker ones), and
    ``initial_variance`` seeds the state covariance diagonal.
    """

    process_noise: float = 0.01
    measurement_noise: float = 1.0
    initial_variance: float = 100.0

    def __post_init__(self):
        if self.process_noise <= 0 or self.measurement_noise <= 0 or self.initial_variance <= 0:
            raise ValueError("Kalman parameters must all be strictly positive")


# State (position, velocity, acceleration) per axis, one frame per step.
_F = np.array([[1.0, 1.0, 0.5], [0.0, 1.0, 1.0], [0.0, 0.0, 1.0]])
_H = np.array([[1.0, 0.0, 0.0]])
# Discrete white-jerk process covariance for unit frame step.
_Q_UNIT = np.array(
    [
        [1.0 / 36.0, 1.0 / 12.0, 1.0 / 6.0],
        [1.0 / 12.0, 1.0 / 4.0, 1.0 / 2.0],
        [1.0 / 6.0, 1.0 / 2.0, 1.0],
    ]
)


def kalman_filter(seq: PoseSequence, params: KalmanParams = KalmanParams()) -> PoseSequence:
    """Constant-acceleration Kalman smoothing per part and axis.

    Valid frames update the filter with measurement variance
    ``measurement_noise / score``; invalid frames are prediction-only and
    get their coordinates replaced by the prediction, with a score of
    ``score_threshold * (posterior/prior variance ratio)`` kept strictly
    below the threshold so they stay marked invalid.
    """
    n = len(seq)
    if n == 0:
        raise EmptySequence("cannot filter an empty sequence")
    if n == 1:
        return seq.with_arrays()

    q = params.process_noise * _Q_UNIT
    coords = np.array(seq.coords)
    scores = np.array(seq.scores)
    valid = seq.valid_mask()
    threshold = seq.score_threshold
    # Scores are capped to the largest float strictly below the threshold.
    cap = np.nextafter(threshold, 0.0) if threshold > 0 else 0.0

    for j in range(len(seq.part_order)):
        first_valid = None
        for i in range(n):
            if valid[i, j]:
                first_valid = i
                break
        if first_valid is None:
            continue  # nothing to anchor the filter; leave the part untouched

        # Shared covariance across axes (measurement variance is per-frame,
        # not per-axis), state vector carries all axes at once.
        x = np.zeros((3, seq.dims))
        x[0] = seq.coords[first_valid, j]
        p = np.eye(3) * params.initial_variance
        last_posterior_var = p[0, 0]

        for i in range(first_valid, n):
            if i > first_valid:
                x = _F @ x
                p = _F @ p @ _F.T + q
            if valid[i, j]:
                r = params.measurement_noise / scores[i, j]
                innovation = seq.coords[i, j] - x[0]
                s = p[0, 0] + r
                k = p[:, [0]] / s
                x = x + k @ innovation[None, :]
                p = p - k @ p[[0], :]
                last_posterior_var = p[0, 0]
                coords[i, j] = x[0]
            else:
                coords[i, j] = x[0]
                ratio = min(last_posterior_var / p[0, 0], 1.0)
                scores[i, j] = min(threshold * ratio, cap)

    return seq.with_arrays(coords=coords, scores=scores)


def linear_interpolate(seq: PoseSequence, max_gap: int = 10) -> PoseSequence:
    """Fill invalid runs of length <= max_gap bounded by valid frames.

    Filled frames get linearly interpolated coordinates and the mean of
    the two bounding scores; longer runs and runs touching the sequence
    boundary are left untouched.
    """
    if max_gap < 1:
        raise ValueError(f"max_gap must be >= 1, got {max_gap}")
    n = len(seq)
    coords = np.array(seq.coords)
    scores = np.array(seq.scores)
    valid = seq.valid_mask()

    for j in range(len(seq.part_order)):
        i = 0
        while i < n:
            if valid[i, j]:
                i += 1
                continue
            start = i
            while i < n and not valid[i, j]:
                i += 1
            end = i - 1  # inclusive invalid run [start, end]
            gap = end - start + 1
            if start == 0 or i == n or gap > max_gap:
                continue
            a, b = start - 1, end + 1
            for m in range(start, end + 1):
                t = (m - a) / (b - a)
                coords[m, j] = (1.0 - t) * seq.coords[a, j] + t * seq.coords[b, j]
                scores[m, j] = (seq.scores[a, j] + seq.scores[b, j]) / 2.0

    return seq.with_arrays(coords=coords, scores=scores)


def moving_average(seq: PoseSequence, window: int = 5) -> PoseSequence:
    """Centered mean over the valid frames inside the window, per part.

    Frames with no valid frame in their window keep their coordinates;
    scores are never changed. ``window`` must be odd (1 = identity).
    """
    if window < 1 or window % 2 == 0:
        raise EvenWindow(f"window must be an odd integer >= 1, got {window}")
    n = len(seq)
    half = window // 2
    coords = np.array(seq.coords)
    valid = seq.valid_mask()

    # Direct per-window sums: cumulative-sum differencing would reintroduce
    # rounding noise on frames the filter must leave bit-identical.
    masked = np.where(valid[:, :, None], seq.coords, 0.0)
    for i in range(n):
        lo = max(0, i - half)
        hi = min(n - 1, i + half)
        cnt = valid[lo:hi + 1].sum(axis=0)
        total = masked[lo:hi + 1].sum(axis=0)
        hit = cnt > 0
        coords[i, hit] = total[hit] / cnt[hit, None]

    return seq.with_arrays(coords=coords)


def velocity_filter(seq: PoseSequence, max_speed: float) -> PoseSequence:
    """Invalidate frames whose implied speed from the last accepted frame
    exceeds ``max_speed`` (units per frame). Coordinates are never altered."""
    if max_speed <= 0:
        raise ValueError(f"max_speed must be positive, got {max_speed}")
    n = len(seq)
    scores = np.array(seq.scores)
    valid = seq.valid_mask()

    for j in range(len(seq.part_order)):
        last = None
        for i in range(n):
            if not valid[i, j]:
                continue
            if last is None:
                last = i
                continue
            speed = np.linalg.norm(seq.coords[i, j] - seq.coords[last, j]) / (i - last)
            if speed > max_speed:
                scores[i, j] = 0.0
            else:
                last = i

    return seq.with_arrays(scores=scores)


def statistical_distance_filter(seq: PoseSequence, window: int, z_max: float) -> PoseSequence:
    """Invalidate valid frames lying far from their window's valid neighbors.

    For each valid frame, the surrounding window's other valid frames
    give a mean position and an rms scatter; the frame is invalidated
    when its distance to that mean exceeds ``z_max`` times the scatter.
    Fewer than 3 valid neighbors, or scatter below the zero-scatter
    guard, leaves the frame untouched. Decisions are simultaneous: all
    statistics come from the input validity mask.
    """
    if window < 3:
        raise ValueError(f"window must be >= 3, got {window}")
    if z_max <= 0:
        raise ValueError(f"z_max must be positive, got {z_max}")
    n = len(seq)
    half = window // 2
    scores = np.array(seq.scores)
    valid = seq.valid_mask()

    for j in range(len(seq.part_order)):
        for i in range(n):
            if not valid[i, j]:
                continue
            lo = max(0, i - half)
            hi = min(n - 1, i + half)
            neighbors = [m for m in range(lo, hi + 1) if m != i and valid[m, j]]
            if len(neighbors) < 3:
                continue
            pts = seq.coords[neighbors, j]
            mean = pts.mean(axis=0)
            scatter = float(np.sqrt(np.mean(np.sum((pts - mean) ** 2, axis=1))))
            if scatter < ZERO_SCATTER_GUARD:
                continue
            if np.linalg.norm(seq.coords[i, j] - mean) > z_max * scatter:
                scores[i, j] = 0.0

    return seq.with_arrays(scores=scores)
