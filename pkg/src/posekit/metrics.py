"""Pose accuracy metrics: MPJPE and dynamic PCK@x.

Both metrics count a (frame, part) pair only when the part is valid in the
prediction and in the ground truth; abstentions are excluded from numerator
and denominator alike, and the counted-pair total is reported so the overall
value can be recomputed from the breakdowns.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict

import numpy as np

from .errors import (
    MissingReferencePart,
    NoValidPairs,
    ShapeMismatch,
)
from .pose import PoseSequence


@dataclass(frozen=True)
class MetricReport:
    name: str
    overall: float
    per_part: Dict[str, float]      # part -> mean over that part's counted frames
    per_frame: Dict[int, float]     # frame_index -> mean over that frame's counted parts
    pair_count: int


def _check_aligned(pred: PoseSequence, gt: PoseSequence) -> None:
    if pred.dims != gt.dims:
        raise ShapeMismatch("dims differ: %d vs %d" % (pred.dims, gt.dims))
    if pred.part_order != gt.part_order:
        raise ShapeMismatch("part orders differ")
    if len(pred) != len(gt):
        raise ShapeMismatch("lengths differ: %d vs %d" % (len(pred), len(gt)))
    if not np.array_equal(pred.frame_indices, gt.frame_indices):
        raise ShapeMismatch("frame indices differ")


def _pair_distances(pred: PoseSequence, gt: PoseSequence) -> np.ndarray:
    diff = pred.coords - gt.coords
    return np.sqrt(np.sum(diff * diff, axis=2))


def _build_report(name: str, values: np.ndarray, counted: np.ndarray,
                  pred: PoseSequence) -> MetricReport:
    # fsum: exactly-rounded sums make every mean independent of accumulation
    # order, so an external recomputation over the same pairs agrees bitwise.
    count = int(np.count_nonzero(counted))
    if count == 0:
        raise NoValidPairs("no (frame, part) pair is valid in both sequences")
    overall = math.fsum(values[counted]) / count
    per_part: Dict[str, float] = {}
    for j, part in enumerate(pred.part_order):
        m = counted[:, j]
        if m.any():
            per_part[part] = math.fsum(values[m, j]) / int(np.count_nonzero(m))
    per_frame: Dict[int, float] = {}
    for i, fidx in enumerate(pred.frame_indices):
        m = counted[i]
        if m.any():
            per_frame[int(fidx)] = math.fsum(values[i, m]) / int(np.count_nonzero(m))
    return MetricReport(name, overall, per_part, per_frame, count)


def mpjpe(pred: PoseSequence, gt: PoseSequence) -> MetricReport:
    """Mean Euclidean distance over pairs valid in both sequences."""
    _check_aligned(pred, gt)
    counted = pred.valid_mask() & gt.valid_mask()
    return _build_report("mpjpe", _pair_distances(pred, gt), counted, pred)


def pck(pred: PoseSequence, gt: PoseSequence, x_percent: float,
        ref_a: str, ref_b: str) -> MetricReport:
    """Fraction of pairs within a per-frame threshold.

    The threshold for frame f is (x_percent/100) times the ground-truth
    distance between ref_a and ref_b at f; frames where either reference
    part is invalid in the ground truth are excluded entirely.
    """
    _check_aligned(pred, gt)
    if x_percent <= 0:
        raise ValueError("x_percent must be > 0")
    for ref in (ref_a, ref_b):
        if ref not in gt.part_order:
            raise MissingReferencePart("no part named %r" % ref)
    gt_valid = gt.valid_mask()
    ja = gt.part_index(ref_a)
    jb = gt.part_index(ref_b)
    frame_ok = gt_valid[:, ja] & gt_valid[:, jb]
    ref_len = np.linalg.norm(gt.coords[:, ja, :] - gt.coords[:, jb, :], axis=1)
    tau = (x_percent / 100.0) * ref_len
    counted = pred.valid_mask() & gt_valid & frame_ok[:, None]
    correct = (_pair_distances(pred, gt) <= tau[:, None]).astype(float)
    return _build_report("pck@%g" % x_percent, correct, counted, pred)


def write_metric_csv(report: MetricReport, path) -> None:
    """Serialize a report as scope,key,value rows."""
    lines = ["scope,key,value"]
    lines.append("overall,%s,%s" % (report.name, repr(report.overall)))
    lines.append("overall,pair_count,%d" % report.pair_count)
    for part in sorted(report.per_part):
        lines.append("part,%s,%s" % (part, repr(report.per_part[part])))
    for fidx in sorted(report.per_frame):
        lines.append("frame,%d,%s" % (fidx, repr(report.per_frame[fidx])))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
