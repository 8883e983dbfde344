"""Pose data model: sequences of skeletons made of named keypoints.

A :class:`Part` is one named keypoint: an n-dimensional coordinate vector
(millimeters for 3D, pixels for 2D) plus a confidence score in [0, 1].
A :class:`Skeleton` is one frame's set of parts with optional behavior
annotations, and a :class:`PoseSequence` is the ordered, immutable
collection of skeletons that filters, metrics, and analysis operate on.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import DimMismatch

DEFAULT_SCORE_THRESHOLD = 0.6


@dataclass(frozen=True)
class Part:
    """One named keypoint: coordinate vector plus confidence score."""

    name: str
    coords: np.ndarray
    score: float

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=np.float64)
        if coords.ndim != 1 or coords.size < 2:
            raise DimMismatch(f"part {self.name!r}: coords must be a vector of length >= 2")
        coords.setflags(write=False)
        object.__setattr__(self, "coords", coords)
        score = float(self.score)
        if not 0.0 <= score <= 1.0:
            raise ValueError(f"part {self.name!r}: score {score} outside [0, 1]")
        object.__setattr__(self, "score", score)

    @property
    def dims(self) -> int:
        return self.coords.shape[0]

    def is_valid(self, threshold: float = DEFAULT_SCORE_THRESHOLD) -> bool:
        return self.score >= threshold

    def _check_dims(self, other: "Part") -> None:
        if self.dims != other.dims:
            raise DimMismatch(
                f"parts {self.name!r} ({self.dims}D) and {other.name!r} ({other.dims}D) differ"
            )

    # Arithmetic acts on coordinates only; name and score come from self.
    def __add__(self, other: "Part") -> "Part":
        self._check_dims(other)
        return Part(self.name, self.coords + other.coords, self.score)

    def __sub__(self, other: "Part") -> "Part":
        self._check_dims(other)
        return Part(self.name, self.coords - other.coords, self.score)

    def __mul__(self, scalar: float) -> "Part":
        return Part(self.name, self.coords * float(scalar), self.score)

    __rmul__ = __mul__

    def distance_to(self, other: "Part") -> float:
        self._check_dims(other)
        return float(np.linalg.norm(self.coords - other.coords))


def part_distance(a: Part, b: Part) -> float:
    """Euclidean distance between two parts' coordinates."""
    return a.distance_to(b)


@dataclass(frozen=True)
class Skeleton:
    """All parts of one frame, keyed by part name."""

    parts: dict[str, Part]
    frame_index: int
    behaviors: frozenset[str] = field(default_factory=frozenset)

    def __post_init__(self):
        if self.frame_index < 0:
            raise ValueError(f"frame_index {self.frame_index} is negative")
        object.__setattr__(self, "behaviors", frozenset(self.behaviors))
        object.__setattr__(self, "parts", dict(self.parts))

    def __getitem__(self, name: str) -> Part:
        return self.parts[name]

    def part_names(self) -> frozenset[str]:
        return frozenset(self.parts)


class PoseSequence:
    """Ordered per-frame poses with shared part order and metadata.

    Immutable after construction: all transforms return new sequences.
    Internally the data is stored as dense arrays, ``coords`` of shape
    (frames, parts, dims) and ``scores`` of shape (frames, parts), which
    the filter and analysis modules operate on directly.
    """

    def __init__(
        self,
        skeletons: Sequence[Skeleton],
        dims: int,
        fps: float,
        part_order: Sequence[str],
        score_threshold: float = DEFAULT_SCORE_THRESHOLD,
    ):
        part_order = list(part_order)
        if len(part_order) < 1:
            raise ValueError("part_order must name at least one part")
        if len(set(part_order)) != len(part_order):
            raise ValueError("part_order contains duplicates")
        if dims < 2:
            raise DimMismatch(f"dims must be >= 2, got {dims}")
        if fps <= 0:
            raise ValueError(f"fps must be positive, got {fps}")
        if not 0.0 <= score_threshold <= 1.0:
            raise ValueError(f"score_threshold {score_threshold} outside [0, 1]")

        expected = frozenset(part_order)
        n = len(skeletons)
        coords = np.zeros((n, len(part_order), dims), dtype=np.float64)
        scores = np.zeros((n, len(part_order)), dtype=np.float64)
        frame_indices = np.zeros(n, dtype=np.int64)
        behaviors: list[frozenset[str]] = []
        prev_index = -1
        for i, skel in enumerate(skeletons):
            if skel.part_names() != expected:
                missing = expected - skel.part_names()
                extra = skel.part_names() - expected
                raise ValueError(
                    f"skeleton {i}: part set mismatch (missing {sorted(missing)}, extra {sorted(extra)})"
                )
            if skel.frame_index <= prev_index:
                raise ValueError(
                    f"skeleton {i}: frame_index {skel.frame_index} not strictly increasing"
                )
            prev_index = skel.frame_index
            frame_indices[i] = skel.frame_index
            behaviors.append(skel.behaviors)
            for j, name in enumerate(part_order):
                part = skel[name]
                if part.dims != dims:
                    raise DimMismatch(
                        f"skeleton {i}: part {name!r} has {part.dims} dims, sequence has {dims}"
                    )
                coords[i, j] = part.coords
                scores[i, j] = part.score

        self._init_arrays(coords, scores, frame_indices, behaviors, fps, part_order, score_threshold)

    def _init_arrays(self, coords, scores, frame_indices, behaviors, fps, part_order, threshold):
        coords.setflags(write=False)
        scores.setflags(write=False)
        frame_indices.setflags(write=False)
        self.coords = coords
        self.scores = scores
        self.frame_indices = frame_indices
        self.behaviors = tuple(behaviors)
        self.fps = float(fps)
        self.part_order = tuple(part_order)
        self.score_threshold = float(threshold)

    @classmethod
    def from_arrays(
        cls,
        part_order: Sequence[str],
        coords: np.ndarray,
        scores: np.ndarray,
        fps: float,
        score_threshold: float = DEFAULT_SCORE_THRESHOLD,
        frame_indices: np.ndarray | None = None,
        behaviors: Sequence[Iterable[str]] | None = None,
    ) -> "PoseSequence":
        """Build a sequence from dense (frames, parts, dims) arrays."""
        part_order = list(part_order)
        coords = np.array(coords, dtype=np.float64)
        scores = np.array(scores, dtype=np.float64)
        if coords.ndim != 3:
            raise DimMismatch("coords must have shape (frames, parts, dims)")
        n, p, d = coords.shape
        if p != len(part_order):
            raise DimMismatch(f"coords has {p} parts but part_order names {len(part_order)}")
        if d < 2:
            raise DimMismatch(f"dims must be >= 2, got {d}")
        if scores.shape != (n, p):
            raise DimMismatch(f"scores shape {scores.shape} != {(n, p)}")
        if frame_indices is None:
            frame_indices = np.arange(n, dtype=np.int64)
        else:
            frame_indices = np.array(frame_indices, dtype=np.int64)
            if frame_indices.shape != (n,):
                raise DimMismatch("frame_indices length mismatch")
            if n and (frame_indices[0] < 0 or np.any(np.diff(frame_indices) <= 0)):
                raise ValueError("frame indices must be nonnegative and strictly increasing")
        if behaviors is None:
            behavior_sets = [frozenset() for _ in range(n)]
        else:
            behavior_sets = [frozenset(b) for b in behaviors]
            if len(behavior_sets) != n:
                raise DimMismatch("behaviors length mismatch")
        if not 0.0 <= float(score_threshold) <= 1.0:
            raise ValueError(f"score_threshold {score_threshold} outside [0, 1]")
        if fps <= 0:
            raise ValueError(f"fps must be positive, got {fps}")
        if len(part_order) < 1:
            raise ValueError("part_order must name at least one part")

        seq = cls.__new__(cls)
        seq._init_arrays(coords, scores, frame_indices, behavior_sets, fps, part_order, score_threshold)
        return seq

    def with_arrays(
        self,
        coords: np.ndarray | None = None,
        scores: np.ndarray | None = None,
    ) -> "PoseSequence":
        """Copy of this sequence with coords and/or scores replaced."""
        return PoseSequence.from_arrays(
            self.part_order,
            self.coords if coords is None else coords,
            self.scores if scores is None else scores,
            fps=self.fps,
            score_threshold=self.score_threshold,
            frame_indices=self.frame_indices,
            behaviors=self.behaviors,
        )

    @property
    def dims(self) -> int:
        return self.coords.shape[2]

    def __len__(self) -> int:
        return self.coords.shape[0]

    def __iter__(self) -> Iterator[Skeleton]:
        return (self.skeleton(i) for i in range(len(self)))

    def skeleton(self, i: int) -> Skeleton:
        parts = {
            name: Part(name, self.coords[i, j].copy(), self.scores[i, j])
            for j, name in enumerate(self.part_order)
        }
        return Skeleton(parts, int(self.frame_indices[i]), self.behaviors[i])

    def part_index(self, name: str) -> int:
        try:
            return self.part_order.index(name)
        except ValueError:
            raise KeyError(f"unknown part {name!r}") from None

    def part_coords(self, name: str) -> np.ndarray:
        """(frames, dims) trajectory of one part."""
        return self.coords[:, self.part_index(name), :]

    def part_scores(self, name: str) -> np.ndarray:
        return self.scores[:, self.part_index(name)]

    def valid_mask(self, name: str | None = None) -> np.ndarray:
        """Boolean validity per frame (one part) or per frame x part (all)."""
        if name is None:
            return self.scores >= self.score_threshold
        return self.part_scores(name) >= self.score_threshold

    def equals(self, other: "PoseSequence", coord_tol: float = 0.0) -> bool:
        return (
            self.part_order == other.part_order
            and self.dims == other.dims
            and len(self) == len(other)
            and np.array_equal(self.frame_indices, other.frame_indices)
            and abs(self.fps - other.fps) <= 1e-12
            and abs(self.score_threshold - other.score_threshold) <= 1e-12
            and self.behaviors == other.behaviors
            and np.array_equal(self.scores, other.scores)
            and bool(np.all(np.abs(self.coords - other.coords) <= coord_tol))
        )
