"""Per-camera 2D keypoint annotations with provenance.

Every stored point carries where it came from: placed by hand
(``annotated``), filled between hand-placed endpoints (``interpolated``),
or proposed by triangulating other views (``projected``). Machine-made
points may be replaced freely; hand-placed ones are never overwritten by
the assist operations.

Persistence is a single CSV per project, written atomically (temp file
then rename) so an interrupted save leaves the previous state intact.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from .errors import InsufficientViews, IoFailure, MalformedCsv, MissingEndpoints
from .geometry import CameraProfile, dlt_project, dlt_reconstruct

PROVENANCE = ("annotated", "interpolated", "projected")
_COLUMNS = ("camera", "frame", "part", "u", "v", "provenance", "residual")


@dataclass(frozen=True)
class AnnotationPoint:
    camera: str
    frame: int
    part: str
    u: float
    v: float
    provenance: str
    residual: float = 0.0   # triangulation rms for projected proposals

    def __post_init__(self):
        if self.frame < 0:
            raise ValueError("frame must be >= 0")
        if self.provenance not in PROVENANCE:
            raise ValueError("provenance must be one of %s" % (PROVENANCE,))

    @property
    def key(self) -> Tuple[str, int, str]:
        return (self.camera, self.frame, self.part)


class AnnotationStore:
    """One point per (camera, frame, part), persisted to ``path``."""

    def __init__(self, path):
        self.path = Path(path)
        self._points: Dict[Tuple[str, int, str], AnnotationPoint] = {}

    @classmethod
    def load(cls, path) -> "AnnotationStore":
        store = cls(path)
        p = Path(path)
        if not p.exists():
            return store
        lines = p.read_text().splitlines()
        if not lines:
            return store
        header = tuple(lines[0].split(","))
        if header != _COLUMNS:
            raise MalformedCsv("%s: expected header %s" % (path, ",".join(_COLUMNS)))
        for lineno, line in enumerate(lines[1:], start=2):
            if not line.strip():
                continue
            cells = line.split(",")
            if len(cells) != len(_COLUMNS):
                raise MalformedCsv("%s line %d: expected %d cells"
                                   % (path, lineno, len(_COLUMNS)))
            try:
                point = AnnotationPoint(
                    camera=cells[0], frame=int(cells[1]), part=cells[2],
                    u=float(cells[3]), v=float(cells[4]),
                    provenance=cells[5], residual=float(cells[6]))
            except ValueError as exc:
                raise MalformedCsv("%s line %d: %s" % (path, lineno, exc))
            store._points[point.key] = point
        return store

    def save(self) -> None:
        tmp = self.path.with_suffix(self.path.suffix + ".tmp")
        try:
            with open(tmp, "w", newline="") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(_COLUMNS)
                for key in sorted(self._points):
                    pt = self._points[key]
                    writer.writerow([pt.camera, pt.frame, pt.part,
                                     repr(pt.u), repr(pt.v),
                                     pt.provenance, repr(pt.residual)])
            os.replace(tmp, self.path)
        except OSError as exc:
            raise IoFailure("cannot save annotations to %s: %s" % (self.path, exc))

    def __len__(self) -> int:
        return len(self._points)

    def get(self, camera: str, frame: int, part: str) -> Optional[AnnotationPoint]:
        return self._points.get((camera, frame, part))

    def set_point(self, camera: str, frame: int, part: str, u: float, v: float,
                  provenance: str = "annotated", residual: float = 0.0) -> AnnotationPoint:
        point = AnnotationPoint(camera, frame, part, float(u), float(v),
                                provenance, float(residual))
        self._points[point.key] = point
        return point

    def remove(self, camera: str, frame: int, part: str) -> bool:
        return self._points.pop((camera, frame, part), None) is not None

    def points(self, camera: Optional[str] = None,
               frame: Optional[int] = None) -> List[AnnotationPoint]:
        out = [self._points[k] for k in sorted(self._points)]
        if camera is not None:
            out = [p for p in out if p.camera == camera]
        if frame is not None:
            out = [p for p in out if p.frame == frame]
        return out

    def annotation_map(self, provenance: Iterable[str] = ("annotated",)
                       ) -> Dict[str, Dict[int, Dict[str, Tuple[float, float]]]]:
        """camera -> frame -> part -> (u, v), restricted by provenance."""
        allowed = frozenset(provenance)
        out: Dict[str, Dict[int, Dict[str, Tuple[float, float]]]] = {}
        for pt in self._points.values():
            if pt.provenance in allowed:
                out.setdefault(pt.camera, {}).setdefault(pt.frame, {})[pt.part] = (pt.u, pt.v)
        return out

    def equals(self, other: "AnnotationStore") -> bool:
        return self._points == other._points


def interpolate_annotations(store: AnnotationStore, camera: str, part: str,
                            frame_a: int, frame_b: int) -> List[int]:
    """Fill frames strictly between two stored endpoints by linear blend.

    Hand-placed points in the gap are left alone; machine-made points are
    replaced. Returns the frames written, in order.
    """
    if frame_a >= frame_b:
        raise ValueError("frame_a must be < frame_b")
    a = store.get(camera, frame_a, part)
    b = store.get(camera, frame_b, part)
    if a is None or b is None:
        missing = [str(f) for f, pt in ((frame_a, a), (frame_b, b)) if pt is None]
        raise MissingEndpoints("no point for %r/%s at frame %s"
                               % (camera, part, " and ".join(missing)))
    filled = []
    span = frame_b - frame_a
    for f in range(frame_a + 1, frame_b):
        existing = store.get(camera, f, part)
        if existing is not None and existing.provenance == "annotated":
            continue
        t = (f - frame_a) / span
        store.set_point(camera, f, part,
                        a.u + t * (b.u - a.u), a.v + t * (b.v - a.v),
                        provenance="interpolated")
        filled.append(f)
    return filled


def reprojection_assist(store: AnnotationStore, cams: Sequence[CameraProfile],
                        frame: int, part: str) -> Dict[str, AnnotationPoint]:
    """Propose 2D points for cameras lacking a hand-placed point.

    Human-sourced points (annotated or interpolated) in >= 2 cameras are
    triangulated; the 3D point is projected into every other calibrated
    camera. Proposals are written into the store as ``projected`` with
    the triangulation rms residual attached, never replacing
    human-sourced points, and returned keyed by camera name.
    """
    by_name = {cam.name: (i, cam) for i, cam in enumerate(cams)}
    obs = []
    observed = set()
    for name, (idx, _) in by_name.items():
        pt = store.get(name, frame, part)
        if pt is not None and pt.provenance in ("annotated", "interpolated"):
            obs.append((idx, (pt.u, pt.v), 1.0))
            observed.add(name)
    if len(obs) < 2:
        raise InsufficientViews(
            "reprojection needs points in >= 2 cameras, have %d" % len(obs))
    point3d, residual = dlt_reconstruct(cams, obs, score_threshold=0.0)
    proposals: Dict[str, AnnotationPoint] = {}
    for name, (_, cam) in by_name.items():
        if name in observed:
            continue
        u, v = dlt_project(cam, point3d)
        proposals[name] = store.set_point(name, frame, part, u, v,
                                          provenance="projected",
                                          residual=residual)
    return proposals
