"""Camera geometry: 11-coefficient linear camera model, multi-view
triangulation, coefficient fitting, calibration interop, and rigid
transforms.

The camera model maps a world point (X, Y, Z) in millimeters to pixel
coordinates through a rational-linear expression::

    u = (L1*X + L2*Y + L3*Z + L4) / (L9*X + L10*Y + L11*Z + 1)
    v = (L5*X + L6*Y + L7*Z + L8) / (L9*X + L10*Y + L11*Z + 1)

Triangulation stacks two linear equations per view and solves the
weighted least-squares system with an orthogonal factorization (never
the normal equations; these systems are routinely ill-conditioned).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    CollinearPoints,
    CoplanarPoints,
    DegenerateDenominator,
    DimMismatch,
    EmptyAnnotationSet,
    InsufficientViews,
    IoFailure,
    MalformedCsv,
    NotEnoughAnnotatedFrames,
    RankDeficient,
    TooFewPoints,
)
from .pose import DEFAULT_SCORE_THRESHOLD, PoseSequence

CONDITION_LIMIT = 1e12
DENOMINATOR_FLOOR = 1e-6

# Annotation maps are keyed camera -> frame -> part -> (u, v).
AnnotationMap = Mapping[str, Mapping[int, Mapping[str, tuple[float, float]]]]


@dataclass(frozen=True)
class CameraProfile:
    """One camera's 11 model coefficients plus image size."""

    name: str
    dlt: np.ndarray
    width: int = 0
    height: int = 0

    def __post_init__(self):
        dlt = np.asarray(self.dlt, dtype=np.float64)
        if dlt.shape != (11,):
            raise DimMismatch(f"camera {self.name!r}: expected 11 coefficients, got shape {dlt.shape}")
        dlt.setflags(write=False)
        object.__setattr__(self, "dlt", dlt)


@dataclass(frozen=True)
class WorkingVolume:
    """Axis-aligned bounds (mm) where camera denominators stay regular."""

    min_corner: np.ndarray
    max_corner: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.min_corner, dtype=np.float64)
        hi = np.asarray(self.max_corner, dtype=np.float64)
        if lo.shape != (3,) or hi.shape != (3,):
            raise DimMismatch("working volume corners must be 3-vectors")
        if not np.all(lo < hi):
            raise ValueError("working volume must satisfy min < max per axis")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "min_corner", lo)
        object.__setattr__(self, "max_corner", hi)

    def contains(self, p) -> bool:
        p = np.asarray(p, dtype=np.float64)
        return bool(np.all(p >= self.min_corner) and np.all(p <= self.max_corner))

    def sample(self, rng: np.random.Generator, n: int = 1) -> np.ndarray:
        return rng.uniform(self.min_corner, self.max_corner, size=(n, 3))


@dataclass(frozen=True)
class RigidTransform:
    """Proper rigid motion p -> R @ p + t."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64)
        if r.shape != (3, 3) or t.shape != (3,):
            raise DimMismatch("rotation must be 3x3 and translation a 3-vector")
        if np.max(np.abs(r.T @ r - np.eye(3))) > 1e-9:
            raise ValueError("rotation is not orthonormal within 1e-9")
        if np.linalg.det(r) < 0:
            raise ValueError("rotation must be proper (det +1)")
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    def apply(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation

    def compose(self, inner: "RigidTransform") -> "RigidTransform":
        """Transform equal to applying ``inner`` first, then self."""
        return RigidTransform(
            self.rotation @ inner.rotation,
            self.rotation @ inner.translation + self.translation,
        )


def dlt_project(cam: CameraProfile, p) -> tuple[float, float]:
    """Project a 3D point (mm) to pixel coordinates. No image-bounds clamping."""
    x, y, z = np.asarray(p, dtype=np.float64)
    L = cam.dlt
    denom = L[8] * x + L[9] * y + L[10] * z + 1.0
    if abs(denom) < DENOMINATOR_FLOOR:
        raise DegenerateDenominator(
            f"camera {cam.name!r}: projection denominator {denom:.3e} below {DENOMINATOR_FLOOR}"
        )
    u = (L[0] * x + L[1] * y + L[2] * z + L[3]) / denom
    v = (L[4] * x + L[5] * y + L[6] * z + L[7]) / denom
    return float(u), float(v)


def dlt_reconstruct(
    cams: Sequence[CameraProfile],
    obs: Sequence[tuple[int, tuple[float, float], float]],
    score_threshold: float = DEFAULT_SCORE_THRESHOLD,
) -> tuple[np.ndarray, float]:
    """Triangulate one 3D point from (camera index, pixel point, score) observations.

    Observations with score below ``score_threshold`` are dropped; the
    rest are weighted by score. Returns the point and the rms pixel
    reprojection residual over contributing views.
    """
    used = [(ci, np.asarray(uv, dtype=np.float64), float(s)) for ci, uv, s in obs
            if s >= score_threshold]
    if len({ci for ci, _, _ in used}) < 2:
        raise InsufficientViews(
            f"need >= 2 valid observations from distinct cameras, have {len(used)}"
        )
    rows = []
    rhs = []
    for ci, (u, v), score in used:
        L = cams[ci].dlt
        w = score
        rows.append(w * np.array([u * L[8] - L[0], u * L[9] - L[1], u * L[10] - L[2]]))
        rhs.append(w * (L[3] - u))
        rows.append(w * np.array([v * L[8] - L[4], v * L[9] - L[5], v * L[10] - L[6]]))
        rhs.append(w * (L[7] - v))
    a = np.vstack(rows)
    b = np.asarray(rhs)
    singular = np.linalg.svd(a, compute_uv=False)
    if singular[-1] == 0.0 or singular[0] / singular[-1] > CONDITION_LIMIT:
        raise RankDeficient(
            f"triangulation system condition number exceeds {CONDITION_LIMIT:.0e}"
        )
    point, *_ = np.linalg.lstsq(a, b, rcond=None)

    sq = 0.0
    for ci, (u, v), _ in used:
        L = cams[ci].dlt
        denom = L[8] * point[0] + L[9] * point[1] + L[10] * point[2] + 1.0
        pu = (L[0] * point[0] + L[1] * point[1] + L[2] * point[2] + L[3]) / denom
        pv = (L[4] * point[0] + L[5] * point[1] + L[6] * point[2] + L[7]) / denom
        sq += (pu - u) ** 2 + (pv - v) ** 2
    rms = float(np.sqrt(sq / len(used)))
    return point, rms


def fit_dlt(
    correspondences: Sequence[tuple[Sequence[float], Sequence[float]]],
    name: str = "fitted",
    width: int = 0,
    height: int = 0,
) -> tuple[CameraProfile, float]:
    """Least-squares fit of the 11 coefficients from (3D point, 2D point) pairs.

    Needs at least 6 non-coplanar world points. Returns the camera and
    the mean pixel reprojection error over the inputs.
    """
    if len(correspondences) < 6:
        raise TooFewPoints(f"need >= 6 correspondences, have {len(correspondences)}")
    world = np.asarray([c[0] for c in correspondences], dtype=np.float64)
    image = np.asarray([c[1] for c in correspondences], dtype=np.float64)
    if world.shape[1] != 3 or image.shape[1] != 2:
        raise DimMismatch("correspondences must pair 3D world points with 2D image points")

    centered = world - world.mean(axis=0)
    spread = np.linalg.svd(centered, compute_uv=False)
    if spread[2] <= 1e-8 * max(spread[0], 1.0):
        raise CoplanarPoints("world points are coplanar; the fit is degenerate")

    n = len(world)
    a = np.zeros((2 * n, 11))
    b = np.zeros(2 * n)
    for i, ((x, y, z), (u, v)) in enumerate(zip(world, image)):
        a[2 * i] = [x, y, z, 1, 0, 0, 0, 0, -u * x, -u * y, -u * z]
        b[2 * i] = u
        a[2 * i + 1] = [0, 0, 0, 0, x, y, z, 1, -v * x, -v * y, -v * z]
        b[2 * i + 1] = v
    coeffs, *_ = np.linalg.lstsq(a, b, rcond=None)
    cam = CameraProfile(name, coeffs, width, height)

    err = 0.0
    for (x, y, z), (u, v) in zip(world, image):
        pu, pv = dlt_project(cam, (x, y, z))
        err += float(np.hypot(pu - u, pv - v))
    return cam, err / n


# --- coefficient files and calibration interop ---

def load_dlt_coefficients(
    path: str | Path,
    names: Sequence[str] | None = None,
    image_sizes: Sequence[tuple[int, int]] | None = None,
) -> list[CameraProfile]:
    """Load an 11-row x n-camera coefficient CSV (column j = camera j)."""
    try:
        with open(path, "r", newline="", encoding="utf-8") as fh:
            rows = [row for row in csv.reader(fh) if row]
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if len(rows) != 11:
        raise MalformedCsv(f"{path}: expected 11 rows of coefficients, found {len(rows)}")
    widths = {len(row) for row in rows}
    if len(widths) != 1:
        raise MalformedCsv(f"{path}: ragged rows (widths {sorted(widths)})")
    n = widths.pop()
    if n < 1:
        raise MalformedCsv(f"{path}: no camera columns")
    try:
        table = np.asarray([[float(c) for c in row] for row in rows])
    except ValueError as exc:
        raise MalformedCsv(f"{path}: non-numeric cell: {exc}") from exc
    cams = []
    for j in range(n):
        cam_name = names[j] if names else f"camera_{j}"
        w, h = image_sizes[j] if image_sizes else (0, 0)
        cams.append(CameraProfile(cam_name, table[:, j], w, h))
    return cams


def save_dlt_coefficients(cams: Sequence[CameraProfile], path: str | Path) -> None:
    """Write cameras as the 11-row x n-column coefficient CSV."""
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            for i in range(11):
                writer.writerow([repr(float(cam.dlt[i])) for cam in cams])
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def synchronized_frames(annotations: AnnotationMap) -> list[int]:
    """Frame indices annotated in every camera (sorted ascending)."""
    cameras = list(annotations)
    if not cameras:
        return []
    common = set(annotations[cameras[0]])
    for cam in cameras[1:]:
        common &= set(annotations[cam])
    return sorted(common)


def export_easywand_package(
    annotations: AnnotationMap,
    out_dir: str | Path,
    camera_order: Sequence[str] | None = None,
) -> Path:
    """Write per-camera 2D point CSVs plus a manifest for wand calibration.

    Exports every frame annotated in all cameras. The manifest CSV has
    columns ``frame_index,cameras`` (camera names semicolon-joined) and
    one row per exported frame; each camera's points go to
    ``<camera>_points.csv`` with columns frame,part,u,v.
    Returns the manifest path.
    """
    cameras = list(camera_order) if camera_order is not None else sorted(annotations)
    frames = synchronized_frames({c: annotations[c] for c in cameras}) if cameras else []
    if not frames:
        raise EmptyAnnotationSet("no frame is annotated in every camera")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        for cam in cameras:
            with open(out_dir / f"{cam}_points.csv", "w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(["frame", "part", "u", "v"])
                for frame in frames:
                    for part in sorted(annotations[cam][frame]):
                        u, v = annotations[cam][frame][part]
                        writer.writerow([frame, part, repr(float(u)), repr(float(v))])
        manifest = out_dir / "manifest.csv"
        with open(manifest, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["frame_index", "cameras"])
            joined = ";".join(cameras)
            for frame in frames:
                writer.writerow([frame, joined])
    except OSError as exc:
        raise IoFailure(f"cannot write calibration package to {out_dir}: {exc}") from exc
    return manifest


def select_calibration_frames(annotations: AnnotationMap, k: int) -> list[int]:
    """Pick k diverse synchronized frames by farthest-point sampling.

    Each eligible frame (annotated in every camera) becomes a feature
    vector: all its pixel coordinates concatenated over cameras (sorted
    by name) and parts (sorted by name). The first pick is the frame
    nearest the centroid; each next pick maximizes the minimum distance
    to the picks so far. Ties break toward the lower frame index.
    Returns sorted frame indices.
    """
    frames = synchronized_frames(annotations)
    if k > len(frames):
        raise NotEnoughAnnotatedFrames(
            f"asked for {k} frames but only {len(frames)} are annotated in every camera"
        )
    if k <= 0:
        return []
    cameras = sorted(annotations)
    part_sets = None
    features = {}
    for frame in frames:
        vec: list[float] = []
        key = tuple(tuple(sorted(annotations[cam][frame])) for cam in cameras)
        if part_sets is None:
            part_sets = key
        elif key != part_sets:
            raise NotEnoughAnnotatedFrames(
                f"frame {frame} has a different annotated part set; cannot compare frames"
            )
        for cam in cameras:
            for part in sorted(annotations[cam][frame]):
                u, v = annotations[cam][frame][part]
                vec.extend((float(u), float(v)))
        features[frame] = np.asarray(vec)

    matrix = np.vstack([features[f] for f in frames])
    centroid = matrix.mean(axis=0)
    start = min(frames, key=lambda f: (float(np.linalg.norm(features[f] - centroid)), f))
    picked = [start]
    remaining = [f for f in frames if f != start]
    while len(picked) < k:
        best = max(
            remaining,
            key=lambda f: (
                min(float(np.linalg.norm(features[f] - features[p])) for p in picked),
                -f,
            ),
        )
        picked.append(best)
        remaining.remove(best)
    return sorted(picked)


# --- rigid transforms over sequences ---

def apply_rigid(t: RigidTransform, seq: PoseSequence) -> PoseSequence:
    """Map every part's coordinates through the rigid transform; scores unchanged."""
    if seq.dims != 3:
        raise DimMismatch(f"rigid transforms need a 3D sequence, got {seq.dims}D")
    flat = seq.coords.reshape(-1, 3)
    moved = t.apply(flat).reshape(seq.coords.shape)
    return seq.with_arrays(coords=moved)


def align_axes(origin, x_axis_point, xy_plane_point) -> RigidTransform:
    """Transform placing ``origin`` at (0,0,0), ``x_axis_point`` on +X, and
    ``xy_plane_point`` in the z=0 plane with positive y. Right-handed."""
    o = np.asarray(origin, dtype=np.float64)
    px = np.asarray(x_axis_point, dtype=np.float64)
    pxy = np.asarray(xy_plane_point, dtype=np.float64)
    e1 = px - o
    n1 = np.linalg.norm(e1)
    if n1 < 1e-12:
        raise CollinearPoints("origin and x_axis_point coincide")
    e1 = e1 / n1
    v = pxy - o
    v_perp = v - (v @ e1) * e1
    n2 = np.linalg.norm(v_perp)
    if n2 < 1e-12:
        raise CollinearPoints("the three reference points are collinear")
    e2 = v_perp / n2
    e3 = np.cross(e1, e2)
    r = np.vstack([e1, e2, e3])
    return RigidTransform(r, -r @ o)


# --- synthetic camera construction ---

def pinhole_projection_matrix(
    focal_px: float,
    principal: tuple[float, float],
    rotation: np.ndarray,
    camera_center: np.ndarray,
) -> np.ndarray:
    """3x4 projection matrix K [R | -R C] for a simple pinhole camera."""
    k = np.array(
        [[focal_px, 0.0, principal[0]], [0.0, focal_px, principal[1]], [0.0, 0.0, 1.0]]
    )
    rotation = np.asarray(rotation, dtype=np.float64)
    camera_center = np.asarray(camera_center, dtype=np.float64)
    rt = np.hstack([rotation, (-rotation @ camera_center).reshape(3, 1)])
    return k @ rt


def dlt_from_projection_matrix(p: np.ndarray, name: str, width: int = 0, height: int = 0) -> CameraProfile:
    """Convert a 3x4 projection matrix to the 11-coefficient camera model."""
    p = np.asarray(p, dtype=np.float64)
    if p.shape != (3, 4):
        raise DimMismatch(f"projection matrix must be 3x4, got {p.shape}")
    if abs(p[2, 3]) < 1e-12:
        raise DegenerateDenominator("projection matrix has zero scale entry P[2,3]")
    scaled = p / p[2, 3]
    coeffs = np.concatenate([scaled[0], scaled[1], scaled[2, :3]])
    return CameraProfile(name, coeffs, width, height)


def look_at_rotation(camera_center, target, up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """World-to-camera rotation for a camera at ``camera_center`` looking at ``target``."""
    c = np.asarray(camera_center, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    forward = t - c
    n = np.linalg.norm(forward)
    if n < 1e-12:
        raise CollinearPoints("camera center and target coincide")
    forward /= n
    up = np.asarray(up, dtype=np.float64)
    right = np.cross(forward, up)
    rn = np.linalg.norm(right)
    if rn < 1e-12:
        up = np.array([0.0, 1.0, 0.0])
        right = np.cross(forward, up)
        rn = np.linalg.norm(right)
    right /= rn
    down = np.cross(forward, right)
    return np.vstack([right, down, forward])


def synthetic_dlt_camera(
    name: str,
    camera_center,
    target=(0.0, 0.0, 0.0),
    focal_px: float = 1200.0,
    width: int = 1024,
    height: int = 1024,
) -> CameraProfile:
    """Convenience builder: pinhole camera at ``camera_center`` aimed at ``target``."""
    r = look_at_rotation(camera_center, target)
    p = pinhole_projection_matrix(focal_px, (width / 2, height / 2), r, np.asarray(camera_center))
    return dlt_from_projection_matrix(p, name, width, height)
