"""Spatial behavior generators: gaze rays, occupancy, rearing, boundary cells.

All map-producing operations return AnalysisGrid, a 2D histogram with
explicit bin edges in world units. Accumulation happens in fixed frame order
so results are reproducible bit-for-bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import (
    BadBins,
    CoincidentParts,
    DegenerateArena,
    InvalidParts,
    MalformedCsv,
    NoWalls,
    Not3D,
    SpikeOutOfRange,
)
from .pose import DEFAULT_SCORE_THRESHOLD, PoseSequence, Skeleton

GRID_UNITS = ("seconds", "score", "events", "hz")
DEFAULT_ANGLE_BINS = 120
DEFAULT_MIN_OCCUPANCY_S = 0.2
EBC_DIST_BIN_MM = 12.5

_PARALLEL_EPS = 1e-12
_MIN_RAY_T = 1e-9


def _fmt(x) -> str:
    return repr(float(x))


def _frozen_array(obj, name, value, dtype=np.float64):
    arr = np.array(value, dtype=dtype)
    arr.flags.writeable = False
    object.__setattr__(obj, name, arr)
    return arr


@dataclass(frozen=True)
class Wall:
    """A bounded rectangle in 3D: origin plus two orthogonal unit axes."""

    name: str
    origin: np.ndarray
    u_axis: np.ndarray
    v_axis: np.ndarray
    width: float
    height: float
    grid: Tuple[int, int] = (32, 32)

    def __post_init__(self):
        origin = _frozen_array(self, "origin", self.origin)
        u = _frozen_array(self, "u_axis", self.u_axis)
        v = _frozen_array(self, "v_axis", self.v_axis)
        if origin.shape != (3,) or u.shape != (3,) or v.shape != (3,):
            raise ValueError("wall vectors must be 3D")
        if abs(np.linalg.norm(u) - 1.0) > 1e-9 or abs(np.linalg.norm(v) - 1.0) > 1e-9:
            raise ValueError("wall axes must be unit vectors")
        if abs(float(np.dot(u, v))) > 1e-9:
            raise ValueError("wall axes must be orthogonal")
        if not (self.width > 0 and self.height > 0):
            raise ValueError("wall extent must be positive")
        nu, nv = self.grid
        if nu < 1 or nv < 1:
            raise BadBins("wall grid must have at least one bin per axis")

    @property
    def normal(self) -> np.ndarray:
        return np.cross(self.u_axis, self.v_axis)


@dataclass(frozen=True)
class WallHit:
    u: float
    v: float
    t: float


@dataclass(frozen=True)
class AnalysisGrid:
    """2D histogram: values[i, j] covers x bin i and y bin j.

    mask, when present, is True for bins excluded from interpretation
    (for example rate bins with too little occupancy).
    """

    x_edges: np.ndarray
    y_edges: np.ndarray
    values: np.ndarray
    units: str
    metadata: Dict[str, str] = field(default_factory=dict)
    mask: Optional[np.ndarray] = None

    def __post_init__(self):
        xe = _frozen_array(self, "x_edges", self.x_edges)
        ye = _frozen_array(self, "y_edges", self.y_edges)
        vals = _frozen_array(self, "values", self.values)
        if xe.ndim != 1 or len(xe) < 2 or ye.ndim != 1 or len(ye) < 2:
            raise ValueError("need at least one bin per axis")
        if np.any(np.diff(xe) <= 0) or np.any(np.diff(ye) <= 0):
            raise ValueError("bin edges must be strictly increasing")
        if vals.shape != (len(xe) - 1, len(ye) - 1):
            raise ValueError("values shape %s does not match edges" % (vals.shape,))
        if np.any(vals < 0):
            raise ValueError("bin values must be nonnegative")
        if self.units not in GRID_UNITS:
            raise ValueError("units must be one of %s" % (GRID_UNITS,))
        if self.mask is not None:
            m = _frozen_array(self, "mask", self.mask, dtype=bool)
            if m.shape != vals.shape:
                raise ValueError("mask shape does not match values")

    @property
    def x_centers(self) -> np.ndarray:
        return (self.x_edges[:-1] + self.x_edges[1:]) / 2.0

    @property
    def y_centers(self) -> np.ndarray:
        return (self.y_edges[:-1] + self.y_edges[1:]) / 2.0


@dataclass(frozen=True)
class SpikeTrain:
    cell_id: str
    times: np.ndarray

    def __post_init__(self):
        t = _frozen_array(self, "times", self.times)
        if t.ndim != 1:
            raise ValueError("spike times must be a flat list")
        if len(t) and (np.any(np.diff(t) < 0) or t[0] < 0):
            raise ValueError("spike times must be nondecreasing and nonnegative")


def load_spike_train(path, cell_id: Optional[str] = None) -> SpikeTrain:
    """Single-column CSV of spike times in seconds."""
    p = Path(path)
    times = []
    for lineno, raw in enumerate(p.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        try:
            times.append(float(line))
        except ValueError:
            raise MalformedCsv("%s line %d: not a number: %r" % (p.name, lineno, line))
    return SpikeTrain(cell_id or p.stem, np.array(sorted(times)))


# --- grid serialization ---

def save_grid(grid: AnalysisGrid, path) -> None:
    lines = ["units,%s" % grid.units]
    lines.append("x_edges," + ",".join(_fmt(e) for e in grid.x_edges))
    lines.append("y_edges," + ",".join(_fmt(e) for e in grid.y_edges))
    for key in sorted(grid.metadata):
        lines.append("meta,%s,%s" % (key, grid.metadata[key]))
    for i in range(grid.values.shape[0]):
        lines.append("row,%d," % i + ",".join(_fmt(v) for v in grid.values[i]))
    if grid.mask is not None:
        for i in range(grid.mask.shape[0]):
            lines.append("mask,%d," % i + ",".join("1" if m else "0" for m in grid.mask[i]))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_grid(path) -> AnalysisGrid:
    units = None
    x_edges = y_edges = None
    metadata: Dict[str, str] = {}
    rows: Dict[int, List[float]] = {}
    mask_rows: Dict[int, List[bool]] = {}
    p = Path(path)
    for lineno, raw in enumerate(p.read_text().splitlines(), start=1):
        if not raw.strip():
            continue
        cells = raw.split(",")
        tag = cells[0]
        if tag == "units":
            units = cells[1]
        elif tag == "x_edges":
            x_edges = [float(c) for c in cells[1:]]
        elif tag == "y_edges":
            y_edges = [float(c) for c in cells[1:]]
        elif tag == "meta":
            metadata[cells[1]] = ",".join(cells[2:])
        elif tag == "row":
            rows[int(cells[1])] = [float(c) for c in cells[2:]]
        elif tag == "mask":
            mask_rows[int(cells[1])] = [c == "1" for c in cells[2:]]
        else:
            raise MalformedCsv("%s line %d: unknown tag %r" % (p.name, lineno, tag))
    if units is None or x_edges is None or y_edges is None or not rows:
        raise MalformedCsv("%s: missing units, edges, or value rows" % p.name)
    values = np.array([rows[i] for i in range(len(rows))])
    mask = None
    if mask_rows:
        mask = np.array([mask_rows[i] for i in range(len(mask_rows))], dtype=bool)
    return AnalysisGrid(np.array(x_edges), np.array(y_edges), values, units,
                        metadata, mask)


# --- wall files ---

_WALL_HEADER = "name,ox,oy,oz,ux,uy,uz,vx,vy,vz,width,height,nu,nv"


def save_walls(walls: Sequence[Wall], path) -> None:
    lines = [_WALL_HEADER]
    for w in walls:
        cells = [w.name]
        cells += [_fmt(c) for c in w.origin]
        cells += [_fmt(c) for c in w.u_axis]
        cells += [_fmt(c) for c in w.v_axis]
        cells += [_fmt(w.width), _fmt(w.height), str(w.grid[0]), str(w.grid[1])]
        lines.append(",".join(cells))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_walls(path) -> List[Wall]:
    p = Path(path)
    lines = [l for l in p.read_text().splitlines() if l.strip()]
    if not lines or lines[0] != _WALL_HEADER:
        raise MalformedCsv("%s: expected header %r" % (p.name, _WALL_HEADER))
    walls = []
    for lineno, line in enumerate(lines[1:], start=2):
        cells = line.split(",")
        if len(cells) != 14:
            raise MalformedCsv("%s line %d: expected 14 cells" % (p.name, lineno))
        walls.append(Wall(
            name=cells[0],
            origin=[float(c) for c in cells[1:4]],
            u_axis=[float(c) for c in cells[4:7]],
            v_axis=[float(c) for c in cells[7:10]],
            width=float(cells[10]),
            height=float(cells[11]),
            grid=(int(cells[12]), int(cells[13])),
        ))
    return walls


# --- view direction and ray tracing ---

def view_direction(skel: Skeleton, base: str, tip: str,
                   score_threshold: float = DEFAULT_SCORE_THRESHOLD):
    """Gaze ray for one skeleton: origin at the tip part, direction base->tip."""
    for name in (base, tip):
        if name not in skel.parts:
            raise InvalidParts("no part named %r" % name)
    pb = skel.parts[base]
    pt = skel.parts[tip]
    if not (pb.is_valid(score_threshold) and pt.is_valid(score_threshold)):
        raise InvalidParts("base or tip below score threshold")
    delta = pt.coords - pb.coords
    norm = float(np.linalg.norm(delta))
    if norm < 1e-12:
        raise CoincidentParts("base and tip coincide")
    return pt.coords.copy(), delta / norm


def ray_wall_intersect(origin, direction, wall: Wall) -> Optional[WallHit]:
    """In-bounds wall intersection for a forward ray, or None."""
    origin = np.asarray(origin, dtype=float)
    direction = np.asarray(direction, dtype=float)
    n = wall.normal
    denom = float(np.dot(direction, n))
    if abs(denom) < _PARALLEL_EPS:
        return None
    t = float(np.dot(wall.origin - origin, n)) / denom
    if t <= _MIN_RAY_T:
        return None
    hit = origin + t * direction
    rel = hit - wall.origin
    u = float(np.dot(rel, wall.u_axis))
    v = float(np.dot(rel, wall.v_axis))
    if 0.0 <= u <= wall.width and 0.0 <= v <= wall.height:
        return WallHit(u, v, t)
    return None


def gaze_heatmap(seq: PoseSequence, base: str, tip: str,
                 walls: Sequence[Wall], sigma: float) -> Dict[str, AnalysisGrid]:
    """Accumulated Gaussian attention splats on the nearest wall hit per frame."""
    if not walls:
        raise NoWalls("at least one wall required")
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    names = [w.name for w in walls]
    if len(set(names)) != len(names):
        raise ValueError("wall names must be unique")

    acc = {}
    hits_per_wall = {}
    for w in walls:
        acc[w.name] = np.zeros(w.grid)
        hits_per_wall[w.name] = 0
    skipped = 0
    radius2 = (3.0 * sigma) ** 2

    for skel in seq:
        try:
            origin, direction = view_direction(skel, base, tip, seq.score_threshold)
        except (InvalidParts, CoincidentParts):
            skipped += 1
            continue
        best = None
        best_wall = None
        for w in walls:
            hit = ray_wall_intersect(origin, direction, w)
            if hit is not None and (best is None or hit.t < best.t):
                best = hit
                best_wall = w
        if best is None:
            continue
        nu, nv = best_wall.grid
        cu = (np.arange(nu) + 0.5) * (best_wall.width / nu)
        cv = (np.arange(nv) + 0.5) * (best_wall.height / nv)
        d2 = (cu - best.u)[:, None] ** 2 + (cv - best.v)[None, :] ** 2
        splat = np.where(d2 <= radius2, np.exp(-d2 / (2.0 * sigma * sigma)), 0.0)
        acc[best_wall.name] += splat
        hits_per_wall[best_wall.name] += 1

    out = {}
    for w in walls:
        meta = {
            "sigma": _fmt(sigma),
            "frames_hit": str(hits_per_wall[w.name]),
            "frames_skipped": str(skipped),
        }
        out[w.name] = AnalysisGrid(
            np.linspace(0.0, w.width, w.grid[0] + 1),
            np.linspace(0.0, w.height, w.grid[1] + 1),
            acc[w.name], "score", meta)
    return out


# --- arena maps ---

def _check_arena(arena) -> Tuple[float, float, float, float]:
    xmin, xmax, ymin, ymax = (float(a) for a in arena)
    if not (xmin < xmax and ymin < ymax):
        raise DegenerateArena("arena bounds must satisfy min < max per axis")
    return xmin, xmax, ymin, ymax


def occupancy_map(seq: PoseSequence, anchor: str, arena,
                  grid: Tuple[int, int] = (32, 32)) -> AnalysisGrid:
    """Seconds spent per arena bin by the anchor part.

    arena is (xmin, xmax, ymin, ymax) in mm; valid frames falling outside
    are dropped and counted in the metadata.
    """
    xmin, xmax, ymin, ymax = _check_arena(arena)
    nx, ny = grid
    if nx < 1 or ny < 1:
        raise BadBins("grid must have at least one bin per axis")
    x_edges = np.linspace(xmin, xmax, nx + 1)
    y_edges = np.linspace(ymin, ymax, ny + 1)

    valid = seq.valid_mask(anchor)
    pts = seq.part_coords(anchor)[valid][:, :2]
    inside = ((pts[:, 0] >= xmin) & (pts[:, 0] <= xmax)
              & (pts[:, 1] >= ymin) & (pts[:, 1] <= ymax))
    dropped = int(np.count_nonzero(~inside))
    pts = pts[inside]
    counts, _, _ = np.histogram2d(pts[:, 0], pts[:, 1], bins=[x_edges, y_edges])
    meta = {
        "in_bounds_frames": str(len(pts)),
        "dropped_frames": str(dropped),
        "fps": _fmt(seq.fps),
    }
    return AnalysisGrid(x_edges, y_edges, counts / seq.fps, "seconds", meta)


@dataclass(frozen=True)
class RearingEvent:
    start_frame: int
    end_frame: int          # inclusive
    location: np.ndarray    # mean (x, y) over the run

    def __post_init__(self):
        _frozen_array(self, "location", self.location)


def detect_rearing(seq: PoseSequence, anchor: str, z_min: float, min_frames: int,
                   arena=None, grid: Tuple[int, int] = (16, 16)):
    """Maximal runs of consecutive valid frames with anchor z >= z_min.

    Returns (events, AnalysisGrid of event locations). With no arena given
    the histogram bounds come from the event locations themselves.
    """
    if seq.dims != 3:
        raise Not3D("rearing detection needs 3D data")
    if min_frames < 1:
        raise ValueError("min_frames must be >= 1")
    high = seq.valid_mask(anchor) & (seq.part_coords(anchor)[:, 2] >= z_min)

    events: List[RearingEvent] = []
    coords = seq.part_coords(anchor)
    i = 0
    n = len(seq)
    while i < n:
        if not high[i]:
            i += 1
            continue
        j = i
        while j + 1 < n and high[j + 1]:
            j += 1
        if j - i + 1 >= min_frames:
            loc = coords[i:j + 1, :2].mean(axis=0)
            events.append(RearingEvent(int(seq.frame_indices[i]),
                                       int(seq.frame_indices[j]), loc))
        i = j + 1

    if arena is not None:
        xmin, xmax, ymin, ymax = _check_arena(arena)
    elif events:
        locs = np.array([e.location for e in events])
        xmin, xmax = locs[:, 0].min() - 1.0, locs[:, 0].max() + 1.0
        ymin, ymax = locs[:, 1].min() - 1.0, locs[:, 1].max() + 1.0
    else:
        xmin, xmax, ymin, ymax = 0.0, 1.0, 0.0, 1.0
    nx, ny = grid
    if nx < 1 or ny < 1:
        raise BadBins("grid must have at least one bin per axis")
    x_edges = np.linspace(xmin, xmax, nx + 1)
    y_edges = np.linspace(ymin, ymax, ny + 1)
    if events:
        locs = np.array([e.location for e in events])
        counts, _, _ = np.histogram2d(locs[:, 0], locs[:, 1], bins=[x_edges, y_edges])
    else:
        counts = np.zeros((nx, ny))
    meta = {"events": str(len(events)), "z_min": _fmt(z_min),
            "min_frames": str(min_frames)}
    return events, AnalysisGrid(x_edges, y_edges, counts, "events", meta)


# --- egocentric boundary cells ---

def _heading_rad(seq: PoseSequence, base: str, tip: str) -> np.ndarray:
    """Per-frame XY head direction in radians; NaN where undefined."""
    valid = seq.valid_mask(base) & seq.valid_mask(tip)
    delta = seq.part_coords(tip)[:, :2] - seq.part_coords(base)[:, :2]
    ok = valid & (np.linalg.norm(delta, axis=1) > 0)
    heading = np.full(len(seq), np.nan)
    heading[ok] = np.arctan2(delta[ok, 1], delta[ok, 0])
    return heading


def _spikes_per_frame(spikes: SpikeTrain, n_frames: int, fps: float) -> np.ndarray:
    counts = np.zeros(n_frames, dtype=int)
    duration = n_frames / fps
    for t in spikes.times:
        if t < 0 or t > duration:
            raise SpikeOutOfRange("spike at %gs outside recording of %gs" % (t, duration))
        counts[min(int(math.floor(t * fps)), n_frames - 1)] += 1
    return counts


def _boundary_distance(x, y, angles, arena) -> np.ndarray:
    """Distance along each world angle from (x, y) to the arena rectangle."""
    xmin, xmax, ymin, ymax = arena
    dx = np.cos(angles)
    dy = np.sin(angles)
    with np.errstate(divide="ignore"):
        tx = np.where(dx > 0, (xmax - x) / dx,
                      np.where(dx < 0, (xmin - x) / dx, np.inf))
        ty = np.where(dy > 0, (ymax - y) / dy,
                      np.where(dy < 0, (ymin - y) / dy, np.inf))
    return np.minimum(tx, ty)


@dataclass(frozen=True)
class EbcResult:
    rate: AnalysisGrid            # angle (deg) x distance (mm), hz
    occupancy_s: np.ndarray
    spike_counts: np.ndarray
    dropped_frames: int
    dropped_spikes: int


def ebc_rate_map(seq: PoseSequence, anchor: str, base: str, tip: str,
                 spikes: SpikeTrain, arena, max_dist: float,
                 dist_bins: Optional[int] = None,
                 angle_bins: int = DEFAULT_ANGLE_BINS,
                 min_occupancy_s: float = DEFAULT_MIN_OCCUPANCY_S) -> EbcResult:
    """Firing rate by egocentric boundary direction and distance.

    Per frame, one ray per angle bin (angle relative to the XY head
    direction) is cast to the arena rectangle; occupancy time and that
    frame's spikes accumulate in the (angle, distance) bin when the boundary
    lies within max_dist. Bins under min_occupancy_s are masked.
    """
    if seq.dims < 2:
        raise Not3D("need at least 2D data")
    arena = _check_arena(arena)
    if max_dist <= 0:
        raise ValueError("max_dist must be > 0")
    if dist_bins is None:
        dist_bins = max(1, int(round(max_dist / EBC_DIST_BIN_MM)))
    if dist_bins < 1 or angle_bins < 1:
        raise BadBins("need at least one angle and one distance bin")

    heading = _heading_rad(seq, base, tip)
    anchor_ok = seq.valid_mask(anchor)
    pos = seq.part_coords(anchor)[:, :2]
    spike_counts_frame = _spikes_per_frame(spikes, len(seq), seq.fps)

    ego = (np.arange(angle_bins) + 0.5) * (2.0 * np.pi / angle_bins) - np.pi
    occ_counts = np.zeros((angle_bins, dist_bins), dtype=int)
    spike_counts = np.zeros((angle_bins, dist_bins), dtype=int)
    dropped_frames = 0
    dropped_spikes = 0
    xmin, xmax, ymin, ymax = arena

    for i in range(len(seq)):
        usable = (anchor_ok[i] and not math.isnan(heading[i])
                  and xmin <= pos[i, 0] <= xmax and ymin <= pos[i, 1] <= ymax)
        if not usable:
            dropped_frames += 1
            dropped_spikes += int(spike_counts_frame[i])
            continue
        dist = _boundary_distance(pos[i, 0], pos[i, 1], heading[i] + ego, arena)
        within = dist <= max_dist
        dbin = np.minimum((dist[within] / max_dist * dist_bins).astype(int),
                          dist_bins - 1)
        abin = np.nonzero(within)[0]
        occ_counts[abin, dbin] += 1
        spike_counts[abin, dbin] += int(spike_counts_frame[i])

    occupancy_s = occ_counts / seq.fps
    # zero-occupancy bins stay masked even with min_occupancy_s = 0
    masked = (occupancy_s < min_occupancy_s) | (occ_counts == 0)
    rate = np.where(masked, 0.0, spike_counts / np.where(masked, 1.0, occupancy_s))
    angle_edges = np.linspace(-180.0, 180.0, angle_bins + 1)
    dist_edges = np.linspace(0.0, max_dist, dist_bins + 1)
    meta = {
        "min_occupancy_s": _fmt(min_occupancy_s),
        "dropped_frames": str(dropped_frames),
        "dropped_spikes": str(dropped_spikes),
        "total_spikes": str(len(spikes.times)),
    }
    grid = AnalysisGrid(angle_edges, dist_edges, rate, "hz", meta, masked)
    return EbcResult(grid, occupancy_s, spike_counts, dropped_frames, dropped_spikes)


@dataclass(frozen=True)
class SpikeLocations:
    rows: np.ndarray        # (k, 3): x, y, head direction degrees
    trajectory: np.ndarray  # (m, 2): ordered valid anchor positions
    dropped_spikes: int

    def __post_init__(self):
        _frozen_array(self, "rows", self.rows)
        _frozen_array(self, "trajectory", self.trajectory)


def spike_location_data(seq: PoseSequence, anchor: str, base: str, tip: str,
                        spikes: SpikeTrain) -> SpikeLocations:
    """One (x, y, heading deg) row per spike on a usable frame, plus the
    full valid-anchor trajectory."""
    heading = _heading_rad(seq, base, tip)
    anchor_ok = seq.valid_mask(anchor)
    pos = seq.part_coords(anchor)[:, :2]
    per_frame = _spikes_per_frame(spikes, len(seq), seq.fps)

    rows = []
    dropped = 0
    for i in range(len(seq)):
        k = int(per_frame[i])
        if k == 0:
            continue
        if anchor_ok[i] and not math.isnan(heading[i]):
            deg = math.degrees(heading[i])
            rows.extend([pos[i, 0], pos[i, 1], deg] for _ in range(k))
        else:
            dropped += k
    trajectory = pos[anchor_ok]
    rows_arr = np.array(rows) if rows else np.zeros((0, 3))
    return SpikeLocations(rows_arr, trajectory, dropped)
