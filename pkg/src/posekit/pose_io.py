"""Reading, writing, and translating pose files.

Three formats are supported:

* ``cvkit`` — n-dimensional CSV. Line 1 is the metadata line
  ``cvkit,v1,dims=D,fps=F,threshold=T``; line 2 is the column header
  ``frame,<part>_c0..<part>_c(D-1),<part>_score,...,behavior``; one data
  row per frame. Behaviors are semicolon-joined in the last column.
* ``flat_csv`` — single header row
  ``frame,<part>_x,<part>_y[,<part>_z],<part>_score,...,behavior``.
  Carries no fps/threshold metadata; the reader accepts them as
  parameters (defaults 30.0 and 0.6).
* ``dlc_csv`` — read-only. Three header rows (scorer, bodyparts,
  coords with x/y/likelihood triples); column 0 is the frame index.

Missing or NaN cells turn the whole part invalid for that frame
(score 0, coordinates zeroed).
"""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

from .errors import (
    InconsistentDims,
    IoFailure,
    MalformedHeader,
    UnknownFormat,
    UnwritableFormat,
)
from .pose import DEFAULT_SCORE_THRESHOLD, PoseSequence

FORMATS = ("cvkit", "flat_csv", "dlc_csv")
WRITABLE_FORMATS = ("cvkit", "flat_csv")

_FLAT_AXES = ("x", "y", "z")


def _fmt(x: float) -> str:
    # repr() is the shortest exact representation; round trips bit-for-bit.
    return repr(float(x))


def _cell_to_float(cell: str) -> float:
    cell = cell.strip()
    if not cell:
        return math.nan
    try:
        return float(cell)
    except ValueError:
        return math.nan


def _read_rows(path: str | Path) -> list[list[str]]:
    try:
        with open(path, "r", newline="", encoding="utf-8") as fh:
            return [row for row in csv.reader(fh)]
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc


def read_pose_file(
    path: str | Path,
    format: str,
    fps: float | None = None,
    score_threshold: float | None = None,
) -> PoseSequence:
    """Parse ``path`` under the named format into a PoseSequence.

    ``fps`` and ``score_threshold`` apply only to formats without their
    own metadata line (flat_csv, dlc_csv).
    """
    if format == "cvkit":
        return _read_cvkit(path)
    if format == "flat_csv":
        return _read_flat_csv(path, fps, score_threshold)
    if format == "dlc_csv":
        return _read_dlc_csv(path, fps, score_threshold)
    raise UnknownFormat(f"unknown pose file format {format!r}")


def write_pose_file(seq: PoseSequence, path: str | Path, format: str) -> None:
    """Write ``seq`` to ``path``; re-reading yields an equal sequence."""
    if format == "cvkit":
        _write_cvkit(seq, path)
    elif format == "flat_csv":
        _write_flat_csv(seq, path)
    elif format == "dlc_csv":
        raise UnwritableFormat("dlc_csv is read-only")
    elif format in FORMATS:  # pragma: no cover - future formats
        raise UnwritableFormat(f"format {format!r} is not writable")
    else:
        raise UnknownFormat(f"unknown pose file format {format!r}")


def translate_pose_file(
    src: str | Path,
    src_format: str,
    dst: str | Path,
    dst_format: str,
    fps: float | None = None,
    score_threshold: float | None = None,
) -> None:
    """Read ``src`` and write it as ``dst_format`` to ``dst``."""
    seq = read_pose_file(src, src_format, fps=fps, score_threshold=score_threshold)
    write_pose_file(seq, dst, dst_format)


# --- cvkit ---

def _write_cvkit(seq: PoseSequence, path: str | Path) -> None:
    d = seq.dims
    header = ["frame"]
    for name in seq.part_order:
        header.extend(f"{name}_c{a}" for a in range(d))
        header.append(f"{name}_score")
    header.append("behavior")
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(
                ["cvkit", "v1", f"dims={d}", f"fps={_fmt(seq.fps)}", f"threshold={_fmt(seq.score_threshold)}"]
            )
            writer.writerow(header)
            for i in range(len(seq)):
                row = [str(int(seq.frame_indices[i]))]
                for j in range(len(seq.part_order)):
                    row.extend(_fmt(c) for c in seq.coords[i, j])
                    row.append(_fmt(seq.scores[i, j]))
                row.append(";".join(sorted(seq.behaviors[i])))
                writer.writerow(row)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def _parse_cvkit_meta(row: list[str]) -> tuple[int, float, float]:
    if len(row) < 2 or row[0] != "cvkit" or row[1] != "v1":
        raise MalformedHeader("line 1 must start with 'cvkit,v1'")
    meta: dict[str, str] = {}
    for item in row[2:]:
        if "=" not in item:
            raise MalformedHeader(f"metadata field {item!r} is not key=value")
        key, value = item.split("=", 1)
        meta[key] = value
    try:
        dims = int(meta["dims"])
        fps = float(meta["fps"])
        threshold = float(meta["threshold"])
    except (KeyError, ValueError) as exc:
        raise MalformedHeader(f"metadata line missing or malformed field: {exc}") from exc
    return dims, fps, threshold


def _read_cvkit(path: str | Path) -> PoseSequence:
    rows = _read_rows(path)
    if len(rows) < 2:
        raise MalformedHeader(f"{path}: cvkit file needs a metadata line and a header line")
    dims, fps, threshold = _parse_cvkit_meta(rows[0])
    header = rows[1]
    if not header or header[0] != "frame":
        raise MalformedHeader(f"column 0 must be 'frame', got {header[0] if header else '<empty>'!r}")
    if header[-1] != "behavior":
        raise MalformedHeader(f"last column must be 'behavior', got {header[-1]!r}")
    body = header[1:-1]
    if len(body) % (dims + 1) != 0:
        raise MalformedHeader(f"header has {len(body)} part columns, not a multiple of dims+1={dims + 1}")
    part_order = []
    for g in range(len(body) // (dims + 1)):
        cols = body[g * (dims + 1): (g + 1) * (dims + 1)]
        first = cols[0]
        if not first.endswith("_c0"):
            raise MalformedHeader(f"expected a *_c0 column, got {first!r}")
        name = first[: -len("_c0")]
        expect = [f"{name}_c{a}" for a in range(dims)] + [f"{name}_score"]
        for col, want in zip(cols, expect):
            if col != want:
                raise MalformedHeader(f"expected column {want!r}, got {col!r}")
        part_order.append(name)
    if not part_order:
        raise MalformedHeader("header names no parts")
    return _parse_data_rows(rows[2:], part_order, dims, fps, threshold, first_line=3, path=path)


# --- flat_csv ---

def _write_flat_csv(seq: PoseSequence, path: str | Path) -> None:
    d = seq.dims
    if d > len(_FLAT_AXES):
        raise UnwritableFormat(f"flat_csv supports at most {len(_FLAT_AXES)} dims, sequence has {d}")
    header = ["frame"]
    for name in seq.part_order:
        header.extend(f"{name}_{_FLAT_AXES[a]}" for a in range(d))
        header.append(f"{name}_score")
    header.append("behavior")
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for i in range(len(seq)):
                row = [str(int(seq.frame_indices[i]))]
                for j in range(len(seq.part_order)):
                    row.extend(_fmt(c) for c in seq.coords[i, j])
                    row.append(_fmt(seq.scores[i, j]))
                row.append(";".join(sorted(seq.behaviors[i])))
                writer.writerow(row)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def _read_flat_csv(path: str | Path, fps: float | None, threshold: float | None) -> PoseSequence:
    rows = _read_rows(path)
    if not rows:
        raise MalformedHeader(f"{path}: empty file")
    header = rows[0]
    if not header or header[0] != "frame":
        raise MalformedHeader(f"column 0 must be 'frame', got {header[0] if header else '<empty>'!r}")
    if header[-1] != "behavior":
        raise MalformedHeader(f"last column must be 'behavior', got {header[-1]!r}")
    body = header[1:-1]
    if not body:
        raise MalformedHeader("header names no parts")

    # Infer dims from the first part group: x,y[,z],score.
    first = body[0]
    if not first.endswith("_x"):
        raise MalformedHeader(f"expected a *_x column first, got {first!r}")
    dims = None
    for d in (3, 2):
        if len(body) >= d + 1 and body[d] == f"{first[:-2]}_score" and all(
            body[a] == f"{first[:-2]}_{_FLAT_AXES[a]}" for a in range(d)
        ):
            dims = d
            break
    if dims is None:
        raise MalformedHeader(f"columns after {first!r} do not follow x,y[,z],score")
    if len(body) % (dims + 1) != 0:
        raise MalformedHeader(f"header has {len(body)} part columns, not a multiple of {dims + 1}")
    part_order = []
    for g in range(len(body) // (dims + 1)):
        cols = body[g * (dims + 1): (g + 1) * (dims + 1)]
        if not cols[0].endswith("_x"):
            raise MalformedHeader(f"expected a *_x column, got {cols[0]!r}")
        name = cols[0][:-2]
        expect = [f"{name}_{_FLAT_AXES[a]}" for a in range(dims)] + [f"{name}_score"]
        for col, want in zip(cols, expect):
            if col != want:
                raise MalformedHeader(f"expected column {want!r}, got {col!r}")
        part_order.append(name)
    fps = 30.0 if fps is None else fps
    threshold = DEFAULT_SCORE_THRESHOLD if threshold is None else threshold
    return _parse_data_rows(rows[1:], part_order, dims, fps, threshold, first_line=2, path=path)


# --- DeepLabCut-style CSV ---

def _read_dlc_csv(path: str | Path, fps: float | None, threshold: float | None) -> PoseSequence:
    rows = _read_rows(path)
    if len(rows) < 3:
        raise MalformedHeader(f"{path}: dlc_csv needs scorer/bodyparts/coords header rows")
    scorer_row, bodyparts_row, coords_row = rows[0], rows[1], rows[2]
    if not scorer_row or scorer_row[0] != "scorer":
        raise MalformedHeader("row 1 must start with 'scorer'")
    if not bodyparts_row or bodyparts_row[0] != "bodyparts":
        raise MalformedHeader("row 2 must start with 'bodyparts'")
    if not coords_row or coords_row[0] != "coords":
        raise MalformedHeader("row 3 must start with 'coords'")
    n_cols = len(bodyparts_row) - 1
    if n_cols < 3 or n_cols % 3 != 0:
        raise MalformedHeader(f"bodyparts row has {n_cols} data columns, expected a multiple of 3")
    if len(coords_row) != len(bodyparts_row):
        raise MalformedHeader("coords row width differs from bodyparts row")
    part_order: list[str] = []
    for g in range(n_cols // 3):
        names = bodyparts_row[1 + 3 * g: 4 + 3 * g]
        axes = coords_row[1 + 3 * g: 4 + 3 * g]
        if len(set(names)) != 1:
            raise MalformedHeader(f"columns {1 + 3 * g}..{3 + 3 * g} name different bodyparts {names}")
        if axes != ["x", "y", "likelihood"]:
            raise MalformedHeader(f"bodypart {names[0]!r}: coords columns are {axes}, expected x,y,likelihood")
        if names[0] in part_order:
            raise MalformedHeader(f"duplicate bodypart {names[0]!r}")
        part_order.append(names[0])

    fps = 30.0 if fps is None else fps
    threshold = DEFAULT_SCORE_THRESHOLD if threshold is None else threshold
    n = len(rows) - 3
    coords = np.zeros((n, len(part_order), 2))
    scores = np.zeros((n, len(part_order)))
    frame_indices = np.zeros(n, dtype=np.int64)
    for i, row in enumerate(rows[3:]):
        line_no = i + 4
        if len(row) != len(bodyparts_row):
            raise InconsistentDims(f"{path}: line {line_no} has {len(row)} cells, expected {len(bodyparts_row)}")
        try:
            frame_indices[i] = int(float(row[0]))
        except ValueError as exc:
            raise InconsistentDims(f"{path}: line {line_no}: bad frame index {row[0]!r}") from exc
        for j in range(len(part_order)):
            x = _cell_to_float(row[1 + 3 * j])
            y = _cell_to_float(row[2 + 3 * j])
            s = _cell_to_float(row[3 + 3 * j])
            if math.isnan(x) or math.isnan(y) or math.isnan(s):
                coords[i, j] = 0.0
                scores[i, j] = 0.0
            else:
                coords[i, j] = (x, y)
                scores[i, j] = min(max(s, 0.0), 1.0)
    return PoseSequence.from_arrays(
        part_order, coords, scores, fps=fps, score_threshold=threshold, frame_indices=frame_indices
    )


# --- shared data-row parsing for cvkit and flat_csv ---

def _parse_data_rows(
    data_rows: list[list[str]],
    part_order: list[str],
    dims: int,
    fps: float,
    threshold: float,
    first_line: int,
    path: str | Path,
) -> PoseSequence:
    n = len(data_rows)
    p = len(part_order)
    width = 1 + p * (dims + 1) + 1
    coords = np.zeros((n, p, dims))
    scores = np.zeros((n, p))
    frame_indices = np.zeros(n, dtype=np.int64)
    behaviors: list[frozenset[str]] = []
    for i, row in enumerate(data_rows):
        line_no = first_line + i
        if len(row) != width:
            raise InconsistentDims(f"{path}: line {line_no} has {len(row)} cells, expected {width}")
        try:
            frame_indices[i] = int(float(row[0]))
        except ValueError as exc:
            raise InconsistentDims(f"{path}: line {line_no}: bad frame index {row[0]!r}") from exc
        for j in range(p):
            base = 1 + j * (dims + 1)
            values = [_cell_to_float(c) for c in row[base: base + dims + 1]]
            if any(math.isnan(v) for v in values):
                coords[i, j] = 0.0
                scores[i, j] = 0.0
            else:
                coords[i, j] = values[:dims]
                scores[i, j] = min(max(values[dims], 0.0), 1.0)
        behavior_cell = row[-1].strip()
        behaviors.append(frozenset(b for b in behavior_cell.split(";") if b))
    return PoseSequence.from_arrays(
        part_order,
        coords,
        scores,
        fps=fps,
        score_threshold=threshold,
        frame_indices=frame_indices,
        behaviors=behaviors,
    )
