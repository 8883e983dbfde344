"""Chainable processor pipelines.

A processor is described by a declarative manifest (id, category, input and
output kinds, parameter schema, and how to execute it). Pipelines are ordered
chains of processor stages whose kinds must line up; running one is exactly
function composition over the in-memory values, with every intermediate
persisted to the workspace for inspection.

Built-in processors cover loading/saving, every pose filter (registered for
3D and, under a `_2d` suffix, for 2D data), 3D reconstruction, reprojection,
input statistics, and the spatial behavior generators. External processors
run as subprocesses exchanging pose files.
"""

from __future__ import annotations

import shlex
import subprocess
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from . import filters as _filters
from .behavior import (
    AnalysisGrid,
    detect_rearing,
    ebc_rate_map,
    gaze_heatmap,
    load_spike_train,
    load_walls,
    occupancy_map,
    spike_location_data,
)
from .errors import (
    EmptySequence,
    ExternalProcessError,
    KindMismatch,
    MalformedCsv,
    MalformedManifest,
    StageFailure,
)
from .geometry import dlt_project, dlt_reconstruct, load_dlt_coefficients
from .pose import PoseSequence
from .pose_io import read_pose_file, write_pose_file

KINDS = ("pose2d", "pose3d", "frames", "table", "none")
CATEGORIES = ("filter", "generative", "utility")
PARAM_TYPES = ("int", "real", "string", "path", "bool", "enum")
MANIFEST_SUFFIX = ".manifest"
_AXIS_NAMES = ("x", "y", "z")


# --- tables ---

@dataclass(frozen=True)
class Table:
    """Small immutable rows-and-columns container for tabular stage values."""

    columns: Tuple[str, ...]
    rows: Tuple[Tuple, ...]

    def __post_init__(self):
        object.__setattr__(self, "columns", tuple(self.columns))
        object.__setattr__(self, "rows", tuple(tuple(r) for r in self.rows))
        for r in self.rows:
            if len(r) != len(self.columns):
                raise ValueError("row width %d != %d columns" % (len(r), len(self.columns)))

    def __len__(self) -> int:
        return len(self.rows)


def _table_cell(value) -> str:
    if isinstance(value, str):
        if "," in value or "\n" in value:
            raise ValueError("table cells may not contain commas or newlines")
        return value
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def write_table(table: Table, path) -> None:
    lines = [",".join(table.columns)]
    for row in table.rows:
        lines.append(",".join(_table_cell(c) for c in row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _parse_cell(text: str):
    if text == "true":
        return True
    if text == "false":
        return False
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def read_table(path) -> Table:
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise MalformedCsv("%s: empty table file" % path)
    columns = tuple(lines[0].split(","))
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cells = line.split(",")
        if len(cells) != len(columns):
            raise MalformedCsv("%s line %d: %d cells, expected %d"
                               % (path, lineno, len(cells), len(columns)))
        rows.append(tuple(_parse_cell(c) for c in cells))
    return Table(columns, tuple(rows))


def grid_to_table(grid: AnalysisGrid, prefix: Sequence[Tuple[str, str]] = ()) -> Table:
    """Long-form flattening: one row per bin, optional constant lead columns."""
    cols = [c for c, _ in prefix] + ["x_lo", "x_hi", "y_lo", "y_hi", "value"]
    if grid.mask is not None:
        cols.append("masked")
    rows = []
    lead = tuple(v for _, v in prefix)
    for i in range(grid.values.shape[0]):
        for j in range(grid.values.shape[1]):
            row = lead + (float(grid.x_edges[i]), float(grid.x_edges[i + 1]),
                          float(grid.y_edges[j]), float(grid.y_edges[j + 1]),
                          float(grid.values[i, j]))
            if grid.mask is not None:
                row = row + (bool(grid.mask[i, j]),)
            rows.append(row)
    return Table(tuple(cols), tuple(rows))


# --- manifests ---

@dataclass(frozen=True)
class ParamSpec:
    name: str
    type: str
    required: bool = False
    default: Optional[str] = None   # raw text, coerced on use
    label: str = ""
    variants: Tuple[str, ...] = ()


@dataclass(frozen=True)
class ProcessorManifest:
    id: str
    category: str
    input_kind: str
    output_kind: str
    params: Tuple[ParamSpec, ...]
    exec_spec: str

    @property
    def is_builtin(self) -> bool:
        return self.exec_spec.startswith("builtin:")

    @property
    def builtin_op(self) -> str:
        return self.exec_spec.split(":", 1)[1]

    @property
    def external_template(self) -> str:
        return self.exec_spec.split(":", 1)[1]

    def param(self, name: str) -> Optional[ParamSpec]:
        for p in self.params:
            if p.name == name:
                return p
        return None


def coerce_param(spec: ParamSpec, raw) -> object:
    text = str(raw)
    if spec.type == "int":
        return int(text)
    if spec.type == "real":
        return float(text)
    if spec.type in ("string", "path"):
        return text
    if spec.type == "bool":
        low = text.lower()
        if low in ("true", "false"):
            return low == "true"
        raise ValueError("expected true/false for %s, got %r" % (spec.name, raw))
    if spec.type == "enum":
        if text not in spec.variants:
            raise ValueError("%r is not one of %s for %s"
                             % (text, "/".join(spec.variants), spec.name))
        return text
    raise ValueError("unknown param type %r" % spec.type)


def _split_blocks(text: str, source: str):
    """Key/value lines partitioned into the top block and [section] blocks."""
    top: List[Tuple[str, str, int]] = []
    sections: List[Tuple[str, List[Tuple[str, str, int]]]] = []
    current = top
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip()
            block: List[Tuple[str, str, int]] = []
            sections.append((name, block))
            current = block
            continue
        if "=" not in line:
            raise MalformedManifest("%s line %d: expected key = value" % (source, lineno))
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if len(value) >= 2 and value[0] == '"' and value[-1] == '"':
            value = value[1:-1]
        current.append((key, value, lineno))
    return top, sections


def _block_dict(pairs, source) -> Dict[str, str]:
    out: Dict[str, str] = {}
    for key, value, lineno in pairs:
        if key in out:
            raise MalformedManifest("%s line %d: duplicate key %r" % (source, lineno, key))
        out[key] = value
    return out


def _template_placeholders(template: str) -> List[str]:
    names = []
    i = 0
    while i < len(template):
        if template[i] == "{":
            j = template.find("}", i)
            if j < 0:
                raise ValueError("unbalanced { in command template")
            names.append(template[i + 1:j])
            i = j + 1
        else:
            i += 1
    return names


_MANIFEST_KEYS = {"id", "category", "input_kind", "output_kind", "exec"}
_PARAM_KEYS = {"name", "type", "required", "default", "label", "variants"}


def parse_manifest_text(text: str, source: str = "<string>") -> ProcessorManifest:
    top_pairs, sections = _split_blocks(text, source)
    top = _block_dict(top_pairs, source)
    for key in top:
        if key not in _MANIFEST_KEYS:
            raise MalformedManifest("%s: unknown key %r" % (source, key))
    for key in _MANIFEST_KEYS:
        if key not in top:
            raise MalformedManifest("%s: missing required key %r" % (source, key))
    if top["category"] not in CATEGORIES:
        raise MalformedManifest("%s: bad category %r" % (source, top["category"]))
    for kind_key in ("input_kind", "output_kind"):
        if top[kind_key] not in KINDS:
            raise MalformedManifest("%s: bad %s %r" % (source, kind_key, top[kind_key]))
    exec_spec = top["exec"]
    if not (exec_spec.startswith("builtin:") or exec_spec.startswith("external:")):
        raise MalformedManifest("%s: exec must be builtin:<op> or external:<command>" % source)

    params: List[ParamSpec] = []
    seen = set()
    for name, block in sections:
        if name != "param":
            raise MalformedManifest("%s: unknown section [%s]" % (source, name))
        kv = _block_dict(block, source)
        for key in kv:
            if key not in _PARAM_KEYS:
                raise MalformedManifest("%s: unknown param key %r" % (source, key))
        if "name" not in kv:
            raise MalformedManifest("%s: param block missing 'name'" % source)
        if "type" not in kv:
            raise MalformedManifest("%s: param %r missing 'type'" % (source, kv["name"]))
        if kv["type"] not in PARAM_TYPES:
            raise MalformedManifest("%s: param %r has bad type %r"
                                    % (source, kv["name"], kv["type"]))
        if kv["name"] in seen:
            raise MalformedManifest("%s: duplicate param %r" % (source, kv["name"]))
        seen.add(kv["name"])
        required = kv.get("required", "false").lower()
        if required not in ("true", "false"):
            raise MalformedManifest("%s: param %r required must be true/false"
                                    % (source, kv["name"]))
        variants = tuple(v.strip() for v in kv.get("variants", "").split(",") if v.strip())
        if kv["type"] == "enum" and not variants:
            raise MalformedManifest("%s: enum param %r needs variants" % (source, kv["name"]))
        if kv["type"] != "enum" and variants:
            raise MalformedManifest("%s: variants only allowed on enum params" % source)
        spec = ParamSpec(
            name=kv["name"],
            type=kv["type"],
            required=required == "true",
            default=kv.get("default"),
            label=kv.get("label", ""),
            variants=variants,
        )
        if spec.required and spec.default is not None:
            raise MalformedManifest("%s: required param %r may not have a default"
                                    % (source, spec.name))
        if spec.default is not None:
            try:
                coerce_param(spec, spec.default)
            except ValueError as exc:
                raise MalformedManifest("%s: bad default for %r: %s"
                                        % (source, spec.name, exc))
        params.append(spec)

    if exec_spec.startswith("external:"):
        template = exec_spec.split(":", 1)[1]
        try:
            holes = _template_placeholders(template)
        except ValueError as exc:
            raise MalformedManifest("%s: %s" % (source, exc))
        allowed = {p.name for p in params} | {"input", "output"}
        for hole in holes:
            if hole not in allowed:
                raise MalformedManifest("%s: template references undeclared %r"
                                        % (source, hole))
        for kind_key in ("input_kind", "output_kind"):
            if top[kind_key] not in ("pose2d", "pose3d"):
                raise MalformedManifest(
                    "%s: external processors exchange pose kinds only, got %s=%s"
                    % (source, kind_key, top[kind_key]))

    return ProcessorManifest(
        id=top["id"],
        category=top["category"],
        input_kind=top["input_kind"],
        output_kind=top["output_kind"],
        params=tuple(params),
        exec_spec=exec_spec,
    )


def load_manifest(path) -> ProcessorManifest:
    p = Path(path)
    return parse_manifest_text(p.read_text(), source=p.name)


def manifest_to_text(m: ProcessorManifest) -> str:
    lines = [
        "id = %s" % m.id,
        "category = %s" % m.category,
        "input_kind = %s" % m.input_kind,
        "output_kind = %s" % m.output_kind,
        "exec = %s" % m.exec_spec,
    ]
    for p in m.params:
        lines.append("")
        lines.append("[param]")
        lines.append("name = %s" % p.name)
        lines.append("type = %s" % p.type)
        if p.variants:
            lines.append("variants = %s" % ",".join(p.variants))
        if p.required:
            lines.append("required = true")
        if p.default is not None:
            lines.append("default = %s" % p.default)
        if p.label:
            lines.append("label = %s" % p.label)
    return "\n".join(lines) + "\n"


# --- pipeline configs ---

@dataclass(frozen=True)
class PipelineStage:
    processor: str
    params: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "params", dict(self.params))


@dataclass(frozen=True)
class PipelineConfig:
    name: str
    stages: Tuple[PipelineStage, ...]
    source: str = ""
    sink: str = ""

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))


_CONFIG_KEYS = {"name", "source", "sink"}


def parse_pipeline_text(text: str, source: str = "<string>") -> PipelineConfig:
    top_pairs, sections = _split_blocks(text, source)
    top = _block_dict(top_pairs, source)
    for key in top:
        if key not in _CONFIG_KEYS:
            raise MalformedManifest("%s: unknown key %r" % (source, key))
    stages: List[PipelineStage] = []
    for name, block in sections:
        if name != "stage":
            raise MalformedManifest("%s: unknown section [%s]" % (source, name))
        kv = _block_dict(block, source)
        if "processor" not in kv:
            raise MalformedManifest("%s: stage %d missing 'processor'"
                                    % (source, len(stages)))
        proc = kv.pop("processor")
        stages.append(PipelineStage(proc, kv))
    return PipelineConfig(
        name=top.get("name", "pipeline"),
        stages=tuple(stages),
        source=top.get("source", ""),
        sink=top.get("sink", ""),
    )


def load_pipeline_config(path) -> PipelineConfig:
    p = Path(path)
    return parse_pipeline_text(p.read_text(), source=p.name)


def pipeline_to_text(cfg: PipelineConfig) -> str:
    lines = ["name = %s" % cfg.name]
    if cfg.source:
        lines.append("source = %s" % cfg.source)
    if cfg.sink:
        lines.append("sink = %s" % cfg.sink)
    for stage in cfg.stages:
        lines.append("")
        lines.append("[stage]")
        lines.append("processor = %s" % stage.processor)
        for key in sorted(stage.params):
            lines.append("%s = %s" % (key, stage.params[key]))
    return "\n".join(lines) + "\n"


def save_pipeline_config(cfg: PipelineConfig, path) -> None:
    Path(path).write_text(pipeline_to_text(cfg))


# --- registry ---

@dataclass(frozen=True)
class RunContext:
    workspace: Path
    source: str
    sink: str


class ProcessorRegistry:
    """id -> manifest mapping; duplicates resolve first-seen with a warning."""

    def __init__(self):
        self._manifests: Dict[str, ProcessorManifest] = {}
        self._impls: Dict[str, Callable] = {}
        self.warnings: List[str] = []

    def add(self, manifest: ProcessorManifest, impl: Optional[Callable] = None) -> bool:
        if manifest.id in self._manifests:
            self.warnings.append("duplicate processor id %r ignored" % manifest.id)
            return False
        self._manifests[manifest.id] = manifest
        if impl is not None:
            self._impls[manifest.id] = impl
        return True

    def __contains__(self, pid: str) -> bool:
        return pid in self._manifests

    def get(self, pid: str) -> ProcessorManifest:
        return self._manifests[pid]

    def ids(self) -> List[str]:
        return sorted(self._manifests)

    def manifests(self) -> List[ProcessorManifest]:
        return [self._manifests[i] for i in self.ids()]

    def implementation(self, pid: str) -> Optional[Callable]:
        return self._impls.get(pid)


def _bound_params(manifest: ProcessorManifest, bindings: Mapping[str, str]) -> Dict[str, object]:
    out: Dict[str, object] = {}
    for spec in manifest.params:
        if spec.name in bindings:
            out[spec.name] = coerce_param(spec, bindings[spec.name])
        elif spec.default is not None:
            out[spec.name] = coerce_param(spec, spec.default)
        elif spec.required:
            raise ValueError("required param %r unbound" % spec.name)
        # optional without default: absent
    return out


# --- builtin implementations ---

def _require_kind(value, kind: str, who: str):
    if kind in ("pose2d", "pose3d"):
        want = 2 if kind == "pose2d" else 3
        if not isinstance(value, PoseSequence) or value.dims != want:
            raise ValueError("%s expected %s data" % (who, kind))
    elif kind == "table":
        if not isinstance(value, Table):
            raise ValueError("%s expected a table" % who)
    return value


def _load_impl(dims: int):
    def impl(value, params, ctx: RunContext):
        path = params.get("path") or ctx.source
        if not path:
            raise ValueError("no input path bound (stage param or pipeline source)")
        fmt = params["format"]
        if fmt == "cvkit":
            seq = read_pose_file(path, fmt)
        else:
            seq = read_pose_file(path, fmt, fps=params["fps"],
                                 score_threshold=params["score_threshold"])
        if seq.dims != dims:
            raise ValueError("expected %dD data, file has %dD" % (dims, seq.dims))
        return seq
    return impl


def _save_impl(value, params, ctx: RunContext):
    path = params.get("path") or ctx.sink
    if not path:
        raise ValueError("no output path bound (stage param or pipeline sink)")
    write_pose_file(value, path, params["format"])
    return value


def _save_table_impl(value, params, ctx: RunContext):
    path = params.get("path") or ctx.sink
    if not path:
        raise ValueError("no output path bound (stage param or pipeline sink)")
    write_table(value, path)
    return value


def input_statistics(seq: PoseSequence) -> Table:
    """Long-form per-part summary: validity, score, per-axis ranges."""
    if len(seq) == 0:
        raise EmptySequence("statistics need at least one frame")
    rows: List[Tuple] = [("", "frames", float(len(seq))), ("", "fps", float(seq.fps))]
    valid = seq.valid_mask()
    for j, part in enumerate(seq.part_order):
        m = valid[:, j]
        rows.append((part, "valid_fraction", float(np.count_nonzero(m)) / len(seq)))
        rows.append((part, "mean_score", float(seq.scores[:, j].mean())))
        if not m.any():
            continue
        pts = seq.coords[m, j, :]
        for k in range(seq.dims):
            axis = _AXIS_NAMES[k] if k < len(_AXIS_NAMES) else "axis%d" % k
            rows.append((part, "%s_min" % axis, float(pts[:, k].min())))
            rows.append((part, "%s_max" % axis, float(pts[:, k].max())))
            rows.append((part, "%s_mean" % axis, float(pts[:, k].mean())))
    return Table(("part", "stat", "value"), tuple(rows))


def _stats_impl(value, params, ctx):
    return input_statistics(value)


def reconstruct_sequences(views: Sequence[PoseSequence], cams) -> PoseSequence:
    """Triangulate per frame and part across synchronized 2D views.

    Parts with fewer than two valid observations come out invalid; the
    output score is the mean of the contributing view scores.
    """
    primary = views[0]
    for v in views[1:]:
        if v.part_order != primary.part_order:
            raise ValueError("views disagree on part order")
        if not np.array_equal(v.frame_indices, primary.frame_indices):
            raise ValueError("views are not frame-synchronized")
    if len(cams) < len(views):
        raise ValueError("need a camera per view: %d cameras for %d views"
                         % (len(cams), len(views)))
    n = len(primary)
    p = len(primary.part_order)
    coords = np.zeros((n, p, 3))
    scores = np.zeros((n, p))
    for i in range(n):
        for j in range(p):
            obs = []
            obs_scores = []
            for v_idx, view in enumerate(views):
                if view.scores[i, j] >= view.score_threshold:
                    obs.append((v_idx, tuple(view.coords[i, j]), float(view.scores[i, j])))
                    obs_scores.append(float(view.scores[i, j]))
            if len(obs) < 2:
                continue
            point, _ = dlt_reconstruct(cams, obs,
                                       score_threshold=primary.score_threshold)
            coords[i, j] = point
            scores[i, j] = np.mean(obs_scores)
    return PoseSequence.from_arrays(primary.part_order, coords, scores,
                                    fps=primary.fps,
                                    score_threshold=primary.score_threshold,
                                    frame_indices=primary.frame_indices,
                                    behaviors=primary.behaviors)


def _reconstruct_impl(value, params, ctx):
    cams = load_dlt_coefficients(params["dlt_file"])
    views = [value]
    extra = params.get("extra_views", "")
    for token in extra.split(";"):
        token = token.strip()
        if token:
            views.append(read_pose_file(token, "cvkit"))
    return reconstruct_sequences(views, cams)


def reproject_sequence(seq: PoseSequence, cam) -> PoseSequence:
    """Project a 3D sequence through one camera; scores pass through."""
    n = len(seq)
    p = len(seq.part_order)
    coords = np.zeros((n, p, 2))
    scores = seq.scores.copy()
    valid = seq.valid_mask()
    for i in range(n):
        for j in range(p):
            if valid[i, j]:
                coords[i, j] = dlt_project(cam, seq.coords[i, j])
            else:
                scores[i, j] = 0.0
    return PoseSequence.from_arrays(seq.part_order, coords, scores,
                                    fps=seq.fps, score_threshold=seq.score_threshold,
                                    frame_indices=seq.frame_indices,
                                    behaviors=seq.behaviors)


def _reproject_impl(value, params, ctx):
    cams = load_dlt_coefficients(params["dlt_file"])
    idx = params["camera_index"]
    if not 0 <= idx < len(cams):
        raise ValueError("camera_index %d outside 0..%d" % (idx, len(cams) - 1))
    return reproject_sequence(value, cams[idx])


def _occupancy_impl(value, params, ctx):
    grid = occupancy_map(value, params["anchor"],
                         (params["xmin"], params["xmax"],
                          params["ymin"], params["ymax"]),
                         grid=(params["nx"], params["ny"]))
    return grid_to_table(grid)


def _gaze_impl(value, params, ctx):
    walls = load_walls(params["walls_file"])
    grids = gaze_heatmap(value, params["base"], params["tip"], walls,
                         sigma=params["sigma"])
    cols: Optional[Tuple[str, ...]] = None
    rows: List[Tuple] = []
    for name in sorted(grids):
        t = grid_to_table(grids[name], prefix=(("wall", name),))
        cols = t.columns
        rows.extend(t.rows)
    return Table(cols or ("wall", "x_lo", "x_hi", "y_lo", "y_hi", "value"), tuple(rows))


def _rearing_impl(value, params, ctx):
    events, _ = detect_rearing(value, params["anchor"], params["z_min"],
                               params["min_frames"])
    rows = tuple((e.start_frame, e.end_frame, float(e.location[0]),
                  float(e.location[1])) for e in events)
    return Table(("start_frame", "end_frame", "x", "y"), rows)


def _ebc_impl(value, params, ctx):
    spikes = load_spike_train(params["spikes_file"])
    dist_bins = params["dist_bins"] if params["dist_bins"] > 0 else None
    res = ebc_rate_map(value, params["anchor"], params["base"], params["tip"],
                       spikes,
                       (params["xmin"], params["xmax"],
                        params["ymin"], params["ymax"]),
                       max_dist=params["max_dist"], dist_bins=dist_bins,
                       angle_bins=params["angle_bins"],
                       min_occupancy_s=params["min_occupancy_s"])
    return grid_to_table(res.rate)


def _spike_locations_impl(value, params, ctx):
    spikes = load_spike_train(params["spikes_file"])
    data = spike_location_data(value, params["anchor"], params["base"],
                               params["tip"], spikes)
    rows = tuple((float(r[0]), float(r[1]), float(r[2])) for r in data.rows)
    return Table(("x", "y", "head_direction_deg"), rows)


def _filter_impl(name: str):
    def impl(value, params, ctx):
        if name == "kalman_filter":
            return _filters.kalman_filter(value, _filters.KalmanParams(
                process_noise=params["process_noise"],
                measurement_noise=params["measurement_noise"],
                initial_variance=params["initial_variance"]))
        if name == "linear_interpolate":
            return _filters.linear_interpolate(value, max_gap=params["max_gap"])
        if name == "moving_average":
            return _filters.moving_average(value, window=params["window"])
        if name == "velocity_filter":
            return _filters.velocity_filter(value, max_speed=params["max_speed"])
        if name == "statistical_distance_filter":
            return _filters.statistical_distance_filter(
                value, window=params["window"], z_max=params["z_max"])
        raise ValueError("unknown filter %r" % name)
    return impl


def _p(name, type_, required=False, default=None, label="", variants=()):
    return ParamSpec(name, type_, required, default, label, tuple(variants))


_FILTER_PARAMS = {
    "kalman_filter": (
        _p("process_noise", "real", default="0.01", label="Process noise density"),
        _p("measurement_noise", "real", default="1.0", label="Measurement variance at score 1"),
        _p("initial_variance", "real", default="100.0", label="Initial state variance"),
    ),
    "linear_interpolate": (
        _p("max_gap", "int", default="10", label="Largest fillable gap (frames)"),
    ),
    "moving_average": (
        _p("window", "int", default="5", label="Window size (odd)"),
    ),
    "velocity_filter": (
        _p("max_speed", "real", required=True, label="Speed ceiling (units/frame)"),
    ),
    "statistical_distance_filter": (
        _p("window", "int", default="11", label="Neighborhood window (frames)"),
        _p("z_max", "real", default="3.0", label="Scatter multiple to reject at"),
    ),
}

_LOAD_PARAMS_2D = (
    _p("path", "path", label="Input file (pipeline source when empty)"),
    _p("format", "enum", default="cvkit", variants=("cvkit", "flat_csv", "dlc_csv"),
       label="File format"),
    _p("fps", "real", default="30.0", label="Frames per second for metadata-free formats"),
    _p("score_threshold", "real", default="0.6",
       label="Validity threshold for metadata-free formats"),
)
_LOAD_PARAMS_3D = (
    _p("path", "path", label="Input file (pipeline source when empty)"),
    _p("format", "enum", default="cvkit", variants=("cvkit", "flat_csv"),
       label="File format"),
    _p("fps", "real", default="30.0", label="Frames per second for metadata-free formats"),
    _p("score_threshold", "real", default="0.6",
       label="Validity threshold for metadata-free formats"),
)
_SAVE_PARAMS = (
    _p("path", "path", label="Output file (pipeline sink when empty)"),
    _p("format", "enum", default="cvkit", variants=("cvkit", "flat_csv"),
       label="File format"),
)
_ARENA_PARAMS = (
    _p("xmin", "real", required=True, label="Arena west edge (mm)"),
    _p("xmax", "real", required=True, label="Arena east edge (mm)"),
    _p("ymin", "real", required=True, label="Arena south edge (mm)"),
    _p("ymax", "real", required=True, label="Arena north edge (mm)"),
)


def _builtin(id_, category, input_kind, output_kind, params, impl):
    manifest = ProcessorManifest(id_, category, input_kind, output_kind,
                                 tuple(params), "builtin:%s" % id_)
    return manifest, impl


def _builtin_entries() -> List[Tuple[ProcessorManifest, Callable]]:
    entries = [
        _builtin("load_pose2d", "generative", "none", "pose2d",
                 _LOAD_PARAMS_2D, _load_impl(2)),
        _builtin("load_pose3d", "generative", "none", "pose3d",
                 _LOAD_PARAMS_3D, _load_impl(3)),
        _builtin("save_pose2d", "utility", "pose2d", "pose2d", _SAVE_PARAMS, _save_impl),
        _builtin("save_pose3d", "utility", "pose3d", "pose3d", _SAVE_PARAMS, _save_impl),
        _builtin("save_table", "utility", "table", "table", (
            _p("path", "path", label="Output file (pipeline sink when empty)"),
        ), _save_table_impl),
        _builtin("reconstruct_3d", "generative", "pose2d", "pose3d", (
            _p("dlt_file", "path", required=True, label="DLT coefficient file"),
            _p("extra_views", "string", default="",
               label="Semicolon-joined 2D pose files for cameras 1..n"),
        ), _reconstruct_impl),
        _builtin("reproject_2d", "generative", "pose3d", "pose2d", (
            _p("dlt_file", "path", required=True, label="DLT coefficient file"),
            _p("camera_index", "int", default="0", label="Camera column to project through"),
        ), _reproject_impl),
        _builtin("input_statistics", "utility", "pose3d", "table", (), _stats_impl),
        _builtin("input_statistics_2d", "utility", "pose2d", "table", (), _stats_impl),
        _builtin("occupancy_map", "generative", "pose3d", "table", _ARENA_PARAMS + (
            _p("anchor", "string", required=True, label="Tracked part"),
            _p("nx", "int", default="32", label="Bins along x"),
            _p("ny", "int", default="32", label="Bins along y"),
        ), _occupancy_impl),
        _builtin("gaze_heatmap", "generative", "pose3d", "table", (
            _p("base", "string", required=True, label="Gaze base part"),
            _p("tip", "string", required=True, label="Gaze tip part"),
            _p("walls_file", "path", required=True, label="Wall geometry CSV"),
            _p("sigma", "real", required=True, label="Attention radius (mm)"),
        ), _gaze_impl),
        _builtin("detect_rearing", "generative", "pose3d", "table", (
            _p("anchor", "string", required=True, label="Tracked part"),
            _p("z_min", "real", required=True, label="Height threshold (mm)"),
            _p("min_frames", "int", default="2", label="Shortest event (frames)"),
        ), _rearing_impl),
        _builtin("ebc_rate_map", "generative", "pose3d", "table", _ARENA_PARAMS + (
            _p("anchor", "string", required=True, label="Tracked part"),
            _p("base", "string", required=True, label="Heading base part"),
            _p("tip", "string", required=True, label="Heading tip part"),
            _p("spikes_file", "path", required=True, label="Spike time CSV"),
            _p("max_dist", "real", required=True, label="Longest boundary distance (mm)"),
            _p("dist_bins", "int", default="0", label="Distance bins (0 = auto)"),
            _p("angle_bins", "int", default="120", label="Angle bins"),
            _p("min_occupancy_s", "real", default="0.2", label="Mask bins under (s)"),
        ), _ebc_impl),
        _builtin("spike_locations", "generative", "pose3d", "table", (
            _p("anchor", "string", required=True, label="Tracked part"),
            _p("base", "string", required=True, label="Heading base part"),
            _p("tip", "string", required=True, label="Heading tip part"),
            _p("spikes_file", "path", required=True, label="Spike time CSV"),
        ), _spike_locations_impl),
    ]
    for name, params in _FILTER_PARAMS.items():
        entries.append(_builtin(name, "filter", "pose3d", "pose3d",
                                params, _filter_impl(name)))
        entries.append(_builtin(name + "_2d", "filter", "pose2d", "pose2d",
                                params, _filter_impl(name)))
    return entries


_BUILTIN_OPS: Dict[str, Callable] = {m.id: impl for m, impl in _builtin_entries()}


def builtin_registry() -> ProcessorRegistry:
    reg = ProcessorRegistry()
    for manifest, impl in _builtin_entries():
        reg.add(manifest, impl)
    return reg


def scan_registry(dirs: Sequence) -> ProcessorRegistry:
    """Built-ins plus every *.manifest file under the given directories.

    Directories and files are visited in sorted order so duplicate
    resolution (first seen wins) is deterministic.
    """
    reg = builtin_registry()
    for d in sorted(str(d) for d in dirs):
        root = Path(d)
        if not root.is_dir():
            continue
        for path in sorted(root.glob("*" + MANIFEST_SUFFIX)):
            manifest = load_manifest(path)
            if manifest.is_builtin and manifest.builtin_op in _BUILTIN_OPS:
                reg.add(manifest, _BUILTIN_OPS[manifest.builtin_op])
            else:
                reg.add(manifest)
    return reg


# --- validation ---

@dataclass(frozen=True)
class Diagnostic:
    stage_index: int    # -1 for config-level problems
    message: str


def validate_pipeline(cfg: PipelineConfig, registry: ProcessorRegistry) -> List[Diagnostic]:
    diags: List[Diagnostic] = []
    if not cfg.stages:
        return [Diagnostic(-1, "pipeline has no stages")]
    prev_kind = "none"
    for i, stage in enumerate(cfg.stages):
        if stage.processor not in registry:
            diags.append(Diagnostic(i, "unknown processor %r" % stage.processor))
            prev_kind = None
            continue
        m = registry.get(stage.processor)
        if prev_kind is not None and m.input_kind != prev_kind:
            if i == 0:
                diags.append(Diagnostic(i, "first stage must take no input, %r takes %s"
                                        % (stage.processor, m.input_kind)))
            else:
                diags.append(Diagnostic(i, "stage input kind %s does not match upstream %s"
                                        % (m.input_kind, prev_kind)))
        prev_kind = m.output_kind
        declared = {p.name for p in m.params}
        for key in stage.params:
            if key not in declared:
                diags.append(Diagnostic(i, "unknown param %r for %s"
                                        % (key, stage.processor)))
        for spec in m.params:
            if spec.required and spec.name not in stage.params:
                diags.append(Diagnostic(i, "required param %r unbound" % spec.name))
            elif spec.name in stage.params:
                try:
                    coerce_param(spec, stage.params[spec.name])
                except ValueError as exc:
                    diags.append(Diagnostic(i, str(exc)))
    return diags


def swap_stage(cfg: PipelineConfig, registry: ProcessorRegistry, index: int,
               new_processor_id: str, params: Mapping[str, str]) -> PipelineConfig:
    """Replace one stage, enforcing kind compatibility with its neighbors."""
    if not 0 <= index < len(cfg.stages):
        raise IndexError("stage index %d outside pipeline" % index)
    if new_processor_id not in registry:
        raise KindMismatch("unknown processor %r" % new_processor_id)
    m = registry.get(new_processor_id)
    upstream = "none" if index == 0 else registry.get(cfg.stages[index - 1].processor).output_kind
    if m.input_kind != upstream:
        raise KindMismatch("input kind %s does not fit after %s" % (m.input_kind, upstream))
    if index + 1 < len(cfg.stages):
        downstream = registry.get(cfg.stages[index + 1].processor).input_kind
        if m.output_kind != downstream:
            raise KindMismatch("output kind %s does not feed downstream %s"
                               % (m.output_kind, downstream))
    stages = list(cfg.stages)
    stages[index] = PipelineStage(new_processor_id, dict(params))
    return replace(cfg, stages=tuple(stages))


# --- execution ---

@dataclass(frozen=True)
class StageReport:
    index: int
    processor: str
    wall_time_s: float
    items: int
    artifact: str            # persisted stage output, "" when not materialized
    input_stats: Optional[Table]


@dataclass(frozen=True)
class RunReport:
    pipeline: str
    stages: Tuple[StageReport, ...]
    workspace: str


def table_to_dict(table: Optional[Table]) -> Optional[Dict]:
    if table is None:
        return None
    return {"columns": list(table.columns), "rows": [list(r) for r in table.rows]}


def report_to_dict(report: RunReport) -> Dict:
    return {
        "pipeline": report.pipeline,
        "workspace": report.workspace,
        "stages": [
            {
                "index": s.index,
                "processor": s.processor,
                "wall_time_s": s.wall_time_s,
                "items": s.items,
                "artifact": s.artifact,
                "input_stats": table_to_dict(s.input_stats),
            }
            for s in report.stages
        ],
    }


def _count_items(value) -> int:
    if isinstance(value, (PoseSequence, Table)):
        return len(value)
    return 0


def _persist_stage(value, index: int, pid: str, workspace: Path) -> str:
    path = workspace / ("stage_%d_%s.csv" % (index, pid))
    if isinstance(value, PoseSequence):
        write_pose_file(value, path, "cvkit")
        return str(path)
    if isinstance(value, Table):
        write_table(value, path)
        return str(path)
    return ""


def _run_external(manifest: ProcessorManifest, value, params, workspace: Path,
                  index: int) -> PoseSequence:
    in_path = workspace / ("stage_%d_%s_input.csv" % (index, manifest.id))
    out_path = workspace / ("stage_%d_%s_output.csv" % (index, manifest.id))
    write_pose_file(value, in_path, "cvkit")
    slots = dict(params)
    slots["input"] = str(in_path)
    slots["output"] = str(out_path)
    tokens = [t.format(**slots) for t in shlex.split(manifest.external_template)]
    proc = subprocess.run(tokens, capture_output=True, text=True)
    if proc.returncode != 0:
        raise ExternalProcessError(
            "external processor %r exited %d" % (manifest.id, proc.returncode),
            exit_code=proc.returncode, stderr=proc.stderr)
    if not out_path.exists():
        raise ExternalProcessError(
            "external processor %r wrote no output" % manifest.id,
            exit_code=0, stderr=proc.stderr)
    return read_pose_file(out_path, "cvkit")


def run_pipeline(cfg: PipelineConfig, registry: ProcessorRegistry,
                 workspace) -> RunReport:
    """Execute a validated pipeline, persisting each stage's output."""
    diags = validate_pipeline(cfg, registry)
    if diags:
        raise ValueError("invalid pipeline: " +
                         "; ".join("stage %d: %s" % (d.stage_index, d.message)
                                   for d in diags))
    ws = Path(workspace)
    ws.mkdir(parents=True, exist_ok=True)
    ctx = RunContext(ws, cfg.source, cfg.sink)
    reports: List[StageReport] = []
    value = None
    for i, stage in enumerate(cfg.stages):
        manifest = registry.get(stage.processor)
        input_stats = None
        if isinstance(value, PoseSequence) and len(value):
            input_stats = input_statistics(value)
        start = time.perf_counter()

        def fail(exc: Exception):
            partial = RunReport(cfg.name, tuple(reports), str(ws))
            if isinstance(exc, ExternalProcessError):
                exc.stage_index = i
                exc.partial_report = partial
                return exc
            return StageFailure(i, exc, partial)

        try:
            params = _bound_params(manifest, stage.params)
            if manifest.is_builtin:
                impl = registry.implementation(stage.processor)
                if impl is None:
                    impl = _BUILTIN_OPS.get(manifest.builtin_op)
                if impl is None:
                    raise ValueError("no builtin operation %r" % manifest.builtin_op)
                value = impl(value, params, ctx)
            else:
                value = _run_external(manifest, value, params, ws, i)
            _require_kind(value, manifest.output_kind, stage.processor)
        except Exception as exc:
            raise fail(exc)
        elapsed = time.perf_counter() - start
        artifact = _persist_stage(value, i, stage.processor, ws)
        reports.append(StageReport(i, stage.processor, elapsed,
                                   _count_items(value), artifact, input_stats))
    return RunReport(cfg.name, tuple(reports), str(ws))
