import numpy as np
import pytest

from posekit import filters
from posekit.errors import (
    EmptySequence,
    ExternalProcessError,
    KindMismatch,
    MalformedCsv,
    MalformedManifest,
    StageFailure,
)
from posekit.geometry import CameraProfile, dlt_project
from posekit.pipeline import (
    Diagnostic,
    ParamSpec,
    PipelineConfig,
    PipelineStage,
    ProcessorManifest,
    Table,
    builtin_registry,
    coerce_param,
    grid_to_table,
    input_statistics,
    load_pipeline_config,
    manifest_to_text,
    parse_manifest_text,
    parse_pipeline_text,
    pipeline_to_text,
    read_table,
    reconstruct_sequences,
    reproject_sequence,
    run_pipeline,
    save_pipeline_config,
    scan_registry,
    swap_stage,
    validate_pipeline,
    write_table,
)
from posekit.pose_io import read_pose_file, write_pose_file

from conftest import make_sequence

MANIFEST_TEXT = """\
# velocity gate
id = speed_gate
category = filter
input_kind = pose3d
output_kind = pose3d
exec = external:speedgate {input} {output} --limit {max_speed}

[param]
name = max_speed
type = real
required = true
label = "Speed ceiling (units/frame)"

[param]
name = mode
type = enum
variants = strict,lenient
default = strict
"""


# --- manifests ---

def test_manifest_parses_fields_and_params():
    m = parse_manifest_text(MANIFEST_TEXT)
    assert m.id == "speed_gate"
    assert m.category == "filter"
    assert (m.input_kind, m.output_kind) == ("pose3d", "pose3d")
    assert not m.is_builtin
    assert [p.name for p in m.params] == ["max_speed", "mode"]
    assert m.param("max_speed").required
    assert m.param("max_speed").label == "Speed ceiling (units/frame)"
    assert m.param("mode").variants == ("strict", "lenient")
    assert m.param("mode").default == "strict"


def test_manifest_text_round_trip():
    m = parse_manifest_text(MANIFEST_TEXT)
    again = parse_manifest_text(manifest_to_text(m))
    assert again == m


@pytest.mark.parametrize("mutation", [
    lambda t: t.replace("id = speed_gate\n", ""),              # missing key
    lambda t: t.replace("category = filter", "category = misc"),
    lambda t: t.replace("input_kind = pose3d", "input_kind = pose4d"),
    lambda t: t.replace("exec = external:", "exec = "),
    lambda t: t + "\n[param]\nname = max_speed\ntype = real\n",  # duplicate param
    lambda t: t.replace("type = enum\nvariants = strict,lenient", "type = enum"),
    lambda t: t.replace("required = true", "required = true\ndefault = 5"),
    lambda t: t.replace("{max_speed}", "{unknown_hole}"),
    lambda t: t.replace("name = max_speed", "name = max_speed\nname = twice"),
    lambda t: t + "\nstray = 1\n",                             # key after params
    lambda t: t.replace("[param]", "[stage]", 1),
    lambda t: t.replace("type = real", "type = float"),
])
def test_manifest_rejects_malformed(mutation):
    with pytest.raises(MalformedManifest):
        parse_manifest_text(mutation(MANIFEST_TEXT))


def test_manifest_rejects_bad_default():
    bad = MANIFEST_TEXT.replace("default = strict", "default = chaotic")
    with pytest.raises(MalformedManifest):
        parse_manifest_text(bad)


def test_external_manifest_restricted_to_pose_kinds():
    bad = MANIFEST_TEXT.replace("output_kind = pose3d", "output_kind = table")
    with pytest.raises(MalformedManifest):
        parse_manifest_text(bad)


def test_coerce_param_types():
    assert coerce_param(ParamSpec("n", "int"), "7") == 7
    assert coerce_param(ParamSpec("x", "real"), "2.5") == 2.5
    assert coerce_param(ParamSpec("s", "string"), "abc") == "abc"
    assert coerce_param(ParamSpec("b", "bool"), "True") is True
    assert coerce_param(ParamSpec("b", "bool"), "false") is False
    assert coerce_param(ParamSpec("e", "enum", variants=("a", "b")), "b") == "b"
    with pytest.raises(ValueError):
        coerce_param(ParamSpec("n", "int"), "2.5")
    with pytest.raises(ValueError):
        coerce_param(ParamSpec("b", "bool"), "yes")
    with pytest.raises(ValueError):
        coerce_param(ParamSpec("e", "enum", variants=("a", "b")), "c")


# --- tables ---

def test_table_round_trip(tmp_path):
    t = Table(("part", "stat", "value"),
              (("snout", "x_min", -3.25), ("snout", "frames", 12),
               ("", "flag", True), ("neck", "note", "ok")))
    path = tmp_path / "t.csv"
    write_table(t, path)
    back = read_table(path)
    assert back == t


def test_table_rejects_ragged_rows():
    with pytest.raises(ValueError):
        Table(("a", "b"), ((1,),))


def test_table_rejects_comma_cells(tmp_path):
    t = Table(("a",), (("x,y",),))
    with pytest.raises(ValueError):
        write_table(t, tmp_path / "t.csv")


def test_read_table_rejects_bad_width(tmp_path):
    path = tmp_path / "t.csv"
    path.write_text("a,b\n1,2,3\n")
    with pytest.raises(MalformedCsv):
        read_table(path)


# --- pipeline configs ---

CONFIG_TEXT = """\
name = smoothing
source = in.csv
sink = out.csv

[stage]
processor = load_pose3d

[stage]
processor = moving_average
window = 3
"""


def test_config_parse_and_round_trip(tmp_path):
    cfg = parse_pipeline_text(CONFIG_TEXT)
    assert cfg.name == "smoothing"
    assert cfg.source == "in.csv"
    assert [s.processor for s in cfg.stages] == ["load_pose3d", "moving_average"]
    assert cfg.stages[1].params == {"window": "3"}
    path = tmp_path / "p.pipeline"
    save_pipeline_config(cfg, path)
    assert load_pipeline_config(path) == cfg
    assert parse_pipeline_text(pipeline_to_text(cfg)) == cfg


def test_config_stage_needs_processor():
    with pytest.raises(MalformedManifest):
        parse_pipeline_text("name = x\n[stage]\nwindow = 3\n")


# --- registry ---

def test_builtin_registry_has_filters_in_both_kinds():
    reg = builtin_registry()
    for name in ("kalman_filter", "linear_interpolate", "moving_average",
                 "velocity_filter", "statistical_distance_filter"):
        assert reg.get(name).input_kind == "pose3d"
        assert reg.get(name + "_2d").input_kind == "pose2d"
        assert reg.get(name).category == "filter"


def test_registry_first_seen_wins():
    reg = builtin_registry()
    rogue = ProcessorManifest("moving_average", "filter", "pose2d", "pose2d",
                              (), "builtin:moving_average")
    assert not reg.add(rogue)
    assert reg.get("moving_average").input_kind == "pose3d"
    assert any("moving_average" in w for w in reg.warnings)


def test_scan_registry_reads_manifest_files(tmp_path):
    (tmp_path / "speed_gate.manifest").write_text(MANIFEST_TEXT)
    shadow = MANIFEST_TEXT.replace("id = speed_gate", "id = moving_average")
    (tmp_path / "shadow.manifest").write_text(shadow)
    reg = scan_registry([tmp_path, tmp_path / "does_not_exist"])
    assert "speed_gate" in reg
    assert not reg.get("speed_gate").is_builtin
    # builtin ids cannot be shadowed by scanned files
    assert reg.get("moving_average").is_builtin
    assert reg.warnings


# --- validation and editing ---

def _cfg(*stages, source="", sink=""):
    return PipelineConfig("t", tuple(PipelineStage(p, params) for p, params in stages),
                          source=source, sink=sink)


def test_validate_accepts_well_formed_chain():
    cfg = _cfg(("load_pose3d", {"path": "a.csv"}),
               ("moving_average", {"window": "3"}),
               ("save_pose3d", {"path": "b.csv"}))
    assert validate_pipeline(cfg, builtin_registry()) == []


def test_validate_flags_first_stage_taking_input():
    cfg = _cfg(("moving_average", {}))
    diags = validate_pipeline(cfg, builtin_registry())
    assert len(diags) == 1 and diags[0].stage_index == 0
    assert "first stage" in diags[0].message


def test_validate_flags_kind_break():
    cfg = _cfg(("load_pose2d", {"path": "a.csv"}), ("moving_average", {}))
    diags = validate_pipeline(cfg, builtin_registry())
    assert [d.stage_index for d in diags] == [1]
    assert "pose3d" in diags[0].message and "pose2d" in diags[0].message


def test_validate_flags_unknown_processor_and_params():
    cfg = _cfg(("load_pose3d", {"pathh": "a.csv"}),
               ("no_such_thing", {}),
               ("velocity_filter", {}),
               ("moving_average", {"window": "huge"}))
    diags = validate_pipeline(cfg, builtin_registry())
    by_stage = {}
    for d in diags:
        by_stage.setdefault(d.stage_index, []).append(d.message)
    assert any("pathh" in m for m in by_stage[0])
    assert any("no_such_thing" in m for m in by_stage[1])
    assert any("max_speed" in m for m in by_stage[2])
    assert any("huge" in m.lower() or "invalid" in m.lower() for m in by_stage[3])


def test_validate_empty_pipeline():
    diags = validate_pipeline(PipelineConfig("t", ()), builtin_registry())
    assert diags == [Diagnostic(-1, "pipeline has no stages")]


def test_swap_stage_replaces_compatible_processor():
    cfg = _cfg(("load_pose3d", {"path": "a.csv"}),
               ("moving_average", {"window": "3"}),
               ("save_pose3d", {"path": "b.csv"}))
    reg = builtin_registry()
    out = swap_stage(cfg, reg, 1, "kalman_filter", {"process_noise": "0.05"})
    assert out.stages[1].processor == "kalman_filter"
    assert out.stages[1].params == {"process_noise": "0.05"}
    assert out.stages[0] == cfg.stages[0] and out.stages[2] == cfg.stages[2]
    assert validate_pipeline(out, reg) == []


def test_swap_stage_rejects_kind_breaks():
    cfg = _cfg(("load_pose3d", {"path": "a.csv"}),
               ("moving_average", {"window": "3"}),
               ("save_pose3d", {"path": "b.csv"}))
    reg = builtin_registry()
    with pytest.raises(KindMismatch):
        swap_stage(cfg, reg, 1, "moving_average_2d", {})
    with pytest.raises(KindMismatch):
        swap_stage(cfg, reg, 1, "input_statistics", {})   # table breaks downstream
    with pytest.raises(KindMismatch):
        swap_stage(cfg, reg, 1, "nonexistent", {})
    with pytest.raises(IndexError):
        swap_stage(cfg, reg, 9, "kalman_filter", {})


# --- execution ---

def _write_seq(rng, path, **kwargs):
    seq = make_sequence(rng, **kwargs)
    write_pose_file(seq, path, "cvkit")
    return seq


def test_run_pipeline_end_to_end(rng, tmp_path):
    src = tmp_path / "in.csv"
    dst = tmp_path / "out.csv"
    seq = _write_seq(rng, src, n_frames=30, invalid_fraction=0.1)
    cfg = _cfg(("load_pose3d", {"path": str(src)}),
               ("moving_average", {"window": "3"}),
               ("save_pose3d", {"path": str(dst)}))
    ws = tmp_path / "ws"
    report = run_pipeline(cfg, builtin_registry(), ws)

    expect = filters.moving_average(seq, window=3)
    assert read_pose_file(dst, "cvkit").equals(expect)

    assert len(report.stages) == 3
    assert [s.processor for s in report.stages] == [
        "load_pose3d", "moving_average", "save_pose3d"]
    for i, s in enumerate(report.stages):
        assert s.index == i
        assert s.items == 30
        assert s.wall_time_s >= 0
        assert (ws / ("stage_%d_%s.csv" % (i, s.processor))).exists()
        assert s.artifact.endswith("stage_%d_%s.csv" % (i, s.processor))
    assert report.stages[0].input_stats is None
    assert report.stages[1].input_stats is not None
    assert read_pose_file(report.stages[1].artifact, "cvkit").equals(expect)


def test_run_pipeline_matches_direct_composition(rng, tmp_path):
    src = tmp_path / "in.csv"
    seq = _write_seq(rng, src, n_frames=40, invalid_fraction=0.2)
    cfg = _cfg(("load_pose3d", {"path": str(src)}),
               ("kalman_filter", {}),
               ("moving_average", {"window": "5"}))
    report = run_pipeline(cfg, builtin_registry(), tmp_path / "ws")
    piped = read_pose_file(report.stages[-1].artifact, "cvkit")
    direct = filters.moving_average(filters.kalman_filter(seq), window=5)
    assert np.array_equal(piped.coords, direct.coords)
    assert np.array_equal(piped.scores, direct.scores)


def test_run_pipeline_source_sink_defaults(rng, tmp_path):
    src = tmp_path / "in.csv"
    dst = tmp_path / "out.csv"
    seq = _write_seq(rng, src, n_frames=10)
    cfg = _cfg(("load_pose3d", {}), ("save_pose3d", {}),
               source=str(src), sink=str(dst))
    run_pipeline(cfg, builtin_registry(), tmp_path / "ws")
    assert read_pose_file(dst, "cvkit").equals(seq)


def test_run_pipeline_wraps_stage_errors(rng, tmp_path):
    cfg = _cfg(("load_pose3d", {"path": str(tmp_path / "missing.csv")}),
               ("moving_average", {}))
    with pytest.raises(StageFailure) as exc_info:
        run_pipeline(cfg, builtin_registry(), tmp_path / "ws")
    err = exc_info.value
    assert err.stage_index == 0
    assert err.partial_report is not None
    assert err.partial_report.stages == ()


def test_run_pipeline_rejects_invalid_config(rng, tmp_path):
    cfg = _cfg(("moving_average", {}))
    with pytest.raises(ValueError):
        run_pipeline(cfg, builtin_registry(), tmp_path / "ws")


def test_run_pipeline_stats_stage(rng, tmp_path):
    src = tmp_path / "in.csv"
    dst = tmp_path / "stats.csv"
    seq = _write_seq(rng, src, n_frames=25, invalid_fraction=0.15)
    cfg = _cfg(("load_pose3d", {"path": str(src)}),
               ("input_statistics", {}),
               ("save_table", {"path": str(dst)}))
    report = run_pipeline(cfg, builtin_registry(), tmp_path / "ws")
    table = read_table(dst)
    assert table == input_statistics(seq)
    assert report.stages[1].items == len(table)


# --- external processors ---

EXT_SCRIPT = """\
import shutil, sys
src, dst, mode = sys.argv[1], sys.argv[2], sys.argv[3]
if mode == "copy":
    shutil.copyfile(src, dst)
elif mode == "silent":
    pass
else:
    sys.stderr.write("refusing: mode=%s\\n" % mode)
    sys.exit(3)
"""

EXT_MANIFEST = """\
id = passthrough
category = filter
input_kind = pose3d
output_kind = pose3d
exec = external:python3 {script} {input} {output} {mode}

[param]
name = script
type = path
required = true

[param]
name = mode
type = string
default = copy
"""


def _external_setup(rng, tmp_path):
    script = tmp_path / "ext.py"
    script.write_text(EXT_SCRIPT)
    (tmp_path / "passthrough.manifest").write_text(EXT_MANIFEST)
    reg = scan_registry([tmp_path])
    src = tmp_path / "in.csv"
    seq = _write_seq(rng, src, n_frames=12, invalid_fraction=0.1)
    return reg, script, src, seq


def test_external_stage_round_trips(rng, tmp_path):
    reg, script, src, seq = _external_setup(rng, tmp_path)
    cfg = _cfg(("load_pose3d", {"path": str(src)}),
               ("passthrough", {"script": str(script)}))
    ws = tmp_path / "ws"
    report = run_pipeline(cfg, reg, ws)
    assert read_pose_file(report.stages[1].artifact, "cvkit").equals(seq)
    assert (ws / "stage_1_passthrough_input.csv").exists()
    assert (ws / "stage_1_passthrough_output.csv").exists()


def test_external_stage_failure_reports_exit_and_stderr(rng, tmp_path):
    reg, script, src, _ = _external_setup(rng, tmp_path)
    cfg = _cfg(("load_pose3d", {"path": str(src)}),
               ("passthrough", {"script": str(script), "mode": "explode"}))
    with pytest.raises(ExternalProcessError) as exc_info:
        run_pipeline(cfg, reg, tmp_path / "ws")
    err = exc_info.value
    assert err.exit_code == 3
    assert "mode=explode" in err.stderr
    assert err.stage_index == 1
    assert len(err.partial_report.stages) == 1


def test_external_stage_must_write_output(rng, tmp_path):
    reg, script, src, _ = _external_setup(rng, tmp_path)
    cfg = _cfg(("load_pose3d", {"path": str(src)}),
               ("passthrough", {"script": str(script), "mode": "silent"}))
    with pytest.raises(ExternalProcessError):
        run_pipeline(cfg, reg, tmp_path / "ws")


# --- reconstruction and reprojection ops ---

# Orthographic-style cameras with unit denominators: cam a sees (x, y),
# cam b sees (x, z). Triangulation is exact for consistent observations.
CAM_XY = CameraProfile("a", np.array([1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0], dtype=float))
CAM_XZ = CameraProfile("b", np.array([1, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0], dtype=float))


def _two_views(seq):
    views = []
    for cam in (CAM_XY, CAM_XZ):
        coords = np.zeros((len(seq), len(seq.part_order), 2))
        for i in range(len(seq)):
            for j in range(len(seq.part_order)):
                coords[i, j] = dlt_project(cam, seq.coords[i, j])
        views.append(seq.with_arrays(coords=coords))
    return views


def test_reconstruct_sequences_recovers_points(rng):
    seq = make_sequence(rng, n_frames=15)
    views = _two_views(seq)
    out = reconstruct_sequences(views, [CAM_XY, CAM_XZ])
    assert np.allclose(out.coords, seq.coords, atol=1e-9)
    assert np.array_equal(out.frame_indices, seq.frame_indices)
    assert np.allclose(out.scores, (views[0].scores + views[1].scores) / 2)


def test_reconstruct_marks_underobserved_parts_invalid(rng):
    seq = make_sequence(rng, n_frames=6)
    views = _two_views(seq)
    scores = views[0].scores.copy()
    scores[2, 1] = 0.0          # one view lost -> only one observation left
    views[0] = views[0].with_arrays(scores=scores)
    out = reconstruct_sequences(views, [CAM_XY, CAM_XZ])
    assert out.scores[2, 1] == 0.0
    assert np.all(out.coords[2, 1] == 0.0)
    assert out.scores[3, 1] > 0


def test_reconstruct_rejects_unsynchronized_views(rng):
    seq = make_sequence(rng, n_frames=6)
    views = _two_views(seq)
    other = make_sequence(rng, n_frames=6, parts=("a", "b", "c"), dims=2)
    with pytest.raises(ValueError):
        reconstruct_sequences([views[0], other], [CAM_XY, CAM_XZ])


def test_reproject_sequence_projects_valid_parts(rng):
    seq = make_sequence(rng, n_frames=8, invalid_fraction=0.2)
    out = reproject_sequence(seq, CAM_XY)
    assert out.dims == 2
    valid = seq.valid_mask()
    assert np.allclose(out.coords[valid], seq.coords[valid][:, :2])
    assert np.all(out.scores[~valid] == 0.0)


# --- statistics and grid flattening ---

def test_input_statistics_values(rng):
    coords = np.array([[[0.0, 1.0, 2.0]], [[4.0, 5.0, 6.0]], [[8.0, 3.0, 4.0]]])
    scores = np.array([[0.9], [0.8], [0.1]])
    seq = __import__("posekit.pose", fromlist=["PoseSequence"]).PoseSequence.from_arrays(
        ("snout",), coords, scores, fps=25.0, score_threshold=0.6)
    t = input_statistics(seq)
    got = {(r[0], r[1]): r[2] for r in t.rows}
    assert got[("", "frames")] == 3.0
    assert got[("", "fps")] == 25.0
    assert got[("snout", "valid_fraction")] == pytest.approx(2 / 3)
    assert got[("snout", "mean_score")] == pytest.approx((0.9 + 0.8 + 0.1) / 3)
    assert got[("snout", "x_min")] == 0.0
    assert got[("snout", "x_max")] == 4.0
    assert got[("snout", "x_mean")] == 2.0
    assert got[("snout", "z_mean")] == 4.0


def test_input_statistics_empty_sequence():
    from posekit.pose import PoseSequence
    empty = PoseSequence.from_arrays(("a",), np.zeros((0, 1, 3)), np.zeros((0, 1)),
                                     fps=30.0, score_threshold=0.6)
    with pytest.raises(EmptySequence):
        input_statistics(empty)


def test_grid_to_table_flattens_bins():
    from posekit.behavior import AnalysisGrid
    grid = AnalysisGrid(np.array([0.0, 1.0, 2.0]), np.array([0.0, 5.0]),
                        np.array([[3.0], [4.0]]), "seconds",
                        mask=np.array([[False], [True]]))
    t = grid_to_table(grid, prefix=(("wall", "north"),))
    assert t.columns == ("wall", "x_lo", "x_hi", "y_lo", "y_hi", "value", "masked")
    assert len(t) == 2
    assert t.rows[0] == ("north", 0.0, 1.0, 0.0, 5.0, 3.0, False)
    assert t.rows[1] == ("north", 1.0, 2.0, 0.0, 5.0, 4.0, True)


def test_behavior_stage_runs_in_pipeline(rng, tmp_path):
    src = tmp_path / "in.csv"
    seq = make_sequence(rng, n_frames=60, parts=("anchor",))
    write_pose_file(seq, src, "cvkit")
    cfg = _cfg(("load_pose3d", {"path": str(src)}),
               ("occupancy_map", {"anchor": "anchor",
                                  "xmin": "-100", "xmax": "100",
                                  "ymin": "-100", "ymax": "100",
                                  "nx": "4", "ny": "4"}))
    report = run_pipeline(cfg, builtin_registry(), tmp_path / "ws")
    table = read_table(report.stages[1].artifact)
    assert table.columns == ("x_lo", "x_hi", "y_lo", "y_hi", "value")
    assert len(table) == 16
    total = sum(r[4] for r in table.rows)
    assert total == pytest.approx(np.count_nonzero(seq.valid_mask()) / seq.fps)
