"""Command-line entry points.

Every subcommand is a thin wrapper over a library call and writes its
artifact with the same writer the library uses, so a CLI run and the
equivalent library call produce identical files.

Exit codes: 0 success, 1 usage error, 2 operation error (error class
name and message on stderr).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .annotations import AnnotationStore
from .benchmark import benchmark_throughput, write_benchmark_csv
from .errors import PoseKitError
from .geometry import export_easywand_package, load_dlt_coefficients
from .metrics import mpjpe, pck, write_metric_csv
from .pipeline import (
    RunContext,
    Table,
    builtin_registry,
    load_pipeline_config,
    report_to_dict,
    run_pipeline,
    scan_registry,
    validate_pipeline,
    write_table,
)
from .pose_io import read_pose_file, translate_pose_file, write_pose_file

READ_FORMATS = ("cvkit", "flat_csv", "dlc_csv")
WRITE_FORMATS = ("cvkit", "flat_csv")
FILTER_NAMES = ("kalman_filter", "linear_interpolate", "moving_average",
                "velocity_filter", "statistical_distance_filter")
ANALYZE_OPS = ("input_statistics", "occupancy_map", "gaze_heatmap",
               "detect_rearing", "ebc_rate_map", "spike_locations")


class _Parser(argparse.ArgumentParser):
    # usage problems exit 1; argparse's default of 2 is reserved for
    # operation errors here
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write("%s: error: %s\n" % (self.prog, message))
        raise SystemExit(1)


def _parse_kv(pairs):
    out = {}
    for pair in pairs or ():
        if "=" not in pair:
            raise ValueError("expected name=value, got %r" % pair)
        key, _, value = pair.partition("=")
        out[key] = value
    return out


def _run_builtin(op_id: str, seq, raw_params):
    registry = builtin_registry()
    if op_id not in registry:
        raise ValueError("unknown operation %r" % op_id)
    manifest = registry.get(op_id)
    params = {}
    declared = {p.name for p in manifest.params}
    for key in raw_params:
        if key not in declared:
            raise ValueError("unknown param %r for %s" % (key, op_id))
    from .pipeline import coerce_param
    for spec in manifest.params:
        if spec.name in raw_params:
            params[spec.name] = coerce_param(spec, raw_params[spec.name])
        elif spec.default is not None:
            params[spec.name] = coerce_param(spec, spec.default)
        elif spec.required:
            raise ValueError("required param %r unbound" % spec.name)
    impl = registry.implementation(op_id)
    return impl(seq, params, RunContext(Path.cwd(), "", ""))


def _cmd_convert(args) -> int:
    translate_pose_file(args.in_path, args.in_format, args.out, args.out_format,
                        fps=args.fps, score_threshold=args.score_threshold)
    print(args.out)
    return 0


def _cmd_calibrate_export(args) -> int:
    store = AnnotationStore.load(args.annotations)
    order = args.cameras.split(",") if args.cameras else None
    manifest = export_easywand_package(store.annotation_map(), args.out,
                                       camera_order=order)
    print(manifest)
    return 0


def _cmd_triangulate(args) -> int:
    if len(args.view) < 2:
        raise ValueError("triangulation needs >= 2 --view files")
    cams = load_dlt_coefficients(args.dlt)
    views = [read_pose_file(v, "cvkit") for v in args.view]
    from .pipeline import reconstruct_sequences
    out = reconstruct_sequences(views, cams)
    write_pose_file(out, args.out, "cvkit")
    print(args.out)
    return 0


def _cmd_filter(args) -> int:
    seq = read_pose_file(args.in_path, args.in_format,
                         fps=args.fps, score_threshold=args.score_threshold)
    op_id = args.name if seq.dims == 3 else args.name + "_2d"
    filtered = _run_builtin(op_id, seq, _parse_kv(args.param))
    write_pose_file(filtered, args.out, args.out_format)
    print(args.out)
    return 0


def _cmd_metric(args) -> int:
    pred = read_pose_file(args.pred, "cvkit")
    gt = read_pose_file(args.gt, "cvkit")
    if args.kind == "mpjpe":
        report = mpjpe(pred, gt)
    else:
        if args.x is None or not args.ref_a or not args.ref_b:
            raise ValueError("pck needs --x, --ref-a and --ref-b")
        report = pck(pred, gt, args.x, args.ref_a, args.ref_b)
    if args.out:
        write_metric_csv(report, args.out)
        print(args.out)
    else:
        print(repr(report.overall))
    return 0


def _cmd_analyze(args) -> int:
    seq = read_pose_file(args.in_path, "cvkit")
    table = _run_builtin(args.op, seq, _parse_kv(args.param))
    if not isinstance(table, Table):
        raise ValueError("operation %r is not tabular" % args.op)
    write_table(table, args.out)
    print(args.out)
    return 0


def _registry_from(args):
    if args.manifests:
        return scan_registry(args.manifests)
    return builtin_registry()


def _cmd_pipeline_validate(args) -> int:
    cfg = load_pipeline_config(args.config)
    diags = validate_pipeline(cfg, _registry_from(args))
    if not diags:
        print("OK")
        return 0
    for d in diags:
        print("stage %d: %s" % (d.stage_index, d.message))
    sys.stderr.write("InvalidPipeline: %d problem(s)\n" % len(diags))
    return 2


def _cmd_pipeline_run(args) -> int:
    cfg = load_pipeline_config(args.config)
    report = run_pipeline(cfg, _registry_from(args), args.workspace)
    text = json.dumps(report_to_dict(report), indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
        print(args.out)
    else:
        print(text)
    return 0


def _cmd_bench_io(args) -> int:
    backends = args.backend or ["image_dir", "buffered:image_dir"]
    results = benchmark_throughput(args.source, backends, args.frames,
                                   load_mode=args.mode,
                                   buffer_capacity=args.capacity)
    write_benchmark_csv(results, args.out)
    print(args.out)
    return 0


def _cmd_serve(args) -> int:
    from .service import serve
    serve(args.project, port=args.port, host=args.host, ui_dir=args.ui)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="posekit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    p = sub.add_parser("convert", help="rewrite a pose file in another format")
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--in-format", choices=READ_FORMATS, default="cvkit")
    p.add_argument("--out", required=True)
    p.add_argument("--out-format", choices=WRITE_FORMATS, default="cvkit")
    p.add_argument("--fps", type=float, default=None,
                   help="for input formats without embedded metadata")
    p.add_argument("--score-threshold", type=float, default=None)
    p.set_defaults(func=_cmd_convert)

    p = sub.add_parser("calibrate-export",
                       help="export annotated frames as a wand-calibration package")
    p.add_argument("--annotations", required=True, help="annotation store CSV")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--cameras", default="", help="comma-joined camera order")
    p.set_defaults(func=_cmd_calibrate_export)

    p = sub.add_parser("triangulate", help="reconstruct 3D poses from 2D views")
    p.add_argument("--dlt", required=True, help="camera coefficient CSV")
    p.add_argument("--view", action="append", default=[],
                   help="2D pose file, camera order (repeat)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_triangulate)

    p = sub.add_parser("filter", help="apply a track filter to a pose file")
    p.add_argument("--name", choices=FILTER_NAMES, required=True)
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--in-format", choices=READ_FORMATS, default="cvkit")
    p.add_argument("--out", required=True)
    p.add_argument("--out-format", choices=WRITE_FORMATS, default="cvkit")
    p.add_argument("--param", action="append", default=[], metavar="NAME=VALUE")
    p.add_argument("--fps", type=float, default=None)
    p.add_argument("--score-threshold", type=float, default=None)
    p.set_defaults(func=_cmd_filter)

    p = sub.add_parser("metric", help="score predictions against ground truth")
    p.add_argument("kind", choices=("mpjpe", "pck"))
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--x", type=float, default=None, help="pck threshold percent")
    p.add_argument("--ref-a", default="", help="pck reference part")
    p.add_argument("--ref-b", default="", help="pck reference part")
    p.add_argument("--out", default="", help="write scope,key,value CSV here")
    p.set_defaults(func=_cmd_metric)

    p = sub.add_parser("analyze", help="run a tabular analysis on a 3D pose file")
    p.add_argument("--op", choices=ANALYZE_OPS, required=True)
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--param", action="append", default=[], metavar="NAME=VALUE")
    p.set_defaults(func=_cmd_analyze)

    p = sub.add_parser("pipeline", help="validate or run pipeline configs")
    psub = p.add_subparsers(dest="pipeline_command", required=True,
                            parser_class=_Parser)
    pv = psub.add_parser("validate")
    pv.add_argument("config")
    pv.add_argument("--manifests", action="append", default=[],
                    help="directory of extra processor manifests (repeat)")
    pv.set_defaults(func=_cmd_pipeline_validate)
    pr = psub.add_parser("run")
    pr.add_argument("config")
    pr.add_argument("--workspace", required=True)
    pr.add_argument("--manifests", action="append", default=[])
    pr.add_argument("--out", default="", help="write the run report JSON here")
    pr.set_defaults(func=_cmd_pipeline_run)

    p = sub.add_parser("bench-io", help="measure frame decode throughput")
    p.add_argument("--source", required=True)
    p.add_argument("--frames", type=int, required=True)
    p.add_argument("--backend", action="append", default=None,
                   help="reader spec, optionally buffered:<name> (repeat); "
                        "default: image_dir and buffered:image_dir")
    p.add_argument("--mode", choices=("idle", "loaded"), default="idle")
    p.add_argument("--capacity", type=int, default=64)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_bench_io)

    p = sub.add_parser("serve", help="run the local annotation/pipeline service")
    p.add_argument("--project", required=True)
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--ui", default=None, help="directory of built UI assets")
    p.set_defaults(func=_cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 1
    except PoseKitError as exc:
        sys.stderr.write("%s: %s\n" % (type(exc).__name__, exc))
        return 2
    except (OSError, ValueError) as exc:
        sys.stderr.write("%s: %s\n" % (type(exc).__name__, exc))
        return 2


if __name__ == "__main__":
    sys.exit(main())
