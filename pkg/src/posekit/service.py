"""Local HTTP service for the annotation and pipeline UI.

Single-user, localhost-only transport over the library modules. All
state lives in the project directory; every mutation is persisted
atomically before the response goes out, so a restarted service picks
up exactly where the last one stopped.

Pipeline runs execute on a single background worker; extra run requests
queue behind it. Clients poll ``GET /runs/{id}``.
"""

from __future__ import annotations

import io
import re
import socket
import threading
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional

from fastapi import Body, FastAPI, Response
from fastapi.responses import FileResponse, JSONResponse
from PIL import Image

from .annotations import (
    PROVENANCE,
    AnnotationStore,
    interpolate_annotations,
    reprojection_assist,
)
from .errors import PortInUse, PoseKitError
from .frames import open_backend
from .geometry import (
    export_easywand_package,
    load_dlt_coefficients,
    select_calibration_frames,
)
from .pipeline import (
    PipelineConfig,
    PipelineStage,
    ProcessorManifest,
    load_pipeline_config,
    report_to_dict,
    run_pipeline,
    save_pipeline_config,
    scan_registry,
    validate_pipeline,
)
from .project import (
    PIPELINE_SUFFIX,
    PROCESSOR_DIR,
    RUNS_DIR,
    Project,
    add_pipeline,
    load_project,
    project_from_dict,
    project_to_dict,
    save_project,
)

ANNOTATION_FILE = "annotations.csv"
_PIPELINE_ID = re.compile(r"^[A-Za-z0-9_-]+$")
_FRAME_MODES = {1: "L", 3: "RGB", 4: "RGBA"}

# HTTP status per error family; PoseKitError not listed here maps to 422.
_STATUS_OVERRIDES = {
    "OutOfRange": 404,
    "UnreadableSource": 404,
    "IoFailure": 500,
}


class ApiError(Exception):
    def __init__(self, status_code: int, code: str, message: str, detail: str = ""):
        super().__init__(message)
        self.status_code = status_code
        self.code = code
        self.detail = detail


def _error_body(code: str, message: str, detail: str = "") -> Dict[str, str]:
    return {"code": code, "message": message, "detail": detail}


def _manifest_dict(m: ProcessorManifest) -> Dict:
    return {
        "id": m.id,
        "category": m.category,
        "input_kind": m.input_kind,
        "output_kind": m.output_kind,
        "exec": m.exec_spec,
        "params": [
            {
                "name": p.name,
                "type": p.type,
                "required": p.required,
                "default": p.default,
                "label": p.label,
                "variants": list(p.variants),
            }
            for p in m.params
        ],
    }


def _point_dict(pt) -> Dict:
    return {"camera": pt.camera, "frame": pt.frame, "part": pt.part,
            "u": pt.u, "v": pt.v, "provenance": pt.provenance,
            "residual": pt.residual}


def _config_dict(cfg: PipelineConfig) -> Dict:
    return {
        "name": cfg.name,
        "source": cfg.source,
        "sink": cfg.sink,
        "stages": [{"processor": s.processor, "params": dict(s.params)}
                   for s in cfg.stages],
    }


def _config_from_dict(data: Dict) -> PipelineConfig:
    stages = tuple(
        PipelineStage(s["processor"], {k: str(v) for k, v in s.get("params", {}).items()})
        for s in data.get("stages", ())
    )
    return PipelineConfig(
        name=str(data.get("name", "pipeline")),
        stages=stages,
        source=str(data.get("source", "")),
        sink=str(data.get("sink", "")),
    )


def build_app(project_dir, ui_dir=None) -> FastAPI:
    root = Path(project_dir)
    app = FastAPI(title="posekit service")
    state = {
        "project": load_project(root),
        "store": AnnotationStore.load(root / ANNOTATION_FILE),
        "registry": scan_registry([root / PROCESSOR_DIR]),
    }
    lock = threading.Lock()           # serializes project/store mutations
    runs: Dict[str, Dict] = {}
    runs_lock = threading.Lock()
    run_counter = {"n": 0}
    executor = ThreadPoolExecutor(max_workers=1)    # one pipeline run at a time
    app.state.executor = executor

    @app.exception_handler(ApiError)
    def _api_error(request, exc: ApiError):
        return JSONResponse(status_code=exc.status_code,
                            content=_error_body(exc.code, str(exc), exc.detail))

    @app.exception_handler(PoseKitError)
    def _posekit_error(request, exc: PoseKitError):
        status = _STATUS_OVERRIDES.get(type(exc).__name__, 422)
        return JSONResponse(status_code=status,
                            content=_error_body(type(exc).__name__, str(exc)))

    @app.exception_handler(ValueError)
    def _value_error(request, exc: ValueError):
        return JSONResponse(status_code=422,
                            content=_error_body("ValueError", str(exc)))

    def _project() -> Project:
        return state["project"]

    def _store() -> AnnotationStore:
        return state["store"]

    def _camera(name: str):
        cam = _project().camera(name)
        if cam is None:
            raise ApiError(404, "UnknownCamera", "no camera named %r" % name)
        return cam

    def _check_point_target(camera: str, part: str):
        _camera(camera)
        order = _project().part_order
        if order and part not in order:
            raise ApiError(422, "UnknownPart", "no part named %r" % part)

    # --- registry ---

    @app.get("/processors")
    def processors():
        return {"processors": [_manifest_dict(m)
                               for m in state["registry"].manifests()]}

    # --- project ---

    @app.get("/project")
    def get_project():
        return project_to_dict(_project())

    @app.post("/project")
    def post_project(payload: Dict = Body(...)):
        project = project_from_dict(payload)
        with lock:
            save_project(project, root)
            state["project"] = project
        return project_to_dict(project)

    # --- frames ---

    @app.get("/frames/{camera}/{index}")
    def get_frame(camera: str, index: int):
        cam = _camera(camera)
        stream = Path(cam.stream)
        if not stream.is_absolute():
            stream = root / stream
        backend = open_backend(stream, cam.backend)
        frame = backend.read(index)
        mode = _FRAME_MODES.get(frame.channels)
        if mode is None:
            raise ApiError(500, "UnsupportedPixels",
                           "%d-channel frames cannot be encoded" % frame.channels)
        image = Image.frombytes(mode, (frame.width, frame.height), frame.pixels)
        buf = io.BytesIO()
        image.save(buf, format="PNG")
        return Response(content=buf.getvalue(), media_type="image/png")

    # --- annotations ---

    @app.get("/annotations")
    def get_annotations(camera: Optional[str] = None, frame: Optional[int] = None):
        points = _store().points(camera=camera, frame=frame)
        return {"annotations": [_point_dict(p) for p in points]}

    @app.post("/annotations")
    def post_annotation(payload: Dict = Body(...)):
        for key in ("camera", "frame", "part", "u", "v"):
            if key not in payload:
                raise ApiError(422, "MissingField", "annotation needs %r" % key)
        provenance = payload.get("provenance", "annotated")
        if provenance not in PROVENANCE:
            raise ApiError(422, "BadProvenance",
                           "provenance must be one of %s" % (PROVENANCE,))
        _check_point_target(str(payload["camera"]), str(payload["part"]))
        with lock:
            point = _store().set_point(
                str(payload["camera"]), int(payload["frame"]), str(payload["part"]),
                float(payload["u"]), float(payload["v"]), provenance,
                float(payload.get("residual", 0.0)))
            _store().save()
        return _point_dict(point)

    @app.delete("/annotations")
    def delete_annotation(camera: str, frame: int, part: str):
        with lock:
            removed = _store().remove(camera, frame, part)
            if removed:
                _store().save()
        if not removed:
            raise ApiError(404, "UnknownAnnotation",
                           "no point for %s/%s at frame %d" % (camera, part, frame))
        return {"removed": True}

    @app.post("/annotations/interpolate")
    def interpolate(payload: Dict = Body(...)):
        for key in ("camera", "part", "frame_a", "frame_b"):
            if key not in payload:
                raise ApiError(422, "MissingField", "interpolation needs %r" % key)
        with lock:
            filled = interpolate_annotations(
                _store(), str(payload["camera"]), str(payload["part"]),
                int(payload["frame_a"]), int(payload["frame_b"]))
            if filled:
                _store().save()
        return {"filled": filled}

    # --- reprojection assist ---

    @app.post("/reproject")
    def reproject(payload: Dict = Body(...)):
        for key in ("frame", "part"):
            if key not in payload:
                raise ApiError(422, "MissingField", "reprojection needs %r" % key)
        cams = [c.profile() for c in _project().cameras if c.calibrated]
        if len(cams) < 2:
            raise ApiError(422, "InsufficientViews",
                           "reprojection needs >= 2 calibrated cameras, have %d"
                           % len(cams))
        with lock:
            proposals = reprojection_assist(_store(), cams,
                                            int(payload["frame"]),
                                            str(payload["part"]))
            if proposals:
                _store().save()
        return {"proposals": [_point_dict(p) for p in
                              sorted(proposals.values(), key=lambda p: p.camera)]}

    # --- calibration ---

    @app.post("/calibration/select-frames")
    def select_frames(payload: Dict = Body(...)):
        if "count" not in payload:
            raise ApiError(422, "MissingField", "selection needs 'count'")
        frames = select_calibration_frames(_store().annotation_map(),
                                           int(payload["count"]))
        return {"frames": frames}

    @app.post("/calibration/export-easywand")
    def export_easywand(payload: Dict = Body(default={})):
        out_dir = Path(payload.get("out_dir") or (root / "calibration"))
        cameras = [c.name for c in _project().cameras] or None
        amap = _store().annotation_map()
        for name in cameras or ():
            amap.setdefault(name, {})   # unannotated camera -> empty intersection
        manifest = export_easywand_package(amap, out_dir, camera_order=cameras)
        return {"manifest": str(manifest), "out_dir": str(out_dir)}

    @app.post("/calibration/import-dlt")
    def import_dlt(payload: Dict = Body(...)):
        if "path" not in payload:
            raise ApiError(422, "MissingField", "import needs 'path'")
        project = _project()
        if not project.cameras:
            raise ApiError(422, "NoCameras", "project has no cameras to calibrate")
        names = [c.name for c in project.cameras]
        cams = load_dlt_coefficients(payload["path"], names=names)
        if len(cams) != len(names):
            raise ApiError(422, "CameraCountMismatch",
                           "file has %d cameras, project has %d"
                           % (len(cams), len(names)))
        from dataclasses import replace as _replace
        new_cameras = tuple(
            _replace(cfg, dlt=tuple(float(v) for v in cam.dlt))
            for cfg, cam in zip(project.cameras, cams))
        updated = _replace(project, cameras=new_cameras)
        with lock:
            save_project(updated, root)
            state["project"] = updated
        return project_to_dict(updated)

    # --- pipelines ---

    def _pipeline_path(pid: str) -> Path:
        return root / (pid + PIPELINE_SUFFIX)

    @app.get("/pipelines")
    def get_pipelines():
        out = []
        for path in sorted(root.glob("*" + PIPELINE_SUFFIX)):
            cfg = load_pipeline_config(path)
            diags = validate_pipeline(cfg, state["registry"])
            out.append({
                "id": path.stem,
                "file": path.name,
                "config": _config_dict(cfg),
                "diagnostics": [{"stage_index": d.stage_index, "message": d.message}
                                for d in diags],
            })
        return {"pipelines": out}

    @app.post("/pipelines")
    def post_pipeline(payload: Dict = Body(...)):
        pid = str(payload.get("id", ""))
        if not _PIPELINE_ID.match(pid):
            raise ApiError(422, "BadPipelineId",
                           "id must match %s" % _PIPELINE_ID.pattern)
        if "config" not in payload:
            raise ApiError(422, "MissingField", "save needs 'config'")
        cfg = _config_from_dict(payload["config"])
        diags = validate_pipeline(cfg, state["registry"])
        body = {"id": pid,
                "diagnostics": [{"stage_index": d.stage_index, "message": d.message}
                                for d in diags]}
        if diags:
            body["saved"] = False
            return body
        with lock:
            save_pipeline_config(cfg, _pipeline_path(pid))
            updated = add_pipeline(_project(), _pipeline_path(pid).name)
            if updated is not _project():
                save_project(updated, root)
                state["project"] = updated
        body["saved"] = True
        body["file"] = _pipeline_path(pid).name
        return body

    # --- runs ---

    def _execute_run(run_id: str, cfg_path: Path):
        with runs_lock:
            runs[run_id]["status"] = "running"
        try:
            cfg = load_pipeline_config(cfg_path)
            report = run_pipeline(cfg, state["registry"],
                                  root / RUNS_DIR / run_id)
            with runs_lock:
                runs[run_id]["status"] = "done"
                runs[run_id]["report"] = report_to_dict(report)
        except Exception as exc:
            partial = getattr(exc, "partial_report", None)
            with runs_lock:
                runs[run_id]["status"] = "failed"
                runs[run_id]["error"] = _error_body(type(exc).__name__, str(exc))
                if partial is not None:
                    runs[run_id]["report"] = report_to_dict(partial)

    @app.post("/pipelines/{pid}/run")
    def run_saved_pipeline(pid: str):
        cfg_path = _pipeline_path(pid)
        if not cfg_path.exists():
            raise ApiError(404, "UnknownPipeline", "no saved pipeline %r" % pid)
        with runs_lock:
            run_counter["n"] += 1
            run_id = "run_%04d" % run_counter["n"]
            runs[run_id] = {"id": run_id, "pipeline": pid, "status": "queued",
                            "report": None, "error": None}
        executor.submit(_execute_run, run_id, cfg_path)
        return {"run_id": run_id, "status": "queued"}

    @app.get("/runs/{run_id}")
    def get_run(run_id: str):
        with runs_lock:
            record = runs.get(run_id)
            if record is None:
                raise ApiError(404, "UnknownRun", "no run %r" % run_id)
            return dict(record)

    @app.get("/runs/{run_id}/artifacts/{stage}")
    def get_artifact(run_id: str, stage: int):
        with runs_lock:
            record = runs.get(run_id)
            if record is None:
                raise ApiError(404, "UnknownRun", "no run %r" % run_id)
            report = record.get("report")
        if not report or stage >= len(report["stages"]):
            raise ApiError(404, "UnknownArtifact",
                           "run %s has no stage %d artifact" % (run_id, stage))
        artifact = report["stages"][stage]["artifact"]
        if not artifact or not Path(artifact).exists():
            raise ApiError(404, "UnknownArtifact",
                           "stage %d produced no artifact" % stage)
        return FileResponse(artifact, media_type="text/csv")

    if ui_dir is not None and Path(ui_dir).is_dir():
        from fastapi.staticfiles import StaticFiles
        app.mount("/ui", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app


def serve(project_dir, port: int = 8000, host: str = "127.0.0.1",
          ui_dir=None) -> None:
    """Run the service until interrupted. Raises PortInUse up front."""
    app = build_app(project_dir, ui_dir=ui_dir)
    probe = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    try:
        probe.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        probe.bind((host, port))
    except OSError as exc:
        raise PortInUse("cannot bind %s:%d: %s" % (host, port, exc))
    finally:
        probe.close()
    import uvicorn
    uvicorn.run(app, host=host, port=port, log_level="warning")
