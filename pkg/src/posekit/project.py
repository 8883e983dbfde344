"""Project directory layout and its JSON descriptor.

A project is a directory holding ``project.json`` (this module),
``annotations.csv`` (annotations module), saved ``*.pipeline`` configs,
``processors/`` with extra processor manifests, and ``runs/`` with
pipeline run workspaces.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from .errors import IoFailure, MalformedCsv
from .geometry import CameraProfile

PROJECT_FILE = "project.json"
PIPELINE_SUFFIX = ".pipeline"
PROCESSOR_DIR = "processors"
RUNS_DIR = "runs"


@dataclass(frozen=True)
class CameraConfig:
    """A named frame source, optionally calibrated."""

    name: str
    stream: str                 # backend source, e.g. an image directory
    backend: str = "image_dir"
    dlt: Optional[Tuple[float, ...]] = None
    width: int = 0
    height: int = 0

    def __post_init__(self):
        if self.dlt is not None:
            coeffs = tuple(float(c) for c in self.dlt)
            if len(coeffs) != 11:
                raise ValueError("camera %r: expected 11 coefficients, got %d"
                                 % (self.name, len(coeffs)))
            object.__setattr__(self, "dlt", coeffs)

    @property
    def calibrated(self) -> bool:
        return self.dlt is not None

    def profile(self) -> CameraProfile:
        if self.dlt is None:
            raise ValueError("camera %r has no calibration" % self.name)
        return CameraProfile(self.name, np.asarray(self.dlt), self.width, self.height)


@dataclass(frozen=True)
class Project:
    name: str
    cameras: Tuple[CameraConfig, ...] = ()
    part_order: Tuple[str, ...] = ()
    arena: Optional[Tuple[float, float, float, float]] = None
    walls_file: str = ""
    pipelines: Tuple[str, ...] = ()    # saved config file names, project-relative

    def __post_init__(self):
        object.__setattr__(self, "cameras", tuple(self.cameras))
        object.__setattr__(self, "part_order", tuple(self.part_order))
        object.__setattr__(self, "pipelines", tuple(self.pipelines))
        names = [c.name for c in self.cameras]
        if len(set(names)) != len(names):
            raise ValueError("camera names must be unique")
        if self.arena is not None:
            object.__setattr__(self, "arena", tuple(float(v) for v in self.arena))
            if len(self.arena) != 4:
                raise ValueError("arena must be (xmin, xmax, ymin, ymax)")

    def camera(self, name: str) -> Optional[CameraConfig]:
        for cam in self.cameras:
            if cam.name == name:
                return cam
        return None


def project_to_dict(project: Project) -> Dict:
    return {
        "name": project.name,
        "cameras": [
            {
                "name": c.name,
                "stream": c.stream,
                "backend": c.backend,
                "dlt": list(c.dlt) if c.dlt is not None else None,
                "width": c.width,
                "height": c.height,
            }
            for c in project.cameras
        ],
        "part_order": list(project.part_order),
        "arena": list(project.arena) if project.arena is not None else None,
        "walls_file": project.walls_file,
        "pipelines": list(project.pipelines),
    }


def project_from_dict(data: Dict) -> Project:
    if not isinstance(data, dict) or "name" not in data:
        raise ValueError("project descriptor needs at least a name")
    cameras = []
    for c in data.get("cameras", []):
        cameras.append(CameraConfig(
            name=c["name"],
            stream=c.get("stream", ""),
            backend=c.get("backend", "image_dir"),
            dlt=tuple(c["dlt"]) if c.get("dlt") is not None else None,
            width=int(c.get("width", 0)),
            height=int(c.get("height", 0)),
        ))
    arena = data.get("arena")
    return Project(
        name=data["name"],
        cameras=tuple(cameras),
        part_order=tuple(data.get("part_order", ())),
        arena=tuple(arena) if arena is not None else None,
        walls_file=data.get("walls_file", ""),
        pipelines=tuple(data.get("pipelines", ())),
    )


def load_project(project_dir) -> Project:
    path = Path(project_dir) / PROJECT_FILE
    try:
        data = json.loads(path.read_text())
    except OSError as exc:
        raise IoFailure("cannot read %s: %s" % (path, exc))
    except json.JSONDecodeError as exc:
        raise MalformedCsv("%s: %s" % (path, exc))
    return project_from_dict(data)


def save_project(project: Project, project_dir) -> Path:
    root = Path(project_dir)
    root.mkdir(parents=True, exist_ok=True)
    path = root / PROJECT_FILE
    tmp = path.with_suffix(".json.tmp")
    try:
        tmp.write_text(json.dumps(project_to_dict(project), indent=2) + "\n")
        os.replace(tmp, path)
    except OSError as exc:
        raise IoFailure("cannot save %s: %s" % (path, exc))
    return path


def add_pipeline(project: Project, file_name: str) -> Project:
    if file_name in project.pipelines:
        return project
    return replace(project, pipelines=project.pipelines + (file_name,))
