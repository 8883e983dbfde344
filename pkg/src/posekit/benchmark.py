"""Frame-decode throughput measurement.

Compares reader configurations over one source. A reader spec is either a
bare backend name ("image_dir"), timed as direct unbuffered decodes, or
"buffered:<backend>", timed through a FrameStream after its read-ahead
buffer has filled. The warm prefetch is deliberately excluded from the
timed window; the output CSV carries a comment line recording that choice.

Loaded mode spawns one busy-spin process per logical core for the duration
of the measurement, so results under CPU contention can be compared with
idle results.
"""

from __future__ import annotations

import multiprocessing
import os
import sys
import time
from dataclasses import dataclass
from typing import List, Optional, Sequence

from .frames import FrameStream, open_backend

LOAD_MODES = ("idle", "loaded")
BUFFERED_PREFIX = "buffered:"
DEFAULT_BENCH_CAPACITY = 256
WARM_NOTE = "buffered readers timed after warm prefetch; buffer fill excluded"


@dataclass(frozen=True)
class BenchmarkResult:
    backend: str
    load_mode: str
    fps: float


def _spin():
    while True:
        pass


class _CpuLoad:
    """Busy-spins every logical core while active."""

    def __init__(self):
        self._procs: List[multiprocessing.Process] = []

    def __enter__(self):
        for _ in range(os.cpu_count() or 1):
            p = multiprocessing.Process(target=_spin, daemon=True)
            p.start()
            self._procs.append(p)
        return self

    def __exit__(self, *exc):
        for p in self._procs:
            p.terminate()
        for p in self._procs:
            p.join()
        return False


def _time_unbuffered(source, backend: str, n_frames: int) -> float:
    be = open_backend(source, backend)
    count = min(n_frames, be.frame_count)
    start = time.perf_counter()
    total = 0
    for i in range(count):
        frame = be.read(i)
        total += len(frame.pixels)
    elapsed = time.perf_counter() - start
    if total == 0:
        raise ValueError("no pixel data decoded")
    return count / elapsed


def _time_buffered(source, backend: str, n_frames: int, capacity: int) -> float:
    with FrameStream(source, backend, buffer_capacity=capacity) as stream:
        count = min(n_frames, stream.frame_count)
        stream.wait_prefetch()
        start = time.perf_counter()
        total = 0
        for _ in range(count):
            frame = stream.next_frame()
            if frame is None:
                break
            total += len(frame.pixels)
        elapsed = time.perf_counter() - start
    if total == 0:
        raise ValueError("no pixel data decoded")
    return count / elapsed


def _measure_one(source, spec: str, n_frames: int, capacity: int) -> float:
    if spec.startswith(BUFFERED_PREFIX):
        return _time_buffered(source, spec[len(BUFFERED_PREFIX):], n_frames, capacity)
    return _time_unbuffered(source, spec, n_frames)


def benchmark_throughput(source, backends: Sequence[str], n_frames: int,
                         load_mode: str = "idle",
                         buffer_capacity: int = DEFAULT_BENCH_CAPACITY,
                         ) -> List[BenchmarkResult]:
    """Mean decode fps for each reader spec. A spec that fails to open is
    skipped with a warning; if every spec fails the first error is raised."""
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    if load_mode not in LOAD_MODES:
        raise ValueError("load_mode must be one of %s" % (LOAD_MODES,))
    if not backends:
        raise ValueError("no reader specs given")

    results: List[BenchmarkResult] = []
    first_error: Optional[Exception] = None

    def run_all():
        nonlocal first_error
        for spec in backends:
            try:
                fps = _measure_one(source, spec, n_frames, buffer_capacity)
            except Exception as exc:
                if first_error is None:
                    first_error = exc
                print("benchmark: skipping %s (%s)" % (spec, exc), file=sys.stderr)
                continue
            results.append(BenchmarkResult(spec, load_mode, fps))

    if load_mode == "loaded":
        with _CpuLoad():
            run_all()
    else:
        run_all()

    if not results and first_error is not None:
        raise first_error
    return results


def write_benchmark_csv(results: Sequence[BenchmarkResult], path) -> None:
    lines = ["# " + WARM_NOTE, "backend,load_mode,fps"]
    for r in results:
        lines.append("%s,%s,%s" % (r.backend, r.load_mode, repr(float(r.fps))))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
