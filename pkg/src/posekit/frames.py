"""Ordered frame access with pluggable decode backends and read-ahead buffering.

A FrameStream wraps a backend (anything that can decode frame i on demand)
and runs a single producer thread that decodes ahead of the consumer into a
bounded buffer. Buffering never changes what is delivered: frame i is
byte-identical to an unbuffered backend read of the same index.
"""

from __future__ import annotations

import queue
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Iterator, List, Optional

from PIL import Image

from .errors import (
    DecodeFailure,
    OutOfRange,
    UnknownBackend,
    UnreadableSource,
)

DEFAULT_BUFFER_CAPACITY = 64

_MODE_CHANNELS = {"L": 1, "RGB": 3, "RGBA": 4}


@dataclass(frozen=True)
class Frame:
    """One decoded frame: row-major pixel bytes plus layout metadata."""

    index: int
    pixels: bytes
    width: int
    height: int
    channels: int

    def __post_init__(self):
        if self.index < 0:
            raise ValueError("frame index must be >= 0")
        if len(self.pixels) != self.width * self.height * self.channels:
            raise ValueError(
                "pixel buffer length %d does not match %dx%dx%d"
                % (len(self.pixels), self.width, self.height, self.channels)
            )


def _natural_key(stem: str):
    # "frame_10" sorts after "frame_2": digit runs compare numerically.
    parts = re.split(r"(\d+)", stem)
    return [int(tok) if tok.isdigit() else tok for tok in parts]


class ImageDirectoryBackend:
    """Treats a directory of numbered PNG/BMP images as a video."""

    def __init__(self, source):
        root = Path(source)
        if not root.is_dir():
            raise UnreadableSource("not a readable directory: %s" % source)
        files = [p for p in root.iterdir() if p.suffix.lower() in (".png", ".bmp")]
        if not files:
            raise UnreadableSource("no .png or .bmp files in %s" % source)
        files.sort(key=lambda p: _natural_key(p.stem))
        self._files = files
        with Image.open(files[0]) as im:
            self.width, self.height = im.size

    @property
    def frame_count(self) -> int:
        return len(self._files)

    def read(self, index: int) -> Frame:
        if not 0 <= index < len(self._files):
            raise OutOfRange("frame %d outside [0, %d)" % (index, len(self._files)))
        path = self._files[index]
        try:
            with Image.open(path) as im:
                im.load()
                if im.mode not in _MODE_CHANNELS:
                    im = im.convert("RGB")
                return Frame(
                    index=index,
                    pixels=im.tobytes(),
                    width=im.width,
                    height=im.height,
                    channels=_MODE_CHANNELS[im.mode],
                )
        except OutOfRange:
            raise
        except Exception as exc:
            raise DecodeFailure("cannot decode %s: %s" % (path.name, exc), frame_index=index)


_BACKENDS: Dict[str, Callable] = {"image_dir": ImageDirectoryBackend}


def register_backend(name: str, factory: Callable) -> None:
    """Register a decode backend. factory(source) must return an object with
    frame_count, width, height, and read(index) -> Frame."""
    _BACKENDS[name] = factory


def available_backends() -> List[str]:
    return sorted(_BACKENDS)


def open_backend(source, backend: str = "image_dir"):
    if backend not in _BACKENDS:
        raise UnknownBackend("no backend named %r (have: %s)" % (backend, ", ".join(available_backends())))
    return _BACKENDS[backend](source)


def read_frames_unbuffered(source, backend: str = "image_dir") -> Iterator[Frame]:
    """Sequential decode with no read-ahead; the oracle for buffering tests."""
    be = open_backend(source, backend)
    for i in range(be.frame_count):
        yield be.read(i)


class FrameStream:
    """Buffered sequential/random frame access over a backend.

    One producer thread decodes ahead; the consumer pops frames in index
    order. A semaphore is taken before each decode, so at most
    buffer_capacity decoded-but-unconsumed frames exist at any moment.
    The stream belongs to one consumer thread at a time.
    """

    def __init__(self, source, backend: str = "image_dir",
                 buffer_capacity: int = DEFAULT_BUFFER_CAPACITY):
        if buffer_capacity < 1:
            raise ValueError("buffer_capacity must be >= 1")
        self.source = source
        self.backend = backend
        self.buffer_capacity = buffer_capacity
        self._be = open_backend(source, backend)
        self.width = self._be.width
        self.height = self._be.height
        self._queue: queue.Queue = queue.Queue()
        self._slots = threading.Semaphore(buffer_capacity)
        self._held = 0
        self._held_lock = threading.Lock()
        self.max_buffered = 0  # peak decoded-frames-held gauge, for tests
        self._generation = 0
        self._stop_event: Optional[threading.Event] = None
        self._thread: Optional[threading.Thread] = None
        self._ended = False
        self._closed = False
        self._start_producer(0)

    @property
    def frame_count(self) -> int:
        return self._be.frame_count

    def _slot_taken(self):
        with self._held_lock:
            self._held += 1
            if self._held > self.max_buffered:
                self.max_buffered = self._held

    def _slot_freed(self):
        self._slots.release()
        with self._held_lock:
            self._held -= 1

    def _start_producer(self, start: int) -> None:
        self._generation += 1
        self._ended = False
        gen = self._generation
        stop = threading.Event()
        self._stop_event = stop

        def produce():
            i = start
            n = self._be.frame_count
            while i < n:
                self._slots.acquire()
                if stop.is_set():
                    self._slots.release()
                    return
                self._slot_taken()
                try:
                    frame = self._be.read(i)
                except Exception as exc:
                    self._queue.put((gen, "error", exc))
                    return
                self._queue.put((gen, "frame", frame))
                i += 1
            if not stop.is_set():
                self._queue.put((gen, "end", None))

        t = threading.Thread(target=produce, daemon=True, name="frame-producer")
        self._thread = t
        t.start()

    def _halt_producer(self) -> None:
        if self._stop_event is not None:
            self._stop_event.set()
        # drain stale entries so a blocked producer can observe the stop flag
        while True:
            try:
                _, kind, _ = self._queue.get_nowait()
            except queue.Empty:
                break
            if kind in ("frame", "error"):
                self._slot_freed()
        if self._thread is not None:
            self._thread.join()
        # producer may have queued entries between our drain and its exit
        while True:
            try:
                _, kind, _ = self._queue.get_nowait()
            except queue.Empty:
                break
            if kind in ("frame", "error"):
                self._slot_freed()

    def next_frame(self) -> Optional[Frame]:
        """Next frame in order, or None at end of stream."""
        if self._closed:
            raise ValueError("stream is closed")
        if self._ended:
            return None
        while True:
            gen, kind, payload = self._queue.get()
            if gen != self._generation:
                if kind in ("frame", "error"):
                    self._slot_freed()
                continue
            if kind == "end":
                self._ended = True
                return None
            if kind == "error":
                self._slot_freed()
                self._ended = True  # producer stops at the failed frame
                raise payload
            self._slot_freed()
            return payload

    def wait_prefetch(self, timeout: float = 30.0) -> None:
        """Block until the read-ahead buffer is full (or the producer is done).

        Throughput measurements start after this returns so the warm prefetch
        is not counted in the timed window.
        """
        deadline = time.monotonic() + timeout
        target = min(self.buffer_capacity, self._be.frame_count)
        while time.monotonic() < deadline:
            with self._held_lock:
                held = self._held
            if held >= target:
                return
            if self._thread is not None and not self._thread.is_alive():
                return
            time.sleep(0.001)

    def seek(self, index: int) -> None:
        """Discard the buffer and continue reading from `index`."""
        if self._closed:
            raise ValueError("stream is closed")
        if not 0 <= index < self._be.frame_count:
            raise OutOfRange("seek to %d outside [0, %d)" % (index, self._be.frame_count))
        self._halt_producer()
        self._start_producer(index)

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        self._halt_producer()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False

    def __iter__(self) -> Iterator[Frame]:
        while True:
            frame = self.next_frame()
            if frame is None:
                return
            yield frame


def open_stream(source, backend: str = "image_dir",
                buffer_capacity: int = DEFAULT_BUFFER_CAPACITY) -> FrameStream:
    return FrameStream(source, backend, buffer_capacity)
