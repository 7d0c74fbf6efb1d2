"""Sources and sinks.

Sources own a thread (runtime contract) and stamp timestamps in
nanoseconds as index/rate; with rate=0 they run unthrottled and stamp the
frame index itself.  The pattern file source treats a missing index as end
of stream, not as an error.

Framed file format (filesink framed=true, multifilesrc framed=true):
consecutive little-endian records of u64 payload length, u64 timestamp,
payload bytes.
"""

from __future__ import annotations

import hashlib
import struct
import threading
import time
from collections import deque

import numpy as np

from ..errors import BadProperty, IoError, LengthMismatch
from ..tensors import (Buffer, DataType, RawKind, RawSpec, TensorSpec,
                       make_buffer)
from .base import SINK, SRC, PadTemplate, PropertySpec, RuntimeElement, register
from .transform import saturate_cast

_FRAME_HEADER = struct.Struct("<QQ")

PATTERNS = ("constant", "ramp", "checkerboard", "random")


def _stamp(index: int, rate) -> int:
    if not rate:
        return index
    return index * 1_000_000_000 * rate.denominator // rate.numerator


def pattern_frame(pattern: str, count: int, index: int, value: float,
                  seed: int, dtype: DataType) -> bytes:
    """Deterministic frame content, a pure function of (pattern, seed, index)."""
    np_dtype = dtype.np_dtype
    if pattern == "constant":
        work = np.full(count, value, dtype=np.float64)
    elif pattern == "ramp":
        work = (index + np.arange(count, dtype=np.int64)) % 256
    elif pattern == "checkerboard":
        work = ((np.arange(count, dtype=np.int64) + index) % 2) * 255
    else:  # random
        rng = np.random.default_rng(np.random.SeedSequence((seed, index)))
        if dtype.is_float:
            return rng.random(count, dtype=np.float32).astype(
                np_dtype, copy=False).tobytes()
        info = np.iinfo(np_dtype)
        return rng.integers(info.min, info.max, size=count, dtype=np_dtype,
                            endpoint=True).tobytes()
    if dtype.is_float:
        return work.astype(np_dtype).tobytes()
    return saturate_cast(work, dtype).tobytes()


class _PumpSource(RuntimeElement):
    """Shared source machinery: a thread producing frames until a limit/EOS."""

    PADS = (PadTemplate("src", SRC),)

    def start(self):
        t = threading.Thread(target=self._pump, name=f"src:{self.name}",
                             daemon=True)
        self.ctx.register_thread(t)
        t.start()

    def _frame(self, index: int) -> Buffer | None:
        """Frame number ``index``, or None for end of stream."""
        raise NotImplementedError

    def _limit(self) -> int:
        return self.props.get("frames", 0)

    def _pump(self):
        rate = self.props.get("rate", 0)
        period = float(1 / rate) if rate else 0.0
        limit = self._limit()
        origin = time.monotonic()
        i = 0
        while not limit or i < limit:
            while not self.ctx.gate.is_set():
                if self.ctx.stopped.is_set():
                    return
                self.ctx.gate.wait(0.05)
            if self.ctx.stopped.is_set():
                return
            if period:
                delay = origin + i * period - time.monotonic()
                if delay > 0 and self.ctx.stopped.wait(delay):
                    return
            try:
                buf = self._frame(i)
                if buf is None:
                    break
                self.dispatch("src", buf)
            except Exception as e:  # noqa: BLE001
                self.fail(e)
                return
            i += 1
        if not self.ctx.stopped.is_set():
            self.emit_eos()


@register
class SyntheticSrc(_PumpSource):
    """Deterministic tensor source for tests and benchmarks."""

    KIND = "synthetic_src"
    PROPERTIES = (
        PropertySpec("dim", "dim", required=True),
        PropertySpec("type", "dtype", required=True),
        PropertySpec("pattern", "enum", "ramp", choices=PATTERNS),
        PropertySpec("value", "float", 0.0, doc="constant pattern value"),
        PropertySpec("seed", "int", 0),
        PropertySpec("frames", "int", 0, doc="0 = endless"),
        PropertySpec("rate", "rate", 0, doc="frames/sec, 0 = unthrottled"),
    )

    @classmethod
    def infer_outputs(cls, props, inputs, constraints, pads):
        return {"src": TensorSpec(props["dim"], props["type"],
                                  props.get("rate", 0))}

    def _frame(self, index):
        spec: TensorSpec = self.out_specs["src"]
        data = pattern_frame(self.props["pattern"], spec.element_count, index,
                             self.props.get("value", 0.0),
                             self.props.get("seed", 0), spec.dtype)
        return make_buffer(data, _stamp(index, self.props.get("rate", 0)), spec)


@register
class VideoTestSrc(_PumpSource):
    """Deterministic raw-video source."""

    KIND = "video_testsrc"
    PROPERTIES = (
        PropertySpec("width", "int", 320),
        PropertySpec("height", "int", 240),
        PropertySpec("channels", "int", 3),
        PropertySpec("pattern", "enum", "ramp", choices=PATTERNS),
        PropertySpec("value", "float", 0.0),
        PropertySpec("seed", "int", 0),
        PropertySpec("frames", "int", 0),
        PropertySpec("rate", "rate", 0),
    )

    @classmethod
    def infer_outputs(cls, props, inputs, constraints, pads):
        return {"src": RawSpec(RawKind.video, width=props["width"],
                               height=props["height"],
                               channels=props["channels"],
                               framerate=props.get("rate", 0))}

    def _frame(self, index):
        spec: RawSpec = self.out_specs["src"]
        data = pattern_frame(self.props["pattern"], spec.byte_size, index,
                             self.props.get("value", 0.0),
                             self.props.get("seed", 0), DataType.uint8)
        return make_buffer(data, _stamp(index, self.props.get("rate", 0)), spec)


@register
class MultiFileSrc(_PumpSource):
    """Read numbered files; stop at the first missing index.

    With dim=/type= declared the stream is a tensor stream and every file
    must be exactly one frame; otherwise frames travel as raw binary.
    framed=true parses each file as framed records instead, replaying the
    recorded timestamps.
    """

    KIND = "multifilesrc"
    PROPERTIES = (
        PropertySpec("location", "str", required=True,
                     doc="printf-style path with one integer hole"),
        PropertySpec("start", "int", 0),
        PropertySpec("dim", "dim"),
        PropertySpec("type", "dtype"),
        PropertySpec("rate", "rate", 0),
        PropertySpec("framed", "bool", False),
    )

    @classmethod
    def check_props(cls, props):
        location = props["location"]
        try:
            one, two = location % 1, location % 2
        except (TypeError, ValueError):
            raise BadProperty(
                f"location {location!r} needs one integer hole (%d)") from None
        if one == two:
            raise BadProperty(f"location {location!r} has no integer hole")
        return props

    @classmethod
    def infer_outputs(cls, props, inputs, constraints, pads):
        dim, dtype = props.get("dim"), props.get("type")
        rate = props.get("rate", 0)
        if dim is not None and dtype is not None:
            return {"src": TensorSpec(dim, dtype, rate)}
        return {"src": RawSpec(RawKind.binary, framerate=rate)}

    def __init__(self, desc, ctx):
        super().__init__(desc, ctx)
        self._records: deque[tuple[bytes, int]] = deque()
        self._file_index = 0

    def _load_next_file(self) -> bool:
        path = self.props["location"] % (self.props.get("start", 0)
                                         + self._file_index)
        try:
            with open(path, "rb") as f:
                blob = f.read()
        except FileNotFoundError:
            return False
        except OSError as e:
            raise IoError(f"{path}: {e}") from None
        self._file_index += 1
        if not self.props.get("framed", False):
            self._records.append((blob, -1))
            return True
        pos = 0
        while pos < len(blob):
            if pos + _FRAME_HEADER.size > len(blob):
                raise IoError(f"{path}: truncated framed record at {pos}")
            length, ts = _FRAME_HEADER.unpack_from(blob, pos)
            pos += _FRAME_HEADER.size
            if pos + length > len(blob):
                raise IoError(f"{path}: framed record overruns file end")
            self._records.append((blob[pos:pos + length], ts))
            pos += length
        return True

    def _frame(self, index):
        while not self._records:
            if not self._load_next_file():
                return None
        data, recorded_ts = self._records.popleft()
        spec = self.out_specs["src"]
        expect = spec.byte_size
        if expect is not None and len(data) != expect:
            raise LengthMismatch(
                f"file frame is {len(data)} bytes, declared spec needs {expect}")
        ts = recorded_ts if recorded_ts >= 0 else _stamp(
            index, self.props.get("rate", 0))
        return make_buffer(data, ts, spec)


@register
class AppSrc(_PumpSource):
    """Frames pushed by application code, re-emitted on a source thread."""

    KIND = "appsrc"
    PROPERTIES = (
        PropertySpec("spec", "spec", required=True,
                     doc="stream spec of the pushed frames"),
    )

    @classmethod
    def infer_outputs(cls, props, inputs, constraints, pads):
        return {"src": props["spec"]}

    def __init__(self, desc, ctx):
        super().__init__(desc, ctx)
        self._q: deque = deque()
        self._cond = threading.Condition()
        self._ended = False
        self._auto_index = 0

    def push(self, data, timestamp: int | None = None):
        """Queue one frame: bytes, an ndarray, or a ready Buffer."""
        spec = self.props["spec"]
        if isinstance(data, Buffer):
            buf = Buffer(data.payload, data.timestamp, spec)
        else:
            if isinstance(data, np.ndarray):
                data = np.ascontiguousarray(data).tobytes()
            if timestamp is None:
                timestamp = self._auto_index
            buf = make_buffer(bytes(data), timestamp, spec)
        self._auto_index += 1
        with self._cond:
            if self._ended:
                raise IoError("appsrc already ended")
            self._q.append(buf)
            self._cond.notify_all()

    def end_stream(self):
        with self._cond:
            self._ended = True
            self._cond.notify_all()

    def stop(self):
        with self._cond:
            self._cond.notify_all()

    def _frame(self, index):
        while True:
            with self._cond:
                if self._q:
                    return self._q.popleft()
                if self._ended:
                    return None
                self._cond.wait(0.05)
            if self.ctx.stopped.is_set():
                return None


@register
class CountingSink(RuntimeElement):
    """Terminal sink counting frames; optionally fingerprinting content.

    Payload ids are always recorded so zero-copy behaviour is observable
    from the outside.  With digest=true every frame's payload is also
    hashed, per part, without materializing multi-part payloads.
    """

    KIND = "counting_sink"
    ALIASES = ("fakesink",)
    PROPERTIES = (PropertySpec("digest", "bool", False),)
    PADS = (PadTemplate("sink", SINK),)

    def __init__(self, desc, ctx):
        super().__init__(desc, ctx)
        self.count = 0
        self.last_timestamp: int | None = None
        self.digests: list[str] = []
        self.payload_pids: list[int] = []
        self._run_hash = hashlib.sha256()

    def handle(self, pad, buf):
        self.count += 1
        self.last_timestamp = buf.timestamp
        self.payload_pids.append(buf.payload.pid)
        if self.props.get("digest", False):
            h = hashlib.sha256()
            for part in buf.payload.parts:
                h.update(part)
            self.digests.append(h.hexdigest())
            self._run_hash.update(h.digest())
        return ()

    def run_digest(self) -> str:
        """Digest over all frames seen, in order."""
        return self._run_hash.hexdigest()

    def reset(self):
        super().reset()
        self.count = 0
        self.last_timestamp = None
        self.digests.clear()
        self.payload_pids.clear()
        self._run_hash = hashlib.sha256()


_END = object()


@register
class AppSink(RuntimeElement):
    """Terminal sink exposing frames to application code.

    The internal queue is bounded by max= with the same leak policies the
    queue element has; leak=none blocks the producing thread.
    """

    KIND = "appsink"
    PROPERTIES = (
        PropertySpec("max", "int", 0, doc="queue bound, 0 = unbounded"),
        PropertySpec("leak", "enum", "none",
                     choices=("none", "drop_oldest", "drop_newest")),
    )
    PADS = (PadTemplate("sink", SINK),)

    def __init__(self, desc, ctx):
        super().__init__(desc, ctx)
        self._q: deque = deque()
        self._cond = threading.Condition()

    def receive(self, pad, buf):
        limit = self.props.get("max", 0)
        leak = self.props.get("leak", "none")
        with self._cond:
            if limit:
                if leak == "none":
                    while len(self._q) >= limit and not self.ctx.stopped.is_set():
                        self._cond.wait(0.05)
                    if self.ctx.stopped.is_set():
                        return
                elif len(self._q) >= limit:
                    if leak == "drop_newest":
                        self.stats.note_dropped()
                        return
                    while len(self._q) >= limit:  # drop_oldest
                        self._q.popleft()
                        self.stats.note_dropped()
            self._q.append(buf)
            self._cond.notify_all()

    def receive_eos(self, pad):
        with self._cond:
            self._q.append(_END)
            self._cond.notify_all()
        self.emit_eos()

    def stop(self):
        with self._cond:
            self._cond.notify_all()

    def pop(self, timeout: float | None = None) -> Buffer | None:
        """Next frame, or None when the stream has ended.

        After a stop without EOS, queued frames drain first, then None.
        Raises TimeoutError when ``timeout`` elapses with the stream live.
        """
        deadline = None if timeout is None else time.monotonic() + timeout
        with self._cond:
            while True:
                if self._q:
                    item = self._q.popleft()
                    self._cond.notify_all()
                    if item is _END:
                        return None
                    return item
                if self.ctx.stopped.is_set():
                    return None
                wait = 0.05
                if deadline is not None:
                    remaining = deadline - time.monotonic()
                    if remaining <= 0:
                        raise TimeoutError("appsink: no frame arrived")
                    wait = min(wait, remaining)
                self._cond.wait(wait)

    def drain(self):
        """Iterate frames until end of stream (or stop + queue empty)."""
        while True:
            buf = self.pop()
            if buf is None:
                return
            yield buf


@register
class FileSink(RuntimeElement):
    """Append raw payload bytes (or framed records) to one file."""

    KIND = "filesink"
    PROPERTIES = (
        PropertySpec("location", "str", required=True),
        PropertySpec("framed", "bool", False),
    )
    PADS = (PadTemplate("sink", SINK),)

    def __init__(self, desc, ctx):
        super().__init__(desc, ctx)
        self._file = None

    def start(self):
        try:
            self._file = open(self.props["location"], "wb")
        except OSError as e:
            raise IoError(f"{self.props['location']}: {e}") from None

    def handle(self, pad, buf):
        if self._file is None:
            raise IoError(f"{self.props['location']}: sink not started")
        try:
            if self.props.get("framed", False):
                self._file.write(_FRAME_HEADER.pack(buf.payload.nbytes,
                                                    buf.timestamp))
            for part in buf.payload.parts:
                self._file.write(part)
            self._file.flush()
        except OSError as e:
            raise IoError(f"{self.props['location']}: {e}") from None
        return ()

    def stop(self):
        if self._file is not None:
            self._file.close()
            self._file = None
