"""Tensor stream typing: dtypes, shapes, stream specs, payloads, buffers.

A stream spec describes what flows over a link.  Tensor streams carry
fixed-shape dense tensors (``other/tensor``) or small fixed-arity groups of
them (``other/tensors``); raw streams carry untyped media bytes (video,
audio, text, binary) on their way into a converter or out of a decoder.

Shapes are rank-4 with the innermost (fastest-varying) extent first, so a
WxH RGB image is ``3:W:H:1``.  A framerate of 0/1 is the wildcard "rate not
negotiated".
"""

from __future__ import annotations

import enum
import itertools
import re
import threading
import weakref
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np

from .errors import (ArityError, RangeError, SpecSyntaxError,
                     UnsupportedDtype)

RANK = 4
MAX_EXTENT = 65535
MAX_TENSORS = 16
MAX_RATE_NUMERATOR = 2147483647

RATE_ANY = Fraction(0, 1)  # wildcard framerate


class DataType(enum.Enum):
    """Element types a tensor stream may carry."""

    uint8 = "uint8"
    int8 = "int8"
    uint16 = "uint16"
    int16 = "int16"
    uint32 = "uint32"
    int32 = "int32"
    uint64 = "uint64"
    int64 = "int64"
    float32 = "float32"
    float64 = "float64"

    @property
    def width(self) -> int:
        return _WIDTHS[self]

    @property
    def np_dtype(self) -> np.dtype:
        return np.dtype(self.value)

    @property
    def is_float(self) -> bool:
        return self in (DataType.float32, DataType.float64)

    @classmethod
    def from_name(cls, name: str) -> "DataType":
        try:
            return cls(name)
        except ValueError:
            raise UnsupportedDtype(f"unknown tensor type {name!r}") from None


_WIDTHS = {
    DataType.uint8: 1, DataType.int8: 1,
    DataType.uint16: 2, DataType.int16: 2,
    DataType.uint32: 4, DataType.int32: 4,
    DataType.uint64: 8, DataType.int64: 8,
    DataType.float32: 4, DataType.float64: 8,
}


def check_dim(dim: tuple[int, ...]) -> tuple[int, ...]:
    dim = tuple(int(d) for d in dim)
    if len(dim) != RANK:
        raise ArityError(f"dimension needs {RANK} extents, got {len(dim)}")
    for d in dim:
        if not 1 <= d <= MAX_EXTENT:
            raise RangeError(f"extent {d} outside [1, {MAX_EXTENT}]")
    return dim


def check_rate(num: int, den: int) -> Fraction:
    if den < 1:
        raise RangeError(f"framerate denominator {den} must be >= 1")
    if not 0 <= num <= MAX_RATE_NUMERATOR:
        raise RangeError(f"framerate numerator {num} outside [0, {MAX_RATE_NUMERATOR}]")
    return Fraction(num, den)


def _rate_str(rate: Fraction) -> str:
    return f"{rate.numerator}/{rate.denominator}"


@dataclass(frozen=True)
class TensorSpec:
    """Spec of a single-tensor stream: shape, element type, framerate."""

    dim: tuple[int, int, int, int]
    dtype: DataType
    framerate: Fraction = RATE_ANY

    def __post_init__(self):
        object.__setattr__(self, "dim", check_dim(self.dim))
        if not isinstance(self.framerate, Fraction):
            object.__setattr__(self, "framerate", Fraction(self.framerate))

    @property
    def element_count(self) -> int:
        n = 1
        for d in self.dim:
            n *= d
        return n

    @property
    def byte_size(self) -> int:
        return self.element_count * self.dtype.width

    @property
    def np_shape(self) -> tuple[int, ...]:
        # innermost-first dims map to a C-order array with axes reversed
        return tuple(reversed(self.dim))

    def dim_str(self) -> str:
        return ":".join(str(d) for d in self.dim)

    def to_string(self) -> str:
        return (f"other/tensor,dimension={self.dim_str()},"
                f"type={self.dtype.value},framerate={_rate_str(self.framerate)}")

    def with_rate(self, rate: Fraction) -> "TensorSpec":
        return replace(self, framerate=rate)


@dataclass(frozen=True)
class TensorsSpec:
    """Spec of a multi-tensor stream: an ordered group sharing one framerate."""

    specs: tuple[TensorSpec, ...]
    framerate: Fraction = RATE_ANY

    def __post_init__(self):
        if not 1 <= len(self.specs) <= MAX_TENSORS:
            raise ArityError(
                f"tensor count {len(self.specs)} outside [1, {MAX_TENSORS}]")
        if not isinstance(self.framerate, Fraction):
            object.__setattr__(self, "framerate", Fraction(self.framerate))
        # every member carries the shared rate
        object.__setattr__(
            self, "specs",
            tuple(s.with_rate(self.framerate) for s in self.specs))

    @property
    def num_tensors(self) -> int:
        return len(self.specs)

    @property
    def byte_size(self) -> int:
        return sum(s.byte_size for s in self.specs)

    def member_offsets(self) -> list[int]:
        offs, pos = [], 0
        for s in self.specs:
            offs.append(pos)
            pos += s.byte_size
        return offs

    def to_string(self) -> str:
        dims = ".".join(s.dim_str() for s in self.specs)
        types = ",".join(s.dtype.value for s in self.specs)
        return (f"other/tensors,num_tensors={self.num_tensors},"
                f"dimensions={dims},types={types},"
                f"framerate={_rate_str(self.framerate)}")

    def with_rate(self, rate: Fraction) -> "TensorsSpec":
        return TensorsSpec(self.specs, rate)


class RawKind(enum.Enum):
    video = "video"
    audio = "audio"
    text = "text"
    binary = "binary"


@dataclass(frozen=True)
class RawSpec:
    """Spec of a non-tensor stream (converter input / decoder output)."""

    kind: RawKind
    width: int = 0
    height: int = 0
    channels: int = 0
    size: int = 0  # declared frame byte size for audio/binary; 0 = unchecked
    framerate: Fraction = RATE_ANY

    def __post_init__(self):
        if not isinstance(self.framerate, Fraction):
            object.__setattr__(self, "framerate", Fraction(self.framerate))
        if self.kind is RawKind.video:
            if self.width < 1 or self.height < 1:
                raise RangeError("video raw spec needs width and height >= 1")
            if self.channels not in (1, 3, 4):
                raise RangeError(f"video channels {self.channels} not in (1, 3, 4)")

    @property
    def byte_size(self) -> int | None:
        if self.kind is RawKind.video:
            return self.width * self.height * self.channels
        return self.size or None

    def to_string(self) -> str:
        if self.kind is RawKind.video:
            return (f"video/x-raw,width={self.width},height={self.height},"
                    f"channels={self.channels},framerate={_rate_str(self.framerate)}")
        if self.kind is RawKind.audio:
            base = "audio/x-raw"
        elif self.kind is RawKind.text:
            base = "text/x-raw"
        else:
            base = "application/octet-stream"
        if self.size:
            base += f",size={self.size}"
        if self.framerate != RATE_ANY:
            base += f",framerate={_rate_str(self.framerate)}"
        return base

    def with_rate(self, rate: Fraction) -> "RawSpec":
        return replace(self, framerate=rate)


Spec = TensorSpec | TensorsSpec | RawSpec


# --- parsing ----------------------------------------------------------------

_DIM_RE = re.compile(r"^\d+(?::\d+){3}$")
_RATE_RE = re.compile(r"^(\d+)/(\d+)$")


def _parse_dim(text: str) -> tuple[int, ...]:
    if not _DIM_RE.match(text):
        raise SpecSyntaxError(f"bad dimension {text!r}, expected a:b:c:d")
    return check_dim(tuple(int(p) for p in text.split(":")))


def _parse_rate(text: str) -> Fraction:
    m = _RATE_RE.match(text)
    if not m:
        raise SpecSyntaxError(f"bad framerate {text!r}, expected num/den")
    return check_rate(int(m.group(1)), int(m.group(2)))


_SINGLE_RE = re.compile(
    r"^other/tensor,dimension=([^,]+),type=([^,]+),framerate=([^,]+)$")
_MULTI_RE = re.compile(
    r"^other/tensors,num_tensors=(\d+),dimensions=([^,]+),"
    r"types=(.+),framerate=([^,]+)$")


def spec_parse(text: str) -> TensorSpec | TensorsSpec:
    """Parse a canonical tensor spec string.

    Only the tensor stream grammar is accepted here; raw media specs go
    through parse_any_spec.
    """
    text = text.strip()
    m = _SINGLE_RE.match(text)
    if m:
        return TensorSpec(_parse_dim(m.group(1)),
                          DataType.from_name(m.group(2)),
                          _parse_rate(m.group(3)))
    m = _MULTI_RE.match(text)
    if m:
        count = int(m.group(1))
        if not 1 <= count <= MAX_TENSORS:
            raise RangeError(f"num_tensors {count} outside [1, {MAX_TENSORS}]")
        dims = [_parse_dim(d) for d in m.group(2).split(".")]
        types = [DataType.from_name(t) for t in m.group(3).split(",")]
        if len(dims) != count:
            raise ArityError(f"num_tensors={count} but {len(dims)} dimensions given")
        if len(types) != count:
            raise ArityError(f"num_tensors={count} but {len(types)} types given")
        rate = _parse_rate(m.group(4))
        return TensorsSpec(tuple(TensorSpec(d, t, rate)
                                 for d, t in zip(dims, types)), rate)
    raise SpecSyntaxError(f"unrecognized tensor spec {text!r}")


def spec_to_string(spec: Spec) -> str:
    return spec.to_string()


def _parse_raw(text: str) -> RawSpec:
    head, _, rest = text.partition(",")
    fields: dict[str, str] = {}
    if rest:
        for item in rest.split(","):
            key, eq, value = item.partition("=")
            if not eq or not key or not value:
                raise SpecSyntaxError(f"bad raw spec field {item!r}")
            fields[key] = value
    rate = _parse_rate(fields["framerate"]) if "framerate" in fields else RATE_ANY

    def intfield(name, default=0):
        try:
            return int(fields.get(name, default))
        except ValueError:
            raise SpecSyntaxError(f"bad integer for {name!r} in raw spec") from None

    if head == "video/x-raw":
        return RawSpec(RawKind.video, width=intfield("width"),
                       height=intfield("height"),
                       channels=intfield("channels", 3), framerate=rate)
    if head == "audio/x-raw":
        return RawSpec(RawKind.audio, size=intfield("size"), framerate=rate)
    if head == "text/x-raw":
        return RawSpec(RawKind.text, size=intfield("size"), framerate=rate)
    if head == "application/octet-stream":
        return RawSpec(RawKind.binary, size=intfield("size"), framerate=rate)
    raise SpecSyntaxError(f"unrecognized raw spec {text!r}")


def parse_any_spec(text: str) -> Spec:
    """Parse either a tensor spec or a raw media spec (used by spec filters)."""
    text = text.strip()
    if text.startswith("other/"):
        return spec_parse(text)
    return _parse_raw(text)


# --- compatibility ----------------------------------------------------------

def _rates_compatible(a: Fraction, b: Fraction) -> bool:
    return a == RATE_ANY or b == RATE_ANY or a == b


def specs_compatible(a: Spec, b: Spec) -> bool:
    """True iff dtypes and dims agree and framerates agree or one is 0/1."""
    if type(a) is not type(b):
        return False
    if not _rates_compatible(a.framerate, b.framerate):
        return False
    if isinstance(a, TensorSpec):
        return a.dim == b.dim and a.dtype == b.dtype
    if isinstance(a, TensorsSpec):
        return ([s.dim for s in a.specs] == [s.dim for s in b.specs]
                and [s.dtype for s in a.specs] == [s.dtype for s in b.specs])
    return (a.kind == b.kind and a.width == b.width and a.height == b.height
            and a.channels == b.channels and a.size == b.size)


def intersect_specs(a: Spec | None, b: Spec | None) -> Spec | None:
    """Combine two spec constraints; None acts as the wildcard.

    Returns None only when both sides are wildcard.  Raises ValueError when
    the two concrete sides cannot describe the same stream.
    """
    if a is None:
        return b
    if b is None:
        return a
    if not specs_compatible(a, b):
        raise ValueError(f"specs do not intersect: {a.to_string()} vs {b.to_string()}")
    # keep the concrete framerate when one side is the wildcard
    if a.framerate == RATE_ANY and b.framerate != RATE_ANY:
        return a.with_rate(b.framerate)
    return a


# --- payloads ---------------------------------------------------------------

class CopyMeter:
    """Process-wide count of payload byte duplications.

    Incremented on copy-on-write private copies and on materialization of a
    multi-part payload into contiguous bytes.  Routing elements never bump it.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self._count = 0

    @property
    def count(self) -> int:
        with self._lock:
            return self._count

    def bump(self, n: int = 1) -> None:
        with self._lock:
            self._count += n

    def reset(self) -> None:
        with self._lock:
            self._count = 0


copy_meter = CopyMeter()

_payload_ids = itertools.count(1)


class Payload:
    """Immutable frame payload, possibly stored as several shared chunks.

    Chunks are plain bytes objects.  Fan-out elements hand the same Payload
    to every branch; grouping elements build a new Payload out of their
    inputs' chunks without copying.  ``pid`` is a process-unique id that is
    never reused, ``share_count`` counts the buffers currently holding the
    payload (diagnostic only).
    """

    __slots__ = ("parts", "pid", "_holders", "_hlock", "__weakref__")

    def __init__(self, *parts: bytes):
        self.parts = tuple(parts)
        self.pid = next(_payload_ids)
        self._holders = 0
        self._hlock = threading.Lock()

    @classmethod
    def compose(cls, payloads) -> "Payload":
        parts = []
        for p in payloads:
            parts.extend(p.parts)
        return cls(*parts)

    @property
    def nbytes(self) -> int:
        return sum(len(p) for p in self.parts)

    @property
    def share_count(self) -> int:
        with self._hlock:
            return self._holders

    def _hold(self):
        with self._hlock:
            self._holders += 1

    def _drop(self):
        with self._hlock:
            self._holders -= 1

    def tobytes(self) -> bytes:
        """Contiguous bytes. Joining multiple chunks counts as one copy."""
        if len(self.parts) == 1:
            return self.parts[0]
        copy_meter.bump()
        return b"".join(self.parts)

    def slice(self, offset: int, size: int) -> "Payload":
        """Sub-range as a new Payload, reusing chunks when aligned."""
        if offset == 0 and size == self.nbytes:
            return self
        picked, pos = [], 0
        for part in self.parts:
            end = pos + len(part)
            if pos >= offset and end <= offset + size:
                picked.append(part)
            elif end > offset and pos < offset + size:
                picked = None  # misaligned, fall back to materialized slice
                break
            pos = end
        if picked is not None and sum(len(p) for p in picked) == size:
            return Payload(*picked)
        return Payload(self.tobytes()[offset:offset + size])

    def mutable_copy(self) -> bytearray:
        """Private writable copy for in-place consumers (copy-on-write)."""
        copy_meter.bump()
        out = bytearray(self.nbytes)
        pos = 0
        for part in self.parts:
            out[pos:pos + len(part)] = part
            pos += len(part)
        return out


@dataclass(frozen=True)
class Buffer:
    """One frame travelling a link: payload + timestamp + spec + sequence.

    ``timestamp`` is in nanoseconds from stream start and non-decreasing per
    pad; ``sequence`` is stamped per source pad at dispatch.
    """

    payload: Payload
    timestamp: int
    spec: Spec
    sequence: int = 0

    def __post_init__(self):
        self.payload._hold()
        weakref.finalize(self, self.payload._drop)

    def with_sequence(self, seq: int) -> "Buffer":
        return replace(self, sequence=seq)

    def with_spec(self, spec: Spec) -> "Buffer":
        return replace(self, spec=spec)

    def size_ok(self) -> bool:
        expect = self.spec.byte_size
        return expect is None or expect == self.payload.nbytes

    def member(self, index: int) -> "Buffer":
        """Extract tensor ``index`` of a multi-tensor buffer without copying."""
        if not isinstance(self.spec, TensorsSpec):
            raise TypeError("member() needs a multi-tensor buffer")
        if not 0 <= index < self.spec.num_tensors:
            raise IndexError(index)
        sub = self.spec.specs[index]
        off = self.spec.member_offsets()[index]
        return Buffer(self.payload.slice(off, sub.byte_size),
                      self.timestamp, sub, self.sequence)


def make_buffer(payload_bytes: bytes, timestamp: int, spec: Spec,
                sequence: int = 0) -> Buffer:
    return Buffer(Payload(payload_bytes), timestamp, spec, sequence)


# --- numpy bridge -----------------------------------------------------------

def to_array(buf: Buffer) -> np.ndarray:
    """Read-only ndarray view of a single-tensor buffer.

    Shape is the reversed dim tuple so the innermost extent varies fastest
    in memory.  Multi-part payloads are materialized first.
    """
    spec = buf.spec
    if not isinstance(spec, TensorSpec):
        raise TypeError(f"to_array needs a single-tensor buffer, got {type(spec).__name__}")
    arr = np.frombuffer(buf.payload.tobytes(), dtype=spec.dtype.np_dtype)
    return arr.reshape(spec.np_shape)


def to_arrays(buf: Buffer) -> list[np.ndarray]:
    if isinstance(buf.spec, TensorSpec):
        return [to_array(buf)]
    return [to_array(buf.member(i)) for i in range(buf.spec.num_tensors)]


def from_array(arr: np.ndarray, timestamp: int,
               rate: Fraction = RATE_ANY) -> Buffer:
    """Build a single-tensor buffer around a C-contiguous array."""
    dtype = DataType.from_name(arr.dtype.name)
    dim = tuple(reversed(arr.shape))
    spec = TensorSpec(dim, dtype, rate)
    return make_buffer(np.ascontiguousarray(arr).tobytes(), timestamp, spec)
