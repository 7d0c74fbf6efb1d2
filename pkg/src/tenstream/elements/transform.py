"""Raw-to-tensor conversion, tensor transforms, tensor-to-raw decoding.

tensor_transform modes and their option strings:

* ``mode=arithmetic option=typecast:T,add:V,mul:V`` element-wise chain,
  applied left to right.  An empty option is a pass-through.
* ``mode=transpose option=a:b:c:d`` axis permutation; output axis i takes
  the extent (and data lines) of input axis perm[i].
* ``mode=stand`` whole-frame standardization (x - mean) / max(std, 1e-10).
* ``mode=normalize option=min:max`` linear map of the frame's value range
  onto [min, max].
* ``mode=resize option=W:H`` nearest-neighbor resample of the width and
  height axes (dims 1 and 2).

Casting to an integer type saturates at the target range and truncates
toward zero; it never wraps.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..errors import (BadProperty, ChainSpecError, LengthMismatch,
                      SpecMismatch, UnsupportedDtype)
from ..tensors import (Buffer, DataType, RawKind, RawSpec, Spec, TensorSpec,
                       TensorsSpec, make_buffer, to_array)
from .base import SINK, SRC, PadTemplate, PropertySpec, RuntimeElement, register

STAND_EPSILON = 1e-10


def saturate_cast(arr: np.ndarray, dtype: DataType) -> np.ndarray:
    """Cast with saturation at the target range; NaN becomes 0.

    Float to integer truncates toward zero.  For 64-bit integer targets the
    float path clamps at the largest float64 value not exceeding the bound,
    since the exact bound is not representable.
    """
    target = dtype.np_dtype
    if dtype.is_float:
        return arr.astype(target)
    info = np.iinfo(target)
    if arr.dtype.kind in "iu":
        src = np.iinfo(arr.dtype)
        lo = max(info.min, src.min)
        hi = min(info.max, src.max)
        # bounds fit the source dtype by construction, so this clip is exact
        return np.clip(arr, arr.dtype.type(lo), arr.dtype.type(hi)).astype(target)
    lo = np.float64(info.min)
    hi = np.float64(info.max)
    if int(hi) > info.max:
        hi = np.nextafter(hi, 0.0)
    if int(lo) < info.min:
        lo = np.nextafter(lo, 0.0)
    work = np.nan_to_num(arr.astype(np.float64), nan=0.0,
                         posinf=float(hi), neginf=float(lo))
    return np.trunc(np.clip(work, lo, hi)).astype(target)


def _require_tensor(spec: Spec, what: str) -> TensorSpec:
    if not isinstance(spec, TensorSpec):
        raise ChainSpecError(f"{what} needs a single-tensor stream, "
                             f"got {spec.to_string()}")
    return spec


# --- transform steps ---------------------------------------------------------

@dataclass(frozen=True)
class Typecast:
    dtype: DataType

    def output_spec(self, spec: TensorSpec) -> TensorSpec:
        return replace(spec, dtype=self.dtype)

    def apply(self, arr: np.ndarray) -> np.ndarray:
        return saturate_cast(arr, self.dtype)


@dataclass(frozen=True)
class Arith:
    op: str  # add | mul
    value: float

    def output_spec(self, spec: TensorSpec) -> TensorSpec:
        return spec

    def apply(self, arr: np.ndarray) -> np.ndarray:
        if arr.dtype.kind in "iu" and float(self.value).is_integer():
            # integer streams stay exact at any width: python-int math,
            # then clamp at the dtype's range
            info = np.iinfo(arr.dtype)
            wide = arr.astype(object)
            v = int(self.value)
            wide = wide + v if self.op == "add" else wide * v
            wide = np.minimum(np.maximum(wide, info.min), info.max)
            return wide.astype(arr.dtype)
        if arr.dtype.kind in "iu":
            work = arr.astype(np.float64)
            work = work + self.value if self.op == "add" else work * self.value
            return saturate_cast(work, DataType.from_name(arr.dtype.name))
        return arr + self.value if self.op == "add" else arr * self.value


@dataclass(frozen=True)
class Transpose:
    perm: tuple[int, int, int, int]

    def output_spec(self, spec: TensorSpec) -> TensorSpec:
        dim = tuple(spec.dim[self.perm[i]] for i in range(4))
        return replace(spec, dim=dim)

    def apply(self, arr: np.ndarray) -> np.ndarray:
        axes = tuple(3 - self.perm[3 - j] for j in range(4))
        return np.ascontiguousarray(np.transpose(arr, axes))


@dataclass(frozen=True)
class Standardize:
    def output_spec(self, spec: TensorSpec) -> TensorSpec:
        if not spec.dtype.is_float:
            raise ChainSpecError(
                f"standardize needs a float stream, got {spec.dtype.value}")
        return spec

    def apply(self, arr: np.ndarray) -> np.ndarray:
        work = arr.astype(np.float64)
        std = max(float(work.std()), STAND_EPSILON)
        return ((work - work.mean()) / std).astype(arr.dtype)


@dataclass(frozen=True)
class Normalize:
    lo: float
    hi: float

    def output_spec(self, spec: TensorSpec) -> TensorSpec:
        if spec.dtype.is_float:
            return spec
        return replace(spec, dtype=DataType.float32)

    def apply(self, arr: np.ndarray) -> np.ndarray:
        work = arr.astype(np.float64)
        span = float(work.max() - work.min()) if arr.size else 0.0
        scaled = (work - work.min()) / max(span, STAND_EPSILON)
        out = scaled * (self.hi - self.lo) + self.lo
        target = arr.dtype if arr.dtype.kind == "f" else np.float32
        return out.astype(target)


@dataclass(frozen=True)
class ResizeNN:
    width: int
    height: int

    def output_spec(self, spec: TensorSpec) -> TensorSpec:
        dim = (spec.dim[0], self.width, self.height, spec.dim[3])
        return replace(spec, dim=dim)

    def apply(self, arr: np.ndarray) -> np.ndarray:
        # array layout is (batch, height, width, channels)
        _, in_h, in_w, _ = arr.shape
        rows = (np.arange(self.height) * in_h) // self.height
        cols = (np.arange(self.width) * in_w) // self.width
        return np.ascontiguousarray(arr[:, rows][:, :, cols])


class TransformChain:
    """Ordered, non-empty list of transform steps."""

    def __init__(self, steps):
        self.steps = tuple(steps)
        if not self.steps:
            raise BadProperty("transform chain is empty")

    @classmethod
    def parse(cls, mode: str, option: str) -> "TransformChain | None":
        """Build a chain from the element's mode/option strings.

        Returns None for the pass-through case (arithmetic with no steps).
        """
        if mode in ("arithmetic", "arith"):
            steps = []
            for token in filter(None, option.split(",")):
                op, _, value = token.partition(":")
                if op == "typecast":
                    try:
                        steps.append(Typecast(DataType.from_name(value)))
                    except UnsupportedDtype:
                        raise BadProperty(
                            f"unknown cast type {value!r}") from None
                elif op in ("add", "mul"):
                    try:
                        steps.append(Arith(op, float(value)))
                    except ValueError:
                        raise BadProperty(
                            f"bad arithmetic operand {token!r}") from None
                else:
                    raise BadProperty(f"unknown arithmetic step {op!r}")
            return cls(steps) if steps else None
        if mode == "transpose":
            try:
                perm = tuple(int(p) for p in option.split(":"))
            except ValueError:
                raise BadProperty(f"bad transpose option {option!r}") from None
            if sorted(perm) != [0, 1, 2, 3]:
                raise BadProperty(
                    f"transpose option {option!r} is not a permutation of 0:1:2:3")
            return cls([Transpose(perm)])
        if mode == "stand":
            return cls([Standardize()])
        if mode == "normalize":
            try:
                lo, hi = (float(p) for p in option.split(":"))
            except ValueError:
                raise BadProperty(f"bad normalize option {option!r}") from None
            return cls([Normalize(lo, hi)])
        if mode == "resize":
            try:
                w, h = (int(p) for p in option.split(":"))
            except ValueError:
                raise BadProperty(f"bad resize option {option!r}") from None
            if w < 1 or h < 1:
                raise BadProperty("resize target must be >= 1x1")
            return cls([ResizeNN(w, h)])
        raise BadProperty(f"unknown transform mode {mode!r}")

    def output_spec(self, spec: TensorSpec) -> TensorSpec:
        for step in self.steps:
            spec = step.output_spec(spec)
        return spec

    def apply_array(self, arr: np.ndarray) -> np.ndarray:
        for step in self.steps:
            arr = step.apply(arr)
        return arr


@register
class TensorTransform(RuntimeElement):
    """Apply a transform chain to every frame."""

    KIND = "tensor_transform"
    ALIASES = ("tensor_trans",)
    PROPERTIES = (
        PropertySpec("mode", "enum", required=True,
                     choices=("arithmetic", "arith", "transpose", "stand",
                              "normalize", "resize")),
        PropertySpec("option", "str", ""),
    )
    PADS = (PadTemplate("sink", SINK), PadTemplate("src", SRC))

    @classmethod
    def check_props(cls, props):
        props["_chain"] = TransformChain.parse(props["mode"],
                                               props.get("option", ""))
        return props

    @classmethod
    def infer_outputs(cls, props, inputs, constraints, pads):
        spec = inputs.get("sink")
        if spec is None:
            return {}
        chain = props["_chain"]
        if chain is None:
            return {"src": spec}
        return {"src": chain.output_spec(_require_tensor(spec, "transform"))}

    def handle(self, pad, buf):
        chain = self.props["_chain"]
        if chain is None:
            yield "src", buf
            return
        out = chain.apply_array(to_array(buf))
        yield "src", make_buffer(np.ascontiguousarray(out).tobytes(),
                                 buf.timestamp, self.out_specs["src"])


@register
class TensorConverter(RuntimeElement):
    """Reinterpret a raw stream as a tensor stream.

    Video input derives [channels, width, height, 1] uint8 on its own;
    audio, text and binary input need dim= and type= declared.  The payload
    is reused, only the stream spec changes.
    """

    KIND = "tensor_converter"
    PROPERTIES = (
        PropertySpec("dim", "dim", doc="declared shape for non-video input"),
        PropertySpec("type", "dtype", doc="declared element type"),
        PropertySpec("input", "enum", None,
                     choices=("video", "audio", "text", "binary"),
                     doc="raw kind when the upstream spec does not say"),
        PropertySpec("width", "int", 0),
        PropertySpec("height", "int", 0),
        PropertySpec("channels", "int", 0),
    )
    PADS = (PadTemplate("sink", SINK), PadTemplate("src", SRC))

    @classmethod
    def infer_outputs(cls, props, inputs, constraints, pads):
        spec = inputs.get("sink")
        if spec is None:
            return {}
        if isinstance(spec, (TensorSpec, TensorsSpec)):
            raise SpecMismatch("converter input is already a tensor stream")
        declared_kind = props.get("input")
        kind = spec.kind.value
        if kind == "binary" and declared_kind is not None:
            kind = declared_kind
        elif declared_kind is not None and declared_kind != kind:
            raise SpecMismatch(
                f"input declared as {declared_kind}, upstream is {kind}")
        if kind == "video":
            w = spec.width or props.get("width", 0)
            h = spec.height or props.get("height", 0)
            c = spec.channels or props.get("channels", 0)
            if not (w and h and c):
                raise BadProperty("video input needs width/height/channels")
            return {"src": TensorSpec((c, w, h, 1), DataType.uint8,
                                      spec.framerate)}
        dim, dtype = props.get("dim"), props.get("type")
        if dim is None or dtype is None:
            raise BadProperty(f"{kind} input needs dim= and type= declared")
        return {"src": TensorSpec(dim, dtype, spec.framerate)}

    def handle(self, pad, buf):
        spec = self.out_specs["src"]
        if buf.payload.nbytes != spec.byte_size:
            raise LengthMismatch(
                f"{buf.payload.nbytes} raw bytes, tensor needs {spec.byte_size}")
        yield "src", Buffer(buf.payload, buf.timestamp, spec)


@register
class TensorDecoder(RuntimeElement):
    """Turn a tensor stream back into a raw video or text stream."""

    KIND = "tensor_decoder"
    PROPERTIES = (
        PropertySpec("mode", "enum", required=True,
                     choices=("direct_video", "argmax_label")),
        PropertySpec("labels", "strlist", (),
                     doc="class names for argmax_label"),
    )
    PADS = (PadTemplate("sink", SINK), PadTemplate("src", SRC))

    @classmethod
    def infer_outputs(cls, props, inputs, constraints, pads):
        spec = inputs.get("sink")
        if spec is None:
            return {}
        spec = _require_tensor(spec, "decoder")
        if props["mode"] == "direct_video":
            if spec.dtype is not DataType.uint8:
                raise SpecMismatch("direct_video needs a uint8 stream")
            c, w, h, n = spec.dim
            if c not in (1, 3, 4) or n != 1:
                raise SpecMismatch(
                    f"direct_video needs [channels,w,h,1] with 1/3/4 channels, got {spec.dim}")
            return {"src": RawSpec(RawKind.video, width=w, height=h,
                                   channels=c, framerate=spec.framerate)}
        labels = props.get("labels", ())
        if not labels:
            raise BadProperty("argmax_label needs labels=")
        if not spec.dtype.is_float:
            raise SpecMismatch("argmax_label needs a float stream")
        if sum(1 for d in spec.dim if d > 1) > 1:
            raise SpecMismatch(f"argmax_label needs a vector, got {spec.dim}")
        if spec.element_count != len(labels):
            raise SpecMismatch(
                f"vector length {spec.element_count} vs {len(labels)} labels")
        return {"src": RawSpec(RawKind.text, framerate=spec.framerate)}

    def handle(self, pad, buf):
        if self.props["mode"] == "direct_video":
            yield "src", Buffer(buf.payload, buf.timestamp,
                                self.out_specs["src"])
            return
        scores = to_array(buf).reshape(-1)
        label = self.props["labels"][int(np.argmax(scores))]
        yield "src", make_buffer(label.encode("utf-8"), buf.timestamp,
                                 self.out_specs["src"])


@register
class VideoScale(RuntimeElement):
    """Nearest-neighbor rescale of a raw video stream.

    The target size comes from width=/height= or from a downstream spec
    filter; with neither, frames pass unchanged.
    """

    KIND = "videoscale"
    PROPERTIES = (
        PropertySpec("width", "int", 0),
        PropertySpec("height", "int", 0),
    )
    PADS = (PadTemplate("sink", SINK), PadTemplate("src", SRC))

    @classmethod
    def infer_outputs(cls, props, inputs, constraints, pads):
        spec = inputs.get("sink")
        if spec is None:
            return {}
        if not isinstance(spec, RawSpec) or spec.kind is not RawKind.video:
            raise SpecMismatch("videoscale needs a raw video stream")
        w, h = props.get("width", 0), props.get("height", 0)
        wanted = constraints.get("src")
        if not (w and h) and isinstance(wanted, RawSpec) \
                and wanted.kind is RawKind.video:
            w, h = wanted.width, wanted.height
        if not (w and h):
            w, h = spec.width, spec.height
        return {"src": replace(spec, width=w, height=h)}

    def handle(self, pad, buf):
        src_spec: RawSpec = self.in_specs["sink"]
        out_spec: RawSpec = self.out_specs["src"]
        if buf.payload.nbytes != src_spec.byte_size:
            raise LengthMismatch(
                f"{buf.payload.nbytes} bytes for {src_spec.to_string()}")
        if (src_spec.width, src_spec.height) == (out_spec.width, out_spec.height):
            yield "src", Buffer(buf.payload, buf.timestamp, out_spec)
            return
        arr = np.frombuffer(buf.payload.tobytes(), dtype=np.uint8).reshape(
            src_spec.height, src_spec.width, src_spec.channels)
        rows = (np.arange(out_spec.height) * src_spec.height) // out_spec.height
        cols = (np.arange(out_spec.width) * src_spec.width) // out_spec.width
        scaled = np.ascontiguousarray(arr[rows][:, cols])
        yield "src", make_buffer(scaled.tobytes(), buf.timestamp, out_spec)
