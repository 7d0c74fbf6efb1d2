"""The tensor_filter element and its pluggable framework registry.

A framework plugin turns a model reference into a handle, answers the
spec question (given this input, what comes out?) and runs the model.
Plugins register under a framework name; descriptions select them with
``framework=<name> model=<ref>``.

Two frameworks ship built in:

* ``custom``: in-process Python callables registered under a string key
  via register_custom_filter.  The callable gets the input Buffer and may
  return a Buffer, an ndarray, raw bytes, or None for pass-through.
* ``toy``: a tiny deterministic model-file format for end-to-end tests.

Toy model file layout, little-endian: magic ``TOYM``, u32 layer kind
(0 dense, 1 softmax, 2 argmax), u32 input width, u32 output width, then
for dense only float32 weights (row-major, output x input) followed by
float32 biases.
"""

from __future__ import annotations

import struct
import threading
from dataclasses import dataclass

import numpy as np

from ..errors import (DimOverflow, DuplicateFramework, FormatError, IoError,
                      PluginFailure, SpecMismatch, SpecViolation,
                      UnknownFramework)
from ..tensors import (MAX_EXTENT, Buffer, DataType, TensorSpec, make_buffer,
                       to_array)
from .base import SINK, SRC, PadTemplate, PropertySpec, RuntimeElement, register


class FilterPlugin:
    """Framework interface: model loading, spec negotiation, invocation."""

    def __init__(self, framework: str):
        self.framework = framework

    def load(self, model: str):
        """Resolve a model reference to a handle."""
        raise NotImplementedError

    def declared_input(self, handle) -> TensorSpec | None:
        """Input spec the model insists on, or None for any."""
        return None

    def query_io(self, handle, input_spec: TensorSpec) -> TensorSpec:
        """Output spec for the given input spec."""
        raise NotImplementedError

    def invoke(self, handle, buf: Buffer):
        """Run the model. May return Buffer, ndarray, bytes, or None."""
        raise NotImplementedError


_plugins: dict[str, FilterPlugin] = {}
_plugins_lock = threading.Lock()


def register_plugin(plugin: FilterPlugin) -> FilterPlugin:
    with _plugins_lock:
        if plugin.framework in _plugins:
            raise DuplicateFramework(
                f"framework {plugin.framework!r} already registered")
        _plugins[plugin.framework] = plugin
    return plugin


def unregister_plugin(framework: str) -> None:
    with _plugins_lock:
        if _plugins.pop(framework, None) is None:
            raise UnknownFramework(f"framework {framework!r} not registered")


def get_plugin(framework: str) -> FilterPlugin:
    with _plugins_lock:
        try:
            return _plugins[framework]
        except KeyError:
            raise UnknownFramework(
                f"framework {framework!r} not registered") from None


def list_frameworks() -> list[str]:
    with _plugins_lock:
        return sorted(_plugins)


# --- custom framework ---------------------------------------------------------

@dataclass(frozen=True)
class _CustomEntry:
    fn: object
    input_spec: TensorSpec | None
    output_spec: TensorSpec | None
    infer: object  # optional callable input_spec -> output_spec


class CustomPlugin(FilterPlugin):
    """Callables registered by key; the identity transform by default."""

    def __init__(self, framework: str = "custom"):
        super().__init__(framework)
        self._models: dict[str, _CustomEntry] = {}
        self._lock = threading.Lock()

    def add(self, key: str, fn, input_spec=None, output_spec=None, infer=None):
        with self._lock:
            if key in self._models:
                raise DuplicateFramework(
                    f"custom filter {key!r} already registered")
            self._models[key] = _CustomEntry(fn, input_spec, output_spec, infer)

    def remove(self, key: str):
        with self._lock:
            self._models.pop(key, None)

    def load(self, model: str) -> _CustomEntry:
        with self._lock:
            try:
                return self._models[model]
            except KeyError:
                raise PluginFailure(
                    f"no custom filter registered under {model!r}") from None

    def declared_input(self, entry: _CustomEntry):
        return entry.input_spec

    def query_io(self, entry: _CustomEntry, input_spec: TensorSpec) -> TensorSpec:
        if entry.infer is not None:
            return entry.infer(input_spec)
        if entry.output_spec is not None:
            return entry.output_spec.with_rate(input_spec.framerate)
        return input_spec

    def invoke(self, entry: _CustomEntry, buf: Buffer):
        return entry.fn(buf)


CUSTOM = register_plugin(CustomPlugin())


def register_custom_filter(key: str, fn, input_spec=None, output_spec=None,
                           infer=None):
    """Make ``framework=custom model=<key>`` run ``fn`` on every buffer."""
    CUSTOM.add(key, fn, input_spec, output_spec, infer)


def unregister_custom_filter(key: str):
    CUSTOM.remove(key)


# --- toy framework -------------------------------------------------------------

_TOY_MAGIC = b"TOYM"
_TOY_HEADER = struct.Struct("<4sIII")
DENSE, SOFTMAX, ARGMAX = 0, 1, 2


@dataclass(frozen=True)
class ToyModel:
    kind: int
    in_dim: int
    out_dim: int
    weights: np.ndarray | None  # (out_dim, in_dim) float32
    biases: np.ndarray | None   # (out_dim,) float32


def write_dense(path, weights, biases) -> None:
    w = np.asarray(weights, dtype=np.float32)
    b = np.asarray(biases, dtype=np.float32)
    out_dim, in_dim = w.shape
    if b.shape != (out_dim,):
        raise FormatError(f"bias shape {b.shape} for {out_dim} outputs")
    with open(path, "wb") as f:
        f.write(_TOY_HEADER.pack(_TOY_MAGIC, DENSE, in_dim, out_dim))
        f.write(w.tobytes())
        f.write(b.tobytes())


def write_softmax(path, n: int) -> None:
    with open(path, "wb") as f:
        f.write(_TOY_HEADER.pack(_TOY_MAGIC, SOFTMAX, n, n))


def write_argmax(path, n: int) -> None:
    with open(path, "wb") as f:
        f.write(_TOY_HEADER.pack(_TOY_MAGIC, ARGMAX, n, 1))


def load_model(path) -> ToyModel:
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as e:
        raise IoError(f"cannot read model {path}: {e}") from None
    if len(blob) < _TOY_HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, kind, in_dim, out_dim = _TOY_HEADER.unpack_from(blob)
    if magic != _TOY_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if kind not in (DENSE, SOFTMAX, ARGMAX):
        raise FormatError(f"{path}: unknown layer kind {kind}")
    if in_dim < 1 or out_dim < 1:
        raise FormatError(f"{path}: zero-width layer")
    if in_dim > MAX_EXTENT or out_dim > MAX_EXTENT:
        raise DimOverflow(f"{path}: layer width beyond {MAX_EXTENT}")
    body = blob[_TOY_HEADER.size:]
    if kind == DENSE:
        expect = 4 * (in_dim * out_dim + out_dim)
        if len(body) != expect:
            raise FormatError(
                f"{path}: weights block is {len(body)} bytes, need {expect}")
        flat = np.frombuffer(body, dtype="<f4")
        return ToyModel(kind, in_dim, out_dim,
                        flat[:in_dim * out_dim].reshape(out_dim, in_dim),
                        flat[in_dim * out_dim:])
    if body:
        raise FormatError(f"{path}: unexpected {len(body)} trailing bytes")
    if kind == SOFTMAX and in_dim != out_dim:
        raise FormatError(f"{path}: softmax widths differ ({in_dim}/{out_dim})")
    if kind == ARGMAX and out_dim != 1:
        raise FormatError(f"{path}: argmax must declare one output")
    return ToyModel(kind, in_dim, out_dim, None, None)


class ToyPlugin(FilterPlugin):
    """Deterministic single-layer models loaded from toy model files."""

    def __init__(self, framework: str = "toy"):
        super().__init__(framework)

    def load(self, model: str) -> ToyModel:
        return load_model(model)

    def declared_input(self, handle: ToyModel):
        return None  # any float32 stream with the right element count

    def query_io(self, handle: ToyModel, input_spec: TensorSpec) -> TensorSpec:
        if input_spec.dtype is not DataType.float32:
            raise SpecMismatch(
                f"toy models take float32, got {input_spec.dtype.value}")
        if input_spec.element_count != handle.in_dim:
            raise SpecMismatch(
                f"model takes {handle.in_dim} values, "
                f"stream carries {input_spec.element_count}")
        if handle.kind == SOFTMAX:
            return input_spec
        if handle.kind == ARGMAX:
            return TensorSpec((1, 1, 1, 1), DataType.int32,
                              input_spec.framerate)
        return TensorSpec((1, 1, handle.out_dim, 1), DataType.float32,
                          input_spec.framerate)

    def invoke(self, handle: ToyModel, buf: Buffer):
        x = to_array(buf).reshape(-1)
        if handle.kind == DENSE:
            return handle.weights @ x + handle.biases
        if handle.kind == SOFTMAX:
            e = np.exp(x.astype(np.float64) - float(x.max()))
            return (e / e.sum()).astype(np.float32)
        return np.array([np.argmax(x)], dtype=np.int32)


TOY = register_plugin(ToyPlugin())


# --- the element ---------------------------------------------------------------

@register
class TensorFilter(RuntimeElement):
    """Run a model on every frame through a registered framework plugin."""

    KIND = "tensor_filter"
    PROPERTIES = (
        PropertySpec("framework", "str", required=True),
        PropertySpec("model", "str", required=True),
    )
    PADS = (PadTemplate("sink", SINK), PadTemplate("src", SRC))

    @classmethod
    def check_props(cls, props):
        get_plugin(props["framework"])  # unknown framework fails at parse time
        return props

    @classmethod
    def infer_outputs(cls, props, inputs, constraints, pads):
        spec = inputs.get("sink")
        if spec is None:
            return {}
        if not isinstance(spec, TensorSpec):
            raise SpecMismatch("tensor_filter needs a single-tensor stream")
        plugin = get_plugin(props["framework"])
        handle = plugin.load(props["model"])
        declared = plugin.declared_input(handle)
        if declared is not None and declared.dim != spec.dim:
            raise SpecMismatch(
                f"model wants {declared.dim_str()}, stream is {spec.dim_str()}")
        return {"src": plugin.query_io(handle, spec)}

    def __init__(self, desc, ctx):
        super().__init__(desc, ctx)
        self._plugin = get_plugin(self.props["framework"])
        self._handle = self._plugin.load(self.props["model"])

    def handle(self, pad, buf):
        out_spec = self.out_specs["src"]
        try:
            result = self._plugin.invoke(self._handle, buf)
        except Exception as e:
            raise PluginFailure(
                f"{self.name} ({self.props['framework']}/"
                f"{self.props['model']}): {e}") from e
        yield "src", self._as_buffer(result, buf, out_spec)

    def _as_buffer(self, result, buf: Buffer, out_spec) -> Buffer:
        if result is None:
            out = Buffer(buf.payload, buf.timestamp, out_spec)
        elif isinstance(result, Buffer):
            out = Buffer(result.payload, buf.timestamp, out_spec)
        elif isinstance(result, np.ndarray):
            if result.dtype != out_spec.dtype.np_dtype:
                raise SpecViolation(
                    f"{self.name}: plugin returned {result.dtype}, "
                    f"negotiated {out_spec.dtype.value}")
            out = make_buffer(np.ascontiguousarray(result).tobytes(),
                              buf.timestamp, out_spec)
        elif isinstance(result, (bytes, bytearray, memoryview)):
            out = make_buffer(bytes(result), buf.timestamp, out_spec)
        else:
            raise SpecViolation(
                f"{self.name}: plugin returned {type(result).__name__}")
        if not out.size_ok():
            raise SpecViolation(
                f"{self.name}: plugin returned {out.payload.nbytes} bytes, "
                f"negotiated spec needs {out_spec.byte_size}")
        return out
