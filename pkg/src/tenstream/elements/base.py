"""Element framework: kind registry, property schemas, pads, runtime contract.

An element kind is a Python class.  Class attributes describe the static
shape (pad templates, property schema); classmethods drive negotiation;
instances are the runtime objects created by the pipeline.

Threading contract: an element instance is fed buffers one at a time per
sink pad.  Elements with several sink pads may be fed from different
threads and serialize internally.  Only sources and queues own threads.
"""

from __future__ import annotations

import logging
import threading
import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Callable, Iterable

from ..errors import (BadProperty, RangeError, StreamError, UnknownKind,
                      UnknownPad)
from ..tensors import (DataType, Spec, check_dim, parse_any_spec)

log = logging.getLogger(__name__)

SRC = "src"
SINK = "sink"


@dataclass(frozen=True)
class PropertySpec:
    """Schema of one element property."""

    name: str
    kind: str  # int | float | bool | str | dim | dtype | rate | intlist | strlist | enum | spec
    default: Any = None
    required: bool = False
    choices: tuple[str, ...] = ()
    parser: Callable[[str], Any] | None = None
    doc: str = ""

    def coerce(self, raw) -> Any:
        try:
            return self._coerce(raw)
        except BadProperty:
            raise
        except StreamError as e:
            raise BadProperty(f"property {self.name!r}: {e}") from e
        except (TypeError, ValueError) as e:
            raise BadProperty(f"property {self.name!r}: {e}") from None

    def _coerce(self, raw):
        if self.parser is not None:
            return self.parser(raw) if isinstance(raw, str) else raw
        k = self.kind
        if k == "int":
            return int(raw)
        if k == "float":
            return float(raw)
        if k == "bool":
            if isinstance(raw, bool):
                return raw
            if str(raw).lower() in ("true", "1", "yes"):
                return True
            if str(raw).lower() in ("false", "0", "no"):
                return False
            raise BadProperty(f"property {self.name!r}: not a boolean: {raw!r}")
        if k == "str":
            return str(raw)
        if k == "dim":
            if isinstance(raw, str):
                return check_dim(tuple(int(p) for p in raw.split(":")))
            return check_dim(tuple(raw))
        if k == "dtype":
            return raw if isinstance(raw, DataType) else DataType.from_name(str(raw))
        if k == "rate":
            rate = Fraction(raw)
            if rate < 0:
                raise RangeError(f"property {self.name!r}: rate must be >= 0")
            return rate
        if k == "intlist":
            if isinstance(raw, str):
                return tuple(int(p) for p in raw.split(","))
            return tuple(int(p) for p in raw)
        if k == "strlist":
            if isinstance(raw, str):
                return tuple(p for p in raw.split(",") if p)
            return tuple(str(p) for p in raw)
        if k == "enum":
            value = str(raw)
            if value not in self.choices:
                raise BadProperty(
                    f"property {self.name!r}: {value!r} not one of {self.choices}")
            return value
        if k == "spec":
            return parse_any_spec(raw) if isinstance(raw, str) else raw
        raise BadProperty(f"property {self.name!r}: unknown schema kind {k!r}")


@dataclass(frozen=True)
class PadTemplate:
    """Static description of a pad an element exposes.

    Request templates carry a ``_%u`` suffix pattern and are instantiated
    on demand (sink_0, sink_1, ...).
    """

    name: str
    direction: str  # SRC or SINK
    presence: str = "static"  # static | request
    spec: Spec | None = None  # None = wildcard

    @property
    def is_request(self) -> bool:
        return self.presence == "request"

    def instance_name(self, index: int) -> str:
        return self.name.replace("%u", str(index))

    def matches_instance(self, name: str) -> bool:
        prefix, _, tail = self.name.partition("%u")
        if _ == "":
            return name == self.name
        return (name.startswith(prefix) and name[len(prefix):].isdigit()
                and tail == "")


class ElementStats:
    """Per-element counters. All fields cumulative except last_latency_ns."""

    __slots__ = ("_lock", "frames_in", "frames_out", "frames_dropped",
                 "busy_ns", "last_latency_ns")

    def __init__(self):
        self._lock = threading.Lock()
        self.frames_in = 0
        self.frames_out = 0
        self.frames_dropped = 0
        self.busy_ns = 0
        self.last_latency_ns = 0

    def note_in(self, n: int = 1):
        with self._lock:
            self.frames_in += n

    def note_out(self, n: int = 1):
        with self._lock:
            self.frames_out += n

    def note_dropped(self, n: int = 1):
        with self._lock:
            self.frames_dropped += n

    def note_busy(self, ns: int):
        with self._lock:
            self.busy_ns += ns
            self.last_latency_ns = ns

    def snapshot(self) -> "StatsView":
        with self._lock:
            return StatsView(self.frames_in, self.frames_out,
                             self.frames_dropped, self.busy_ns,
                             self.last_latency_ns)


@dataclass(frozen=True)
class StatsView:
    frames_in: int
    frames_out: int
    frames_dropped: int
    busy_ns: int
    last_latency_ns: int

    def line(self, name: str) -> str:
        # pinned one-line serialization: name frames_in frames_out drops busy_ms
        busy_ms = self.busy_ns // 1_000_000
        return f"{name} {self.frames_in} {self.frames_out} {self.frames_dropped} {busy_ms}"


class Context:
    """Services the pipeline provides to its runtime elements."""

    def __init__(self):
        self.gate = threading.Event()      # set while Running
        self.stopped = threading.Event()   # set once while tearing down
        self.slots: dict[str, Any] = {}    # repo slots, keyed by slot id
        self._threads: list[threading.Thread] = []
        self._tlock = threading.Lock()

    def register_thread(self, thread: threading.Thread):
        with self._tlock:
            self._threads.append(thread)

    def threads(self) -> list[threading.Thread]:
        with self._tlock:
            return list(self._threads)

    def forget_threads(self):
        with self._tlock:
            self._threads.clear()

    # the pipeline overrides these
    def post_error(self, element: str, exc: BaseException):  # pragma: no cover
        raise NotImplementedError

    def sink_done(self, element: str):  # pragma: no cover
        raise NotImplementedError


class RuntimeElement:
    """Base runtime behaviour: receive buffers, emit buffers, keep stats.

    Subclasses implement handle() for synchronous 1-in-N-out processing or
    override receive()/start() for elements with queues and threads.
    """

    KIND = ""
    ALIASES: tuple[str, ...] = ()
    PROPERTIES: tuple[PropertySpec, ...] = ()
    PADS: tuple[PadTemplate, ...] = ()
    DOC = ""

    def __init__(self, desc, ctx: Context):
        self.desc = desc
        self.name: str = desc.name
        self.props: dict[str, Any] = desc.props
        self.ctx = ctx
        self.stats = ElementStats()
        self._lock = threading.Lock()
        self._links: dict[str, tuple["RuntimeElement", str]] = {}
        self._seq: dict[str, int] = {}
        self._last_ts: dict[str, int] = {}
        self._eos_pending: set[str] = set(desc.sink_pad_names())
        self._eos_sent = False
        self.out_specs: dict[str, Spec] = {}
        self.in_specs: dict[str, Spec] = {}

    # --- negotiation hooks (classmethods) -----------------------------------

    @classmethod
    def check_props(cls, props: dict[str, Any]) -> dict[str, Any]:
        """Kind-specific validation beyond per-property coercion."""
        return props

    @classmethod
    def template_spec(cls, props: dict[str, Any], pad_name: str,
                      direction: str) -> Spec | None:
        """Spec constraint a pad advertises before negotiation (None = any)."""
        for tpl in cls.PADS:
            if tpl.direction == direction and tpl.matches_instance(pad_name):
                return tpl.spec
        return None

    @classmethod
    def infer_outputs(cls, props: dict[str, Any], inputs: dict[str, Spec],
                      constraints: dict[str, Spec | None],
                      pads: "PadNames") -> dict[str, Spec]:
        """Map negotiated input specs to output specs, one per source pad.

        Default: pass the single input through to every source pad.
        """
        outs = {}
        if inputs:
            spec = next(iter(inputs.values()))
            for pad in pads.sources:
                outs[pad] = spec
        return outs

    # --- wiring (done by the pipeline) ---------------------------------------

    def wire(self, src_pad: str, target: "RuntimeElement", target_pad: str):
        self._links[src_pad] = (target, target_pad)
        self._seq.setdefault(src_pad, 0)

    # --- data path -----------------------------------------------------------

    def feed(self, pad: str, buf):
        self.stats.note_in()
        self.receive(pad, buf)

    def receive(self, pad: str, buf):
        with self._lock:
            t0 = time.perf_counter_ns()
            outs = list(self.handle(pad, buf))
            self.stats.note_busy(time.perf_counter_ns() - t0)
        for src_pad, out in outs:
            self.dispatch(src_pad, out)

    def handle(self, pad: str, buf) -> Iterable[tuple[str, Any]]:
        raise NotImplementedError(f"{self.KIND} cannot receive buffers")

    def dispatch(self, src_pad: str, buf):
        link = self._links.get(src_pad)
        if link is None:
            raise UnknownPad(f"{self.name}.{src_pad} is not linked")
        seq = self._seq[src_pad]
        self._seq[src_pad] = seq + 1
        buf = buf.with_sequence(seq)
        if __debug__:
            assert buf.size_ok(), \
                f"{self.name}.{src_pad}: payload {buf.payload.nbytes}B does not match spec"
            last = self._last_ts.get(src_pad)
            assert last is None or buf.timestamp >= last, \
                f"{self.name}.{src_pad}: timestamp went backwards"
            self._last_ts[src_pad] = buf.timestamp
        self.stats.note_out()
        target, target_pad = link
        target.feed(target_pad, buf)

    # --- end of stream --------------------------------------------------------

    def feed_eos(self, pad: str):
        self.receive_eos(pad)

    def receive_eos(self, pad: str):
        with self._lock:
            self._eos_pending.discard(pad)
            done = not self._eos_pending
            outs = list(self.flush()) if done else []
        for src_pad, out in outs:
            self.dispatch(src_pad, out)
        if done:
            self.emit_eos()

    def flush(self) -> Iterable[tuple[str, Any]]:
        return ()

    def emit_eos(self):
        with self._lock:
            if self._eos_sent:
                return
            self._eos_sent = True
        for src_pad, (target, target_pad) in self._links.items():
            target.feed_eos(target_pad)
        if not self._links:
            self.ctx.sink_done(self.name)

    # --- lifecycle --------------------------------------------------------------

    def start(self):
        """Spawn this element's threads, if any. Called on entering Running."""

    def stop(self):
        """Wake any internal waits so threads can observe ctx.stopped."""

    def reset(self):
        """Drop transient state so the pipeline can be run again."""
        self._seq = {pad: 0 for pad in self._seq}
        self._last_ts.clear()
        self._eos_pending = set(self.desc.sink_pad_names())
        self._eos_sent = False

    def fail(self, exc: BaseException):
        log.debug("element %s failed: %r", self.name, exc)
        self.ctx.post_error(self.name, exc)


@dataclass(frozen=True)
class PadNames:
    """Concrete pad names of one element instance, in creation order."""

    sinks: tuple[str, ...]
    sources: tuple[str, ...]


# --- registry -----------------------------------------------------------------

_REGISTRY: dict[str, type[RuntimeElement]] = {}
_ALIASES: dict[str, str] = {}


def register(cls: type[RuntimeElement]) -> type[RuntimeElement]:
    name = cls.KIND
    if not name:
        raise ValueError("element class without KIND")
    if name in _REGISTRY:
        raise ValueError(f"element kind {name!r} already registered")
    _REGISTRY[name] = cls
    for alias in cls.ALIASES:
        _ALIASES[alias] = name
    return cls


def get_kind(name: str) -> type[RuntimeElement]:
    canonical = _ALIASES.get(name, name)
    try:
        return _REGISTRY[canonical]
    except KeyError:
        raise UnknownKind(f"unknown element kind {name!r}") from None


def list_kinds() -> list[str]:
    return sorted(_REGISTRY)


def property_schema(cls: type[RuntimeElement]) -> dict[str, PropertySpec]:
    schema = {p.name: p for p in cls.PROPERTIES}
    if "name" not in schema:
        schema["name"] = PropertySpec("name", "str", doc="instance name")
    return schema


def coerce_props(cls: type[RuntimeElement], raw: dict[str, Any]) -> dict[str, Any]:
    """Validate and normalize a property dict against a kind's schema."""
    schema = property_schema(cls)
    out: dict[str, Any] = {}
    alias = {"frame": "framework", "m": "model"} if cls.KIND == "tensor_filter" else {}
    for key, value in raw.items():
        key = alias.get(key, key)
        if key == "name":
            continue  # instance name handled by the graph
        if key not in schema:
            raise BadProperty(f"{cls.KIND} has no property {key!r}")
        out[key] = schema[key].coerce(value)
    for prop in schema.values():
        if prop.name in ("name",) or prop.name in out:
            continue
        if prop.required:
            raise BadProperty(f"{cls.KIND} requires property {prop.name!r}")
        if prop.default is not None:
            out[prop.name] = prop.default
    return cls.check_props(out)
