"""Stream-combining elements: mux, demux, merge, split, aggregator, repo pair.

Synchronization policies (shared by mux and merge):

* slowest: emit when every sink pad holds an unconsumed frame; pads are
  paired FIFO, so the output rate is the minimum input rate and
  demux-after-mux is an exact inverse for aligned streams.
* base(i): emit once per frame of pad i; every other pad contributes its
  frame with the nearest timestamp (ties go to the earlier frame).
* fastest: emit on any arrival once every pad has produced at least one
  frame, reusing the latest frame of lagging pads.  Emissions whose
  trigger timestamp does not advance past the previous output are
  suppressed, so two rate-matched pads do not double the output rate.

Output timestamps: max of the combined frames (slowest, base) or the
triggering frame's (fastest).
"""

from __future__ import annotations

import collections
import threading
import time
from bisect import bisect_left
from dataclasses import dataclass

import numpy as np

from ..errors import (BadProperty, DimensionMismatch, IndexOutOfRange,
                      SizeSumMismatch, SpecMismatch, StarvationTimeout,
                      TypeMismatch)
from ..tensors import (MAX_EXTENT, RATE_ANY, Buffer, Payload, Spec,
                       TensorSpec, TensorsSpec, make_buffer,
                       specs_compatible, to_array)
from .base import (SINK, SRC, PadTemplate, PropertySpec, RuntimeElement,
                   register)

PENDING_CAP = 16  # per-pad admission bound; full pads block their producer


@dataclass(frozen=True)
class SyncPolicy:
    """How a multi-input element pairs frames across its sink pads."""

    mode: str  # slowest | fastest | base
    base_index: int = 0

    @classmethod
    def parse(cls, text: str) -> "SyncPolicy":
        if isinstance(text, SyncPolicy):
            return text
        text = str(text)
        if text == "slowest":
            return cls("slowest")
        if text == "fastest":
            return cls("fastest")
        if text.startswith("base:"):
            try:
                return cls("base", int(text.split(":", 1)[1]))
            except ValueError:
                pass
        raise BadProperty(f"bad sync-mode {text!r}, "
                          "expected slowest|fastest|base:<i>")

    def to_string(self) -> str:
        return f"base:{self.base_index}" if self.mode == "base" else self.mode


def match_index(candidates, target: int) -> int:
    """Index of the candidate timestamp nearest to target; ties go earlier.

    ``candidates`` must be sorted non-decreasing and non-empty.
    """
    if not candidates:
        raise IndexOutOfRange("no candidate timestamps")
    pos = bisect_left(candidates, target)
    if pos == 0:
        return 0
    if pos == len(candidates):
        return len(candidates) - 1
    before, after = candidates[pos - 1], candidates[pos]
    # strict inequality keeps the earlier frame on a distance tie
    if target - before <= after - target:
        return pos - 1
    return pos


def mux_match(candidates, target: int) -> int:
    """The candidate timestamp nearest to target; ties go earlier."""
    ordered = sorted(candidates)
    return ordered[match_index(ordered, target)]


def pad_order(names) -> list[str]:
    """Request pad names sorted by numeric suffix, so sink_2 precedes sink_10."""
    def key(n):
        _, _, tail = n.rpartition("_")
        return int(tail) if tail.isdigit() else 0
    return sorted(names, key=key)


class _Combiner:
    """Pure pairing state machine shared by mux and merge.

    push/eos return (list of emission dicts pad->Buffer, finished flag).
    Callers serialize access.
    """

    def __init__(self, pads: list[str], policy: SyncPolicy):
        self.pads = list(pads)
        self.policy = policy
        self.pending = {p: collections.deque() for p in self.pads}
        self.latest: dict[str, Buffer | None] = {p: None for p in self.pads}
        self.eos: set[str] = set()
        self.finished = False
        self.last_emit_ts: int | None = None
        if policy.mode == "base":
            if not 0 <= policy.base_index < len(self.pads):
                raise BadProperty(
                    f"base pad index {policy.base_index} out of range")
            self.base_pad = self.pads[policy.base_index]

    def push(self, pad: str, buf: Buffer):
        if self.finished:
            return [], True
        mode = self.policy.mode
        if mode == "fastest":
            self.latest[pad] = buf
            if any(self.latest[p] is None for p in self.pads):
                return [], False
            ts = buf.timestamp
            if self.last_emit_ts is not None and ts <= self.last_emit_ts:
                return [], False
            self.last_emit_ts = ts
            return [{p: self.latest[p] for p in self.pads}], False
        self.pending[pad].append(buf)
        if mode == "slowest":
            return self._drain_slowest()
        return self._drain_base()

    def eos_pad(self, pad: str):
        self.eos.add(pad)
        if self.finished:
            return [], True
        mode = self.policy.mode
        if mode == "fastest":
            never = any(self.latest[p] is None and p in self.eos for p in self.pads)
            if never or self.eos == set(self.pads):
                self.finished = True
            return [], self.finished
        if mode == "slowest":
            out, _ = self._drain_slowest()
            return out, self.finished
        return self._drain_base()

    def _check_slowest_finished(self):
        for p in self.pads:
            if p in self.eos and not self.pending[p]:
                self.finished = True

    def _drain_slowest(self):
        out = []
        while all(self.pending[p] for p in self.pads):
            out.append({p: self.pending[p].popleft() for p in self.pads})
        self._check_slowest_finished()
        return out, self.finished

    def _drain_base(self):
        out = []
        base = self.base_pad
        others = [p for p in self.pads if p != base]
        while self.pending[base]:
            for p in others:
                if not self.pending[p] and p not in self.eos:
                    return out, self.finished
                if not self.pending[p]:  # eos and exhausted
                    self.finished = True
                    return out, True
            target = self.pending[base][0].timestamp
            combined = {base: self.pending[base].popleft()}
            for p in others:
                stamps = [b.timestamp for b in self.pending[p]]
                idx = match_index(stamps, target)
                for _ in range(idx):  # frames older than the match are done
                    self.pending[p].popleft()
                combined[p] = self.pending[p][0]
            out.append(combined)
        if base in self.eos and not self.pending[base]:
            self.finished = True
        return out, self.finished


class _SyncElement(RuntimeElement):
    """Shared runtime machinery for mux and merge."""

    PROPERTIES = (
        PropertySpec("sync-mode", "str", "slowest", parser=SyncPolicy.parse,
                     doc="slowest|fastest|base:<i>"),
        PropertySpec("timeout", "float", 0.0,
                     doc="seconds before reporting pad starvation (0 = off)"),
    )

    def __init__(self, desc, ctx):
        super().__init__(desc, ctx)
        self._pads = pad_order(desc.sink_pad_names())
        self._policy = SyncPolicy.parse(self.props.get("sync-mode", "slowest"))
        self._combiner = _Combiner(self._pads, self._policy)
        self._conds = {p: threading.Condition() for p in self._pads}
        self._emit_lock = threading.Lock()
        self._timeout = float(self.props.get("timeout", 0.0))
        self._watchdog: threading.Timer | None = None

    def _combine(self, matched: dict[str, Buffer]) -> Buffer:
        raise NotImplementedError

    def receive(self, pad, buf):
        if self._policy.mode != "fastest":
            cond = self._conds[pad]
            with cond:
                while (len(self._combiner.pending[pad]) >= PENDING_CAP
                       and not self.ctx.stopped.is_set()
                       and not self._combiner.finished):
                    cond.wait(0.05)
            if self.ctx.stopped.is_set():
                return
        with self._emit_lock:
            t0 = time.perf_counter_ns()
            sets, finished = self._combiner.push(pad, buf)
            self._rearm_watchdog()
            outs = [self._combine(matched) for matched in sets]
            self.stats.note_busy(time.perf_counter_ns() - t0)
            for out in outs:
                self.dispatch("src", out)
            if sets:
                for c in self._conds.values():
                    with c:
                        c.notify_all()
        if finished:
            self.emit_eos()

    def receive_eos(self, pad):
        with self._emit_lock:
            sets, finished = self._combiner.eos_pad(pad)
            for matched in sets:
                out = self._combine(matched)
                self.dispatch("src", out)
            for c in self._conds.values():
                with c:
                    c.notify_all()
        if finished or self._combiner.eos == set(self._pads):
            self._cancel_watchdog()
            self.emit_eos()

    def start(self):
        self._rearm_watchdog()

    def stop(self):
        self._cancel_watchdog()
        for c in self._conds.values():
            with c:
                c.notify_all()

    def reset(self):
        super().reset()
        self._combiner = _Combiner(self._pads, self._policy)

    def _rearm_watchdog(self):
        if self._timeout <= 0:
            return
        self._cancel_watchdog()
        t = threading.Timer(self._timeout, self._starved)
        t.daemon = True
        self._watchdog = t
        t.start()

    def _cancel_watchdog(self):
        if self._watchdog is not None:
            self._watchdog.cancel()
            self._watchdog = None

    def _starved(self):
        if self.ctx.stopped.is_set() or self._combiner.finished:
            return
        waiting = [p for p in self._pads
                   if self._combiner.pending[p] or self._combiner.latest[p]]
        if waiting and len(waiting) < len(self._pads):
            starved = [p for p in self._pads if p not in waiting]
            self.fail(StarvationTimeout(
                f"{self.name}: pads {starved} produced nothing for "
                f"{self._timeout:g}s"))


def _combined_rate(specs):
    rates = {s.framerate for s in specs}
    if len(rates) == 1:
        return rates.pop()
    return RATE_ANY


@register
class TensorMux(_SyncElement):
    """Group one frame per sink pad into a multi-tensor container.

    Member payloads are referenced, not copied; demux gets them back intact.
    """

    KIND = "tensor_mux"
    PADS = (PadTemplate("sink_%u", SINK, "request"), PadTemplate("src", SRC))

    @classmethod
    def infer_outputs(cls, props, inputs, constraints, pads):
        ordered = pad_order(pads.sinks)
        if not all(p in inputs for p in ordered):
            return {}
        members = []
        for p in ordered:
            spec = inputs[p]
            if not isinstance(spec, TensorSpec):
                raise SpecMismatch(
                    f"mux pad {p} carries {type(spec).__name__}, needs a tensor stream")
            members.append(spec)
        rate = _combined_rate(members)
        return {"src": TensorsSpec(tuple(members), rate)}

    def _combine(self, matched):
        ordered = [matched[p] for p in self._pads]
        if self._policy.mode == "fastest":
            ts = self._combiner.last_emit_ts
        else:
            ts = max(b.timestamp for b in ordered)
        payload = Payload.compose([b.payload for b in ordered])
        return Buffer(payload, ts, self.out_specs["src"])


@register
class TensorDemux(RuntimeElement):
    """Fan a multi-tensor container out to per-tensor streams."""

    KIND = "tensor_demux"
    PROPERTIES = (
        PropertySpec("map", "intlist", None,
                     doc="tensor index per source pad (default: identity)"),
    )
    PADS = (PadTemplate("sink", SINK), PadTemplate("src_%u", SRC, "request"))

    @classmethod
    def _index_for(cls, props, position: int) -> int:
        mapping = props.get("map")
        if mapping is None:
            return position
        if position >= len(mapping):
            raise IndexOutOfRange(
                f"source pad {position} beyond index map {mapping}")
        return mapping[position]

    @classmethod
    def infer_outputs(cls, props, inputs, constraints, pads):
        spec = inputs.get("sink")
        if spec is None:
            return {}
        if not isinstance(spec, TensorsSpec):
            raise SpecMismatch("demux input must be a multi-tensor stream")
        outs = {}
        for pos, pad in enumerate(pad_order(pads.sources)):
            index = cls._index_for(props, pos)
            if not 0 <= index < spec.num_tensors:
                raise IndexOutOfRange(
                    f"pad {pad} selects tensor {index} of {spec.num_tensors}")
            outs[pad] = spec.specs[index]
        return outs

    def handle(self, pad, buf):
        for pos, src_pad in enumerate(pad_order(self.desc.source_pad_names())):
            index = self._index_for(self.props, pos)
            yield src_pad, buf.member(index)


@register
class TensorMerge(_SyncElement):
    """Concatenate one frame per sink pad along a configured dimension."""

    KIND = "tensor_merge"
    PROPERTIES = _SyncElement.PROPERTIES + (
        PropertySpec("dimension", "int", 0, doc="axis 0..3, innermost first"),
    )
    PADS = (PadTemplate("sink_%u", SINK, "request"), PadTemplate("src", SRC))

    @classmethod
    def check_props(cls, props):
        if not 0 <= props.get("dimension", 0) <= 3:
            raise BadProperty("merge dimension must be 0..3")
        return props

    @classmethod
    def infer_outputs(cls, props, inputs, constraints, pads):
        ordered = pad_order(pads.sinks)
        if not all(p in inputs for p in ordered):
            return {}
        axis = props.get("dimension", 0)
        specs = []
        for p in ordered:
            s = inputs[p]
            if not isinstance(s, TensorSpec):
                raise SpecMismatch(f"merge pad {p} must carry a tensor stream")
            specs.append(s)
        first = specs[0]
        for s in specs[1:]:
            if s.dtype != first.dtype:
                raise TypeMismatch(
                    f"merge inputs mix {first.dtype.value} and {s.dtype.value}")
            for k in range(4):
                if k != axis and s.dim[k] != first.dim[k]:
                    raise DimensionMismatch(
                        f"merge inputs disagree on dim {k}: "
                        f"{first.dim} vs {s.dim}")
        total = sum(s.dim[axis] for s in specs)
        if total > MAX_EXTENT:
            raise DimensionMismatch(f"merged extent {total} exceeds {MAX_EXTENT}")
        dim = list(first.dim)
        dim[axis] = total
        return {"src": TensorSpec(tuple(dim), first.dtype,
                                  _combined_rate(specs))}

    def _combine(self, matched):
        ordered = [matched[p] for p in self._pads]
        if self._policy.mode == "fastest":
            ts = self._combiner.last_emit_ts
        else:
            ts = max(b.timestamp for b in ordered)
        axis = self.props.get("dimension", 0)
        spec = self.out_specs["src"]
        if axis == 3:
            # outermost-axis concatenation is pure byte append
            payload = Payload.compose([b.payload for b in ordered])
            return Buffer(payload, ts, spec)
        arrays = [to_array(b) for b in ordered]
        out = np.concatenate(arrays, axis=3 - axis)
        return make_buffer(out.tobytes(), ts, spec)


@register
class TensorSplit(RuntimeElement):
    """Slice a tensor stream into several streams along one dimension."""

    KIND = "tensor_split"
    PROPERTIES = (
        PropertySpec("dimension", "int", 0, doc="axis 0..3, innermost first"),
        PropertySpec("sizes", "intlist", required=True,
                     doc="extent of each output slice, in pad order"),
    )
    PADS = (PadTemplate("sink", SINK), PadTemplate("src_%u", SRC, "request"))

    @classmethod
    def check_props(cls, props):
        if not 0 <= props.get("dimension", 0) <= 3:
            raise BadProperty("split dimension must be 0..3")
        if any(s < 1 for s in props["sizes"]):
            raise BadProperty("split sizes must be >= 1")
        return props

    @classmethod
    def infer_outputs(cls, props, inputs, constraints, pads):
        spec = inputs.get("sink")
        if spec is None:
            return {}
        if not isinstance(spec, TensorSpec):
            raise SpecMismatch("split input must be a single-tensor stream")
        axis = props.get("dimension", 0)
        sizes = props["sizes"]
        sources = pad_order(pads.sources)
        if len(sizes) != len(sources):
            raise BadProperty(
                f"{len(sizes)} sizes for {len(sources)} source pads")
        if sum(sizes) != spec.dim[axis]:
            raise SizeSumMismatch(
                f"sizes {list(sizes)} sum to {sum(sizes)}, "
                f"input extent on dim {axis} is {spec.dim[axis]}")
        outs = {}
        for pad, size in zip(sources, sizes):
            dim = list(spec.dim)
            dim[axis] = size
            outs[pad] = TensorSpec(tuple(dim), spec.dtype, spec.framerate)
        return outs

    def handle(self, pad, buf):
        axis = self.props.get("dimension", 0)
        sizes = self.props["sizes"]
        arr = to_array(buf)
        np_axis = 3 - axis
        offset = 0
        for src_pad, size in zip(pad_order(self.desc.source_pad_names()), sizes):
            index = [slice(None)] * 4
            index[np_axis] = slice(offset, offset + size)
            piece = np.ascontiguousarray(arr[tuple(index)])
            yield src_pad, make_buffer(piece.tobytes(), buf.timestamp,
                                       self.out_specs[src_pad])
            offset += size


@register
class TensorAggregator(RuntimeElement):
    """Slide a frame window along the stream and emit concatenated windows.

    With N incoming frames the element emits floor((N*in - out)/flush) + 1
    complete windows (when non-negative); a trailing partial window is
    dropped at end of stream.
    """

    KIND = "tensor_aggregator"
    PROPERTIES = (
        PropertySpec("in", "int", 1, doc="frames carried by one input buffer"),
        PropertySpec("out", "int", 1, doc="frames per emitted window"),
        PropertySpec("flush", "int", 1, doc="frames retired per emission"),
        PropertySpec("dim", "int", 3, doc="concatenation axis, default batch"),
    )
    PADS = (PadTemplate("sink", SINK), PadTemplate("src", SRC))

    @classmethod
    def check_props(cls, props):
        fin, fout, flush = props["in"], props["out"], props["flush"]
        if fin < 1 or fout < fin:
            raise BadProperty("need out >= in >= 1")
        if not 1 <= flush <= fout:
            raise BadProperty("need 1 <= flush <= out")
        if not 0 <= props.get("dim", 3) <= 3:
            raise BadProperty("aggregator dim must be 0..3")
        return props

    @classmethod
    def infer_outputs(cls, props, inputs, constraints, pads):
        spec = inputs.get("sink")
        if spec is None:
            return {}
        if not isinstance(spec, TensorSpec):
            raise SpecMismatch("aggregator input must be a single-tensor stream")
        axis = props.get("dim", 3)
        fin, fout = props["in"], props["out"]
        if spec.dim[axis] % fin:
            raise DimensionMismatch(
                f"extent {spec.dim[axis]} on dim {axis} not divisible by in={fin}")
        per_frame = spec.dim[axis] // fin
        out_extent = per_frame * fout
        if out_extent > MAX_EXTENT:
            raise DimensionMismatch(f"window extent {out_extent} exceeds {MAX_EXTENT}")
        dim = list(spec.dim)
        dim[axis] = out_extent
        return {"src": TensorSpec(tuple(dim), spec.dtype, spec.framerate)}

    def __init__(self, desc, ctx):
        super().__init__(desc, ctx)
        self._fifo: collections.deque = collections.deque()  # (payload|array, ts)
        self._axis = self.props.get("dim", 3)

    def reset(self):
        super().reset()
        self._fifo.clear()

    def _split_frames(self, buf):
        fin = self.props["in"]
        if fin == 1:
            yield buf.payload, buf.timestamp
            return
        arr = to_array(buf)
        np_axis = 3 - self._axis
        per = arr.shape[np_axis] // fin
        for i in range(fin):
            index = [slice(None)] * 4
            index[np_axis] = slice(i * per, (i + 1) * per)
            piece = np.ascontiguousarray(arr[tuple(index)])
            yield Payload(piece.tobytes()), buf.timestamp

    def handle(self, pad, buf):
        fout, flush = self.props["out"], self.props["flush"]
        self._fifo.extend(self._split_frames(buf))
        while len(self._fifo) >= fout:
            window = [self._fifo[i] for i in range(fout)]
            ts = window[-1][1]  # newest included frame stamps the window
            if self._axis == 3:
                payload = Payload.compose([p for p, _ in window])
                out = Buffer(payload, ts, self.out_specs["src"])
            else:
                spec_in = self.in_specs["sink"]
                fin = self.props["in"]
                dim = list(spec_in.dim)
                dim[self._axis] //= fin
                frame_spec = TensorSpec(tuple(dim), spec_in.dtype)
                arrays = [to_array(Buffer(p, t, frame_spec))
                          for p, t in window]
                joined = np.concatenate(arrays, axis=3 - self._axis)
                out = make_buffer(joined.tobytes(), ts, self.out_specs["src"])
            for _ in range(flush):
                self._fifo.popleft()
            yield "src", out


class RepoSlot:
    """Capacity-one latest-value slot shared by a reposink/reposrc pair.

    Starts out holding a zero-filled buffer so pulls never block; that is
    what lets a cycle bootstrap before the first real push lands.
    """

    def __init__(self, slot_id: str, spec: Spec):
        self.slot_id = slot_id
        self.spec = spec
        self._lock = threading.Lock()
        self._latest = make_buffer(bytes(spec.byte_size), 0, spec)

    def push(self, buf: Buffer):
        if not specs_compatible(buf.spec, self.spec):
            raise SpecMismatch(
                f"slot {self.slot_id!r} holds {self.spec.to_string()}, "
                f"got {buf.spec.to_string()}")
        with self._lock:
            self._latest = buf

    def pull(self) -> Buffer:
        with self._lock:
            return self._latest


@register
class TensorRepoSink(RuntimeElement):
    """Publish every incoming frame to a named repo slot."""

    KIND = "tensor_reposink"
    PROPERTIES = (PropertySpec("slot", "str", required=True, doc="slot id"),)
    PADS = (PadTemplate("sink", SINK),)

    def handle(self, pad, buf):
        self.ctx.slots[self.props["slot"]].push(buf)
        return ()


@register
class TensorRepoSrc(RuntimeElement):
    """Emit the current slot value at a configured rate.

    dim=/type= pre-declare the stream in cyclic graphs where the slot spec
    cannot be derived before the cycle is negotiated.
    """

    KIND = "tensor_reposrc"
    PROPERTIES = (
        PropertySpec("slot", "str", required=True, doc="slot id"),
        PropertySpec("dim", "dim", doc="declared shape (cycles need this)"),
        PropertySpec("type", "dtype", doc="declared element type"),
        PropertySpec("rate", "rate", 0, doc="frames/sec, 0 = unthrottled"),
        PropertySpec("frames", "int", 0, doc="stop after N pulls, 0 = endless"),
    )
    PADS = (PadTemplate("src", SRC),)

    @classmethod
    def infer_outputs(cls, props, inputs, constraints, pads):
        slot_spec = props.get("_slot_spec")
        if slot_spec is not None:
            return {"src": slot_spec}
        dim, dtype = props.get("dim"), props.get("type")
        if dim is not None and dtype is not None:
            rate = props.get("rate", RATE_ANY)
            return {"src": TensorSpec(dim, dtype, rate)}
        return {}

    def start(self):
        t = threading.Thread(target=self._pump,
                             name=f"reposrc:{self.name}", daemon=True)
        self.ctx.register_thread(t)
        t.start()

    def _pump(self):
        spec = self.out_specs["src"]
        slot = self.ctx.slots[self.props["slot"]]
        limit = self.props.get("frames", 0)
        rate = self.props.get("rate", RATE_ANY)
        period = float(1 / rate) if rate else 0.0
        start = time.monotonic()
        i = 0
        while not limit or i < limit:
            while not self.ctx.gate.is_set():
                if self.ctx.stopped.is_set():
                    return
                self.ctx.gate.wait(0.05)
            if self.ctx.stopped.is_set():
                return
            if period:
                delay = start + i * period - time.monotonic()
                if delay > 0 and self.ctx.stopped.wait(delay):
                    return
            pulled = slot.pull()
            buf = Buffer(pulled.payload, pulled.timestamp, spec)
            try:
                self.dispatch("src", buf)
            except Exception as e:  # noqa: BLE001
                self.fail(e)
                return
            i += 1
        if not self.ctx.stopped.is_set():
            self.emit_eos()
