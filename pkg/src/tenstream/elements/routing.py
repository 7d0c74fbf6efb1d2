"""Routing elements: queue, tee, valve, switch.

None of these touch payload bytes.  A queue is the only element here that
owns a thread; it decouples its upstream driver from everything downstream
of it.
"""

from __future__ import annotations

import collections
import threading

from ..errors import BadProperty, IncompatibleSpecs, UnknownPad
from ..tensors import specs_compatible
from .base import (SINK, SRC, PadTemplate, PropertySpec, RuntimeElement,
                   register)

_EOS = object()


@register
class Queue(RuntimeElement):
    """Bounded buffer queue and thread boundary.

    leak=none blocks the producer when full (backpressure); drop_oldest
    evicts the head so the newest frames survive; drop_newest discards the
    incoming frame.
    """

    KIND = "queue"
    PROPERTIES = (
        PropertySpec("max", "int", 16, doc="capacity in buffers, >= 1"),
        PropertySpec("leak", "enum", "none",
                     choices=("none", "drop_oldest", "drop_newest"),
                     doc="full-queue policy"),
    )
    PADS = (PadTemplate("sink", SINK), PadTemplate("src", SRC))

    def __init__(self, desc, ctx):
        super().__init__(desc, ctx)
        self._cap = self.props["max"]
        self._leak = self.props["leak"]
        self._q: collections.deque = collections.deque()
        self._cond = threading.Condition()
        self._thread: threading.Thread | None = None

    @classmethod
    def check_props(cls, props):
        if props.get("max", 16) < 1:
            raise BadProperty("queue max must be >= 1")
        return props

    def receive(self, pad, buf):
        with self._cond:
            if self._leak == "none":
                while len(self._q) >= self._cap and not self.ctx.stopped.is_set():
                    self._cond.wait(0.05)
                if self.ctx.stopped.is_set():
                    return
            elif len(self._q) >= self._cap:
                if self._leak == "drop_newest":
                    self.stats.note_dropped()
                    return
                self._q.popleft()  # drop_oldest
                self.stats.note_dropped()
            self._q.append(buf)
            self._cond.notify_all()

    def receive_eos(self, pad):
        with self._cond:
            self._q.append(_EOS)
            self._cond.notify_all()

    def start(self):
        self._thread = threading.Thread(target=self._pump,
                                        name=f"queue:{self.name}", daemon=True)
        self.ctx.register_thread(self._thread)
        self._thread.start()

    def stop(self):
        # entering Stopped flushes queued buffers
        with self._cond:
            self._q.clear()
            self._cond.notify_all()

    def reset(self):
        super().reset()
        self._q.clear()
        self._thread = None

    def _pump(self):
        while True:
            # pause gate: do not move buffers while Paused
            while not self.ctx.gate.is_set():
                if self.ctx.stopped.is_set():
                    return
                self.ctx.gate.wait(0.05)
            if self.ctx.stopped.is_set():
                return
            with self._cond:
                while not self._q:
                    if self.ctx.stopped.is_set():
                        return
                    self._cond.wait(0.05)
                item = self._q.popleft()
                self._cond.notify_all()
            if item is _EOS:
                self.emit_eos()
                return
            try:
                self.dispatch("src", item)
            except Exception as e:  # noqa: BLE001 - forwarded to the bus
                self.fail(e)
                return


@register
class Tee(RuntimeElement):
    """Fan a stream out to every requested branch, sharing the payload."""

    KIND = "tee"
    PADS = (PadTemplate("sink", SINK), PadTemplate("src_%u", SRC, "request"))

    def handle(self, pad, buf):
        # same Payload object on every branch; sequence restamped per pad
        for src_pad in self.desc.source_pad_names():
            yield src_pad, buf


@register
class Valve(RuntimeElement):
    """Pass or drop buffers according to a flag switchable at runtime."""

    KIND = "valve"
    PROPERTIES = (PropertySpec("drop", "bool", False, doc="drop while true"),)
    PADS = (PadTemplate("sink", SINK), PadTemplate("src", SRC))

    def __init__(self, desc, ctx):
        super().__init__(desc, ctx)
        self._drop = bool(self.props.get("drop", False))

    def set_drop(self, flag: bool):
        """Toggle dropping; safe from any thread, atomic per buffer."""
        with self._lock:
            self._drop = bool(flag)

    def handle(self, pad, buf):
        if self._drop:
            self.stats.note_dropped()
            return
        yield "src", buf


@register
class Switch(RuntimeElement):
    """Forward exactly one selectable input; buffers on others are discarded."""

    KIND = "switch"
    ALIASES = ("input_selector", "input-selector")
    PROPERTIES = (PropertySpec("active", "str", "sink_0",
                               doc="name of the forwarded sink pad"),)
    PADS = (PadTemplate("sink_%u", SINK, "request"), PadTemplate("src", SRC))

    def __init__(self, desc, ctx):
        super().__init__(desc, ctx)
        self._active = self.props.get("active", "sink_0")

    def select(self, pad_name: str):
        """Switch the forwarded pad. Unknown names leave the selection as is."""
        with self._lock:
            if pad_name not in self.desc.pads:
                raise UnknownPad(f"{self.name} has no pad {pad_name!r}")
            self._active = pad_name

    def handle(self, pad, buf):
        if pad != self._active:
            self.stats.note_dropped()
            return
        yield "src", buf

    @classmethod
    def infer_outputs(cls, props, inputs, constraints, pads):
        # selection may change at runtime, so every input must carry one spec
        specs = list(inputs.values())
        for other in specs[1:]:
            if not specs_compatible(specs[0], other):
                raise IncompatibleSpecs(
                    "switch inputs disagree: "
                    f"{specs[0].to_string()} vs {other.to_string()}")
        return {"src": specs[0]} if specs else {}
