"""Pipeline runtime: states, element lifecycle, error bus, statistics.

State ladder: Stopped <-> Paused <-> Running, one step at a time; asking
for a two-step transition passes through Paused implicitly.  Running opens
the gate that source and queue threads wait on; Paused closes it, so
sources quiesce while in-flight buffers settle into queues.  Stopped tears
every thread down, flushes queues and retains statistics; element state is
reset when the next run is armed.

A pipeline is built from a validated graph; the negotiated specs from the
validation plan are installed on the runtime elements before any data
flows.
"""

from __future__ import annotations

import enum
import threading
import time
from typing import Any, Iterable

from .elements.base import Context, RuntimeElement
from .elements.flow import RepoSlot
from .errors import InvalidPipeline, PipelineFailure, StateChangeFailed
from .graph import PipelineGraph, ValidationResult

JOIN_TIMEOUT = 5.0


class PipelineState(enum.Enum):
    STOPPED = "Stopped"
    PAUSED = "Paused"
    RUNNING = "Running"


_LADDER = [PipelineState.STOPPED, PipelineState.PAUSED, PipelineState.RUNNING]


class _RuntimeContext(Context):
    def __init__(self, pipeline: "Pipeline"):
        super().__init__()
        self._pipeline = pipeline

    def post_error(self, element: str, exc: BaseException):
        self._pipeline._bus_error(element, exc)

    def sink_done(self, element: str):
        self._pipeline._bus_sink_done(element)


class Pipeline:
    """Executable form of a validated PipelineGraph."""

    def __init__(self, graph: PipelineGraph,
                 plan: ValidationResult | None = None):
        if plan is None:
            plan = graph.validate()
        if not plan.ok:
            raise InvalidPipeline(plan.diagnostics)
        self.graph = graph
        self.plan = plan
        self.ctx = _RuntimeContext(self)
        self._elements: dict[str, RuntimeElement] = {}
        self._terminal: set[str] = set()
        self._state = PipelineState.STOPPED
        self._started = False
        self._state_lock = threading.RLock()
        self.state_history: list[PipelineState] = [self._state]

        self._bus_cond = threading.Condition()
        self._done_sinks: set[str] = set()
        self._error: tuple[str, BaseException] | None = None
        self._eos = False

        for name, desc in graph.elements.items():
            element = desc.kind(desc, self.ctx)
            element.in_specs = {
                pad: plan.spec_of(name, pad)
                for pad in desc.sink_pad_names()}
            element.out_specs = {
                pad: plan.spec_of(name, pad)
                for pad in desc.source_pad_names()}
            self._elements[name] = element
            if not desc.source_pad_names():
                self._terminal.add(name)
        for link in graph.links:
            self._elements[link.src[0]].wire(
                link.src[1], self._elements[link.sink[0]], link.sink[1])
        self._make_slots()

    @classmethod
    def from_description(cls, text: str) -> "Pipeline":
        from .parse import parse_description
        return cls(parse_description(text))

    # --- bus -----------------------------------------------------------------

    def _bus_error(self, element: str, exc: BaseException):
        with self._bus_cond:
            if self._error is None:
                self._error = (element, exc)
            self._bus_cond.notify_all()

    def _bus_sink_done(self, element: str):
        with self._bus_cond:
            self._done_sinks.add(element)
            if self._done_sinks >= self._terminal:
                self._eos = True
            self._bus_cond.notify_all()

    # --- element access --------------------------------------------------------

    def element(self, name: str) -> RuntimeElement:
        return self._elements[name]

    def elements(self) -> Iterable[RuntimeElement]:
        return self._elements.values()

    def stats(self) -> dict[str, Any]:
        return {name: el.stats.snapshot()
                for name, el in self._elements.items()}

    def stats_lines(self) -> list[str]:
        return [view.line(name) for name, view in self.stats().items()]

    # --- state machine -----------------------------------------------------------

    @property
    def state(self) -> PipelineState:
        return self._state

    def set_state(self, target: PipelineState) -> PipelineState:
        with self._state_lock:
            current = _LADDER.index(self._state)
            wanted = _LADDER.index(target)
            step = 1 if wanted > current else -1
            while current != wanted:
                current += step
                self._enter(_LADDER[current])
            return self._state

    def _enter(self, state: PipelineState):
        if state is PipelineState.PAUSED:
            if self._state is PipelineState.STOPPED:
                self._arm()
            else:
                self.ctx.gate.clear()
        elif state is PipelineState.RUNNING:
            self._start_elements()
            self.ctx.gate.set()
        else:
            self._teardown()
        self._state = state
        self.state_history.append(state)

    def _arm(self):
        """Prepare a fresh run out of Stopped."""
        self.ctx.stopped.clear()
        self.ctx.gate.clear()
        self.ctx.forget_threads()
        with self._bus_cond:
            self._done_sinks.clear()
            self._error = None
            self._eos = False
        for element in self._elements.values():
            element.reset()
        self._make_slots()

    def _make_slots(self):
        self.ctx.slots.clear()
        for name, desc in self.graph.elements.items():
            if desc.kind.KIND != "tensor_reposink":
                continue
            slot_id = desc.props["slot"]
            spec = self.plan.spec_of(name, "sink")
            self.ctx.slots[slot_id] = RepoSlot(slot_id, spec)

    def _start_elements(self):
        if self._started:
            return
        started: list[RuntimeElement] = []
        for name, element in self._elements.items():
            try:
                element.start()
                started.append(element)
            except Exception as e:  # noqa: BLE001
                self.ctx.stopped.set()
                for el in started:
                    el.stop()
                self.ctx.gate.set()
                self._join_threads()
                self._started = False
                self._state = PipelineState.STOPPED
                raise StateChangeFailed(name, str(e)) from e
        self._started = True

    def _teardown(self):
        self.ctx.stopped.set()
        for element in self._elements.values():
            element.stop()
        self.ctx.gate.set()  # wake gate-waiters so they observe stopped
        self._join_threads()
        self._started = False
        with self._bus_cond:
            self._bus_cond.notify_all()

    def _join_threads(self):
        deadline = time.monotonic() + JOIN_TIMEOUT
        for thread in self.ctx.threads():
            thread.join(max(0.0, deadline - time.monotonic()))

    # --- running ------------------------------------------------------------------

    def run(self, timeout: float | None = None) -> str:
        """Run until end of stream.

        Returns "eos" (pipeline left Running, drained) or "stopped" when
        another thread stopped it.  Raises PipelineFailure on a posted
        element error and TimeoutError past ``timeout``; both tear the
        pipeline down first.
        """
        self.set_state(PipelineState.RUNNING)
        deadline = None if timeout is None else time.monotonic() + timeout
        with self._bus_cond:
            while True:
                if self._error is not None:
                    element, cause = self._error
                    break
                if self._eos:
                    return "eos"
                if self.ctx.stopped.is_set():
                    return "stopped"
                wait = 0.1
                if deadline is not None:
                    remaining = deadline - time.monotonic()
                    if remaining <= 0:
                        element = cause = None
                        break
                    wait = min(wait, remaining)
                self._bus_cond.wait(wait)
        self.set_state(PipelineState.STOPPED)
        if cause is not None:
            raise PipelineFailure(element, cause)
        raise TimeoutError(f"pipeline did not finish within {timeout:g}s")

    def wait_frames(self, element: str, count: int,
                    timeout: float = 10.0) -> None:
        """Block until ``element`` has received ``count`` frames."""
        target = self._elements[element]
        deadline = time.monotonic() + timeout
        while target.stats.snapshot().frames_in < count:
            if self._error is not None:
                name, cause = self._error
                raise PipelineFailure(name, cause)
            if time.monotonic() > deadline:
                raise TimeoutError(
                    f"{element} saw {target.stats.snapshot().frames_in} "
                    f"of {count} frames within {timeout:g}s")
            time.sleep(0.002)

    def stop(self) -> None:
        self.set_state(PipelineState.STOPPED)

    def __enter__(self) -> "Pipeline":
        return self

    def __exit__(self, *exc) -> None:
        self.set_state(PipelineState.STOPPED)
