"""Utilities for driving elements directly and for whole-pipeline runs."""

import threading
import time

import numpy as np

from tenstream import Pipeline
from tenstream.elements import base
from tenstream.graph import ElementDescriptor
from tenstream.tensors import Buffer, DataType, TensorSpec, make_buffer

ALL_DTYPES = tuple(DataType)

INT_DTYPES = tuple(d for d in DataType if not d.is_float)
FLOAT_DTYPES = tuple(d for d in DataType if d.is_float)


class StubContext(base.Context):
    """Pipeline-free context: collects errors/done, gate open by default."""

    def __init__(self):
        super().__init__()
        self.errors = []
        self.done = []
        self.gate.set()

    def post_error(self, element, exc):
        self.errors.append((element, exc))

    def sink_done(self, element):
        self.done.append(element)

    def shutdown(self):
        self.stopped.set()
        self.gate.set()
        for t in self.threads():
            t.join(timeout=5)


class Recorder:
    """Stand-in downstream element that captures whatever is dispatched."""

    def __init__(self):
        self.received = []          # (pad, Buffer) in arrival order
        self.eos_pads = []
        self._cond = threading.Condition()

    def feed(self, pad, buf):
        with self._cond:
            self.received.append((pad, buf))
            self._cond.notify_all()

    def feed_eos(self, pad):
        with self._cond:
            self.eos_pads.append(pad)
            self._cond.notify_all()

    def buffers(self, pad=None):
        with self._cond:
            return [b for p, b in self.received if pad is None or p == pad]

    def wait_count(self, n, timeout=5.0):
        deadline = time.monotonic() + timeout
        with self._cond:
            while len(self.received) < n:
                left = deadline - time.monotonic()
                if left <= 0:
                    raise TimeoutError(
                        f"recorder saw {len(self.received)} of {n} buffers")
                self._cond.wait(left)

    def wait_eos(self, timeout=5.0):
        deadline = time.monotonic() + timeout
        with self._cond:
            while not self.eos_pads:
                left = deadline - time.monotonic()
                if left <= 0:
                    raise TimeoutError("recorder never saw end of stream")
                self._cond.wait(left)


def make_element(kind_name, props=None, *, name=None, request_pads=(),
                 ctx=None, in_specs=None, out_specs=None):
    """Build one runtime element outside any pipeline.

    in_specs/out_specs stand in for negotiation; pass whatever the element's
    handle() reads.
    """
    cls = base.get_kind(kind_name)
    coerced = base.coerce_props(cls, dict(props or {}))
    desc = ElementDescriptor(cls, name or kind_name, coerced)
    for pad in request_pads:
        desc.request_pad(instance=pad)
    ctx = ctx if ctx is not None else StubContext()
    elem = cls(desc, ctx)
    if in_specs:
        elem.in_specs.update(in_specs)
    if out_specs:
        elem.out_specs.update(out_specs)
    return elem, ctx


def run_to_eos(description, timeout=30.0):
    """Run a description until end of stream; returns the stopped Pipeline."""
    pipe = Pipeline.from_description(description)
    try:
        outcome = pipe.run(timeout=timeout)
    finally:
        pipe.stop()
    assert outcome == "eos", f"pipeline ended with {outcome!r}"
    return pipe


def wait_until(predicate, timeout=5.0, interval=0.002):
    deadline = time.monotonic() + timeout
    while not predicate():
        if time.monotonic() > deadline:
            raise TimeoutError("condition never became true")
        time.sleep(interval)


def random_array(rng, dtype: DataType, shape):
    """Random ndarray in numpy layout for the given stream dtype."""
    np_dtype = np.dtype(dtype.np_dtype)
    if dtype.is_float:
        return (rng.standard_normal(shape) * 100).astype(np_dtype)
    info = np.iinfo(np_dtype)
    return rng.integers(info.min, info.max, size=shape, dtype=np_dtype,
                        endpoint=True)


def tensor_buffer(arr, ts, rate=None):
    """Wrap a numpy-layout array (reversed dims) into a Buffer."""
    dim = tuple(reversed(arr.shape))
    spec = TensorSpec(dim, DataType.from_name(arr.dtype.name))
    if rate is not None:
        spec = spec.with_rate(rate)
    return make_buffer(np.ascontiguousarray(arr).tobytes(), ts, spec)
