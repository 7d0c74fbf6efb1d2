"""Element-wise transforms, conversion to and from raw streams, decoding."""

import itertools

import numpy as np
import pytest

from tenstream import Pipeline, PipelineState
from tenstream.elements.transform import saturate_cast
from tenstream.errors import (BadProperty, LengthMismatch, PipelineFailure)
from tenstream.graph import PipelineGraph
from tenstream.tensors import (DataType, RawKind, RawSpec, TensorSpec,
                               copy_meter, make_buffer, to_array)

from helpers import (FLOAT_DTYPES, INT_DTYPES, Recorder, make_element,
                     random_array, tensor_buffer)


def transform_element(kind, props, in_spec):
    elem, ctx = make_element(kind, props)
    outs = elem.desc.kind.infer_outputs(elem.props, {"sink": in_spec}, {},
                                        elem.desc.pad_names())
    elem.in_specs["sink"] = in_spec
    elem.out_specs.update(outs)
    rec = Recorder()
    elem.wire("src", rec, "sink")
    return elem, ctx, rec


def run_chain(option, arr, mode="arithmetic"):
    """Push one array through a tensor_transform and return the result."""
    buf = tensor_buffer(arr, 7)
    elem, ctx, rec = transform_element(
        "tensor_transform", {"mode": mode, "option": option}, buf.spec)
    elem.feed("sink", buf)
    out = rec.buffers()[0]
    assert out.timestamp == 7
    ctx.shutdown()
    return out


class TestSaturateCast:
    def test_truncates_toward_zero(self):
        arr = np.array([-1.7, -0.4, 0.4, 1.7], dtype=np.float32)
        out = saturate_cast(arr, DataType.int8)
        assert out.tolist() == [-1, 0, 0, 1]

    def test_clamps_at_the_target_range(self):
        arr = np.array([-5.0, 300.0, 90.0], dtype=np.float64)
        assert saturate_cast(arr, DataType.uint8).tolist() == [0, 255, 90]

    def test_nan_becomes_zero_and_inf_clamps(self):
        arr = np.array([np.nan, np.inf, -np.inf], dtype=np.float32)
        out = saturate_cast(arr, DataType.int16)
        assert out.tolist() == [0, 32767, -32768]

    def test_wide_integer_bound_stays_inside_the_type(self):
        arr = np.array([1e300, -1e300], dtype=np.float64)
        out = saturate_cast(arr, DataType.int64)
        # the exact bound is not a float64; the nearest one below is used
        assert out.tolist() == [9223372036854774784, -2 ** 63]

    def test_integer_narrowing_clamps_exactly(self):
        arr = np.array([-300, -128, 127, 300], dtype=np.int16)
        out = saturate_cast(arr, DataType.int8)
        assert out.tolist() == [-128, -128, 127, 127]

    def test_float_target_is_a_plain_cast(self):
        arr = np.array([1, 2, 3], dtype=np.int32)
        out = saturate_cast(arr, DataType.float64)
        assert out.dtype == np.float64
        assert out.tolist() == [1.0, 2.0, 3.0]


class TestArithmetic:
    def test_documented_uint8_chain_is_exact(self):
        arr = np.full((1, 1, 1, 4), 200, dtype=np.uint8)
        out = run_chain("typecast:float32,add:-127.5,mul:0.0078125", arr)
        assert out.spec.dtype is DataType.float32
        assert to_array(out).reshape(-1).tolist() == [0.56640625] * 4

    def test_empty_option_passes_the_buffer_through(self):
        arr = np.arange(8, dtype=np.int32).reshape(1, 1, 1, 8)
        buf = tensor_buffer(arr, 3)
        elem, ctx, rec = transform_element(
            "tensor_transform", {"mode": "arithmetic", "option": ""},
            buf.spec)
        copy_meter.reset()
        elem.feed("sink", buf)
        out = rec.buffers()[0]
        assert out.payload is buf.payload
        assert copy_meter.count == 0
        ctx.shutdown()

    def test_integral_scalar_on_integers_saturates_without_rounding(self):
        # int64 near the top: float math would lose the low bits
        arr = np.array([2 ** 63 - 2, -2 ** 63 + 1, 0],
                       dtype=np.int64).reshape(1, 1, 1, 3)
        out = run_chain("add:1", arr)
        assert to_array(out).reshape(-1).tolist() == \
            [2 ** 63 - 1, -2 ** 63 + 2, 1]
        out = run_chain("mul:2", arr)
        assert to_array(out).reshape(-1).tolist() == \
            [2 ** 63 - 1, -2 ** 63, 0]

    def test_uint8_overflow_clamps_instead_of_wrapping(self):
        arr = np.array([200, 100, 0], dtype=np.uint8).reshape(1, 1, 1, 3)
        assert to_array(run_chain("add:100", arr)).reshape(-1).tolist() == \
            [255, 200, 100]
        assert to_array(run_chain("mul:-3", arr)).reshape(-1).tolist() == \
            [0, 0, 0]

    def test_fractional_scalar_on_integers_truncates_toward_zero(self):
        arr = np.array([-5, -4, 4, 5], dtype=np.int8).reshape(1, 1, 1, 4)
        out = run_chain("mul:0.5", arr)
        assert out.spec.dtype is DataType.int8
        assert to_array(out).reshape(-1).tolist() == [-2, -2, 2, 2]

    @pytest.mark.parametrize("dtype", INT_DTYPES, ids=lambda d: d.value)
    def test_integer_chains_match_a_python_oracle(self, dtype):
        rng = np.random.default_rng(hash(dtype.value) % 2 ** 32)
        arr = random_array(rng, dtype, (1, 1, 1, 64))
        info = np.iinfo(arr.dtype)
        out = run_chain("mul:3,add:-17", arr)

        def scalar(x):
            r = max(info.min, min(info.max, int(x) * 3))
            return max(info.min, min(info.max, r - 17))

        assert to_array(out).reshape(-1).tolist() == \
            [scalar(x) for x in arr.reshape(-1)]

    @pytest.mark.parametrize("dtype", FLOAT_DTYPES, ids=lambda d: d.value)
    def test_float_chains_track_a_scalar_oracle(self, dtype):
        rng = np.random.default_rng(99)
        arr = random_array(rng, dtype, (1, 1, 1, 256))
        out = run_chain("add:0.25,mul:-1.5,add:3", arr)
        # one element at a time, in the stream's own precision
        t = np.dtype(dtype.np_dtype).type
        oracle = [t(t(t(t(x) + t(0.25)) * t(-1.5)) + t(3))
                  for x in arr.reshape(-1)]
        np.testing.assert_allclose(to_array(out).reshape(-1), oracle,
                                   rtol=1e-6)

    def test_bad_chains_are_rejected(self):
        for mode, option in (("arithmetic", "div:2"),
                             ("arithmetic", "add:two"),
                             ("arithmetic", "typecast:float16"),
                             ("transpose", "0:1:2"),
                             ("transpose", "0:1:2:2"),
                             ("normalize", "1"),
                             ("resize", "0:4")):
            with pytest.raises(BadProperty):
                make_element("tensor_transform",
                             {"mode": mode, "option": option})


def transpose_oracle(arr, in_dim, perm):
    """Moves elements one at a time; output axis i takes input axis perm[i].

    Coordinates here are in dim order (innermost first); the numpy array
    axes run the other way.
    """
    out_dim = tuple(in_dim[perm[i]] for i in range(4))
    out = np.zeros(tuple(reversed(out_dim)), dtype=arr.dtype)
    for y0 in range(out_dim[0]):
        for y1 in range(out_dim[1]):
            for y2 in range(out_dim[2]):
                for y3 in range(out_dim[3]):
                    y = (y0, y1, y2, y3)
                    x = [0] * 4
                    for i in range(4):
                        x[perm[i]] = y[i]
                    out[y3, y2, y1, y0] = arr[x[3], x[2], x[1], x[0]]
    return out


class TestTranspose:
    def test_all_permutations_match_the_loop_oracle(self):
        in_dim = (3, 5, 7, 2)
        rng = np.random.default_rng(21)
        arr = random_array(rng, DataType.float32, tuple(reversed(in_dim)))
        for perm in itertools.permutations(range(4)):
            option = ":".join(str(p) for p in perm)
            out = run_chain(option, arr, mode="transpose")
            assert out.spec.dim == tuple(in_dim[perm[i]] for i in range(4))
            np.testing.assert_array_equal(
                to_array(out), transpose_oracle(arr, in_dim, perm))

    def test_inverse_permutation_restores_the_frame(self):
        in_dim = (3, 5, 7, 2)
        rng = np.random.default_rng(22)
        arr = random_array(rng, DataType.int16, tuple(reversed(in_dim)))
        perm = (2, 0, 3, 1)
        inverse = tuple(perm.index(i) for i in range(4))
        once = run_chain(":".join(map(str, perm)), arr, mode="transpose")
        twice = run_chain(":".join(map(str, inverse)), to_array(once),
                          mode="transpose")
        assert twice.payload.tobytes() == arr.tobytes()


class TestStandardize:
    def test_output_has_zero_mean_and_unit_spread(self):
        rng = np.random.default_rng(31)
        arr = (rng.standard_normal((1, 1, 1, 500)) * 37 + 11).astype(
            np.float32)
        out = to_array(run_chain("", arr, mode="stand")).astype(np.float64)
        assert abs(out.mean()) < 1e-5
        assert abs(out.std() - 1.0) < 1e-4

    def test_constant_frame_becomes_all_zero(self):
        arr = np.full((1, 1, 1, 64), 5.5, dtype=np.float32)
        out = to_array(run_chain("", arr, mode="stand"))
        assert not out.any()

    def test_integer_input_is_a_validation_error(self):
        g = PipelineGraph()
        g.add_element("synthetic_src", "s",
                      {"dim": "1:1:8:1", "type": "uint8"})
        g.add_element("tensor_transform", "t", {"mode": "stand"})
        g.add_element("counting_sink", "k")
        g.link("s", "t")
        g.link("t", "k")
        result = g.validate()
        assert not result.ok
        assert any(d.code == "ChainSpecError" and d.element == "t"
                   for d in result.diagnostics)


class TestNormalize:
    def test_maps_the_frame_range_onto_the_target_interval(self):
        rng = np.random.default_rng(41)
        arr = random_array(rng, DataType.int16, (1, 1, 1, 200))
        out_buf = run_chain("-1:1", arr, mode="normalize")
        assert out_buf.spec.dtype is DataType.float32
        out = to_array(out_buf).astype(np.float64)
        assert out.min() == pytest.approx(-1.0, abs=1e-6)
        assert out.max() == pytest.approx(1.0, abs=1e-6)
        flat_in = arr.reshape(-1).astype(np.float64)
        span = flat_in.max() - flat_in.min()
        oracle = (flat_in - flat_in.min()) / span * 2.0 - 1.0
        np.testing.assert_allclose(out.reshape(-1), oracle, atol=1e-6)

    def test_constant_frame_pins_to_the_lower_bound(self):
        arr = np.full((1, 1, 1, 16), 9, dtype=np.uint8)
        out = to_array(run_chain("0.25:0.75", arr, mode="normalize"))
        assert out.dtype == np.float32
        assert out.reshape(-1).tolist() == [0.25] * 16

    def test_float_input_keeps_its_width(self):
        arr = np.linspace(-3, 3, 32, dtype=np.float64).reshape(1, 1, 1, 32)
        out_buf = run_chain("0:1", arr, mode="normalize")
        assert out_buf.spec.dtype is DataType.float64


class TestResize:
    def test_downscale_picks_nearest_source_cells(self):
        # dim [1, 4, 4, 1]: one channel, 4x4 image
        arr = np.arange(16, dtype=np.float32).reshape(1, 4, 4, 1)
        out = run_chain("2:2", arr, mode="resize")
        assert out.spec.dim == (1, 2, 2, 1)
        picked = to_array(out).reshape(2, 2)
        np.testing.assert_array_equal(picked, [[0.0, 2.0], [8.0, 10.0]])

    def test_upscale_repeats_source_cells(self):
        arr = np.array([[1, 2], [3, 4]], dtype=np.uint8).reshape(1, 2, 2, 1)
        out = run_chain("4:4", arr, mode="resize")
        np.testing.assert_array_equal(
            to_array(out).reshape(4, 4),
            [[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]])


class TestVideoScale:
    def test_same_size_passes_the_payload_through(self):
        spec = RawSpec(RawKind.video, width=4, height=4, channels=3)
        buf = make_buffer(bytes(range(48)), 0, spec)
        elem, ctx, rec = transform_element("videoscale", {}, spec)
        copy_meter.reset()
        elem.feed("sink", buf)
        out = rec.buffers()[0]
        assert out.payload is buf.payload
        assert copy_meter.count == 0
        ctx.shutdown()

    def test_downscale_matches_the_grid_oracle(self):
        spec = RawSpec(RawKind.video, width=4, height=4, channels=1)
        frame = np.arange(16, dtype=np.uint8).reshape(4, 4)
        elem, ctx, rec = transform_element(
            "videoscale", {"width": "2", "height": "2"}, spec)
        elem.feed("sink", make_buffer(frame.tobytes(), 0, spec))
        out = rec.buffers()[0]
        assert out.spec.width == 2 and out.spec.height == 2
        got = np.frombuffer(out.payload.tobytes(), dtype=np.uint8)
        np.testing.assert_array_equal(got.reshape(2, 2),
                                      frame[[0, 2]][:, [0, 2]])
        ctx.shutdown()


class TestConverter:
    def test_video_stream_becomes_a_chw_tensor_without_copying(self):
        spec = RawSpec(RawKind.video, width=640, height=480, channels=3,
                       framerate=30)
        buf = make_buffer(bytes(spec.byte_size), 0, spec)
        elem, ctx, rec = transform_element("tensor_converter", {}, spec)
        assert elem.out_specs["src"] == TensorSpec((3, 640, 480, 1),
                                                   DataType.uint8, 30)
        copy_meter.reset()
        elem.feed("sink", buf)
        out = rec.buffers()[0]
        assert out.payload is buf.payload
        assert out.spec.byte_size == 921600
        assert copy_meter.count == 0
        ctx.shutdown()

    def test_binary_stream_needs_a_declared_shape(self):
        spec = RawSpec(RawKind.binary, size=128)
        elem, ctx, rec = transform_element(
            "tensor_converter", {"dim": "32:1:1:1", "type": "float32"}, spec)
        assert elem.out_specs["src"].element_count == 32
        elem.feed("sink", make_buffer(bytes(128), 0, spec))
        assert rec.buffers()[0].spec.dtype is DataType.float32
        ctx.shutdown()

    def test_undeclared_binary_shape_is_a_validation_error(self):
        g = PipelineGraph()
        g.add_element("appsrc", "s",
                      {"spec": "application/octet-stream,size=128"})
        g.add_element("tensor_converter", "c")
        g.add_element("counting_sink", "k")
        g.link("s", "c")
        g.link("c", "k")
        result = g.validate()
        assert any(d.code == "BadProperty" and d.element == "c"
                   for d in result.diagnostics)

    def test_tensor_input_is_rejected(self):
        g = PipelineGraph()
        g.add_element("synthetic_src", "s",
                      {"dim": "1:1:8:1", "type": "uint8"})
        g.add_element("tensor_converter", "c")
        g.add_element("counting_sink", "k")
        g.link("s", "c")
        g.link("c", "k")
        result = g.validate()
        assert any(d.code == "SpecMismatch" for d in result.diagnostics)

    def test_wrong_payload_size_fails_at_runtime(self):
        pipe = Pipeline.from_description(
            'appsrc name=s spec="application/octet-stream,size=100" ! '
            "tensor_converter dim=32:1:1:1 type=float32 ! "
            "counting_sink name=k")
        try:
            pipe.set_state(PipelineState.RUNNING)
            pipe.element("s").push(bytes(100))
            with pytest.raises(PipelineFailure) as exc:
                pipe.run(timeout=5)
            assert isinstance(exc.value.cause, LengthMismatch)
        finally:
            pipe.stop()


class TestDecoder:
    def test_argmax_label_reads_out_class_names(self):
        pipe = Pipeline.from_description(
            'appsrc name=s spec="other/tensor,dimension=4:1:1:1,'
            'type=float32,framerate=0/1" ! '
            "tensor_decoder mode=argmax_label labels=cat,dog,bird,fish ! "
            "appsink name=out")
        vectors = [
            np.array([0.1, 0.9, 0.2, 0.9], dtype=np.float32),  # tie: first
            np.array([5.0, -1.0, 2.0, 3.0], dtype=np.float32),
            np.array([0.0, 0.0, 0.0, 7.0], dtype=np.float32),
        ]
        try:
            pipe.set_state(PipelineState.RUNNING)
            for i, v in enumerate(vectors):
                pipe.element("s").push(v.tobytes(), timestamp=i)
            pipe.element("s").end_stream()
            assert pipe.run(timeout=5) == "eos"
        finally:
            pipe.stop()
        texts = [b.payload.tobytes().decode("utf-8")
                 for b in pipe.element("out").drain()]
        assert texts == ["dog", "cat", "fish"]

    def test_direct_video_restores_a_raw_stream(self):
        spec = TensorSpec((3, 8, 8, 1), DataType.uint8)
        buf = make_buffer(bytes(192), 4, spec)
        elem, ctx, rec = transform_element(
            "tensor_decoder", {"mode": "direct_video"}, spec)
        out_spec = elem.out_specs["src"]
        assert isinstance(out_spec, RawSpec)
        assert (out_spec.width, out_spec.height, out_spec.channels) == \
            (8, 8, 3)
        elem.feed("sink", buf)
        assert rec.buffers()[0].payload is buf.payload
        ctx.shutdown()

    def test_label_count_must_match_the_vector(self):
        g = PipelineGraph()
        g.add_element("synthetic_src", "s",
                      {"dim": "4:1:1:1", "type": "float32"})
        g.add_element("tensor_decoder", "d",
                      {"mode": "argmax_label", "labels": "a,b,c"})
        g.add_element("counting_sink", "k")
        g.link("s", "d")
        g.link("d", "k")
        result = g.validate()
        assert any(d.code == "SpecMismatch" and "4" in d.message
                   for d in result.diagnostics)

    def test_argmax_rejects_integer_and_matrix_streams(self):
        for dim, dtype in (("4:1:1:1", "int32"), ("4:4:1:1", "float32")):
            g = PipelineGraph()
            g.add_element("synthetic_src", "s", {"dim": dim, "type": dtype})
            g.add_element("tensor_decoder", "d",
                          {"mode": "argmax_label", "labels": "a,b,c,d"})
            g.add_element("counting_sink", "k")
            g.link("s", "d")
            g.link("d", "k")
            assert any(d.code == "SpecMismatch"
                       for d in g.validate().diagnostics)
