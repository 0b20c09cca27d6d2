import numpy as np
import pytest

from stvid import autodiff as ad
from stvid.encoder import (
    ConvLayer,
    SpatialEncoderParams,
    encode_clip,
    encode_frame,
    encoder_output_shape,
    init_encoder_params,
    parse_layer_spec,
)
from stvid.rng import SeededStream
from stvid.tensor_ops import TensorError, conv2d, relu


def test_parse_layer_spec():
    spec = parse_layer_spec("3:2:1:8:relu, 1:1:0:4:linear")
    assert spec == [(3, 2, 1, 8, "relu"), (1, 1, 0, 4, "linear")]


@pytest.mark.parametrize("bad", ["", "3:2:1:8", "3:2:1:8:tanh", "x:2:1:8:relu"])
def test_parse_layer_spec_errors(bad):
    with pytest.raises(ValueError):
        parse_layer_spec(bad)


def test_encoder_output_shape():
    spec = parse_layer_spec("3:2:1:8:relu, 3:2:1:8:relu")
    assert encoder_output_shape(spec, 16, 16, 1) == (4, 4, 8)
    assert encoder_output_shape(parse_layer_spec("3:1:0:2:relu"), 5, 7, 3) == (3, 5, 2)
    with pytest.raises(ValueError):
        encoder_output_shape(parse_layer_spec("3:2:0:2:relu, 3:2:0:2:relu, 3:2:0:2:relu"), 8, 8, 1)


def test_init_params_respect_channel_chain_and_seed():
    spec = parse_layer_spec("3:2:1:6:relu, 3:1:1:4:relu")
    a = init_encoder_params(spec, 16, 16, 2, SeededStream(0))
    b = init_encoder_params(spec, 16, 16, 2, SeededStream(0))
    assert a.layers[0].kernels.shape == (3, 3, 2, 6)
    assert a.layers[1].kernels.shape == (3, 3, 6, 4)
    assert a.output_shape == (8, 8, 4)
    np.testing.assert_array_equal(a.layers[0].kernels, b.layers[0].kernels)
    a.validate(2)
    with pytest.raises(TensorError):
        a.validate(3)


def test_encode_frame_matches_manual_stack():
    stream = SeededStream(14)
    params = init_encoder_params(parse_layer_spec("3:2:1:4:relu, 1:1:0:2:linear"), 8, 8, 1, stream)
    frame = stream.uniform((8, 8, 1))
    got = encode_frame(frame, params)
    l0, l1 = params.layers
    want = relu(conv2d(frame, l0.kernels, l0.stride, l0.padding) + l0.bias)
    want = conv2d(want, l1.kernels, l1.stride, l1.padding) + l1.bias
    np.testing.assert_allclose(got, want, atol=1e-14)
    assert got.shape == params.output_shape


def test_encode_frame_rejects_bad_rank_and_nan():
    params = init_encoder_params(parse_layer_spec("3:1:1:2:relu"), 4, 4, 1, SeededStream(0))
    with pytest.raises(TensorError):
        encode_frame(np.ones((4, 4)), params)
    bad = np.ones((4, 4, 1))
    bad[1, 1, 0] = np.nan
    with pytest.raises(TensorError):
        encode_frame(bad, params)


def test_encode_clip_workers_match_single_thread():
    stream = SeededStream(15)
    params = init_encoder_params(parse_layer_spec("3:2:1:4:relu"), 12, 12, 1, stream)
    clip = stream.uniform((6, 12, 12, 1))
    base = encode_clip(clip, params, workers=1)
    for workers in (2, 4):
        np.testing.assert_array_equal(encode_clip(clip, params, workers=workers), base)


def test_encode_clip_rejects_non_finite_activations():
    params = init_encoder_params(parse_layer_spec("3:1:1:2:relu"), 4, 4, 1, SeededStream(0))
    params.layers[0].kernels = params.layers[0].kernels.copy()
    params.layers[0].kernels[0, 0, 0, 0] = np.inf
    clip = np.ones((3, 4, 4, 1))
    with pytest.raises(TensorError, match="activations"):
        encode_clip(clip, params, workers=2)
    with pytest.raises(TensorError):
        encode_clip(np.ones((4, 4, 1)), params)  # missing time axis


def test_encode_clip_graph_input_builds_node():
    stream = SeededStream(16)
    params = init_encoder_params(parse_layer_spec("3:2:1:3:relu"), 8, 8, 1, stream)
    clip = ad.param(stream.uniform((2, 8, 8, 1)), "clip")
    out = encode_clip(clip, params, workers=4)  # graph path ignores workers
    assert ad.is_node(out)
    plain = encode_clip(ad.value_of(clip), params, workers=1)
    np.testing.assert_array_equal(ad.value_of(out), plain)


def test_encoder_parameter_gradients():
    stream = SeededStream(17)
    k0 = stream.uniform((3, 3, 1, 2)) - 0.5
    b0 = stream.uniform((2,)) - 0.5  # off the ReLU kink
    frame = stream.uniform((6, 6, 1)) + 0.1
    weights = stream.uniform((3, 3, 2)) - 0.5

    def f(p):
        params = SpatialEncoderParams([ConvLayer(p["k"], p["b"], 2, 1, "relu")], (3, 3, 2))
        return ad.sum_all(ad.mul(encode_frame(frame, params), weights))

    assert ad.gradcheck(f, {"k": k0, "b": b0}, eps=1e-3) < 1e-7
