import numpy as np
import pytest

from stvid import autodiff as ad
from stvid.rng import SeededStream
from stvid.temporal import (
    default_chunk,
    init_temporal_params,
    linear_recurrence,
    linear_recurrence_scan,
    linear_recurrence_sequential,
    temporal_forward,
)
from stvid.tensor_ops import TensorError


def test_sequential_hand_example():
    decay = np.array([[0.5], [0.5], [0.5]])
    inp = np.array([[1.0], [1.0], [1.0]])
    out = linear_recurrence_sequential(decay, inp, np.array([2.0]))
    np.testing.assert_allclose(out[:, 0], [2.0, 2.0, 2.0])  # fixed point of h/2 + 1


def test_default_chunk():
    assert default_chunk(256, 4) == 64
    assert default_chunk(257, 4) == 65
    assert default_chunk(3, 8) == 1
    assert default_chunk(10, 1) == 10


def test_scan_matches_sequential_across_grid():
    for seed in range(3):
        stream = SeededStream(seed)
        for t_len in (1, 2, 7, 64, 257):
            decay = stream.uniform((t_len, 5))
            inp = stream.uniform((t_len, 5)) - 0.5
            h0 = stream.uniform((5,)) - 0.5
            ref = linear_recurrence_sequential(decay, inp, h0)
            for chunk in (1, 3, 8, t_len):
                out = linear_recurrence_scan(decay, inp, h0, chunk)
                rel = np.max(np.abs(out - ref)) / max(1.0, np.max(np.abs(ref)))
                assert rel < 1e-12, f"T={t_len} chunk={chunk} rel={rel:.2e}"


def test_single_chunk_is_bitwise_sequential():
    stream = SeededStream(33)
    decay = stream.uniform((19, 4))
    inp = stream.uniform((19, 4)) - 0.5
    h0 = stream.uniform((4,))
    ref = linear_recurrence_sequential(decay, inp, h0)
    for chunk in (19, 25, 100):
        np.testing.assert_array_equal(linear_recurrence_scan(decay, inp, h0, chunk), ref)


def test_recurrence_argument_validation():
    with pytest.raises(TensorError):
        linear_recurrence_sequential(np.ones((3, 2)), np.ones((3, 3)), np.ones(2))
    with pytest.raises(TensorError):
        linear_recurrence_sequential(np.ones((3, 2)), np.ones((3, 2)), np.ones(3))
    with pytest.raises(TensorError):
        linear_recurrence_scan(np.ones((3, 2)), np.ones((3, 2)), np.ones(2), 0)
    with pytest.raises(ValueError):
        linear_recurrence(np.ones((3, 2)), np.ones((3, 2)), np.ones(2), mode="spooky")


@pytest.mark.parametrize("mode,chunk", [("sequential", None), ("parallel", 3), ("parallel", 16)])
def test_recurrence_gradients(mode, chunk):
    stream = SeededStream(40)
    point = {
        "decay": stream.uniform((6, 3)) * 0.9 + 0.05,
        "inp": stream.uniform((6, 3)) - 0.5,
        "h0": stream.uniform((3,)) - 0.5,
    }
    weights = stream.uniform((6, 3)) - 0.5

    def f(p):
        out = linear_recurrence(p["decay"], p["inp"], p["h0"], mode=mode, chunk=chunk)
        return ad.sum_all(ad.mul(out, weights))

    assert ad.gradcheck(f, point, eps=1e-4) < 1e-7


def test_init_temporal_params_shapes_and_gate_bias():
    params = init_temporal_params(5, SeededStream(0), gate_bias=-1.0)
    params.validate()
    assert params.w_in.shape == (5, 5)
    np.testing.assert_array_equal(params.b_gate, np.full(5, -1.0))
    params.w_out = np.ones((5, 4))
    with pytest.raises(TensorError):
        params.validate()


def test_temporal_forward_modes_agree_with_graph():
    stream = SeededStream(41)
    params = init_temporal_params(4, stream)
    feats = stream.uniform((9, 3, 2, 4)) - 0.5
    seq = temporal_forward(feats, params, mode="sequential")
    par = temporal_forward(feats, params, mode="parallel", workers=3)
    node = temporal_forward(ad.param(feats, "g"), params, mode="sequential")
    assert ad.is_node(node)
    np.testing.assert_array_equal(seq, ad.value_of(node))
    np.testing.assert_allclose(par, seq, atol=1e-12)


def test_temporal_forward_validates_input():
    params = init_temporal_params(4, SeededStream(0))
    with pytest.raises(TensorError):
        temporal_forward(np.ones((3, 2, 4)), params)
    with pytest.raises(TensorError):
        temporal_forward(np.ones((0, 2, 2, 4)), params)
    bad = np.ones((2, 2, 2, 4))
    bad[1, 0, 0, 0] = np.inf
    with pytest.raises(TensorError):
        temporal_forward(bad, params)


def test_temporal_forward_parameter_gradients():
    stream = SeededStream(42)
    init = init_temporal_params(3, stream)
    feats = stream.uniform((4, 2, 2, 3)) - 0.5
    weights = stream.uniform((4, 2, 2, 3)) - 0.5
    point = {
        "w_in": init.w_in,
        "b_in": init.b_in + 0.1,
        "w_gate": init.w_gate,
        "b_gate": init.b_gate,
        "w_out": init.w_out,
    }

    def f(p):
        from stvid.temporal import TemporalParams

        params = TemporalParams(p["w_in"], p["b_in"], p["w_gate"], p["b_gate"], p["w_out"])
        out = temporal_forward(feats, params, mode="parallel", chunk=2)
        return ad.sum_all(ad.mul(out, weights))

    assert ad.gradcheck(f, point, eps=1e-3) < 1e-7
