import numpy as np
import pytest

from stvid import autodiff as ad
from stvid.attention import (
    attention_forward,
    attention_maps_to_csv,
    fuse,
    init_attention_params,
    spatial_attention,
    temporal_attention,
)
from stvid.rng import SeededStream
from stvid.tensor_ops import TensorError


def _random_case(stream, t_len=3, hh=2, ww=3, d=4):
    g = stream.uniform((t_len, hh, ww, d)) * 2.0 - 1.0
    params = init_attention_params(d, stream)
    return g, params


def test_spatial_weights_normalize_per_frame():
    stream = SeededStream(50)
    for _ in range(10):
        g, params = _random_case(stream)
        alpha = spatial_attention(g, params)
        assert alpha.shape == g.shape[:3]
        assert np.all(alpha >= 0)
        np.testing.assert_allclose(alpha.reshape(len(g), -1).sum(axis=1), 1.0, atol=1e-9)


def test_temporal_weights_normalize_per_clip():
    stream = SeededStream(51)
    for _ in range(10):
        g, params = _random_case(stream)
        beta = temporal_attention(g, params)
        assert beta.shape == (len(g),)
        assert np.all(beta >= 0)
        np.testing.assert_allclose(beta.sum(), 1.0, atol=1e-9)


def test_score_shift_invariance():
    # a constant shift of the score bias cancels in the softmax
    stream = SeededStream(52)
    g, params = _random_case(stream)
    base_s = spatial_attention(g, params)
    base_t = temporal_attention(g, params)
    params.b_s = params.b_s + 7.5
    params.b_t = params.b_t - 3.25
    np.testing.assert_allclose(spatial_attention(g, params), base_s, atol=1e-12)
    np.testing.assert_allclose(temporal_attention(g, params), base_t, atol=1e-12)


def fuse_loops(g, alpha, beta):
    """Triple-loop weighted sum, the oracle for the einsum path."""
    t_len, hh, ww, d = g.shape
    out = np.zeros(d)
    for t in range(t_len):
        for i in range(hh):
            for j in range(ww):
                out += beta[t] * alpha[t, i, j] * g[t, i, j]
    return out


def test_fuse_matches_triple_loop():
    stream = SeededStream(53)
    for _ in range(20):
        g, params = _random_case(stream)
        alpha = spatial_attention(g, params)
        beta = temporal_attention(g, params)
        np.testing.assert_allclose(fuse(g, alpha, beta), fuse_loops(g, alpha, beta), atol=1e-12)


def test_fuse_shape_validation():
    g = np.ones((2, 2, 2, 3))
    with pytest.raises(TensorError):
        fuse(g, np.ones((2, 2)), np.ones(2))
    with pytest.raises(TensorError):
        fuse(g, np.ones((2, 2, 2)), np.ones(3))


def test_representation_stays_in_convex_hull():
    stream = SeededStream(54)
    for _ in range(10):
        g, params = _random_case(stream)
        rep, _ = attention_forward(g, params)
        rep = ad.value_of(rep)
        lo = g.reshape(-1, g.shape[-1]).min(axis=0)
        hi = g.reshape(-1, g.shape[-1]).max(axis=0)
        assert np.all(rep >= lo - 1e-12) and np.all(rep <= hi + 1e-12)


def test_ablated_mode_is_uniform_and_parameter_free():
    stream = SeededStream(55)
    g, params = _random_case(stream, t_len=4, hh=2, ww=2)
    rep, maps = attention_forward(g, params, ablated=True)
    np.testing.assert_allclose(maps.spatial, 0.25, atol=1e-15)
    np.testing.assert_allclose(maps.temporal, 0.25, atol=1e-15)
    np.testing.assert_allclose(ad.value_of(rep), g.mean(axis=(0, 1, 2)), atol=1e-12)
    # parameters do not matter in ablated mode
    params.w_s = params.w_s * 100.0
    rep2, _ = attention_forward(g, params, ablated=True)
    np.testing.assert_array_equal(ad.value_of(rep2), ad.value_of(rep))


def test_attention_gradients():
    stream = SeededStream(56)
    g, init = _random_case(stream)
    weights = stream.uniform((4,)) - 0.5
    point = {"w_s": init.w_s, "b_s": init.b_s, "w_t": init.w_t, "b_t": init.b_t, "g": g}

    def f(p):
        from stvid.attention import AttentionParams

        params = AttentionParams(p["w_s"], p["b_s"], p["w_t"], p["b_t"])
        rep, _ = attention_forward(p["g"], params)
        return ad.sum_all(ad.mul(rep, weights))

    assert ad.gradcheck(f, point, eps=1e-3) < 1e-7


def test_attention_maps_csv_format():
    stream = SeededStream(57)
    g, params = _random_case(stream, t_len=2, hh=2, ww=2)
    _, maps = attention_forward(g, params)
    text = attention_maps_to_csv(maps)
    lines = text.strip().splitlines()
    assert lines[0] == "kind,t,i,j,weight"
    assert len(lines) == 1 + 2 * 2 * 2 + 2
    spatial = [l for l in lines[1:] if l.startswith("spatial")]
    total = sum(float(l.split(",")[-1]) for l in spatial)
    np.testing.assert_allclose(total, 2.0, atol=1e-9)  # one unit mass per frame
