"""Gated linear recurrence over time, sequential and chunked-scan forms.

The state update is h_t = decay_t * h_{t-1} + input_t per coordinate.
The sequential evaluator is the reference; the scan evaluator splits the
time axis into chunks, runs all chunks' local recurrences in lockstep
(one vectorized step per within-chunk position), stitches the chunk
carries with the associative combine (a1,b1)o(a2,b2) = (a1*a2, a2*b1+b2),
and applies the carries in one vectorized pass.  A single chunk
degenerates to the sequential loop, bitwise.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .tensor_ops import TensorError, check_finite, sigmoid

__all__ = [
    "TemporalParams",
    "init_temporal_params",
    "linear_recurrence_sequential",
    "linear_recurrence_scan",
    "linear_recurrence",
    "temporal_forward",
    "default_chunk",
]


def _check_recurrence_args(decay, inp, h0):
    decay = np.asarray(decay)
    inp = np.asarray(inp)
    h0 = np.asarray(h0)
    if decay.shape != inp.shape:
        raise TensorError(f"decay shape {decay.shape} != input shape {inp.shape}")
    if decay.ndim < 1 or h0.shape != decay.shape[1:]:
        raise TensorError(f"h0 shape {h0.shape} incompatible with sequence shape {decay.shape}")
    return decay, inp, h0


def linear_recurrence_sequential(decay, inp, h0):
    """Reference left-to-right evaluation of h_t = decay_t * h_{t-1} + input_t."""
    decay, inp, h0 = _check_recurrence_args(decay, inp, h0)
    t_len = decay.shape[0]
    out = np.empty_like(inp)
    h = h0.astype(inp.dtype, copy=True)
    for t in range(t_len):
        h = decay[t] * h + inp[t]
        out[t] = h
    return out


def default_chunk(t_len, workers):
    """Default chunk length: ceil(T / worker count)."""
    return max(1, math.ceil(t_len / max(1, workers)))


def linear_recurrence_scan(decay, inp, h0, chunk):
    """Chunked-scan evaluation, mathematically identical to sequential.

    Chunk-local recurrences advance in lockstep, vectorized across
    chunks, so the number of Python-level steps is the chunk length
    rather than T.  chunk >= T reproduces the sequential loop bitwise.
    """
    decay, inp, h0 = _check_recurrence_args(decay, inp, h0)
    if chunk < 1:
        raise TensorError("chunk must be >= 1")
    t_len = decay.shape[0]
    lane_shape = decay.shape[1:]
    chunk = min(chunk, t_len)
    n_chunks = math.ceil(t_len / chunk)
    pad = n_chunks * chunk - t_len
    if pad:
        # (a=0, b=0) tail entries sit at the end of the last chunk and
        # influence nothing before them
        decay = np.concatenate([decay, np.zeros((pad,) + lane_shape, decay.dtype)])
        inp = np.concatenate([inp, np.zeros((pad,) + lane_shape, inp.dtype)])
    a = decay.reshape((n_chunks, chunk) + lane_shape)
    b = inp.reshape((n_chunks, chunk) + lane_shape)

    # local recurrences; chunk 0 is seeded with h0 so it is exactly the
    # sequential evaluation of its prefix
    h = np.zeros((n_chunks,) + lane_shape, dtype=inp.dtype)
    h[0] = h0
    local = np.empty_like(b)
    if n_chunks == 1:
        for s in range(chunk):
            h = a[:, s] * h + b[:, s]
            local[:, s] = h
        return local.reshape((t_len + pad,) + lane_shape)[:t_len]

    # decay prefix products accumulate alongside the local recurrences;
    # one extra multiply per step beats a separate cumprod pass
    aprod = np.empty_like(a)
    run = np.ones((n_chunks,) + lane_shape, dtype=inp.dtype)
    for s in range(chunk):
        h = a[:, s] * h + b[:, s]
        local[:, s] = h
        run = run * a[:, s]
        aprod[:, s] = run

    # stitch carries across chunk summaries, then expand in one pass
    carries = np.empty((n_chunks,) + lane_shape, dtype=inp.dtype)
    carry = local[0, -1]
    for k in range(1, n_chunks):
        carries[k] = carry
        carry = local[k, -1] + aprod[k, -1] * carry
    out = local
    out[1:] += aprod[1:] * carries[1:, None]
    return out.reshape((n_chunks * chunk,) + lane_shape)[:t_len]


def _recurrence_backward(grad_out, decay, inp_val, h0, h):
    """Adjoints of the linear recurrence (reverse-time recurrence)."""
    t_len = decay.shape[0]
    grad_b = np.empty_like(grad_out)
    grad_a = np.empty_like(grad_out)
    s = np.zeros_like(h0, dtype=grad_out.dtype)
    for t in range(t_len - 1, -1, -1):
        s = grad_out[t] + (decay[t + 1] * s if t + 1 < t_len else 0.0)
        grad_b[t] = s
        grad_a[t] = s * (h[t - 1] if t > 0 else h0)
    grad_h0 = decay[0] * s if t_len else np.zeros_like(h0)
    return grad_a, grad_b, grad_h0


def linear_recurrence(decay, inp, h0, mode="sequential", chunk=None, workers=1):
    """Differentiable recurrence; dispatches on mode, accepts Nodes."""
    dv, iv, h0v = ad.value_of(decay), ad.value_of(inp), ad.value_of(h0)
    if mode == "sequential":
        out = linear_recurrence_sequential(dv, iv, h0v)
    elif mode == "parallel":
        c = chunk if chunk else default_chunk(dv.shape[0], workers)
        out = linear_recurrence_scan(dv, iv, h0v, c)
    else:
        raise ValueError(f"unknown recurrence mode {mode!r}")

    def vjp(g):
        return _recurrence_backward(g, dv, iv, h0v, out)

    return ad._lift(out, (decay, inp, h0), vjp)


@dataclass
class TemporalParams:
    """Per-location gated recurrence parameters (all matrices D x D)."""

    w_in: np.ndarray
    b_in: np.ndarray
    w_gate: np.ndarray
    b_gate: np.ndarray
    w_out: np.ndarray

    def validate(self):
        d = self.w_in.shape[0]
        for name in ("w_in", "w_gate", "w_out"):
            m = getattr(self, name)
            if ad.value_of(m).shape != (d, d):
                raise TensorError(f"temporal {name} must be {d}x{d}")
        for name in ("b_in", "b_gate"):
            if ad.value_of(getattr(self, name)).shape != (d,):
                raise TensorError(f"temporal {name} must have length {d}")


def init_temporal_params(d, stream, gate_bias=-1.0):
    """Glorot-uniform matrices; gate bias shifted so decay starts small."""
    lim = math.sqrt(6.0 / (d + d))

    def mat():
        return (stream.uniform((d, d)) * 2.0 - 1.0) * lim

    return TemporalParams(
        w_in=mat(),
        b_in=np.zeros(d),
        w_gate=mat(),
        b_gate=np.full(d, float(gate_bias)),
        w_out=mat(),
    )


def temporal_forward(features, params, mode="sequential", chunk=None, workers=1):
    """Per-location gated recurrence over a (T, H', W', D) feature stack.

    Projects each location's feature vector, gates the decay through a
    logistic squash of the current frame only (keeps the recurrence
    linear in h), runs the recurrence over t, and mixes the output.
    Accepts Nodes for differentiation.
    """
    fv = ad.value_of(features)
    if fv.ndim != 4:
        raise TensorError(f"temporal_forward expects (T,H,W,D), got shape {fv.shape}")
    if fv.shape[0] < 1:
        raise TensorError("empty frame sequence")
    check_finite(fv, "temporal features")
    t_len, hh, ww, d = fv.shape

    if not ad.is_node(features) and not any(
        ad.is_node(p) for p in (params.w_in, params.b_in, params.w_gate, params.b_gate, params.w_out)
    ):
        return _forward_inference(fv, params, mode, chunk, workers)

    x2 = ad.reshape(features, (t_len, hh * ww, d))
    inp = ad.last_dim_linear(x2, params.w_in, params.b_in)
    gate = ad.sigmoid(ad.last_dim_linear(x2, params.w_gate, params.b_gate))
    inp_f = ad.reshape(inp, (t_len, hh * ww * d))
    gate_f = ad.reshape(gate, (t_len, hh * ww * d))
    h0 = np.zeros(hh * ww * d, dtype=fv.dtype)
    h = linear_recurrence(gate_f, inp_f, h0, mode=mode, chunk=chunk, workers=workers)
    h3 = ad.reshape(h, (t_len, hh * ww, d))
    mixed = ad.last_dim_linear(h3, params.w_out)
    return ad.reshape(mixed, (t_len, hh, ww, d))


def _forward_inference(fv, params, mode, chunk, workers):
    """Graph-free forward.

    Sequential mode is the RNN-style stream: each timestep projects,
    gates, updates the state, and mixes before touching the next frame.
    Parallel mode batches the projections and gates over the whole
    sequence at once and runs the chunked scan.
    """
    t_len, hh, ww, d = fv.shape
    w_in, b_in = params.w_in, params.b_in
    w_gate, b_gate = params.w_gate, params.b_gate
    w_out = params.w_out
    if mode == "sequential":
        out = np.empty_like(fv)
        h = np.zeros((hh * ww, d), dtype=fv.dtype)
        for t in range(t_len):
            x = fv[t].reshape(hh * ww, d)
            inp = x @ w_in + b_in
            gate = sigmoid(x @ w_gate + b_gate)
            h = gate * h + inp
            out[t] = (h @ w_out).reshape(hh, ww, d)
        return out
    if mode != "parallel":
        raise ValueError(f"unknown recurrence mode {mode!r}")
    x = fv.reshape(t_len, hh * ww, d)
    inp = (x @ w_in + b_in).reshape(t_len, hh * ww * d)
    gate = sigmoid(x @ w_gate + b_gate).reshape(t_len, hh * ww * d)
    h0 = np.zeros(hh * ww * d, dtype=fv.dtype)
    c = chunk if chunk else default_chunk(t_len, workers)
    h = linear_recurrence_scan(gate, inp, h0, c)
    return (h.reshape(t_len, hh * ww, d) @ w_out).reshape(t_len, hh, ww, d)
