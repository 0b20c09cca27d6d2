"""Two-level attention over temporal features and the fused representation.

Spatial weights are a softmax over each frame's grid positions; temporal
weights are a softmax over frames of a scored global pool; the fused
vector is the doubly-weighted sum of feature vectors.  Ablated mode
replaces both weight fields with uniform distributions.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .tensor_ops import TensorError, check_finite

__all__ = [
    "AttentionParams",
    "AttentionMaps",
    "init_attention_params",
    "spatial_attention",
    "temporal_attention",
    "fuse",
    "attention_forward",
    "attention_maps_to_csv",
]


@dataclass
class AttentionParams:
    w_s: object  # (D, 1)
    b_s: object  # (1,)
    w_t: object  # (D, 1)
    b_t: object  # (1,)


@dataclass
class AttentionMaps:
    spatial: np.ndarray  # (T, H', W'), rows sum to 1 per frame
    temporal: np.ndarray  # (T,), sums to 1


def init_attention_params(d, stream):
    lim = np.sqrt(6.0 / (d + 1))
    return AttentionParams(
        w_s=(stream.uniform((d, 1)) * 2.0 - 1.0) * lim,
        b_s=np.zeros(1),
        w_t=(stream.uniform((d, 1)) * 2.0 - 1.0) * lim,
        b_t=np.zeros(1),
    )


def _check_features(g):
    gv = ad.value_of(g)
    if gv.ndim != 4:
        raise TensorError(f"attention expects (T,H,W,D) features, got shape {gv.shape}")
    check_finite(gv, "attention input")
    return gv


def spatial_attention(g, params):
    """Per-frame weights over grid positions: (T,H,W,D) -> (T,H,W)."""
    gv = _check_features(g)
    t_len, hh, ww, d = gv.shape
    if ad.value_of(params.w_s).shape != (d, 1):
        raise TensorError(f"w_s shape {ad.value_of(params.w_s).shape} != ({d}, 1)")
    scores = ad.last_dim_linear(g, params.w_s, params.b_s)  # (T,H,W,1)
    flat = ad.reshape(scores, (t_len, hh * ww))
    alpha = ad.softmax(flat, axis=1)
    return ad.reshape(alpha, (t_len, hh, ww))


def temporal_attention(g, params):
    """Per-clip weights over frames: (T,H,W,D) -> (T,)."""
    gv = _check_features(g)
    t_len, _, _, d = gv.shape
    if ad.value_of(params.w_t).shape != (d, 1):
        raise TensorError(f"w_t shape {ad.value_of(params.w_t).shape} != ({d}, 1)")
    pooled = ad.mean_axes(g, (1, 2))  # (T, D)
    scores = ad.last_dim_linear(pooled, params.w_t, params.b_t)  # (T, 1)
    return ad.softmax(ad.reshape(scores, (t_len,)), axis=0)


def fuse(g, spatial, temporal):
    """R[d] = sum_t beta_t sum_ij alpha_tij * G[t,i,j,d]."""
    gv = ad.value_of(g)
    av = ad.value_of(spatial)
    bv = ad.value_of(temporal)
    if av.shape != gv.shape[:3] or bv.shape != (gv.shape[0],):
        raise TensorError(
            f"fuse shape mismatch: G {gv.shape}, spatial {av.shape}, temporal {bv.shape}"
        )
    weights = bv[:, None, None] * av  # (T,H,W)
    out = np.einsum("thw,thwd->d", weights, gv)

    def vjp(grad):
        ginner = np.einsum("thwd,d->thw", gv, grad)  # d(out.grad)/d(weighted G)
        d_g = weights[..., None] * grad
        d_alpha = bv[:, None, None] * ginner
        d_beta = np.einsum("thw,thw->t", av, ginner)
        return d_g, d_alpha, d_beta

    return ad._lift(out, (g, spatial, temporal), vjp)


def attention_forward(g, params, ablated=False):
    """Full attention pipeline; returns (representation, AttentionMaps).

    Ablated mode uses uniform weights and never touches the parameters.
    """
    gv = _check_features(g)
    t_len, hh, ww, _ = gv.shape
    if ablated:
        alpha = np.full((t_len, hh, ww), 1.0 / (hh * ww), dtype=gv.dtype)
        beta = np.full(t_len, 1.0 / t_len, dtype=gv.dtype)
    else:
        alpha = spatial_attention(g, params)
        beta = temporal_attention(g, params)
    rep = fuse(g, alpha, beta)
    maps = AttentionMaps(np.asarray(ad.value_of(alpha)), np.asarray(ad.value_of(beta)))
    return rep, maps


def attention_maps_to_csv(maps):
    """CSV dump for inspection: kind,t,i,j,weight (j empty for temporal)."""
    lines = ["kind,t,i,j,weight"]
    t_len, hh, ww = maps.spatial.shape
    for t in range(t_len):
        for i in range(hh):
            for j in range(ww):
                lines.append(f"spatial,{t},{i},{j},{float(maps.spatial[t, i, j])!r}")
    for t in range(t_len):
        lines.append(f"temporal,{t},,,{float(maps.temporal[t])!r}")
    return "\n".join(lines) + "\n"
