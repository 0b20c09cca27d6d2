"""Full model assembly: encoder -> temporal recurrence -> attention -> heads.

Parameters live in a flat name -> array dict so the optimizer, the
checkpoint format, and gradient checking all address them uniformly.
Every forward here accepts plain arrays (inference) or Nodes (training).
"""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import encoder as enc
from . import heads as hd
from .attention import AttentionParams, attention_forward
from .rng import SeededStream
from .temporal import TemporalParams, temporal_forward
from .tensor_ops import TensorError, sigmoid

__all__ = [
    "ModelSpec",
    "init_params",
    "param_shapes",
    "count_params",
    "action_forward",
    "action_loss",
    "detection_raw",
    "tracking_loss",
    "tracking_targets",
    "batch_mean_loss",
    "run_tracker",
]

DET_FIELDS = 5  # conf logit, dx, dy, w logit, h logit


@dataclass
class ModelSpec:
    frames: int = 8
    height: int = 16
    width: int = 16
    channels: int = 1
    feature_dim: int = 8
    classes: int = 4
    embed_dim: int = 4
    encoder: list = field(default_factory=lambda: enc.parse_layer_spec("3:2:1:8:relu, 3:2:1:8:relu"))

    def __post_init__(self):
        if self.encoder[-1][3] != self.feature_dim:
            raise ValueError(
                f"encoder output channels {self.encoder[-1][3]} != feature_dim {self.feature_dim}"
            )

    @property
    def grid(self):
        return enc.encoder_output_shape(self.encoder, self.height, self.width, self.channels)


def init_params(spec, seed, task="action"):
    """Seeded Glorot init of all learnable arrays for one task."""
    stream = SeededStream(np.uint64(seed) ^ np.uint64(0xA5A5A5A5))
    params = {}
    ep = enc.init_encoder_params(
        spec.encoder, spec.height, spec.width, spec.channels, stream
    )
    for i, layer in enumerate(ep.layers):
        params[f"enc.{i}.kernels"] = layer.kernels
        params[f"enc.{i}.bias"] = layer.bias
    d = spec.feature_dim
    from .temporal import init_temporal_params

    tp = init_temporal_params(d, stream, gate_bias=-1.0)
    params["temporal.w_in"] = tp.w_in
    params["temporal.b_in"] = tp.b_in
    params["temporal.w_gate"] = tp.w_gate
    params["temporal.b_gate"] = tp.b_gate
    params["temporal.w_out"] = tp.w_out
    if task == "action":
        lim = np.sqrt(6.0 / (d + 1))
        params["attn.w_s"] = (stream.uniform((d, 1)) * 2.0 - 1.0) * lim
        params["attn.b_s"] = np.zeros(1)
        params["attn.w_t"] = (stream.uniform((d, 1)) * 2.0 - 1.0) * lim
        params["attn.b_t"] = np.zeros(1)
        lim = np.sqrt(6.0 / (d + spec.classes))
        params["cls.w"] = (stream.uniform((d, spec.classes)) * 2.0 - 1.0) * lim
        params["cls.b"] = np.zeros(spec.classes)
    elif task == "tracking":
        out = DET_FIELDS + spec.embed_dim
        lim = np.sqrt(6.0 / (d + out))
        params["det.w"] = (stream.uniform((d, out)) * 2.0 - 1.0) * lim
        params["det.b"] = np.zeros(out)
    else:
        raise ValueError(f"unknown task {task!r}")
    return params


def param_shapes(spec, task="action"):
    return {k: v.shape for k, v in init_params(spec, 0, task).items()}


def count_params(params):
    return sum(int(np.prod(ad.value_of(v).shape)) for v in params.values())


def _encoder_view(params, spec):
    layers = []
    for i, (k, s, p, c, act) in enumerate(spec.encoder):
        layers.append(
            enc.ConvLayer(params[f"enc.{i}.kernels"], params[f"enc.{i}.bias"], s, p, act)
        )
    return enc.SpatialEncoderParams(layers, spec.grid)


def _temporal_view(params):
    return TemporalParams(
        params["temporal.w_in"],
        params["temporal.b_in"],
        params["temporal.w_gate"],
        params["temporal.b_gate"],
        params["temporal.w_out"],
    )


def _attention_view(params):
    return AttentionParams(
        params["attn.w_s"], params["attn.b_s"], params["attn.w_t"], params["attn.b_t"]
    )


def backbone(frames, params, spec, mode="sequential", chunk=None, workers=1):
    """Shared encoder + temporal stage: (T,H,W,C) -> (T,H',W',D).

    Sequential mode at inference is a true streaming pipeline: each
    frame is encoded, gated, folded into the recurrent state, and mixed
    before the next frame is touched.  Parallel mode encodes and
    projects the whole clip in batched array ops and runs the chunked
    scan over time.  Both orderings compute the same function.
    """
    fv = ad.value_of(frames)
    expect = (spec.frames, spec.height, spec.width, spec.channels)
    if fv.shape != expect and fv.shape[1:] != expect[1:]:
        raise TensorError(f"clip shape {fv.shape} does not match model {expect}")
    graph = ad.is_node(frames) or any(ad.is_node(v) for v in params.values())
    if not graph and mode == "sequential":
        return _backbone_stream(fv, params, spec)
    # encoder stays on the batched path: per-frame thread fan-out costs
    # more than the vectorized conv at these sizes
    feats = enc.encode_clip(frames, _encoder_view(params, spec), workers=1)
    return temporal_forward(
        feats, _temporal_view(params), mode=mode, chunk=chunk, workers=workers
    )


def _backbone_stream(fv, params, spec):
    """Frame-by-frame inference: encode, gate, update state, mix per t."""
    ev = _encoder_view(params, spec)
    tv = _temporal_view(params)
    gh, gw, d = spec.grid
    t_len = fv.shape[0]
    out = np.empty((t_len, gh, gw, d), dtype=fv.dtype)
    h = np.zeros((gh * gw, d), dtype=fv.dtype)
    for t in range(t_len):
        x = enc.encode_frame(fv[t], ev).reshape(gh * gw, d)
        gate = sigmoid(x @ tv.w_gate + tv.b_gate)
        h = gate * h + (x @ tv.w_in + tv.b_in)
        out[t] = (h @ tv.w_out).reshape(gh, gw, d)
    return out


def action_forward(
    frames, params, spec, mode="sequential", chunk=None, workers=1, ablated=False
):
    """Clip -> (class logits, AttentionMaps)."""
    g = backbone(frames, params, spec, mode, chunk, workers)
    rep, maps = attention_forward(g, _attention_view(params), ablated=ablated)
    logits = hd.classify(rep, params["cls.w"], params["cls.b"])
    return logits, maps


def action_loss(frames, label, params, spec, **kw):
    logits, _ = action_forward(frames, params, spec, **kw)
    return ad.cross_entropy(logits, label)


def detection_raw(frames, params, spec, mode="sequential", chunk=None, workers=1):
    """Raw detection map (T, H', W', 5+E) from a clip."""
    g = backbone(frames, params, spec, mode, chunk, workers)
    return ad.last_dim_linear(g, params["det.w"], params["det.b"])


def tracking_targets(tracks, spec):
    """Per-cell training targets from ground-truth boxes.

    Returns (conf, mask, tx, ty, tw, th), each (T, H', W').  On cell
    collisions the lowest track id wins.
    """
    gh, gw, _ = spec.grid
    t_len = spec.frames
    conf = np.zeros((t_len, gh, gw))
    mask = np.zeros((t_len, gh, gw))
    tx = np.zeros((t_len, gh, gw))
    ty = np.zeros((t_len, gh, gw))
    tw = np.zeros((t_len, gh, gw))
    th = np.zeros((t_len, gh, gw))
    for tid in sorted(tracks.tracks):
        for frame, (cx, cy, w, h) in tracks.tracks[tid]:
            if frame >= t_len:
                continue
            j = min(gw - 1, int(cx * gw))
            i = min(gh - 1, int(cy * gh))
            if mask[frame, i, j]:
                continue
            conf[frame, i, j] = 1.0
            mask[frame, i, j] = 1.0
            tx[frame, i, j] = cx * gw - (j + 0.5)
            ty[frame, i, j] = cy * gh - (i + 0.5)
            tw[frame, i, j] = w
            th[frame, i, j] = h
    return conf, mask, tx, ty, tw, th


def tracking_loss(frames, tracks, params, spec, box_weight=1.0, **kw):
    """Per-cell confidence BCE plus L1 box regression at positive cells."""
    raw = detection_raw(frames, params, spec, **kw)
    conf, mask, tx, ty, tw, th = tracking_targets(tracks, spec)
    loss = ad.bce_logits_mean(ad.slice_last(raw, 0, 1), conf[..., None])
    reg = ad.add(
        ad.add(
            ad.masked_l1(ad.slice_last(raw, 1, 2), tx[..., None], mask[..., None]),
            ad.masked_l1(ad.slice_last(raw, 2, 3), ty[..., None], mask[..., None]),
        ),
        ad.add(
            ad.masked_l1(ad.sigmoid(ad.slice_last(raw, 3, 4)), tw[..., None], mask[..., None]),
            ad.masked_l1(ad.sigmoid(ad.slice_last(raw, 4, 5)), th[..., None], mask[..., None]),
        ),
    )
    return ad.add(loss, ad.scale(reg, box_weight))


def batch_mean_loss(clips, targets, params, spec, task="action", **kw):
    """Mean per-clip loss over a minibatch, summed in fixed order."""
    total = None
    for clip, target in zip(clips, targets):
        if task == "action":
            loss = action_loss(clip, target, params, spec, **kw)
        else:
            loss = tracking_loss(clip, target, params, spec, **kw)
        total = loss if total is None else ad.add(total, loss)
    return ad.scale(total, 1.0 / len(clips))


def run_tracker(
    frames,
    params,
    spec,
    mode="sequential",
    chunk=None,
    workers=1,
    threshold=0.5,
    iou_gate=0.1,
    embed_gate=1.0,
    lam=1.0,
    max_age=3,
):
    """Detect per frame and associate into a predicted TrackSet."""
    raw_g = backbone(ad.value_of(frames), params, spec, mode, chunk, workers)
    tracks = hd.TrackSet()
    state = hd.TrackerState()
    for t in range(ad.value_of(raw_g).shape[0]):
        dets = hd.detect_objects(
            ad.value_of(raw_g)[t],
            ad.value_of(params["det.w"]),
            ad.value_of(params["det.b"]),
            frame=t,
            threshold=threshold,
        )
        hd.associate(
            dets, tracks, state, iou_gate=iou_gate, embed_gate=embed_gate, lam=lam, max_age=max_age
        )
    return tracks
