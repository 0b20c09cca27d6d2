"""Per-frame convolutional feature extraction.

A small trainable conv stack maps each H x W x C frame to an
H' x W' x D feature map.  Frames are independent: the clip encoder is
just the frame encoder fanned out over t, optionally across worker
threads, with outputs ordered by frame index.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .tensor_ops import TensorError, check_finite

__all__ = [
    "ConvLayer",
    "SpatialEncoderParams",
    "parse_layer_spec",
    "init_encoder_params",
    "encoder_output_shape",
    "encode_frame",
    "encode_clip",
]

_ACTIVATIONS = ("relu", "linear")


@dataclass
class ConvLayer:
    kernels: object  # (k, k, Cin, Cout) array or Node
    bias: object  # (Cout,)
    stride: int = 1
    padding: int = 0
    activation: str = "relu"


@dataclass
class SpatialEncoderParams:
    layers: list = field(default_factory=list)
    output_shape: tuple = None  # (H', W', D), filled by init

    def validate(self, in_channels):
        c = in_channels
        for i, layer in enumerate(self.layers):
            k = ad.value_of(layer.kernels)
            if k.ndim != 4 or k.shape[2] != c:
                raise TensorError(f"encoder layer {i}: kernel shape {k.shape} breaks channel chain")
            if layer.activation not in _ACTIVATIONS:
                raise TensorError(f"encoder layer {i}: unknown activation {layer.activation!r}")
            c = k.shape[3]


def parse_layer_spec(text):
    """Parse 'k:stride:pad:out_channels:activation, ...' into tuples."""
    layers = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        bits = part.split(":")
        if len(bits) != 5:
            raise ValueError(f"bad encoder layer spec {part!r}")
        k, s, p, c = (int(b) for b in bits[:4])
        act = bits[4].strip()
        if act not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {act!r} in layer spec")
        layers.append((k, s, p, c, act))
    if not layers:
        raise ValueError("empty encoder layer spec")
    return layers


def _conv_out(size, k, stride, pad):
    return (size + 2 * pad - k) // stride + 1


def encoder_output_shape(spec, h, w, c):
    for k, s, p, cout, _ in spec:
        h, w, c = _conv_out(h, k, s, p), _conv_out(w, k, s, p), cout
        if h < 1 or w < 1:
            raise ValueError("encoder spec collapses the spatial grid")
    return h, w, c


def init_encoder_params(spec, h, w, c, stream):
    """Glorot-uniform kernels, zero biases; seeded by ``stream``."""
    layers = []
    cin = c
    for k, s, p, cout, act in spec:
        fan_in = k * k * cin
        fan_out = k * k * cout
        lim = math.sqrt(6.0 / (fan_in + fan_out))
        kernels = (stream.uniform((k, k, cin, cout)) * 2.0 - 1.0) * lim
        layers.append(ConvLayer(kernels, np.zeros(cout), s, p, act))
        cin = cout
    params = SpatialEncoderParams(layers, encoder_output_shape(spec, h, w, c))
    params.validate(c)
    return params


def _run_stack(x, params):
    out = x
    for layer in params.layers:
        out = ad.conv2d(out, layer.kernels, layer.stride, layer.padding)
        out = ad.add_last_dim_bias(out, layer.bias)
        if layer.activation == "relu":
            out = ad.relu(out)
    return out


def encode_frame(frame, params):
    """Encode one (H, W, C) frame to its (H', W', D) feature map."""
    fv = ad.value_of(frame)
    if fv.ndim != 3:
        raise TensorError(f"encode_frame expects (H,W,C), got shape {fv.shape}")
    check_finite(fv, "frame")
    out = _run_stack(frame, params)
    check_finite(ad.value_of(out), "encoder activations")
    return out


def encode_clip(clip, params, workers=1):
    """Encode a (T, H, W, C) clip to (T, H', W', D).

    With plain-array input and workers > 1 the frames fan out across a
    thread pool; results are reassembled by frame index.  Graph input
    (Nodes) always runs the batched single-thread path so the recorded
    graph stays simple.
    """
    cv = ad.value_of(clip)
    if cv.ndim != 4:
        raise TensorError(f"encode_clip expects (T,H,W,C), got shape {cv.shape}")
    check_finite(cv, "clip")
    if ad.is_node(clip) or workers <= 1:
        out = _run_stack(clip, params)
        check_finite(ad.value_of(out), "encoder activations")
        return out

    def one(t):
        try:
            return _run_stack(cv[t], params)
        except TensorError as exc:
            raise TensorError(f"frame {t}: {exc}") from exc

    with ThreadPoolExecutor(max_workers=workers) as pool:
        maps = list(pool.map(one, range(cv.shape[0])))
    out = np.stack(maps, axis=0)
    check_finite(out, "encoder activations")
    return out
