"""Shape-checked dense array operations used throughout the package.

All functions operate on plain ``numpy.ndarray`` values (row-major,
f32 or f64), validate their inputs, and guarantee finite outputs or
raise ``TensorError``.  No broadcasting: shapes must match exactly.
"""

import numpy as np
from scipy.special import expit

__all__ = [
    "TensorError",
    "check_finite",
    "softmax",
    "matmul",
    "conv2d",
    "conv2d_batch",
    "conv2d_backward",
    "global_avg_pool",
    "relu",
    "sigmoid",
]


class TensorError(ValueError):
    """Raised on shape mismatches, invalid axes, or non-finite values."""


def check_finite(x, what="input"):
    x = np.asarray(x)
    # a single reduction; NaN/Inf anywhere poisons the sum
    if x.dtype.kind == "f" and not np.isfinite(x.sum()):
        raise TensorError(f"non-finite values in {what}")
    return x


def softmax(x, axis):
    """Softmax along ``axis`` with unconditional max-subtraction."""
    x = check_finite(x)
    if not -x.ndim <= axis < x.ndim:
        raise TensorError(f"softmax axis {axis} out of range for rank {x.ndim}")
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def matmul(a, b):
    """Matrix product of two rank-2 arrays."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise TensorError(f"matmul expects rank-2 inputs, got {a.ndim} and {b.ndim}")
    if a.shape[1] != b.shape[0]:
        raise TensorError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    return a @ b


def _im2col(xpad, k, stride, out_h, out_w):
    # columns: (B, out_h, out_w, k*k*Cin)
    b, _, _, cin = xpad.shape
    cols = np.empty((b, out_h, out_w, k * k * cin), dtype=xpad.dtype)
    idx = 0
    for p in range(k):
        for q in range(k):
            patch = xpad[:, p : p + out_h * stride : stride, q : q + out_w * stride : stride, :]
            cols[..., idx : idx + cin] = patch
            idx += cin
    return cols


def conv2d_batch(x, kernels, stride=1, padding=0):
    """2-D convolution over a batch of H x W x Cin frames.

    ``x`` is (B, H, W, Cin), ``kernels`` is (k, k, Cin, Cout); zero
    padding; output (B, H', W', Cout) with H' = (H + 2p - k)//stride + 1.
    """
    x = np.asarray(x)
    kernels = np.asarray(kernels)
    if x.ndim != 4 or kernels.ndim != 4:
        raise TensorError("conv2d_batch expects (B,H,W,Cin) input and (k,k,Cin,Cout) kernels")
    k = kernels.shape[0]
    if kernels.shape[1] != k:
        raise TensorError("conv kernels must be square")
    if kernels.shape[2] != x.shape[3]:
        raise TensorError(
            f"kernel input channels {kernels.shape[2]} != data channels {x.shape[3]}"
        )
    _, h, w, _ = x.shape
    if k > h + 2 * padding or k > w + 2 * padding:
        raise TensorError("kernel larger than padded input")
    out_h = (h + 2 * padding - k) // stride + 1
    out_w = (w + 2 * padding - k) // stride + 1
    if padding:
        xpad = np.pad(x, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    else:
        xpad = x
    cols = _im2col(xpad, k, stride, out_h, out_w)
    kmat = kernels.reshape(k * k * kernels.shape[2], kernels.shape[3])
    return cols @ kmat


def conv2d(x, kernels, stride=1, padding=0):
    """Single-frame convolution: (H, W, Cin) -> (H', W', Cout)."""
    x = np.asarray(x)
    if x.ndim != 3:
        raise TensorError(f"conv2d expects rank-3 input, got rank {x.ndim}")
    return conv2d_batch(x[None], kernels, stride, padding)[0]


def conv2d_backward(grad_out, x, kernels, stride=1, padding=0):
    """Gradients of conv2d_batch w.r.t. input and kernels.

    ``grad_out`` is (B, H', W', Cout); returns (grad_x, grad_kernels).
    """
    x = np.asarray(x)
    kernels = np.asarray(kernels)
    k = kernels.shape[0]
    cin, cout = kernels.shape[2], kernels.shape[3]
    b, h, w, _ = x.shape
    out_h, out_w = grad_out.shape[1], grad_out.shape[2]
    if padding:
        xpad = np.pad(x, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    else:
        xpad = x
    cols = _im2col(xpad, k, stride, out_h, out_w)
    gmat = grad_out.reshape(-1, cout)
    grad_k = (cols.reshape(-1, k * k * cin).T @ gmat).reshape(kernels.shape)

    grad_xpad = np.zeros_like(xpad)
    idx = 0
    for p in range(k):
        for q in range(k):
            kslice = kernels[p, q]  # (Cin, Cout)
            grad_xpad[:, p : p + out_h * stride : stride, q : q + out_w * stride : stride, :] += (
                grad_out @ kslice.T
            )
            idx += 1
    if padding:
        grad_x = grad_xpad[:, padding : padding + h, padding : padding + w, :]
    else:
        grad_x = grad_xpad
    return grad_x, grad_k


def global_avg_pool(x):
    """Mean over spatial positions: (H, W, D) -> (D,)."""
    x = np.asarray(x)
    if x.ndim != 3:
        raise TensorError(f"global_avg_pool expects rank-3 input, got rank {x.ndim}")
    return x.mean(axis=(0, 1))


def relu(x):
    return np.maximum(np.asarray(x), 0)


def sigmoid(x):
    return expit(np.asarray(x))
