"""Reverse-mode differentiation over the package's operation set.

A ``Node`` wraps an ndarray value plus references to its parents and an
explicit adjoint rule (vector-Jacobian product).  Every op here accepts
either plain arrays or Nodes: with plain arrays it just computes the
value, with Nodes it also records the graph.  ``backward`` walks the
graph once in reverse topological order and returns gradients for all
named leaves; ``gradcheck`` is the independent central-difference
oracle.
"""

import numpy as np

from . import tensor_ops as T

__all__ = [
    "Node",
    "GraphError",
    "is_node",
    "value_of",
    "param",
    "backward",
    "gradcheck",
    "add",
    "scale",
    "mul",
    "matmul",
    "relu",
    "sigmoid",
    "softmax",
    "reshape",
    "mean_axes",
    "sum_all",
    "conv2d",
    "add_last_dim_bias",
    "last_dim_linear",
    "slice_last",
    "cross_entropy",
    "bce_logits_mean",
    "masked_l1",
]


class GraphError(ValueError):
    """Raised on invalid graph usage (non-scalar root, cycles)."""


class Node:
    """One vertex of the computation graph."""

    __slots__ = ("value", "parents", "vjp", "name")

    def __init__(self, value, parents=(), vjp=None, name=None):
        self.value = np.asarray(value)
        self.parents = tuple(parents)
        self.vjp = vjp  # grad_out -> tuple of parent gradients
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Node(shape={self.value.shape}{tag})"


def is_node(x):
    return isinstance(x, Node)


def value_of(x):
    return x.value if isinstance(x, Node) else np.asarray(x)


def param(value, name):
    """Named leaf node; ``backward`` reports its gradient under ``name``."""
    return Node(np.asarray(value, dtype=np.float64), name=name)


def _lift(out_value, inputs, vjp):
    """Build a Node if any input is a Node, else return the raw value."""
    if any(isinstance(x, Node) for x in inputs):
        parents = tuple(x for x in inputs if isinstance(x, Node))
        mask = [isinstance(x, Node) for x in inputs]

        def vjp_filtered(g):
            full = vjp(g)
            return tuple(gr for gr, m in zip(full, mask) if m)

        return Node(out_value, parents, vjp_filtered)
    return out_value


def _toposort(root):
    order = []
    state = {}  # id -> 0 visiting, 1 done
    stack = [(root, iter(root.parents))]
    state[id(root)] = 0
    while stack:
        node, it = stack[-1]
        advanced = False
        for parent in it:
            s = state.get(id(parent))
            if s == 0:
                raise GraphError("cycle detected in computation graph")
            if s is None:
                state[id(parent)] = 0
                stack.append((parent, iter(parent.parents)))
                advanced = True
                break
        if not advanced:
            state[id(node)] = 1
            order.append(node)
            stack.pop()
    return order  # parents before children


def backward(root):
    """Gradients of a scalar root w.r.t. every named leaf.

    Gradients sum across fan-out.  Returns ``{name: ndarray}``.
    """
    if not isinstance(root, Node):
        raise GraphError("backward requires a Node root")
    if root.value.ndim != 0 and root.value.size != 1:
        raise GraphError(f"backward requires a scalar root, got shape {root.value.shape}")
    order = _toposort(root)
    grads = {id(root): np.ones_like(root.value)}
    out = {}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.name is not None:
            out[node.name] = out.get(node.name, 0) + g
        if node.vjp is None:
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            if pg is None:
                continue
            acc = grads.get(id(parent))
            grads[id(parent)] = pg if acc is None else acc + pg
    return out


def gradcheck(f, point, eps=1e-3):
    """Max relative error between analytic and central-difference gradients.

    ``f`` maps a dict of parameter arrays (or Nodes) to a scalar.  The
    numeric side never touches the graph: it re-evaluates ``f`` on plain
    arrays at ``p +- eps`` per coordinate.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    point = {k: np.asarray(v, dtype=np.float64) for k, v in point.items()}
    nodes = {k: param(v, k) for k, v in point.items()}
    root = f(nodes)
    analytic = backward(root)

    max_err = 0.0
    for name in sorted(point):
        base = point[name]
        a = np.asarray(analytic.get(name, np.zeros_like(base)), dtype=np.float64)
        for idx in np.ndindex(base.shape):
            probe = {k: v.copy() for k, v in point.items()}
            probe[name][idx] = base[idx] + eps
            fp = float(value_of(f(probe)))
            probe[name][idx] = base[idx] - eps
            fm = float(value_of(f(probe)))
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise T.TensorError(f"non-finite objective at probe of {name}{idx}")
            numeric = (fp - fm) / (2.0 * eps)
            ana = float(a[idx]) if a.shape else float(a)
            err = abs(ana - numeric) / max(1.0, abs(ana), abs(numeric))
            max_err = max(max_err, err)
    return max_err


# ---------------------------------------------------------------------------
# ops


def add(a, b):
    av, bv = value_of(a), value_of(b)
    if av.shape != bv.shape:
        raise T.TensorError(f"add shape mismatch: {av.shape} vs {bv.shape}")
    return _lift(av + bv, (a, b), lambda g: (g, g))


def scale(x, c):
    xv = value_of(x)
    c = float(c)
    return _lift(xv * c, (x,), lambda g: (g * c,))


def mul(a, b):
    av, bv = value_of(a), value_of(b)
    if av.shape != bv.shape:
        raise T.TensorError(f"mul shape mismatch: {av.shape} vs {bv.shape}")
    return _lift(av * bv, (a, b), lambda g: (g * bv, g * av))


def matmul(a, b):
    av, bv = value_of(a), value_of(b)
    out = T.matmul(av, bv)
    return _lift(out, (a, b), lambda g: (g @ bv.T, av.T @ g))


def relu(x):
    xv = value_of(x)
    out = T.relu(xv)
    return _lift(out, (x,), lambda g: (g * (xv > 0),))


def sigmoid(x):
    xv = value_of(x)
    out = T.sigmoid(xv)
    return _lift(out, (x,), lambda g: (g * out * (1.0 - out),))


def softmax(x, axis):
    xv = value_of(x)
    out = T.softmax(xv, axis)

    def vjp(g):
        dot = np.sum(g * out, axis=axis, keepdims=True)
        return (out * (g - dot),)

    return _lift(out, (x,), vjp)


def reshape(x, shape):
    xv = value_of(x)
    out = xv.reshape(shape)
    return _lift(out, (x,), lambda g: (g.reshape(xv.shape),))


def mean_axes(x, axes):
    xv = value_of(x)
    axes = tuple(axes)
    out = xv.mean(axis=axes)
    n = 1
    for ax in axes:
        n *= xv.shape[ax]

    def vjp(g):
        ge = np.expand_dims(g, axes)
        return (np.broadcast_to(ge, xv.shape) / n,)

    return _lift(out, (x,), vjp)


def sum_all(x):
    xv = value_of(x)
    return _lift(np.asarray(xv.sum()), (x,), lambda g: (np.broadcast_to(g, xv.shape),))


def conv2d(x, kernels, stride=1, padding=0):
    """Batched or single-frame convolution; see tensor_ops.conv2d_batch."""
    xv, kv = value_of(x), value_of(kernels)
    single = xv.ndim == 3
    xb = xv[None] if single else xv
    out = T.conv2d_batch(xb, kv, stride, padding)

    def vjp(g):
        gb = g[None] if single else g
        gx, gk = T.conv2d_backward(gb, xb, kv, stride, padding)
        return (gx[0] if single else gx, gk)

    return _lift(out[0] if single else out, (x, kernels), vjp)


def add_last_dim_bias(x, b):
    xv, bv = value_of(x), value_of(b)
    if xv.shape[-1] != bv.shape[0] or bv.ndim != 1:
        raise T.TensorError(f"bias shape {bv.shape} incompatible with {xv.shape}")
    lead = tuple(range(xv.ndim - 1))
    return _lift(xv + bv, (x, b), lambda g: (g, g.sum(axis=lead)))


def last_dim_linear(x, w, b=None):
    """y[..., o] = sum_d x[..., d] * w[d, o] (+ b[o])."""
    xv, wv = value_of(x), value_of(w)
    if wv.ndim != 2 or xv.shape[-1] != wv.shape[0]:
        raise T.TensorError(f"linear weight {wv.shape} incompatible with input {xv.shape}")
    out = xv @ wv
    if b is not None:
        out = out + value_of(b)

    def vjp(g):
        gx = g @ wv.T
        gw = xv.reshape(-1, xv.shape[-1]).T @ g.reshape(-1, wv.shape[1])
        if b is None:
            return (gx, gw)
        return (gx, gw, g.reshape(-1, wv.shape[1]).sum(axis=0))

    inputs = (x, w) if b is None else (x, w, b)
    return _lift(out, inputs, vjp)


def slice_last(x, start, stop):
    """Take a channel range along the last axis."""
    xv = value_of(x)
    out = xv[..., start:stop]

    def vjp(g):
        gx = np.zeros_like(xv)
        gx[..., start:stop] = g
        return (gx,)

    return _lift(out, (x,), vjp)


def cross_entropy(logits, label):
    """-log softmax(logits)[label], max-subtracted log-space."""
    lv = value_of(logits)
    if lv.ndim != 1:
        raise T.TensorError(f"cross_entropy expects a logit vector, got shape {lv.shape}")
    label = int(label)
    if not 0 <= label < lv.shape[0]:
        raise T.TensorError(f"label {label} out of range for {lv.shape[0]} classes")
    m = lv.max()
    lse = m + np.log(np.exp(lv - m).sum())
    loss = lse - lv[label]

    def vjp(g):
        p = np.exp(lv - lse)
        p[label] -= 1.0
        return (g * p,)

    return _lift(np.asarray(loss), (logits,), vjp)


def bce_logits_mean(x, target):
    """Mean binary cross-entropy with logits; numerically safe."""
    xv, tv = value_of(x), np.asarray(target)
    if xv.shape != tv.shape:
        raise T.TensorError(f"bce shape mismatch: {xv.shape} vs {tv.shape}")
    n = xv.size
    loss = (np.maximum(xv, 0) - xv * tv + np.log1p(np.exp(-np.abs(xv)))).sum() / n

    def vjp(g):
        return (g * (T.sigmoid(xv) - tv) / n,)

    return _lift(np.asarray(loss), (x,), vjp)


def masked_l1(x, target, mask):
    """sum(|x - target| * mask) / max(1, sum(mask))."""
    xv, tv, mv = value_of(x), np.asarray(target), np.asarray(mask)
    if xv.shape != tv.shape or xv.shape != mv.shape:
        raise T.TensorError("masked_l1 shape mismatch")
    denom = max(1.0, float(mv.sum()))
    diff = xv - tv
    loss = (np.abs(diff) * mv).sum() / denom

    def vjp(g):
        return (g * np.sign(diff) * mv / denom,)

    return _lift(np.asarray(loss), (x,), vjp)
