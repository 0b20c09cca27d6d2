"""Desk-scale spatial-temporal video model.

Spatial conv encoder, parallel-scan gated linear recurrence over time,
two-level (spatial then temporal) attention fusion, and classification /
tracking heads, with from-scratch reverse-mode differentiation and a
verification harness (finite differences, scan-vs-loop oracle, CLEAR-MOT
accounting, throughput benchmarks) on deterministic synthetic video.
"""

from . import attention, autodiff, encoder, heads, metrics, model, rng, runtime, synth, temporal, tensor_ops
from .tensor_ops import TensorError

__version__ = "0.1.0"

__all__ = [
    "attention",
    "autodiff",
    "encoder",
    "heads",
    "metrics",
    "model",
    "rng",
    "runtime",
    "synth",
    "temporal",
    "tensor_ops",
    "TensorError",
]
