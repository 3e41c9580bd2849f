"""Matching objectives between real and synthetic feature traces.

Two terms per class: a squared error between batch means of per-sample
L2-normalized spatial attention maps on the intermediate layers, and a
linear-kernel MMD (squared distance of empirical mean vectors) on the
vectorized last-layer features. Error reduction is MSE over vector
components; class and layer terms are summed.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Tensor

NORM_EPS = 1e-8


@dataclass
class LossBreakdown:
    l_sam: float
    l_mmd: float
    total: float
    per_layer: list[float] = field(default_factory=list)


def attention_pool(feature, p):
    """Collapse (B, C, H, W) features to (B, H, W) attention: sum_c |f_c|^p."""
    if feature.data.ndim != 4:
        raise T.ShapeMismatch(f"attention_pool expects (B,C,H,W), got {feature.data.shape}")
    return T.sum_axis(T.abs_pow(feature, p), 1)


def _mse(a, b):
    d = T.sub(a, b)
    return T.scale(T.sum_all(T.mul(d, d)), 1.0 / d.size)


def _zero(dtype):
    return Tensor(np.zeros((), dtype=dtype))


def _mean_unit_attention(feature, p):
    """Batch mean of the per-sample unit-normalized vectorized attention map."""
    z = T.flatten2d(attention_pool(feature, p))
    return T.mean_axis(T.l2_normalize_rows(z, NORM_EPS), 0)


def sam_loss(real_traces, syn_traces, p, layers=None):
    """Attention-matching loss over classes and selected intermediate layers.

    real_traces / syn_traces: one ForwardTrace per class. layers: 1-based
    block indices among 1..L-1 (None selects all of them). Returns the scalar
    loss and the per-layer contributions (one float per layer 1..L-1, zero
    for unselected layers).
    """
    if len(real_traces) != len(syn_traces):
        raise T.ShapeMismatch(
            f"sam_loss: {len(real_traces)} real vs {len(syn_traces)} synthetic classes")
    if not real_traces:
        return _zero(np.float32), []
    depth = len(real_traces[0].features)
    if layers is None:
        layers = range(1, depth)
    layers = sorted(set(int(l) for l in layers))
    if layers and (layers[0] < 1 or layers[-1] > depth - 1):
        raise ValueError(f"sam_loss: layers {layers} outside 1..{depth - 1}")
    dtype = real_traces[0].logits.data.dtype
    total = _zero(dtype)
    per_layer = [0.0] * (depth - 1)
    for rt, st in zip(real_traces, syn_traces):
        for l in layers:
            rm = _mean_unit_attention(rt.features[l - 1], p)
            sm = _mean_unit_attention(st.features[l - 1], p)
            term = _mse(rm, sm)
            per_layer[l - 1] += term.item()
            total = T.add(total, term)
    return total, per_layer


def mmd_loss(real_traces, syn_traces):
    """Linear-kernel MMD on vectorized last-layer features, summed over
    classes: MSE between the real and synthetic empirical mean vectors."""
    if len(real_traces) != len(syn_traces):
        raise T.ShapeMismatch(
            f"mmd_loss: {len(real_traces)} real vs {len(syn_traces)} synthetic classes")
    if not real_traces:
        return _zero(np.float32)
    dtype = real_traces[0].logits.data.dtype
    total = _zero(dtype)
    for rt, st in zip(real_traces, syn_traces):
        rm = T.mean_axis(T.flatten2d(rt.features[-1]), 0)
        sm = T.mean_axis(T.flatten2d(st.features[-1]), 0)
        total = T.add(total, _mse(rm, sm))
    return total


def feature_map_loss(real_traces, syn_traces, layers=None):
    """Layer-wise raw feature-map transfer baseline: MSE between the real and
    synthetic batch-mean feature maps (no attention pooling, no per-sample
    normalization), summed over classes and the selected layers (default:
    all of them)."""
    if len(real_traces) != len(syn_traces):
        raise T.ShapeMismatch(
            f"feature_map_loss: {len(real_traces)} real vs {len(syn_traces)} "
            f"synthetic classes")
    if not real_traces:
        return _zero(np.float32)
    depth = len(real_traces[0].features)
    if layers is None:
        layers = range(1, depth + 1)
    layers = sorted(set(int(l) for l in layers))
    if layers and (layers[0] < 1 or layers[-1] > depth):
        raise ValueError(f"feature_map_loss: layers {layers} outside 1..{depth}")
    dtype = real_traces[0].logits.data.dtype
    total = _zero(dtype)
    for rt, st in zip(real_traces, syn_traces):
        for l in layers:
            rm = T.mean_axis(T.flatten2d(rt.features[l - 1]), 0)
            sm = T.mean_axis(T.flatten2d(st.features[l - 1]), 0)
            total = T.add(total, _mse(rm, sm))
    return total


def total_loss(sam, mmd, lam, per_layer=()):
    """Combine the two terms: total = sam + lam * mmd.

    Returns the scalar graph tensor plus a float breakdown for logging.
    """
    if lam < 0:
        raise ValueError(f"task balance must be >= 0, got {lam}")
    total = T.add(sam, T.scale(mmd, lam))
    l_sam, l_mmd = sam.item(), mmd.item()
    return total, LossBreakdown(
        l_sam=l_sam,
        l_mmd=l_mmd,
        total=l_sam + lam * l_mmd,
        per_layer=list(per_layer),
    )
