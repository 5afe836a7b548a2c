"""
Differentiable building blocks on top of tensor.py: activations, layer norm,
the attention softmax and the distillation loss metrics.
"""

import math
from typing import Optional, Sequence

import numpy as np

from .errors import LabelError, ShapeError
from .tensor import Tensor, TensorLike, as_tensor, make_result

GELU_COEFF = math.sqrt(2.0 / math.pi)
DEFAULT_LAYER_NORM_EPS = 1e-12


def _log_softmax(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _require_same_shape(op: str, a: Tensor, b: Tensor):
    if a.shape != b.shape:
        raise ShapeError(f"{op} shape mismatch: {a.shape} vs {b.shape}")


def softmax_rows(a: TensorLike, mask: Optional[np.ndarray] = None) -> Tensor:
    """
    Softmax over the last axis with per-row max subtraction.

    Args:
        a: Scores of any rank; rows are the last axis.
        mask: Optional boolean array broadcastable to ``a``; False entries get
            probability exactly 0. Every row must keep at least one True entry.
    """
    a = as_tensor(a)
    logits = a.data if mask is None else np.where(mask, a.data, -np.inf)
    e = np.exp(logits - logits.max(axis=-1, keepdims=True))
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return make_result("softmax", y, (a,), backward)


def layer_norm(a: TensorLike, gain: TensorLike, bias: TensorLike, eps: float = DEFAULT_LAYER_NORM_EPS) -> Tensor:
    """Normalize the last axis to mean 0 / variance 1, then scale by gain and shift by bias."""
    a, gain, bias = as_tensor(a), as_tensor(gain), as_tensor(bias)
    width = a.shape[-1]
    if gain.shape != (width,) or bias.shape != (width,):
        raise ShapeError(f"layer_norm expects gain/bias of shape ({width},), got {gain.shape} / {bias.shape}")

    centered = a.data - a.data.mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt((centered ** 2).mean(axis=-1, keepdims=True) + eps)
    normed = centered * inv_std
    out = normed * gain.data + bias.data

    def backward(g):
        ga = gg = gb = None
        if a.requires_grad:
            d_normed = g * gain.data
            ga = inv_std * (
                d_normed
                - d_normed.mean(axis=-1, keepdims=True)
                - normed * (d_normed * normed).mean(axis=-1, keepdims=True)
            )
        if gain.requires_grad:
            gg = (g * normed).reshape(-1, width).sum(axis=0)
        if bias.requires_grad:
            gb = g.reshape(-1, width).sum(axis=0)
        return ga, gg, gb

    return make_result("layer_norm", out, (a, gain, bias), backward)


def gelu(a: TensorLike) -> Tensor:
    """Gaussian error linear unit, tanh approximation."""
    a = as_tensor(a)
    x = a.data
    inner = GELU_COEFF * (x + 0.044715 * x ** 3)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def backward(g):
        d_inner = GELU_COEFF * (1.0 + 3 * 0.044715 * x ** 2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t ** 2) * d_inner),)

    return make_result("gelu", out, (a,), backward)


def tanh(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.data)
    return make_result("tanh", y, (a,), lambda g: (g * (1.0 - y ** 2),))


def dropout(a: TensorLike, rate: float, rng: Optional[np.random.Generator]) -> Tensor:
    """Inverted dropout; identity when rate is 0 or no generator is given (evaluation)."""
    a = as_tensor(a)
    if rate <= 0.0 or rng is None:
        return a
    keep = (rng.random(a.shape) >= rate) / (1.0 - rate)
    return make_result("dropout", a.data * keep, (a,), lambda g: (g * keep,))


def mse(a: TensorLike, b: TensorLike) -> Tensor:
    """Mean over all elements of the squared difference; symmetric in its arguments."""
    a, b = as_tensor(a), as_tensor(b)
    _require_same_shape("mse", a, b)
    diff = a.data - b.data
    n = max(diff.size, 1)

    def backward(g):
        scaled = g * 2.0 * diff / n
        return (scaled if a.requires_grad else None, -scaled if b.requires_grad else None)

    return make_result("mse", np.mean(diff ** 2) if diff.size else np.float64(0.0), (a, b), backward)


def kl_div(p_logits: TensorLike, q_logits: TensorLike) -> Tensor:
    """
    Batch mean of KL(softmax(p_logits) || softmax(q_logits)).

    ``p_logits`` is the reference distribution (the teacher in distillation);
    ``q_logits`` the approximating one.
    """
    p_logits, q_logits = as_tensor(p_logits), as_tensor(q_logits)
    _require_same_shape("kl_div", p_logits, q_logits)
    if p_logits.ndim != 2 or p_logits.shape[-1] < 2:
        raise ShapeError(f"kl_div expects batch x classes logits with >= 2 classes, got {p_logits.shape}")
    batch = p_logits.shape[0]
    log_p = _log_softmax(p_logits.data)
    log_q = _log_softmax(q_logits.data)
    p, q = np.exp(log_p), np.exp(log_q)
    gap = log_p - log_q
    row_kl = (p * gap).sum(axis=-1)
    value = max(float(row_kl.mean()), 0.0)

    def backward(g):
        gp = gq = None
        if p_logits.requires_grad:
            gp = g * p * (gap - row_kl[:, None]) / batch
        if q_logits.requires_grad:
            gq = g * (q - p) / batch
        return gp, gq

    return make_result("kl_div", np.float64(value), (p_logits, q_logits), backward)


def cross_entropy(logits: TensorLike, labels: Sequence[int]) -> Tensor:
    """
    Mean negative log-probability of the true class.

    Raises:
        LabelError: a label falls outside [0, num_classes).
    """
    logits = as_tensor(logits)
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy expects batch x classes logits, got {logits.shape}")
    batch, classes = logits.shape
    targets = np.asarray(labels, dtype=np.int64).reshape(-1)
    if targets.shape[0] != batch:
        raise ShapeError(f"cross_entropy got {targets.shape[0]} labels for a batch of {batch}")
    if targets.size and (targets.min() < 0 or targets.max() >= classes):
        raise LabelError(f"labels must lie in [0, {classes}), got {targets.tolist()}")

    log_probs = _log_softmax(logits.data)
    rows = np.arange(batch)
    value = -log_probs[rows, targets].mean()

    def backward(g):
        grad = np.exp(log_probs)
        grad[rows, targets] -= 1.0
        return (g * grad / batch,)

    return make_result("cross_entropy", value, (logits,), backward)
