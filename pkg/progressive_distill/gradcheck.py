import logging
from typing import Callable

import numpy as np

from .errors import GradientError
from .tensor import Tape, Tensor, backward

logger = logging.getLogger(__name__)

TensorFunction = Callable[[Tensor], Tensor]

# multiple of machine epsilon * |f| / step below which a finite difference is roundoff
ROUNDOFF_FACTOR = 1e3


def numerical_gradient(f: TensorFunction, at: Tensor, step: float = 1e-4) -> np.ndarray:
    """
    Fourth-order central-difference gradient of scalar ``f`` at ``at``.

    ``at`` is perturbed in place one element at a time and restored exactly.
    """
    if step <= 0:
        raise GradientError(f"step must be positive, got {step}")
    flat = at.data.reshape(-1)
    grad = np.zeros(flat.shape[0])
    for i in range(flat.shape[0]):
        original = flat[i]
        samples = []
        for offset in (2.0, 1.0, -1.0, -2.0):
            flat[i] = original + offset * step
            samples.append(f(at).item())
        flat[i] = original
        far_plus, plus, minus, far_minus = samples
        grad[i] = (-far_plus + 8.0 * plus - 8.0 * minus + far_minus) / (12.0 * step)
    return grad.reshape(at.shape)


def finite_diff_check(f: TensorFunction, at: Tensor, step: float = 1e-4, floor: float = 1e-8) -> float:
    """
    Compare the autodiff gradient of ``f`` w.r.t. ``at`` against central differences.

    Elements where both gradients lie inside the roundoff band of the
    difference quotient, ROUNDOFF_FACTOR * eps * max(1, |f|) / step, count as
    agreeing.

    Args:
        f: Scalar-valued function of ``at``; may read other tensors too.
        at: Tensor to differentiate against; must require a gradient.
        step: Finite-difference step.
        floor: Absolute floor of the relative-error denominator.

    Returns:
        max_i |auto_i - numeric_i| / max(|auto_i|, |numeric_i|, floor)
    """
    if not at.requires_grad:
        raise GradientError("finite_diff_check needs a tensor with requires_grad=True")

    saved = at.grad
    at.grad = None
    with Tape() as tape:
        loss = f(at)
    backward(loss, tape)
    analytic = np.zeros_like(at.data) if at.grad is None else at.grad.copy()
    noise = ROUNDOFF_FACTOR * np.finfo(np.float64).eps * max(1.0, abs(loss.item())) / step
    at.grad = saved

    numeric = numerical_gradient(f, at, step)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    errors = np.abs(analytic - numeric) / np.maximum(scale, floor)
    errors[scale < noise] = 0.0
    worst = float(np.max(errors)) if analytic.size else 0.0
    logger.debug(f"finite_diff_check on {at.shape}: max relative error {worst:.3e}")
    return worst
