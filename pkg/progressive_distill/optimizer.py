"""
Adam with bias correction, linear warmup and linear decay to zero.
"""

import logging
from dataclasses import asdict, dataclass, field, fields
from typing import Dict, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigurationError, NumericalError, ShapeError
from .tensor import Tensor

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    warmup_steps: Optional[int] = None
    warmup_proportion: Optional[float] = None
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-6
    weight_decay: float = 0.0
    seed: int = 0

    def __post_init__(self):
        problems = []
        if self.learning_rate <= 0:
            problems.append(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            problems.append(f"batch_size must be >= 1, got {self.batch_size}")
        if self.warmup_steps is not None and self.warmup_proportion is not None:
            problems.append("give warmup_steps or warmup_proportion, not both")
        if self.warmup_steps is not None and self.warmup_steps < 0:
            problems.append(f"warmup_steps must be >= 0, got {self.warmup_steps}")
        if self.warmup_proportion is not None and not 0.0 <= self.warmup_proportion <= 1.0:
            problems.append(f"warmup_proportion must lie in [0, 1], got {self.warmup_proportion}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            problems.append(f"betas must lie in [0, 1), got ({self.beta1}, {self.beta2})")
        if self.epsilon <= 0 or self.weight_decay < 0:
            problems.append("epsilon must be > 0 and weight_decay >= 0")
        if problems:
            raise ConfigurationError("invalid optimizer config: " + "; ".join(problems))

    def warmup_for(self, total_steps: Optional[int]) -> int:
        """Warmup length in steps for a run of ``total_steps``."""
        if self.warmup_steps is not None:
            return self.warmup_steps
        if self.warmup_proportion is not None and total_steps:
            return int(round(self.warmup_proportion * total_steps))
        return 0

    def to_dict(self) -> Dict:
        return {k: v for k, v in asdict(self).items() if v is not None}

    @classmethod
    def from_dict(cls, data: Mapping) -> "OptimizerConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown optimizer keys: {sorted(unknown)}")
        return cls(**dict(data))


@dataclass
class AdamState:
    """First/second moments per parameter name plus the number of updates taken."""

    step: int = 0
    first_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: Dict[str, np.ndarray] = field(default_factory=dict)

    def named_arrays(self) -> Dict[str, np.ndarray]:
        named = {f"adam.m.{k}": v for k, v in self.first_moment.items()}
        named.update({f"adam.v.{k}": v for k, v in self.second_moment.items()})
        return named

    @classmethod
    def from_named(cls, step: int, arrays: Mapping[str, np.ndarray]) -> "AdamState":
        state = cls(step=step)
        for name, value in arrays.items():
            if name.startswith("adam.m."):
                state.first_moment[name[len("adam.m."):]] = np.array(value, dtype=np.float64)
            elif name.startswith("adam.v."):
                state.second_moment[name[len("adam.v."):]] = np.array(value, dtype=np.float64)
        return state


def scheduled_learning_rate(config: OptimizerConfig, step_index: int, total_steps: Optional[int] = None) -> float:
    """
    Learning rate for the 1-based ``step_index``.

    Linear warmup to ``learning_rate`` over the warmup steps, then linear decay
    reaching zero after ``total_steps``. Without ``total_steps`` the rate stays
    flat after warmup.
    """
    warmup = config.warmup_for(total_steps)
    if warmup and step_index <= warmup:
        return config.learning_rate * step_index / warmup
    if total_steps is None:
        return config.learning_rate
    remaining = max(total_steps - step_index + 1, 0)
    return config.learning_rate * remaining / max(total_steps - warmup, 1)


def adam_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, Optional[np.ndarray]],
    state: AdamState,
    config: OptimizerConfig,
    step_index: int,
    total_steps: Optional[int] = None,
) -> AdamState:
    """
    Apply one Adam update in place to ``params``.

    Parameters whose gradient is None are skipped. A zero gradient leaves
    the weights where they are while the moments decay.

    Raises:
        ShapeError: a gradient does not match its parameter.
        NumericalError: the update produced a non-finite value.
    """
    if step_index < 1:
        raise ConfigurationError(f"step_index is 1-based, got {step_index}")
    lr = scheduled_learning_rate(config, step_index, total_steps)
    beta1, beta2 = config.beta1, config.beta2
    state.step += 1
    correction1 = 1.0 - beta1 ** state.step
    correction2 = 1.0 - beta2 ** state.step

    for name, param in params.items():
        grad = grads.get(name)
        if grad is None:
            continue
        if grad.shape != param.shape:
            raise ShapeError(f"gradient for {name} has shape {grad.shape}, parameter {param.shape}")
        m = state.first_moment.setdefault(name, np.zeros_like(param.data))
        v = state.second_moment.setdefault(name, np.zeros_like(param.data))
        m *= beta1
        m += (1.0 - beta1) * grad
        v *= beta2
        v += (1.0 - beta2) * grad * grad
        update = (m / correction1) / (np.sqrt(v / correction2) + config.epsilon)
        if config.weight_decay:
            update = update + config.weight_decay * param.data
        param.data -= lr * update
        if not np.all(np.isfinite(param.data)):
            raise NumericalError(f"non-finite values in {name} after optimizer step {state.step}")
    return state


def step_parameters(
    named: Sequence[Tuple[str, Tensor]],
    state: AdamState,
    config: OptimizerConfig,
    step_index: int,
    total_steps: Optional[int] = None,
) -> float:
    """Adam update from the ``.grad`` fields of ``named``; returns the learning rate used."""
    params = dict(named)
    adam_step(params, {name: t.grad for name, t in named}, state, config, step_index, total_steps)
    return scheduled_learning_rate(config, step_index, total_steps)
