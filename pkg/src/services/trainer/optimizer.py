from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from src.core.tensor import Tensor
from src.utils.errors import NonFiniteGradientError

BETA1 = 0.9
BETA2 = 0.999
EPSILON = 1e-8


def cosine_lr(base_lr: float, step: int, total_steps: int) -> float:
    """base_lr * (1 + cos(pi * step / total_steps)) / 2."""
    if total_steps <= 0:
        return base_lr
    step = min(max(step, 0), total_steps)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: dict[str, Tensor],
    state: AdamState,
    lr: float,
    beta1: float = BETA1,
    beta2: float = BETA2,
    eps: float = EPSILON,
) -> AdamState:
    """Bias-corrected Adam update in place; parameters without a gradient take a zero-gradient step."""
    for name, p in params.items():
        if p.grad is not None and not np.isfinite(p.grad).all():
            bad = int((~np.isfinite(p.grad)).sum())
            raise NonFiniteGradientError(name, f"{bad} of {p.grad.size} entries non-finite at step {state.step + 1}")

    state.step += 1
    t = state.step
    correction1 = 1.0 - beta1 ** t
    correction2 = 1.0 - beta2 ** t
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        state.m[name] = m
        state.v[name] = v
        p.data = p.data - lr * (m / correction1) / (np.sqrt(v / correction2) + eps)
    return state
