from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from src.core.tensor import Tape, Tensor, no_grad
from src.utils.errors import EvaluationError, InvalidValueError
from src.utils.mixins import SerializationMixin

logger = logging.getLogger(__name__)

EPS_RANGE = (1e-7, 1e-4)


@dataclass
class GradCheckReport(SerializationMixin):
    errors: dict[str, float] = field(default_factory=dict)
    tol: float = 1e-4
    eps: float = 1e-5

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error < self.tol

    @property
    def worst(self) -> str | None:
        if not self.errors:
            return None
        return max(self.errors, key=self.errors.get)


def _evaluate(f: Callable[[], Tensor]) -> float:
    with no_grad():
        value = f()
    loss = value.item() if isinstance(value, Tensor) else float(value)
    if not np.isfinite(loss):
        raise EvaluationError(f"Loss is not finite during gradient check ({loss})")
    return loss


def _coordinates(size: int, limit: int | None, rng: np.random.Generator | None) -> np.ndarray:
    if limit is None or size <= limit:
        return np.arange(size)
    rng = rng or np.random.default_rng(0)
    return np.sort(rng.choice(size, size=limit, replace=False))


def grad_check(
    f: Callable[[], Tensor],
    params: Mapping[str, Tensor] | list[Tensor],
    eps: float = 1e-5,
    tol: float = 1e-4,
    max_checks_per_param: int | None = None,
    rng: np.random.Generator | None = None,
) -> GradCheckReport:
    """Compare autodiff gradients of the scalar `f()` against central differences.

    The error recorded per parameter is max|analytic - numeric| divided by the
    larger of the two gradients' max magnitudes (floored at 1e-10).
    """
    if not (EPS_RANGE[0] <= eps <= EPS_RANGE[1]):
        raise InvalidValueError(f"eps must lie in [{EPS_RANGE[0]}, {EPS_RANGE[1]}], got {eps}")
    if not isinstance(params, Mapping):
        params = {p.name or f"param{i}": p for i, p in enumerate(params)}

    for p in params.values():
        p.zero_grad()
    with Tape():
        loss = f()
        if not np.isfinite(loss.data).all():
            raise EvaluationError(f"Loss is not finite during gradient check ({loss.item()})")
        loss.backward()

    report = GradCheckReport(tol=tol, eps=eps)
    for name, p in params.items():
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        p.data = np.ascontiguousarray(p.data)
        flat = p.data.reshape(-1)
        coords = _coordinates(flat.size, max_checks_per_param, rng)
        numeric = np.empty(coords.size)
        for j, idx in enumerate(coords):
            original = flat[idx]
            try:
                flat[idx] = original + eps
                plus = _evaluate(f)
                flat[idx] = original - eps
                minus = _evaluate(f)
            finally:
                flat[idx] = original
            numeric[j] = (plus - minus) / (2.0 * eps)

        a = analytic.reshape(-1)[coords]
        scale = max(np.abs(a).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-10)
        report.errors[name] = float(np.abs(a - numeric).max(initial=0.0) / scale)

    for p in params.values():
        p.zero_grad()

    if not report.passed:
        logger.debug(f"Gradient check failed on '{report.worst}' ({report.max_error:.3e} >= {tol})")
    return report
