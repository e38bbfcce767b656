"""Central finite-difference check of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigurationError, NumericError
from .tensor import Tensor, backward


@dataclass
class GradCheckResult:
    max_rel_error: float
    per_parameter: dict[str, float]
    worst_parameter: Optional[str]


def _coords(size: int, samples: Optional[int], rng: np.random.Generator) -> np.ndarray:
    if samples is None or samples >= size:
        return np.arange(size)
    return np.sort(rng.choice(size, size=samples, replace=False))


def check_gradients(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-4,
    samples: Optional[int] = 100,
    seed: int = 0,
    coordinate_filter: Optional[Callable[[Tensor, int], bool]] = None,
    grad_hook: Optional[Callable[[Tensor], None]] = None,
) -> GradCheckResult:
    """Compare backprop gradients of ``loss_fn`` with central differences.

    ``loss_fn`` must be deterministic (reseed any rng inside it). For each
    parameter, up to ``samples`` flat coordinates are probed; the error at a
    coordinate is ``|analytic - numeric| / max(1, |numeric|)``.
    ``coordinate_filter`` may veto coordinates (e.g. near a relu kink).
    ``grad_hook`` may tamper with analytic gradients (used to prove the check bites).
    """
    if not 1e-6 <= eps <= 1e-3:
        raise ConfigurationError(f"eps must lie in [1e-6, 1e-3], got {eps}")
    for p in params:
        p.grad = None
    loss = loss_fn()
    if not np.all(np.isfinite(loss.data)):
        raise NumericError("loss is not finite at the base point")
    backward(loss)
    analytic = []
    for p in params:
        if grad_hook is not None:
            grad_hook(p)
        analytic.append(np.zeros_like(p.data) if p.grad is None else p.grad.copy())
        p.grad = None

    rng = np.random.default_rng(seed)
    per_param: dict[str, float] = {}
    for index, (p, g) in enumerate(zip(params, analytic)):
        flat = p.data.reshape(-1)
        worst = 0.0
        for c in _coords(flat.size, samples, rng):
            if coordinate_filter is not None and not coordinate_filter(p, int(c)):
                continue
            original = flat[c]
            flat[c] = original + eps
            up = loss_fn().item()
            flat[c] = original - eps
            down = loss_fn().item()
            flat[c] = original
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NumericError(f"non-finite loss while probing {p.name or index}[{c}]")
            numeric = (up - down) / (2.0 * eps)
            err = abs(g.reshape(-1)[c] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
        per_param[p.name or f"param{index}"] = worst
    worst_name = max(per_param, key=per_param.get) if per_param else None
    return GradCheckResult(per_param[worst_name] if worst_name else 0.0, per_param, worst_name)


def gradient_check(loss_fn: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-4,
                   samples: Optional[int] = 100, seed: int = 0) -> float:
    """Maximum relative error over sampled coordinates of ``params``."""
    return check_gradients(loss_fn, params, eps=eps, samples=samples, seed=seed).max_rel_error
