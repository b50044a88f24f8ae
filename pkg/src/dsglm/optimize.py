"""Damped Newton ascent with Armijo backtracking."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import linalg

from .errors import NonFinite, UsageError

_EPS = np.finfo(float).eps
DIVERGENCE_BOUND = 1e8


class StepRule(str, enum.Enum):
    NEWTON = "newton"
    GRADIENT = "gradient"


@dataclass(frozen=True)
class FitConfig:
    theta_init: Optional[np.ndarray] = None
    grad_tol: float = 1e-8
    max_iter: int = 200
    step_rule: StepRule = StepRule.NEWTON
    shrink: float = 0.5
    armijo_c: float = 1e-4
    max_halvings: int = 60

    def __post_init__(self):
        if not self.grad_tol > 0:
            raise UsageError("grad_tol must be positive")
        if int(self.max_iter) < 1:
            raise UsageError("max_iter must be >= 1")
        if not 0 < self.shrink < 1:
            raise UsageError("shrink must lie in (0, 1)")
        object.__setattr__(self, "step_rule", StepRule(self.step_rule))


@dataclass
class OptimResult:
    theta: np.ndarray
    value: float
    grad_norm: float
    iterations: int
    converged: bool
    status: str
    history: list = field(default_factory=list)


def _ascent_direction(g, H, rule):
    if rule is StepRule.NEWTON:
        try:
            c = linalg.cho_factor(-H, lower=True, check_finite=True)
        except (linalg.LinAlgError, ValueError):
            return g, False
        return linalg.cho_solve(c, g), True
    return g, False


def _line_search(fun, value_fun, theta, f, g, d, cfg, newton):
    """Backtrack along ``d``; return the new ``(theta, f, g, H)`` or None."""
    slope = float(g @ d)
    if not slope > 0:
        return None
    t = 1.0
    for _ in range(cfg.max_halvings + 1):
        trial = theta + t * d
        f_new = value_fun(trial)
        if np.isfinite(f_new) and f_new >= f + cfg.armijo_c * t * slope:
            return (trial, *fun(trial))
        t *= cfg.shrink
    if newton and 0.5 * slope <= 1e3 * _EPS * max(1.0, abs(f)):
        # predicted gain is below roundoff: accept the full Newton step if it
        # loses at most a few ulps of value and shrinks the gradient
        trial = theta + d
        f_new, g_new, H_new = fun(trial)
        if (np.isfinite(f_new) and f_new >= f - 8 * _EPS * max(1.0, abs(f))
                and np.max(np.abs(g_new)) < np.max(np.abs(g))):
            return trial, f_new, g_new, H_new
    return None


def maximize(fun: Callable, value_fun: Callable, theta0, cfg: FitConfig) -> OptimResult:
    """Maximise a smooth objective.

    ``fun(theta)`` returns ``(value, gradient, hessian)``; ``value_fun(theta)``
    returns the value alone and may return ``-inf`` outside the domain.
    Convergence is declared on the gradient infinity-norm.  When the Hessian
    is not negative definite, or the Newton step cannot be backtracked to an
    ascent, the step falls back to the gradient.
    """
    theta = np.array(theta0, dtype=float)
    f, g, H = fun(theta)
    if not (np.isfinite(f) and np.all(np.isfinite(g))):
        raise NonFinite("objective is not finite at the starting point")
    history = [f]
    status = "max_iter"
    iterations = 0
    while True:
        if float(np.max(np.abs(g))) <= cfg.grad_tol:
            status = "converged"
            break
        if iterations >= cfg.max_iter:
            break
        direction, is_newton = _ascent_direction(g, H, cfg.step_rule)
        step = _line_search(fun, value_fun, theta, f, g, direction, cfg, is_newton)
        if step is None and is_newton:
            step = _line_search(fun, value_fun, theta, f, g, g, cfg, False)
        if step is None:
            status = "line_search_failed"
            break
        theta, f, g, H = step
        iterations += 1
        history.append(f)
        if np.max(np.abs(theta)) > DIVERGENCE_BOUND:
            status = "diverging"
            break
    gnorm = float(np.max(np.abs(g)))
    return OptimResult(theta, float(f), gnorm, iterations, status == "converged", status, history)
