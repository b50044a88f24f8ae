"""Limit covariances, the optimal downsampling rate and efficiency-cost curves.

Everything is built from two tail moments of the covariates,

    A = E[ phi'(theta @ X)**2 / phi(theta @ X) * X X^T ]
    b = E[ phi'(theta @ X) * X ]

where ``phi`` is the family's tail-limit function (``h`` or ``g`` from
:func:`dsglm.links.tail_limit`).  The limit precision is ``V = A - c b b^T``
with ``c = (1 - alpha)**2 (1 - F(tau)) / alpha``.

Moments come either from a covariate sample (any d) or from adaptive
quadrature against a known density (d <= 3).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import links
from .errors import EmptyGrid, SingularMoment, UsageError
from .links import LinkSpec
from .quadrature import integrate_box
from .sampling import CovariateLaw, positive_probability

PD_RELATIVE_THRESHOLD = 1e-12


class MomentSource(str, enum.Enum):
    EMPIRICAL = "empirical"
    QUADRATURE = "quadrature"


@dataclass(frozen=True)
class TailMoments:
    A: np.ndarray
    b: np.ndarray
    second_moment: np.ndarray  # E[X X^T]
    source: MomentSource


def tail_moments(link: LinkSpec, theta, sample=None, law: Optional[CovariateLaw] = None,
                 epsrel: float = 1e-10) -> TailMoments:
    """Compute ``A``, ``b`` and ``E[XX^T]`` from a sample or by quadrature.

    Raises :class:`SingularMoment` when ``E[XX^T]`` is singular.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    d = theta.size
    if (sample is None) == (law is None):
        raise UsageError("give exactly one of a covariate sample or a covariate law")
    if sample is not None:
        X = np.asarray(sample, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.shape[1] != d:
            raise UsageError(f"sample has {X.shape[1]} columns, theta has {d} entries")
        u = X @ theta
        phi = links.tail_limit(link, u, 0)
        phi1 = links.tail_limit(link, u, 1)
        m = X.shape[0]
        A = (X * (phi1 * phi1 / phi)[:, None]).T @ X / m
        b = X.T @ phi1 / m
        S = X.T @ X / m
        source = MomentSource.EMPIRICAL
    else:
        if law.dim != d:
            raise UsageError(f"covariate law has dimension {law.dim}, theta has {d} entries")

        def integrand(x):
            u = x @ theta
            phi = links.tail_limit(link, u, 0)
            phi1 = links.tail_limit(link, u, 1)
            xx = (x[:, :, None] * x[:, None, :]).reshape(x.shape[0], -1)
            out = np.concatenate([(phi1 * phi1 / phi)[:, None] * xx, phi1[:, None] * x, xx], axis=1)
            return out * np.reshape(law.density(x), (-1, 1))

        vals = integrate_box(integrand, law.bounds, epsrel=epsrel)
        A = vals[: d * d].reshape(d, d)
        b = vals[d * d: d * d + d]
        S = vals[d * d + d:].reshape(d, d)
        source = MomentSource.QUADRATURE
    A = 0.5 * (A + A.T)
    S = 0.5 * (S + S.T)
    eig = np.linalg.eigvalsh(S)
    if not eig[0] > PD_RELATIVE_THRESHOLD * max(abs(eig[-1]), 1e-300):
        raise SingularMoment(f"E[XX^T] is singular (eigenvalues {eig})")
    return TailMoments(A, b, S, source)


def downsample_c(alpha: float, tau_n: float, link: LinkSpec) -> float:
    """``(1 - alpha)**2 (1 - F(tau)) / alpha`` for a concrete rate and location."""
    if not 0 < alpha <= 1:
        raise UsageError(f"downsampling rate must lie in (0, 1], got {alpha!r}")
    return (1.0 - alpha) ** 2 * float(links.sf(link, tau_n)) / alpha


@dataclass(frozen=True)
class AsymptoticReport:
    V: np.ndarray
    V_inv: Optional[np.ndarray]
    c: float
    rate_scale: Optional[float]
    predicted_mse_trace: Optional[float]
    condition_ok: bool
    moment_source: MomentSource
    min_eigenvalue: float

    def to_dict(self) -> dict:
        return {
            "V": self.V.tolist(),
            "V_inv": None if self.V_inv is None else self.V_inv.tolist(),
            "c": self.c,
            "rate_scale": self.rate_scale,
            "predicted_mse_trace": self.predicted_mse_trace,
            "condition_ok": self.condition_ok,
            "moment_source": self.moment_source.value,
        }


def is_positive_definite(V) -> tuple[bool, float]:
    eig = np.linalg.eigvalsh(V)
    scale = float(np.max(np.abs(eig))) if eig.size else 0.0
    return bool(scale > 0 and eig[0] > PD_RELATIVE_THRESHOLD * scale), float(eig[0])


def _report(moments: TailMoments, c: float, rate_scale: Optional[float]) -> AsymptoticReport:
    if c < 0:
        raise UsageError(f"c must be non-negative, got {c}")
    V = moments.A - c * np.outer(moments.b, moments.b)
    V = 0.5 * (V + V.T)
    ok, min_eig = is_positive_definite(V)
    V_inv = None
    trace = None
    if ok:
        V_inv = np.linalg.inv(V)
        V_inv = 0.5 * (V_inv + V_inv.T)
        if rate_scale is not None:
            trace = float(np.trace(V_inv)) / rate_scale ** 2
    return AsymptoticReport(V, V_inv, float(c), rate_scale, trace, ok, moments.source, min_eig)


def _resolve_c(c, alpha, tau_n, link):
    if c is not None:
        return float(c)
    if alpha is None or tau_n is None:
        raise UsageError("give c directly, or alpha together with tau_n")
    return downsample_c(alpha, tau_n, link)


def covariance_V(link: LinkSpec, theta, sample=None, law: Optional[CovariateLaw] = None,
                 c: Optional[float] = None, *, alpha: Optional[float] = None,
                 tau_n: Optional[float] = None, n: Optional[int] = None) -> AsymptoticReport:
    """Limit precision ``V`` of the pseudo-MLE scaled by ``sqrt(n (1 - F(tau)))``.

    ``c`` may be given directly or derived from ``alpha`` and ``tau_n``.  With
    ``n`` and ``tau_n`` the report also carries the rate ``a_n`` and the
    predicted ``E|theta_hat - theta|^2 = tr(V^-1) / a_n^2``.
    """
    moments = tail_moments(link, theta, sample=sample, law=law)
    c = _resolve_c(c, alpha, tau_n, link)
    rate = None
    if n is not None and tau_n is not None:
        rate = math.sqrt(n * float(links.sf(link, tau_n)))
    return _report(moments, c, rate)


def covariance_V_scaled(link: LinkSpec, theta, sample=None, law: Optional[CovariateLaw] = None,
                        c: Optional[float] = None, *, alpha: Optional[float] = None,
                        tau_n: Optional[float] = None, n: Optional[int] = None) -> AsymptoticReport:
    """As :func:`covariance_V` for the scaled model ``tau + r(tau) theta @ x``.

    The algebra is identical with ``g`` in place of ``h``; the rate gains the
    factor ``r(tau)``.
    """
    moments = tail_moments(link, theta, sample=sample, law=law)
    c = _resolve_c(c, alpha, tau_n, link)
    rate = None
    if n is not None and tau_n is not None:
        rate = math.sqrt(n * float(links.sf(link, tau_n))) * links.scaling(link, tau_n)
    return _report(moments, c, rate)


@dataclass(frozen=True)
class OptimalAlpha:
    alpha_star: float
    alpha_raw: float
    out_of_regime: bool
    trace_outer: float  # tr(b b^T)
    trace_A: float
    tail_prob: float  # 1 - F(tau)
    moment_source: MomentSource

    def to_dict(self) -> dict:
        return {
            "alpha_star": self.alpha_star,
            "alpha_raw": self.alpha_raw,
            "out_of_regime": self.out_of_regime,
            "trace_outer": self.trace_outer,
            "trace_A": self.trace_A,
            "tail_prob": self.tail_prob,
            "moment_source": self.moment_source.value,
        }


def _alpha_star(moments: TailMoments, tail_prob: float) -> float:
    return 2.0 * tail_prob * float(moments.b @ moments.b) / float(np.trace(moments.A))


def optimal_alpha(link: LinkSpec, theta, tau_n: float, sample=None,
                  law: Optional[CovariateLaw] = None) -> OptimalAlpha:
    """Closed-form rate ``2 (1 - F(tau)) tr(b b^T) / tr(A)``.

    Values above 1 mean ``tau`` is too small for the rare-event regime; they
    are clamped to 1 and flagged ``out_of_regime`` rather than raised.
    """
    moments = tail_moments(link, theta, sample=sample, law=law)
    q = float(links.sf(link, tau_n))
    raw = _alpha_star(moments, q)
    return OptimalAlpha(min(raw, 1.0), raw, raw > 1.0, float(moments.b @ moments.b),
                        float(np.trace(moments.A)), q, moments.source)


@dataclass(frozen=True)
class EfficiencyCurve:
    """Efficiency cost over a grid of rates.

    ``cost_values`` is ``c0 (p1 + alpha (1 - p1)) tr(V(alpha)^-1)``;
    ``surrogate_values`` is ``c0 (p1 + alpha (1 - p1)) / tr(V(alpha))``.  Grid
    points where ``V`` is not positive definite carry ``+inf``.  ``kappa`` is
    the condition number of ``V`` at ``alpha_star``, which bounds the gap
    between the two definitions for d > 1.
    """

    alphas: np.ndarray
    cost_values: np.ndarray
    surrogate_values: np.ndarray
    condition_ok: np.ndarray
    alpha_star: float
    grid_argmin: float
    grid_argmin_surrogate: float
    p1: float
    cost_constant_c0: float
    condition_number_kappa: float

    def rows(self):
        for a, cv, sv, ok in zip(self.alphas, self.cost_values, self.surrogate_values, self.condition_ok):
            yield {"alpha": float(a), "cost": float(cv), "surrogate": float(sv), "condition_ok": bool(ok)}


def efficiency_cost_curve(link: LinkSpec, theta, tau_n: float, p1: Optional[float], alpha_grid,
                          sample=None, law: Optional[CovariateLaw] = None,
                          c0: float = 1.0) -> EfficiencyCurve:
    """Evaluate the efficiency cost with ``c(alpha) = (1-alpha)^2 (1-F(tau)) / alpha`` per grid point.

    ``p1`` defaults to the population positive rate ``E[1 - F(tau + theta @ X)]``.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    alphas = np.asarray(alpha_grid, dtype=float).ravel()
    if alphas.size == 0 or np.any(~(alphas > 0)) or np.any(alphas > 1):
        raise UsageError("alpha grid must be non-empty and inside (0, 1]")
    moments = tail_moments(link, theta, sample=sample, law=law)
    q = float(links.sf(link, tau_n))
    if p1 is None:
        if sample is not None:
            X = np.asarray(sample, dtype=float).reshape(-1, theta.size)
            p1 = float(np.mean(links.sf(link, tau_n + X @ theta)))
        else:
            p1 = positive_probability(link, theta, tau_n, law)
    cost = np.full(alphas.size, np.inf)
    surrogate = np.full(alphas.size, np.inf)
    ok = np.zeros(alphas.size, dtype=bool)
    bb = np.outer(moments.b, moments.b)
    for i, a in enumerate(alphas):
        c = (1.0 - a) ** 2 * q / a
        V = moments.A - c * bb
        good, _ = is_positive_definite(V)
        if not good:
            continue
        ok[i] = True
        size = p1 + a * (1.0 - p1)
        cost[i] = c0 * size * float(np.trace(np.linalg.inv(V)))
        surrogate[i] = c0 * size / float(np.trace(V))
    if not ok.any():
        raise EmptyGrid("no grid point satisfies the positive-definiteness condition")
    a_star = min(_alpha_star(moments, q), 1.0)
    V_star = moments.A - (1.0 - a_star) ** 2 * q / a_star * bb
    good, _ = is_positive_definite(V_star)
    kappa = float(np.linalg.cond(V_star)) if good else math.inf
    return EfficiencyCurve(
        alphas, cost, surrogate, ok, a_star,
        float(alphas[int(np.argmin(cost))]), float(alphas[int(np.argmin(surrogate))]),
        float(p1), float(c0), kappa,
    )
