"""Coefficient estimators for GLMs fitted on downsampled data.

Every objective is an average log-likelihood over the ``N`` rows it is given,
with the intercept ``tau_n`` held fixed as a known offset.  Rows have linear
predictor ``eta = tau_n + scale * theta @ x``; ``scale`` is ``r(tau_n)`` for the
scaled (Gaussian/Pareto tail) model and 1 otherwise.

Objectives return ``(value, gradient, hessian)`` with exact analytic
derivatives.  The ``fit_*`` functions maximise them with
:func:`dsglm.optimize.maximize`.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import optimize as sp_optimize
from scipy.special import logsumexp

from . import links
from .errors import DegenerateLabels, DomainError, NonFinite, UnsupportedDimension
from .links import LinkSpec
from .optimize import FitConfig, maximize
from .quadrature import MAX_DIM, integrate_box
from .sampling import CovariateLaw, Dataset


class Estimator(str, enum.Enum):
    PSEUDO_MLE = "pseudo"
    INVERSE_WEIGHTING = "iw"
    CONDITIONAL_MLE = "conditional"
    NAIVE_REFIT = "naive"
    EXACT_MLE = "exact"
    FULL_SAMPLE = "full"


@dataclass
class FitResult:
    theta_hat: np.ndarray
    objective: float
    grad_norm: float
    iterations: int
    converged: bool
    estimator: Estimator
    status: str = "converged"
    history: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "estimator": self.estimator.value,
            "theta_hat": [float(t) for t in self.theta_hat],
            "objective": float(self.objective),
            "grad_norm": float(self.grad_norm),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "status": self.status,
        }


# ---------------------------------------------------------------------------
# per-row pieces

class _Rows:
    """Log-probabilities and their eta-derivatives for one linear predictor."""

    def __init__(self, link: LinkSpec, eta: np.ndarray, derivs: bool = True):
        self.lF = links.log_cdf(link, eta)
        self.lS = links.log_sf(link, eta)
        if derivs:
            self.lf = links.log_pdf(link, eta)
            self.slope = links.pdf_slope(link, eta)
            with np.errstate(over="ignore", invalid="ignore"):
                rF = np.exp(self.lf - self.lF)  # F'/F
                rS = np.exp(self.lf - self.lS)  # F'/(1-F)
            self.d1_lF = rF
            self.d2_lF = self.slope * rF - rF * rF
            self.d1_lS = -rS
            self.d2_lS = -self.slope * rS - rS * rS


def _eta(data: Dataset, theta, tau_n, scale):
    Xs = data.X * scale if scale != 1.0 else data.X
    return Xs, tau_n + Xs @ np.asarray(theta, dtype=float)


def _check_rows(data: Dataset):
    if data.n == 0:
        raise DegenerateLabels("dataset has no rows")


def _assemble(Xs, a, b):
    N = Xs.shape[0]
    grad = Xs.T @ a / N
    hess = (Xs * b[:, None]).T @ Xs / N
    return grad, hess


def _first_bad(*arrays):
    bad = np.zeros(arrays[0].shape, dtype=bool)
    for arr in arrays:
        bad |= ~np.isfinite(arr)
    idx = np.flatnonzero(bad)
    return int(idx[0]) if idx.size else None


def _guard(value, terms, what):
    if not np.isfinite(value):
        raise NonFinite(f"{what}: non-finite log-likelihood term", _first_bad(*terms))


def _bernoulli(data, theta, tau_n, link, scale, neg_weight, what):
    _check_rows(data)
    Xs, eta = _eta(data, theta, tau_n, scale)
    r = _Rows(link, eta)
    y = data.y.astype(float)
    w0 = neg_weight * (1.0 - y)
    terms = y * r.lS + w0 * r.lF
    value = float(np.mean(terms))
    _guard(value, (terms,), what)
    a = y * r.d1_lS + w0 * r.d1_lF
    b = y * r.d2_lS + w0 * r.d2_lF
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise NonFinite(f"{what}: non-finite derivative", _first_bad(a, b))
    return (value, *_assemble(Xs, a, b))


def full_loglik(data: Dataset, theta, tau_n: float, link: LinkSpec, scale: float = 1.0):
    """Average Bernoulli log-likelihood ``y log(1-F) + (1-y) log F``."""
    return _bernoulli(data, theta, tau_n, link, scale, 1.0, "full-sample likelihood")


def naive_loglik(data: Dataset, theta, tau_n: float, link: LinkSpec, scale: float = 1.0):
    """The full-sample likelihood applied to a downsample as if nothing was removed.

    This ignores the downsampling rate and is biased; it is provided as a baseline.
    """
    return _bernoulli(data, theta, tau_n, link, scale, 1.0, "naive likelihood")


def iw_loglik(data: Dataset, theta, tau_n: float, alpha: float, link: LinkSpec, scale: float = 1.0):
    """Inverse-weighted likelihood: negatives count ``1/alpha`` times."""
    return _bernoulli(data, theta, tau_n, link, scale, 1.0 / alpha, "inverse-weighted likelihood")


def _downsample_base(y, r, log_alpha):
    """Per-row ``y log(1-F) + (1-y) log(alpha F)`` and its eta-derivatives."""
    terms = y * r.lS + (1.0 - y) * (log_alpha + r.lF)
    a = y * r.d1_lS + (1.0 - y) * r.d1_lF
    b = y * r.d2_lS + (1.0 - y) * r.d2_lF
    return terms, a, b


def conditional_loglik(data: Dataset, theta, tau_n: float, alpha: float, link: LinkSpec,
                       scale: float = 1.0):
    """Bernoulli likelihood under the downsample link ``G = aF / (1 - (1-a)F)``.

    Written as ``y log(1-F) + (1-y) log(aF) - log(1-F + aF)`` so that no
    probability is formed before taking logs.
    """
    _check_rows(data)
    Xs, eta = _eta(data, theta, tau_n, scale)
    r = _Rows(link, eta)
    y = data.y.astype(float)
    log_alpha = math.log(alpha)
    base, a, b = _downsample_base(y, r, log_alpha)
    log_k = np.logaddexp(r.lS, log_alpha + r.lF)
    terms = base - log_k
    value = float(np.mean(terms))
    _guard(value, (terms,), "conditional likelihood")
    # k = 1 - (1-a)F, k' = -(1-a)F', k'' = -(1-a)F''
    dk = -(1.0 - alpha) * np.exp(r.lf - log_k)
    d2k = dk * r.slope
    a = a - dk
    b = b - (d2k - dk * dk)
    return (value, *_assemble(Xs, a, b))


def pseudo_loglik(data: Dataset, theta, tau_n: float, alpha: float, link: LinkSpec,
                  scale: float = 1.0):
    """Pseudo log-likelihood of a downsample.

    ``(1/N) sum [y log(1-F) + (1-y) log(aF)] - log J(theta)`` where
    ``J = (1/N) sum [1 - (1-a) F]`` is the sample-average normaliser shared by
    every row.  The normaliser enters once per averaged observation, so its
    gradient and Hessian are rank-coupled across rows.
    """
    _check_rows(data)
    Xs, eta = _eta(data, theta, tau_n, scale)
    N = Xs.shape[0]
    r = _Rows(link, eta)
    y = data.y.astype(float)
    log_alpha = math.log(alpha)
    terms, a, b = _downsample_base(y, r, log_alpha)
    log_k = np.logaddexp(r.lS, log_alpha + r.lF)
    log_sum_k = logsumexp(log_k)
    value = float(np.mean(terms) - (log_sum_k - math.log(N)))
    _guard(value, (terms, log_k), "pseudo likelihood")
    grad, hess = _assemble(Xs, a, b)
    # weights k'_i / sum k and k''_i / sum k
    u = -(1.0 - alpha) * np.exp(r.lf - log_sum_k)
    v = u * r.slope
    gJ = Xs.T @ u
    hJ = (Xs * v[:, None]).T @ Xs
    grad = grad - gJ
    hess = hess - (hJ - np.outer(gJ, gJ))
    return value, grad, hess


def _exact_integrals(theta, tau_n, alpha, link, law: CovariateLaw, scale, derivs=True):
    """``I = E_mu[k]`` and, optionally, its gradient and Hessian in theta."""
    theta = np.asarray(theta, dtype=float)
    d = theta.size

    def integrand(x):
        xs = scale * x
        eta = tau_n + xs @ theta
        dens = np.reshape(law.density(x), (-1, 1))
        k = links.sf(link, eta) + alpha * links.cdf(link, eta)
        if not derivs:
            return k[:, None] * dens
        f1 = links.derivatives(link, eta, 1)
        f2 = links.derivatives(link, eta, 2)
        xx = (xs[:, :, None] * xs[:, None, :]).reshape(xs.shape[0], d * d)
        out = np.concatenate([k[:, None], -(1.0 - alpha) * f1[:, None] * xs,
                              -(1.0 - alpha) * f2[:, None] * xx], axis=1)
        return out * dens

    vals = integrate_box(integrand, law.bounds, epsrel=1e-10, epsabs=1e-14)
    if not derivs:
        return vals[0], None, None
    return vals[0], vals[1:1 + d], vals[1 + d:].reshape(d, d)


def _check_exact_dim(d):
    if d > MAX_DIM:
        raise UnsupportedDimension(f"exact MLE needs quadrature over the covariate law; d = {d} > {MAX_DIM}")


def exact_loglik(data: Dataset, theta, tau_n: float, alpha: float, link: LinkSpec,
                 law: CovariateLaw, scale: float = 1.0):
    """Exact downsample log-likelihood with a known covariate density.

    Same as the pseudo likelihood except that the normaliser is the population
    integral ``log E_mu[1 - (1-a) F(eta(X))]``, computed by adaptive quadrature.
    """
    _check_rows(data)
    _check_exact_dim(data.d)
    Xs, eta = _eta(data, theta, tau_n, scale)
    r = _Rows(link, eta)
    y = data.y.astype(float)
    terms, a, b = _downsample_base(y, r, math.log(alpha))
    I, dI, d2I = _exact_integrals(theta, tau_n, alpha, link, law, scale)
    value = float(np.mean(terms) - math.log(I))
    _guard(value, (terms,), "exact likelihood")
    grad, hess = _assemble(Xs, a, b)
    gI = dI / I
    grad = grad - gI
    hess = hess - (d2I / I - np.outer(gI, gI))
    return value, grad, hess


# ---------------------------------------------------------------------------
# fitting

def _require_both_classes(data: Dataset):
    if data.n == 0:
        raise DegenerateLabels("dataset has no rows")
    if data.n_pos == 0:
        raise DegenerateLabels(f"no positive rows among {data.n}")
    if data.n_neg == 0:
        raise DegenerateLabels(f"no negative rows among {data.n}")


def _value_only(fun):
    def value(theta):
        try:
            with np.errstate(all="ignore"):
                v = fun(theta)
        except (NonFinite, DomainError, FloatingPointError):
            return -math.inf
        return v if np.isfinite(v) else -math.inf
    return value


def _safe(fun):
    def full(theta):
        with np.errstate(all="ignore"):
            return fun(theta)
    return full


def is_separable(data: Dataset) -> bool:
    """True when some direction ``v`` strictly improves every row's fit without bound.

    That is, ``v @ x <= 0`` on positives and ``v @ x >= 0`` on negatives with at
    least one strict inequality; the Bernoulli-type likelihoods then have no
    finite maximiser.  Decided by a small linear program.
    """
    if data.degenerate:
        return False
    s = np.where(data.y == 1, -1.0, 1.0)
    A = -(data.X * s[:, None])
    scale = max(1.0, float(np.max(np.abs(data.X))))
    # minimising sum(A @ v) maximises the total margin sum(s * (X @ v))
    res = sp_optimize.linprog(
        A.sum(axis=0), A_ub=A, b_ub=np.zeros(data.n),
        bounds=[(-1.0, 1.0)] * data.d, method="highs",
    )
    return bool(res.status == 0 and -res.fun > 1e-9 * scale * data.n)


def _fit(estimator, data, fun, value_fun, cfg, bernoulli_type):
    cfg = cfg or FitConfig()
    theta0 = np.zeros(data.d) if cfg.theta_init is None else np.asarray(cfg.theta_init, dtype=float)
    if theta0.shape != (data.d,):
        raise ValueError(f"theta_init has shape {theta0.shape}, expected ({data.d},)")
    res = maximize(_safe(fun), _value_only(value_fun), theta0, cfg)
    status = res.status
    if bernoulli_type and is_separable(data):
        status = "separated"
    return FitResult(res.theta, res.value, res.grad_norm, res.iterations,
                     status == "converged", estimator, status, res.history)


def fit_full_sample(data: Dataset, tau_n: float, link: LinkSpec, cfg: Optional[FitConfig] = None,
                    scale: float = 1.0) -> FitResult:
    """Bernoulli MLE on an undownsampled dataset (the ``alpha = 1`` reference)."""
    _require_both_classes(data)

    def fun(t):
        return full_loglik(data, t, tau_n, link, scale)

    return _fit(Estimator.FULL_SAMPLE, data, fun, lambda t: fun(t)[0], cfg, True)


def fit_naive_refit(data: Dataset, tau_n: float, link: LinkSpec, cfg: Optional[FitConfig] = None,
                    scale: float = 1.0) -> FitResult:
    _require_both_classes(data)

    def fun(t):
        return naive_loglik(data, t, tau_n, link, scale)

    return _fit(Estimator.NAIVE_REFIT, data, fun, lambda t: fun(t)[0], cfg, True)


def fit_inverse_weighting(data: Dataset, tau_n: float, alpha: float, link: LinkSpec,
                          cfg: Optional[FitConfig] = None, scale: float = 1.0) -> FitResult:
    _require_both_classes(data)

    def fun(t):
        return iw_loglik(data, t, tau_n, alpha, link, scale)

    return _fit(Estimator.INVERSE_WEIGHTING, data, fun, lambda t: fun(t)[0], cfg, True)


def fit_conditional_mle(data: Dataset, tau_n: float, alpha: float, link: LinkSpec,
                        cfg: Optional[FitConfig] = None, scale: float = 1.0) -> FitResult:
    _require_both_classes(data)

    def fun(t):
        return conditional_loglik(data, t, tau_n, alpha, link, scale)

    return _fit(Estimator.CONDITIONAL_MLE, data, fun, lambda t: fun(t)[0], cfg, True)


def fit_pseudo_mle(data: Dataset, tau_n: float, alpha: float, link: LinkSpec,
                   cfg: Optional[FitConfig] = None, scale: float = 1.0) -> FitResult:
    _require_both_classes(data)

    def fun(t):
        return pseudo_loglik(data, t, tau_n, alpha, link, scale)

    return _fit(Estimator.PSEUDO_MLE, data, fun, lambda t: fun(t)[0], cfg, False)


def fit_exact_mle(data: Dataset, tau_n: float, alpha: float, link: LinkSpec, law: CovariateLaw,
                  cfg: Optional[FitConfig] = None, scale: float = 1.0) -> FitResult:
    """Exact downsample MLE; needs the full-sample covariate density and d <= 3."""
    _check_exact_dim(data.d)
    if law.dim != data.d:
        raise UnsupportedDimension(f"covariate law has dimension {law.dim}, data has {data.d}")
    _require_both_classes(data)
    y = data.y.astype(float)
    log_alpha = math.log(alpha)

    def fun(t):
        return exact_loglik(data, t, tau_n, alpha, link, law, scale)

    def value(t):
        _, eta = _eta(data, t, tau_n, scale)
        r = _Rows(link, eta, derivs=False)
        base = np.mean(y * r.lS + (1.0 - y) * (log_alpha + r.lF))
        I, _, _ = _exact_integrals(t, tau_n, alpha, link, law, scale, derivs=False)
        return float(base - math.log(I))

    return _fit(Estimator.EXACT_MLE, data, fun, value, cfg, False)


def fit(estimator, data: Dataset, tau_n: float, alpha: float, link: LinkSpec,
        cfg: Optional[FitConfig] = None, law: Optional[CovariateLaw] = None,
        scale: float = 1.0) -> FitResult:
    """Dispatch to the ``fit_*`` function for ``estimator``."""
    est = Estimator(estimator)
    if est is Estimator.PSEUDO_MLE:
        return fit_pseudo_mle(data, tau_n, alpha, link, cfg, scale)
    if est is Estimator.INVERSE_WEIGHTING:
        return fit_inverse_weighting(data, tau_n, alpha, link, cfg, scale)
    if est is Estimator.CONDITIONAL_MLE:
        return fit_conditional_mle(data, tau_n, alpha, link, cfg, scale)
    if est is Estimator.NAIVE_REFIT:
        return fit_naive_refit(data, tau_n, link, cfg, scale)
    if est is Estimator.FULL_SAMPLE:
        return fit_full_sample(data, tau_n, link, cfg, scale)
    if law is None:
        raise UnsupportedDimension("exact MLE needs a covariate law with a density")
    return fit_exact_mle(data, tau_n, alpha, link, law, cfg, scale)


def objective(estimator, data: Dataset, theta, tau_n: float, alpha: float, link: LinkSpec,
              law: Optional[CovariateLaw] = None, scale: float = 1.0):
    """``(value, gradient, hessian)`` of the objective maximised by ``estimator``."""
    est = Estimator(estimator)
    if est is Estimator.PSEUDO_MLE:
        return pseudo_loglik(data, theta, tau_n, alpha, link, scale)
    if est is Estimator.INVERSE_WEIGHTING:
        return iw_loglik(data, theta, tau_n, alpha, link, scale)
    if est is Estimator.CONDITIONAL_MLE:
        return conditional_loglik(data, theta, tau_n, alpha, link, scale)
    if est is Estimator.NAIVE_REFIT:
        return naive_loglik(data, theta, tau_n, link, scale)
    if est is Estimator.FULL_SAMPLE:
        return full_loglik(data, theta, tau_n, link, scale)
    return exact_loglik(data, theta, tau_n, alpha, link, law, scale)
