"""Latent-variable link families for binary GLMs with a rare positive class.

The model is ``P(Y=1 | x) = 1 - F(tau + theta @ x)`` where ``F`` is the CDF of
a latent variable.  In the rare-event regime ``tau`` is large and ``F`` sits
within machine epsilon of one, so every likelihood computation goes through
the log-domain primitives :func:`log_cdf` and :func:`log_sf` rather than
``log(cdf(...))``.

All functions are vectorised over ``z`` and return numpy scalars for scalar
input.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import special

from .errors import DomainError, UsageError

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


class Family(str, enum.Enum):
    LOGISTIC = "logistic"
    GAUSSIAN = "gaussian"
    PARETO = "pareto"
    EXPONENTIAL = "exponential"


# families whose tail limit needs a tau-dependent rescaling of the argument
_SCALED = {Family.GAUSSIAN, Family.PARETO}
# families supported on z >= 0 only
_HALF_LINE = {Family.PARETO, Family.EXPONENTIAL}


@dataclass(frozen=True)
class LinkSpec:
    """A link family.  ``gamma`` is the Pareto tail index and is only set for Pareto.

    Pareto is the Lomax form ``F(z) = 1 - (1 + z)**-gamma`` on ``z >= 0``;
    Exponential is the unit-rate ``F(z) = 1 - exp(-z)`` on ``z >= 0``.
    """

    family: Family
    gamma: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        if self.family is Family.PARETO:
            if self.gamma is None or not self.gamma > 1:
                raise UsageError(f"Pareto link requires gamma > 1, got {self.gamma!r}")
            object.__setattr__(self, "gamma", float(self.gamma))
        elif self.gamma is not None:
            raise UsageError(f"gamma is only meaningful for the Pareto family, not {self.family.value}")

    @classmethod
    def logistic(cls) -> "LinkSpec":
        return cls(Family.LOGISTIC)

    @classmethod
    def gaussian(cls) -> "LinkSpec":
        return cls(Family.GAUSSIAN)

    @classmethod
    def pareto(cls, gamma: float) -> "LinkSpec":
        return cls(Family.PARETO, gamma)

    @classmethod
    def exponential(cls) -> "LinkSpec":
        return cls(Family.EXPONENTIAL)

    @classmethod
    def parse(cls, text: str) -> "LinkSpec":
        """Parse ``"logistic"``, ``"gaussian"``, ``"exponential"`` or ``"pareto:<gamma>"``."""
        name, _, arg = text.strip().lower().partition(":")
        try:
            family = Family(name)
        except ValueError:
            raise UsageError(f"unknown link family {text!r}") from None
        if family is Family.PARETO:
            if not arg:
                raise UsageError("pareto link needs a tail index, e.g. pareto:2")
            try:
                return cls(family, float(arg))
            except ValueError:
                raise UsageError(f"bad pareto tail index {arg!r}") from None
        if arg:
            raise UsageError(f"link {name!r} takes no parameter")
        return cls(family)

    def __str__(self):
        if self.family is Family.PARETO:
            return f"pareto:{self.gamma:g}"
        return self.family.value

    @property
    def scaled(self) -> bool:
        """True when the tail limit needs the rescaled argument ``tau + r(tau) * u``."""
        return self.family in _SCALED


def _prep(link: LinkSpec, z):
    z = np.asarray(z, dtype=float)
    if link.family in _HALF_LINE and np.any(z < 0):
        raise DomainError(f"{link} link is supported on z >= 0 only; got min z = {float(np.min(z)):g}")
    return z


def cdf(link: LinkSpec, z):
    z = _prep(link, z)
    fam = link.family
    if fam is Family.LOGISTIC:
        out = special.expit(z)
    elif fam is Family.GAUSSIAN:
        out = special.ndtr(z)
    elif fam is Family.PARETO:
        out = -np.expm1(-link.gamma * np.log1p(z))
    else:
        out = -np.expm1(-z)
    return out[()]


def sf(link: LinkSpec, z):
    """Survival function ``1 - F(z)``, accurate far into the upper tail."""
    z = _prep(link, z)
    fam = link.family
    if fam is Family.LOGISTIC:
        out = special.expit(-z)
    elif fam is Family.GAUSSIAN:
        out = special.ndtr(-z)
    elif fam is Family.PARETO:
        out = np.exp(-link.gamma * np.log1p(z))
    else:
        out = np.exp(-z)
    return out[()]


def log_cdf(link: LinkSpec, z):
    z = _prep(link, z)
    fam = link.family
    with np.errstate(divide="ignore"):
        if fam is Family.LOGISTIC:
            out = -np.logaddexp(0.0, -z)
        elif fam is Family.GAUSSIAN:
            out = special.log_ndtr(z)
        elif fam is Family.PARETO:
            out = np.log(-np.expm1(-link.gamma * np.log1p(z)))
        else:
            out = np.log(-np.expm1(-z))
    return out[()]


def log_sf(link: LinkSpec, z):
    z = _prep(link, z)
    fam = link.family
    if fam is Family.LOGISTIC:
        out = -np.logaddexp(0.0, z)
    elif fam is Family.GAUSSIAN:
        out = special.log_ndtr(-z)
    elif fam is Family.PARETO:
        out = -link.gamma * np.log1p(z)
    else:
        out = -z
    return out[()]


def log_pdf(link: LinkSpec, z):
    """``log F'(z)``."""
    z = _prep(link, z)
    fam = link.family
    if fam is Family.LOGISTIC:
        out = -np.logaddexp(0.0, -z) - np.logaddexp(0.0, z)
    elif fam is Family.GAUSSIAN:
        out = -0.5 * z * z - _LOG_SQRT_2PI
    elif fam is Family.PARETO:
        out = math.log(link.gamma) - (link.gamma + 1.0) * np.log1p(z)
    else:
        out = -z
    return out[()]


def pdf_slope(link: LinkSpec, z):
    """``F''(z) / F'(z)``, the derivative of ``log F'``."""
    z = _prep(link, z)
    fam = link.family
    if fam is Family.LOGISTIC:
        out = special.expit(-z) - special.expit(z)
    elif fam is Family.GAUSSIAN:
        out = -z
    elif fam is Family.PARETO:
        out = -(link.gamma + 1.0) / (1.0 + z)
    else:
        out = -np.ones_like(z)
    return out[()]


def derivatives(link: LinkSpec, z, order: int):
    """Closed-form ``F^(order)(z)`` for ``order`` in 1..3."""
    if order not in (1, 2, 3):
        raise UsageError(f"derivative order must be 1, 2 or 3, got {order!r}")
    z = _prep(link, z)
    fam = link.family
    if fam is Family.LOGISTIC:
        p, q = special.expit(z), special.expit(-z)
        d1 = p * q
        out = (d1, d1 * (q - p), d1 * (1.0 - 6.0 * d1))[order - 1]
    elif fam is Family.GAUSSIAN:
        phi = np.exp(-0.5 * z * z - _LOG_SQRT_2PI)
        out = (phi, -z * phi, (z * z - 1.0) * phi)[order - 1]
    elif fam is Family.PARETO:
        g = link.gamma
        coef = (g, -g * (g + 1.0), g * (g + 1.0) * (g + 2.0))[order - 1]
        out = coef * np.exp(-(g + order) * np.log1p(z))
    else:
        out = (-1.0) ** (order - 1) * np.exp(-z)
    return out[()]


def tail_limit(link: LinkSpec, u, order: int = 0):
    """Tail-limit function of the normalised survival ratio and its derivatives.

    For unscaled families this is ``h(u) = lim (1 - F(tau + u)) / (1 - F(tau))``;
    for scaled families it is ``g(u) = lim (1 - F(tau + r(tau) u)) / (1 - F(tau))``.
    Logistic, exponential and Gaussian all give ``exp(-u)``; Pareto gives
    ``(1 + u)**-gamma``.
    """
    if order not in (0, 1, 2, 3):
        raise UsageError(f"tail-limit order must be in 0..3, got {order!r}")
    u = np.asarray(u, dtype=float)
    if link.family is Family.PARETO:
        if np.any(u <= -1.0):
            raise DomainError("Pareto tail limit requires u > -1")
        g = link.gamma
        coef = 1.0
        for k in range(order):
            coef *= -(g + k)
        out = coef * np.exp(-(g + order) * np.log1p(u))
    else:
        out = (-1.0) ** order * np.exp(-u)
    return out[()]


def scaling(link: LinkSpec, tau: float) -> float:
    """Argument scaling ``r(tau)``: 1 for unscaled families, ``1/tau`` Gaussian, ``tau`` Pareto."""
    if link.family is Family.GAUSSIAN:
        if tau <= 0:
            raise DomainError("Gaussian scaling r(tau) = 1/tau needs tau > 0")
        return 1.0 / tau
    if link.family is Family.PARETO:
        if tau <= 0:
            raise DomainError("Pareto scaling r(tau) = tau needs tau > 0")
        return float(tau)
    return 1.0


def _check_alpha(alpha):
    alpha = np.asarray(alpha, dtype=float)
    if np.any(~(alpha > 0)) or np.any(alpha > 1):
        raise UsageError(f"downsampling rate must lie in (0, 1], got {alpha}")
    return alpha


def downsample_transform(F_val, alpha):
    """Map a full-sample ``F`` to its downsample counterpart ``G = aF / (1 - (1-a)F)``.

    ``G`` is the probability of a retained negative after keeping every
    positive and each negative with probability ``alpha``.
    """
    alpha = _check_alpha(alpha)
    F_val = np.asarray(F_val, dtype=float)
    out = alpha * F_val / ((1.0 - F_val) + alpha * F_val)
    return out[()]


def inverse_transform(G_val, alpha):
    """Inverse of :func:`downsample_transform`: ``F = G / (a + (1-a)G)``."""
    alpha = _check_alpha(alpha)
    G_val = np.asarray(G_val, dtype=float)
    out = G_val / (alpha + (1.0 - alpha) * G_val)
    return out[()]


def log_downsample_pair(log_F, log_S, alpha):
    """``(log G, log(1 - G))`` from ``log F`` and ``log(1 - F)``.

    Uses ``1 - (1-a)F = S + aF`` so nothing cancels when ``F`` is close to one.
    Also returns ``log(S + aF)`` as a third element since callers need it.
    """
    log_alpha = math.log(alpha)
    log_norm = np.logaddexp(log_S, log_alpha + log_F)
    return log_alpha + log_F - log_norm, log_S - log_norm, log_norm
