"""Adaptive quadrature over boxes in up to three dimensions."""

from __future__ import annotations

import warnings

import numpy as np
from scipy import integrate

from .errors import QuadratureFailure, UnsupportedDimension

MAX_DIM = 3


def integrate_box(func, bounds, epsrel=1e-10, epsabs=1e-13):
    """Integrate a vector-valued ``func`` over the box ``bounds`` (d x 2).

    ``func`` is vectorised: it receives an ``(m, d)`` array of nodes and returns
    an ``(m, k)`` array.  Adaptive product Gauss-Kronrod
    (``scipy.integrate.cubature``) subdivides until every component meets the
    tolerance.
    """
    bounds = np.atleast_2d(np.asarray(bounds, dtype=float))
    d = bounds.shape[0]
    if d > MAX_DIM:
        raise UnsupportedDimension(f"quadrature supports d <= {MAX_DIM}, got d = {d}")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = integrate.cubature(func, bounds[:, 0], bounds[:, 1], rule="gk21",
                                 rtol=epsrel, atol=epsabs)
    value = np.asarray(res.estimate, dtype=float)
    if res.status != "converged" or not np.all(np.isfinite(value)):
        raise QuadratureFailure(
            f"adaptive cubature did not converge in {d} dimension(s) "
            f"(status={res.status}, error estimate {np.max(res.error):.3g})"
        )
    return value
