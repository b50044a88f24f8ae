"""Synthetic rare-event data and Bernoulli downsampling of negatives."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Optional, Sequence, Union

import numpy as np

from . import links
from .errors import UsageError
from .links import LinkSpec
from .quadrature import integrate_box

Seed = Union[int, Sequence[int]]


def make_rng(seed: Seed) -> np.random.Generator:
    """A PCG64 generator keyed by an int or a tuple of ints (e.g. ``(master, rep)``)."""
    if isinstance(seed, (int, np.integer)):
        entropy = int(seed)
    else:
        entropy = [int(s) for s in seed]
    return np.random.default_rng(np.random.SeedSequence(entropy))


@dataclass(frozen=True)
class CovariateLaw:
    """A covariate distribution with bounded support.

    ``sampler(rng, n)`` draws an ``(n, d)`` array and ``density(x)`` evaluates
    the density at each row of an ``(m, d)`` array, returning shape ``(m,)`` or
    a scalar; ``bounds`` is the ``(d, 2)`` support box used
    for quadrature.
    """

    name: str
    bounds: np.ndarray
    sampler: Callable[[np.random.Generator, int], np.ndarray] = field(compare=False, repr=False)
    density: Callable[[np.ndarray], Union[float, np.ndarray]] = field(compare=False, repr=False)

    def __post_init__(self):
        b = np.atleast_2d(np.asarray(self.bounds, dtype=float))
        if b.shape[1] != 2 or not np.all(np.isfinite(b)) or np.any(b[:, 1] <= b[:, 0]):
            raise UsageError("covariate law needs finite, non-empty bounds of shape (d, 2)")
        b.setflags(write=False)
        object.__setattr__(self, "bounds", b)

    @property
    def dim(self) -> int:
        return self.bounds.shape[0]

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        X = np.asarray(self.sampler(rng, n), dtype=float).reshape(n, self.dim)
        return X

    @classmethod
    def uniform_cube(cls, dim: int, low: float = 0.0, high: float = 1.0) -> "CovariateLaw":
        if dim < 1:
            raise UsageError("dimension must be >= 1")
        vol = (high - low) ** dim

        def sampler(rng, n):
            return rng.uniform(low, high, size=(n, dim))

        def density(x):
            return 1.0 / vol

        name = "uniform" if (low, high) == (0.0, 1.0) else f"uniform[{low:g},{high:g}]"
        return cls(name, np.tile([low, high], (dim, 1)), sampler, density)


@dataclass(frozen=True)
class Synthetic:
    summary: Mapping[str, Any]


@dataclass(frozen=True)
class Ingested:
    path: str


@dataclass(frozen=True)
class Downsampled:
    alpha: float
    parent_n: int
    parent_n_pos: int


Origin = Union[Synthetic, Ingested, Downsampled, None]


@dataclass(frozen=True, eq=False)
class Dataset:
    """Covariates ``X`` (n x d) and binary labels ``y``.  Arrays are read-only."""

    X: np.ndarray
    y: np.ndarray
    origin: Origin = None

    def __post_init__(self):
        X = np.array(self.X, dtype=float, copy=True)
        if X.ndim == 1:
            X = X[:, None]
        y = np.array(self.y, copy=True).astype(np.int8).ravel()
        if X.ndim != 2 or X.shape[0] != y.shape[0]:
            raise UsageError(f"covariates {X.shape} and labels {y.shape} are not row-aligned")
        if np.any((y != 0) & (y != 1)):
            raise UsageError("labels must be 0 or 1")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def n_pos(self) -> int:
        return int(np.count_nonzero(self.y))

    @property
    def n_neg(self) -> int:
        return self.n - self.n_pos

    @property
    def positive_rate(self) -> float:
        return self.n_pos / self.n if self.n else float("nan")

    @property
    def degenerate(self) -> bool:
        """True when a class is missing, so no downsample objective has a maximiser."""
        return self.n_pos == 0 or self.n_neg == 0

    def subset(self, index, origin: Origin = None) -> "Dataset":
        return Dataset(self.X[index], self.y[index], origin if origin is not None else self.origin)

    def identical(self, other: "Dataset") -> bool:
        return np.array_equal(self.X, other.X) and np.array_equal(self.y, other.y)


@dataclass(frozen=True)
class SyntheticSpec:
    link: LinkSpec
    theta_star: np.ndarray
    tau_n: float
    n: int
    covariate_law: Optional[CovariateLaw] = None
    scaled: bool = False
    seed: Seed = 0

    def __post_init__(self):
        theta = np.atleast_1d(np.asarray(self.theta_star, dtype=float))
        theta.setflags(write=False)
        object.__setattr__(self, "theta_star", theta)
        if self.covariate_law is None:
            object.__setattr__(self, "covariate_law", CovariateLaw.uniform_cube(theta.size))
        if self.covariate_law.dim != theta.size:
            raise UsageError(
                f"theta has {theta.size} entries but the covariate law has dimension {self.covariate_law.dim}"
            )
        if int(self.n) < 1:
            raise UsageError(f"sample size must be >= 1, got {self.n}")
        if not np.isfinite(self.tau_n):
            raise UsageError("tau_n must be finite")

    @property
    def d(self) -> int:
        return self.theta_star.size

    def scale(self) -> float:
        return links.scaling(self.link, self.tau_n) if self.scaled else 1.0

    def summary(self) -> dict:
        return {
            "link": str(self.link),
            "theta_star": self.theta_star.tolist(),
            "tau_n": float(self.tau_n),
            "n": int(self.n),
            "covariates": self.covariate_law.name,
            "scaled": bool(self.scaled),
        }


def generate(spec: SyntheticSpec, seed: Optional[Seed] = None) -> Dataset:
    """Draw ``n`` rows with ``P(Y=1|x) = 1 - F(tau + r * theta @ x)``.

    ``r`` is ``r(tau)`` when ``spec.scaled`` and 1 otherwise.  ``seed``
    overrides ``spec.seed`` (the sweep harness passes per-replication keys).
    """
    rng = make_rng(spec.seed if seed is None else seed)
    n = int(spec.n)
    X = spec.covariate_law.sample(rng, n)
    eta = spec.tau_n + spec.scale() * (X @ spec.theta_star)
    p = links.sf(spec.link, eta)
    y = rng.random(n) < p
    return Dataset(X, y, Synthetic(spec.summary()))


def downsample(data: Dataset, alpha: float, seed: Seed) -> Dataset:
    """Keep every positive row and each negative row independently with probability ``alpha``.

    One uniform ``U`` is drawn per row and a negative survives when ``U <= alpha``.
    Row order is preserved.
    """
    if not (0.0 < alpha <= 1.0):
        raise UsageError(f"downsampling rate must lie in (0, 1], got {alpha!r}")
    rng = make_rng(seed)
    u = rng.random(data.n)
    keep = (data.y == 1) | (u <= alpha)
    origin = Downsampled(float(alpha), data.n, data.n_pos)
    return Dataset(data.X[keep], data.y[keep], origin)


def expected_downsample_size(n: int, p1: float, alpha: float) -> float:
    """Expected rows after downsampling: ``n * (p1 + alpha * (1 - p1))``."""
    return n * (p1 + alpha * (1.0 - p1))


def positive_probability(link: LinkSpec, theta, tau_n: float, law: CovariateLaw, scaled: bool = False,
                         epsrel: float = 1e-10) -> float:
    """Population ``P(Y=1) = E[1 - F(tau + r * theta @ X)]`` by adaptive quadrature."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    r = links.scaling(link, tau_n) if scaled else 1.0

    def f(x):
        return (links.sf(link, tau_n + r * (x @ theta)) * law.density(x))[:, None]

    return float(integrate_box(f, law.bounds, epsrel=epsrel)[0])
