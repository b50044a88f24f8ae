"""Estimation of rare-event binary GLMs from negatively downsampled data.

The model is ``P(Y=1 | x) = 1 - F(tau + theta @ x)`` with a known, large
location ``tau``.  Every positive is kept and each negative survives with
probability ``alpha``; the estimators in :mod:`dsglm.estimators` recover
``theta`` from the downsample and :mod:`dsglm.asymptotics` gives their
limiting covariance and the optimal rate.
"""

from .errors import DsglmError
from .estimators import Estimator, FitResult, fit
from .links import LinkSpec
from .optimize import FitConfig
from .sampling import CovariateLaw, Dataset, SyntheticSpec, downsample, generate

__all__ = [
    "CovariateLaw",
    "Dataset",
    "DsglmError",
    "Estimator",
    "FitConfig",
    "FitResult",
    "LinkSpec",
    "SyntheticSpec",
    "downsample",
    "fit",
    "generate",
]

__version__ = "0.1.0"
