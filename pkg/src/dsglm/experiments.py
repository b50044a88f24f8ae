"""Monte Carlo and real-data experiment harness.

Randomness is keyed, never sequential: replication ``r`` draws its dataset
from the stream ``(master_seed, r, 0)`` and its ``j``-th downsample from
``(master_seed, r, 1, j)``.  Replications can therefore run on any number of
threads and in any order without changing a single output byte.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from . import links
from .errors import (
    DegenerateSplit,
    DsglmError,
    EmptyFile,
    MissingColumn,
    NonBinaryLabel,
    NonNumericFeature,
    UsageError,
)
from .estimators import Estimator, fit
from .links import LinkSpec
from .optimize import FitConfig
from .sampling import Dataset, Ingested, SyntheticSpec, downsample, generate, make_rng

log = logging.getLogger(__name__)

CSV_FIELDS = ("alpha", "estimator", "metric", "mean", "ci_half_width", "replications", "failures")
Z_95 = 1.96
PROB_CLIP = 1e-12
INVALID_FAILURE_FRACTION = 0.10
MAX_SPLIT_ATTEMPTS = 100
DEFAULT_ALPHA_MULTIPLIERS = (0.5, 1.0, 2.0, 5.0, 10.0, 20.0)


def _same_float(a: float, b: float) -> bool:
    return a == b or (math.isnan(a) and math.isnan(b))


@dataclass(frozen=True, eq=False)
class Cell:
    """One aggregated statistic.

    ``mean`` and ``ci_half_width`` are over the replications that did not
    fail; ``replications`` is the number requested.
    """

    alpha: float
    estimator: str
    metric: str
    mean: float
    ci_half_width: float
    replications: int
    failures: int

    @property
    def invalid(self) -> bool:
        return self.failures > INVALID_FAILURE_FRACTION * self.replications

    def as_row(self) -> dict:
        return {k: getattr(self, k) for k in CSV_FIELDS}

    def __eq__(self, other):
        if not isinstance(other, Cell):
            return NotImplemented
        return (
            _same_float(self.alpha, other.alpha)
            and self.estimator == other.estimator
            and self.metric == other.metric
            and _same_float(self.mean, other.mean)
            and _same_float(self.ci_half_width, other.ci_half_width)
            and self.replications == other.replications
            and self.failures == other.failures
        )


@dataclass(eq=False)
class SweepResult:
    """Aggregated cells plus, for in-process callers, the raw per-replication arrays.

    ``raw`` holds ``losses`` with shape ``(R, n_alpha, n_estimators)`` (NaN
    where a fit failed) and, for synthetic sweeps, ``estimates`` with shape
    ``(R, n_alpha, n_estimators, d)``.  It is not serialised.
    """

    cells: list
    spec: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict, repr=False)

    def __eq__(self, other):
        if not isinstance(other, SweepResult):
            return NotImplemented
        return self.cells == other.cells and self.spec == other.spec

    def cell(self, alpha: float, estimator: str, metric: str) -> Cell:
        for c in self.cells:
            if c.estimator == estimator and c.metric == metric and math.isclose(c.alpha, alpha, rel_tol=1e-12):
                return c
        raise KeyError((alpha, estimator, metric))

    @property
    def invalid_cells(self) -> list:
        return [c for c in self.cells if c.invalid]


def mean_ci(values) -> tuple[float, float, int]:
    """Mean, ``1.96 * sd / sqrt(R)`` and count over the finite entries of ``values``.

    The half-width is 0 with fewer than two finite values.
    """
    v = np.asarray(values, dtype=float)
    v = v[np.isfinite(v)]
    if v.size == 0:
        return math.nan, math.nan, 0
    if v.size == 1:
        return float(v[0]), 0.0, 1
    return float(np.mean(v)), float(Z_95 * np.std(v, ddof=1) / math.sqrt(v.size)), int(v.size)


def aggregate(losses: np.ndarray, alphas, estimators, metric: str) -> list:
    """Cells for each (alpha, estimator) plus paired differences against the pseudo-MLE."""
    R = losses.shape[0]
    names = [Estimator(e).value for e in estimators]
    cells = []
    for j, a in enumerate(alphas):
        for k, name in enumerate(names):
            mean, ci, used = mean_ci(losses[:, j, k])
            cells.append(Cell(float(a), name, metric, mean, ci, R, R - used))
        if Estimator.PSEUDO_MLE.value in names:
            kp = names.index(Estimator.PSEUDO_MLE.value)
            for k, name in enumerate(names):
                if k == kp:
                    continue
                mean, ci, used = mean_ci(losses[:, j, k] - losses[:, j, kp])
                cells.append(Cell(float(a), name, "loss_diff_vs_pseudo", mean, ci, R, R - used))
    return cells


def _map(fn, items, threads: int):
    if threads <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _check_alphas(alphas):
    alphas = [float(a) for a in alphas]
    if not alphas:
        raise UsageError("alpha grid is empty")
    for a in alphas:
        if not 0 < a <= 1:
            raise UsageError(f"downsampling rate must lie in (0, 1], got {a!r}")
    return alphas


def _try_fit(est, data, tau_n, alpha, link, cfg, law, scale):
    try:
        res = fit(est, data, tau_n, alpha, link, cfg, law=law, scale=scale)
    except DsglmError as exc:
        return None, type(exc).__name__
    if not res.converged:
        return None, res.status
    return res.theta_hat, "converged"


# ---------------------------------------------------------------------------
# synthetic sweeps

@dataclass(frozen=True)
class SweepSpec:
    synthetic: SyntheticSpec
    alphas: Sequence[float]
    estimators: Sequence[Estimator] = (Estimator.PSEUDO_MLE, Estimator.INVERSE_WEIGHTING,
                                       Estimator.CONDITIONAL_MLE)
    replications: int = 500
    master_seed: int = 0
    fit_config: Optional[FitConfig] = None

    def __post_init__(self):
        object.__setattr__(self, "alphas", tuple(_check_alphas(self.alphas)))
        ests = tuple(Estimator(e) for e in self.estimators)
        if Estimator.FULL_SAMPLE in ests:
            raise UsageError("the full-sample fit is the alpha = 1 reference, not a sweep estimator")
        object.__setattr__(self, "estimators", ests)
        if int(self.replications) < 1:
            raise UsageError("replications must be >= 1")

    def echo(self) -> dict:
        return {
            "mode": "synthetic",
            **self.synthetic.summary(),
            "alphas": list(self.alphas),
            "estimators": [e.value for e in self.estimators],
            "replications": int(self.replications),
            "master_seed": int(self.master_seed),
        }


def run_mse_sweep(spec: SweepSpec, threads: int = 1) -> SweepResult:
    """Squared error of each estimator at each downsampling rate over seeded replications."""
    syn = spec.synthetic
    theta_star = syn.theta_star
    scale = syn.scale()
    law = syn.covariate_law
    A, K, d = len(spec.alphas), len(spec.estimators), syn.d

    def one(r):
        est_out = np.full((A, K, d), np.nan)
        data = generate(syn, seed=(spec.master_seed, r, 0))
        for j, alpha in enumerate(spec.alphas):
            ds = downsample(data, alpha, (spec.master_seed, r, 1, j))
            for k, est in enumerate(spec.estimators):
                theta, _ = _try_fit(est, ds, syn.tau_n, alpha, syn.link, spec.fit_config, law, scale)
                if theta is not None:
                    est_out[j, k] = theta
        return est_out

    estimates = np.stack(_map(one, range(int(spec.replications)), threads))
    losses = np.sum((estimates - theta_star) ** 2, axis=-1)
    cells = aggregate(losses, spec.alphas, spec.estimators, "mse")
    return SweepResult(cells, spec.echo(), {"losses": losses, "estimates": estimates})


# ---------------------------------------------------------------------------
# CSV datasets

def _parse_float(text):
    try:
        return float(text)
    except ValueError:
        return None


def load_csv(path: Union[str, Path], label_column: str) -> Dataset:
    """Read a header-first CSV into a :class:`Dataset`.

    Every column except ``label_column`` must be numeric and becomes a
    covariate, in file order.  Labels already in {0, 1} are kept; any other
    two-valued label column is mapped minority -> 1.
    """
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if r]
    if not rows:
        raise EmptyFile(f"{path}: file is empty")
    header = [h.strip() for h in rows[0]]
    body = rows[1:]
    if not body:
        raise EmptyFile(f"{path}: no data rows")
    if label_column not in header:
        raise MissingColumn(f"{path}: no column named {label_column!r} (have {', '.join(header)})")
    li = header.index(label_column)
    feature_idx = [i for i in range(len(header)) if i != li]
    for lineno, r in enumerate(body, start=2):
        if len(r) != len(header):
            raise NonNumericFeature(f"{path}:{lineno}: expected {len(header)} fields, got {len(r)}")
    X = np.empty((len(body), len(feature_idx)))
    for jj, i in enumerate(feature_idx):
        for row_no, r in enumerate(body):
            v = _parse_float(r[i])
            if v is None or not math.isfinite(v):
                raise NonNumericFeature(
                    f"{path}: column {header[i]!r} is not numeric (row {row_no + 2}: {r[i]!r})"
                )
            X[row_no, jj] = v
    raw_labels = [r[li].strip() for r in body]
    y = _map_labels(raw_labels, path, label_column)
    return Dataset(X, y, Ingested(str(path)))


def _map_labels(raw, path, label_column):
    numeric = [_parse_float(v) for v in raw]
    if all(v is not None for v in numeric):
        if set(numeric) <= {0.0, 1.0}:
            return np.array(numeric, dtype=np.int8)
        keys = numeric
    else:
        keys = raw
    values = sorted(set(keys))
    if len(values) != 2:
        raise NonBinaryLabel(f"{path}: label column {label_column!r} has {len(values)} distinct values")
    counts = [keys.count(v) for v in values]
    # minority class is the positive case; on a tie the larger value is
    minority = values[0] if counts[0] < counts[1] else values[1]
    return np.array([1 if k == minority else 0 for k in keys], dtype=np.int8)


def write_dataset_csv(data: Dataset, path: Union[str, Path], label_column: str = "y") -> None:
    names = [f"x{j + 1}" for j in range(data.d)] + [label_column]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for x, y in zip(data.X, data.y):
            w.writerow([repr(float(v)) for v in x] + [int(y)])


# ---------------------------------------------------------------------------
# real data

@dataclass(frozen=True)
class RealDataSpec:
    """Repeated-holdout log-loss protocol on a labelled CSV.

    ``tau_rule`` is ``"auto"`` for ``tau = log(1/p1 - 1)`` with ``p1`` the
    dataset's positive rate, or a fixed float.  ``alphas`` defaults to
    multiples of ``p1`` (see :data:`DEFAULT_ALPHA_MULTIPLIERS`) clipped to 1.
    """

    source: str
    label_column: str = "y"
    alphas: Optional[Sequence[float]] = None
    replications: int = 500
    train_fraction: float = 0.8
    tau_rule: Union[str, float] = "auto"
    master_seed: int = 0
    estimators: Sequence[Estimator] = (Estimator.PSEUDO_MLE, Estimator.INVERSE_WEIGHTING)
    standardize: bool = False
    link: LinkSpec = LinkSpec.logistic()

    def __post_init__(self):
        if not 0 < self.train_fraction < 1:
            raise UsageError("train_fraction must lie in (0, 1)")
        if int(self.replications) < 1:
            raise UsageError("replications must be >= 1")
        if self.alphas is not None:
            object.__setattr__(self, "alphas", tuple(_check_alphas(self.alphas)))
        ests = tuple(Estimator(e) for e in self.estimators)
        if Estimator.EXACT_MLE in ests or Estimator.FULL_SAMPLE in ests:
            raise UsageError("real-data runs support pseudo, iw, conditional and naive estimators")
        object.__setattr__(self, "estimators", ests)
        if self.tau_rule != "auto" and not isinstance(self.tau_rule, (int, float)):
            raise UsageError("tau_rule must be 'auto' or a number")


def tau_from_positive_rate(p1: float) -> float:
    """Location with ``1 / (1 + exp(tau)) = p1``."""
    if not 0 < p1 < 1:
        raise UsageError(f"positive rate must lie in (0, 1), got {p1}")
    return math.log(1.0 / p1 - 1.0)


def default_alpha_grid(p1: float) -> tuple:
    out = []
    for m in DEFAULT_ALPHA_MULTIPLIERS:
        a = min(m * p1, 1.0)
        if a not in out:
            out.append(a)
    return tuple(out)


def log_loss(y, p) -> float:
    """Mean binary cross-entropy with probabilities clipped to ``[1e-12, 1 - 1e-12]``."""
    p = np.clip(np.asarray(p, dtype=float), PROB_CLIP, 1.0 - PROB_CLIP)
    y = np.asarray(y, dtype=float)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log1p(-p)))


def split_indices(data: Dataset, train_fraction: float, rng: np.random.Generator):
    """A uniformly random train/test partition with a positive in each part and a negative in train.

    Redrawn up to 100 times before :class:`DegenerateSplit` is raised.
    """
    n = data.n
    n_train = min(max(int(math.floor(train_fraction * n)), 1), n - 1) if n > 1 else 0
    for _ in range(MAX_SPLIT_ATTEMPTS):
        perm = rng.permutation(n)
        train, test = np.sort(perm[:n_train]), np.sort(perm[n_train:])
        ytr, yte = data.y[train], data.y[test]
        if ytr.size and yte.size and ytr.any() and (ytr == 0).any() and yte.any():
            return train, test
    raise DegenerateSplit(
        f"no usable train/test split in {MAX_SPLIT_ATTEMPTS} draws "
        f"(n={n}, positives={data.n_pos})"
    )


def run_real_data(spec: RealDataSpec, threads: int = 1, data: Optional[Dataset] = None) -> SweepResult:
    """Out-of-sample log-loss of each estimator on repeated random holdouts."""
    if data is None:
        data = load_csv(spec.source, spec.label_column)
    if data.n_pos == 0 or data.n_neg == 0:
        raise DegenerateSplit("dataset has a single class")
    p1 = data.positive_rate
    tau_n = tau_from_positive_rate(p1) if spec.tau_rule == "auto" else float(spec.tau_rule)
    alphas = spec.alphas if spec.alphas is not None else default_alpha_grid(p1)
    A, K = len(alphas), len(spec.estimators)

    # split failures are fatal, so resolve every split before fitting anything
    splits = [split_indices(data, spec.train_fraction, make_rng((spec.master_seed, r, 0)))
              for r in range(int(spec.replications))]

    def one(r):
        out = np.full((A, K), np.nan)
        train_idx, test_idx = splits[r]
        Xtr, Xte = data.X[train_idx], data.X[test_idx]
        if spec.standardize:
            mu = Xtr.mean(axis=0)
            sd = Xtr.std(axis=0)
            sd[sd == 0] = 1.0
            Xtr, Xte = (Xtr - mu) / sd, (Xte - mu) / sd
        train = Dataset(Xtr, data.y[train_idx])
        yte = data.y[test_idx]
        for j, alpha in enumerate(alphas):
            ds = downsample(train, alpha, (spec.master_seed, r, 1, j))
            for k, est in enumerate(spec.estimators):
                theta, _ = _try_fit(est, ds, tau_n, alpha, spec.link, None, None, 1.0)
                if theta is not None:
                    out[j, k] = log_loss(yte, links.sf(spec.link, tau_n + Xte @ theta))
        return out

    losses = np.stack(_map(one, range(int(spec.replications)), threads))
    cells = aggregate(losses, alphas, spec.estimators, "logloss")
    echo = {
        "mode": "real",
        "source": str(spec.source),
        "label_column": spec.label_column,
        "n": data.n,
        "n_pos": data.n_pos,
        "p1": p1,
        "tau_n": tau_n,
        "tau_rule": spec.tau_rule,
        "alphas": list(alphas),
        "estimators": [e.value for e in spec.estimators],
        "replications": int(spec.replications),
        "train_fraction": spec.train_fraction,
        "standardize": bool(spec.standardize),
        "link": str(spec.link),
        "master_seed": int(spec.master_seed),
    }
    return SweepResult(cells, echo, {"losses": losses, "tau_n": tau_n, "p1": p1})


# ---------------------------------------------------------------------------
# reports

def summarize(result: SweepResult, format: str = "csv") -> str:
    """Serialise a result: CSV with :data:`CSV_FIELDS`, or JSON with the spec echo."""
    if format == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        for c in result.cells:
            w.writerow([repr(c.alpha), c.estimator, c.metric, repr(c.mean), repr(c.ci_half_width),
                        c.replications, c.failures])
        return buf.getvalue()
    if format == "json":
        doc = {"spec": result.spec, "cells": [c.as_row() for c in result.cells]}
        return json.dumps(doc, indent=2, sort_keys=False) + "\n"
    raise UsageError(f"unknown report format {format!r}")


def parse_summary(text: str, format: str = "csv") -> SweepResult:
    """Inverse of :func:`summarize`."""
    if format == "csv":
        reader = csv.DictReader(io.StringIO(text))
        if tuple(reader.fieldnames or ()) != CSV_FIELDS:
            raise UsageError(f"unexpected CSV header {reader.fieldnames}")
        cells = [
            Cell(float(r["alpha"]), r["estimator"], r["metric"], float(r["mean"]),
                 float(r["ci_half_width"]), int(r["replications"]), int(r["failures"]))
            for r in reader
        ]
        return SweepResult(cells)
    if format == "json":
        doc = json.loads(text)
        cells = [Cell(float(r["alpha"]), r["estimator"], r["metric"], float(r["mean"]),
                      float(r["ci_half_width"]), int(r["replications"]), int(r["failures"]))
                 for r in doc["cells"]]
        return SweepResult(cells, doc.get("spec", {}))
    raise UsageError(f"unknown report format {format!r}")
