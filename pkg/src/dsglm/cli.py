"""Command-line entry point.

Every flag may also come from a JSON ``--config`` file (keys are flag names
with or without the leading dashes, ``-`` or ``_`` alike).  Explicit flags win
over the file; the seed falls back to ``DSGLM_SEED`` and then to 0.  Errors
print a single ``code=<NAME> message`` line to stderr and exit with 2 (usage),
3 (data) or 4 (numeric failure).
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Optional

import numpy as np

from . import asymptotics, experiments, links, sampling
from .errors import EXIT_DATA, DsglmError, UnsupportedDimension, UsageError
from .estimators import Estimator, fit
from .links import LinkSpec
from .optimize import FitConfig
from .quadrature import MAX_DIM

SEED_ENV = "DSGLM_SEED"


class _Exit(Exception):
    def __init__(self, status: int):
        self.status = status


class _Parser(argparse.ArgumentParser):
    """argparse with one-line ``code=UsageError`` diagnostics."""

    def error(self, message):
        print(f"code=UsageError {self.prog}: {message}", file=sys.stderr)
        raise _Exit(2)

    def exit(self, status=0, message=None):
        if message:
            print(message.rstrip("\n"), file=sys.stderr)
        raise _Exit(status)


# ---------------------------------------------------------------------------
# flag value parsing (shared by the command line and the config file)

def _as_text(value, name):
    if isinstance(value, bool) or value is None:
        raise UsageError(f"--{name}: unexpected value {value!r}")
    return str(value).strip()


def _int(lo: Optional[int] = None):
    def parse(value, name):
        text = _as_text(value, name)
        try:
            out = int(text)
        except ValueError:
            raise UsageError(f"--{name}: expected an integer, got {text!r}") from None
        if lo is not None and out < lo:
            raise UsageError(f"--{name}: must be >= {lo}, got {out}")
        return out
    return parse


def _float(value, name):
    text = _as_text(value, name)
    try:
        out = float(text)
    except ValueError:
        raise UsageError(f"--{name}: expected a number, got {text!r}") from None
    if not math.isfinite(out):
        raise UsageError(f"--{name}: must be finite")
    return out


def _unit_rate(value, name):
    out = _float(value, name)
    if not 0 < out <= 1:
        raise UsageError(f"--{name}: must lie in (0, 1], got {out}")
    return out


def _float_list(value, name):
    items = value if isinstance(value, (list, tuple)) else _as_text(value, name).split(",")
    items = [i for i in items if not (isinstance(i, str) and not i.strip())]
    if not items:
        raise UsageError(f"--{name}: empty list")
    return [_float(i, name) for i in items]


def _tau(value, name):
    if isinstance(value, str) and value.strip().lower() == "auto":
        return "auto"
    return _float(value, name)


def _choice(*options):
    def parse(value, name):
        text = _as_text(value, name).lower()
        if text not in options:
            raise UsageError(f"--{name}: choose from {', '.join(options)}; got {text!r}")
        return text
    return parse


def _estimator_list(value, name):
    items = value if isinstance(value, (list, tuple)) else _as_text(value, name).split(",")
    out = []
    for item in items:
        try:
            out.append(Estimator(str(item).strip().lower()).value)
        except ValueError:
            raise UsageError(f"--{name}: unknown estimator {item!r}") from None
    if not out:
        raise UsageError(f"--{name}: empty list")
    return out


def _link(value, name):
    return str(LinkSpec.parse(_as_text(value, name)))


def _path(value, name):
    return _as_text(value, name)


def _flag(value, name):
    if not isinstance(value, bool):
        raise UsageError(f"--{name}: expected true or false in the config file")
    return value


@dataclass(frozen=True)
class Opt:
    name: str
    parse: Callable[[Any, str], Any]
    default: Any
    help: str
    switch: bool = False

    @property
    def dest(self) -> str:
        return self.name.replace("-", "_")


_SEED = Opt("seed", _int(0), 0, f"master seed (falls back to ${SEED_ENV}, then 0)")
_THREADS = Opt("threads", _int(1), 1, "worker threads; results do not depend on it")
_LINK = Opt("link", _link, "logistic", "logistic, gaussian, exponential or pareto:<gamma>")
_SCALED = Opt("scaled", _flag, False, "multiply the linear predictor by r(tau)", switch=True)
_THETA = Opt("theta", _float_list, [0.5], "coefficients, comma separated (one value is broadcast to --dim)")
_DIM = Opt("dim", _int(1), 1, "covariate dimension")
_DENSITY = Opt("density", _choice("uniform"), "uniform", "covariate law: Uniform[0,1]^dim")
_LABEL = Opt("label", _path, "y", "label column name")
_OUT = Opt("out", _path, None, "output path (default: stdout)")
_FORMAT = Opt("format", _choice("csv", "json"), "csv", "output format")

COMMANDS = {
    "simulate": (
        "Generate a synthetic rare-event dataset as CSV.",
        [
            Opt("n", _int(1), 100000, "number of rows"),
            _DIM, _THETA,
            Opt("tau", _float, 6.0, "location tau_n"),
            _LINK, _SCALED, _SEED,
            Opt("out", _path, None, "CSV path to write (required)"),
        ],
    ),
    "fit": (
        "Fit one estimator to a CSV dataset and print the result as JSON.",
        [
            Opt("data", _path, None, "CSV dataset (required)"),
            _LABEL,
            Opt("tau", _tau, "auto", "location, or 'auto' for log(1/p1 - 1)"),
            Opt("alpha", _unit_rate, 1.0, "rate the negatives were kept at"),
            Opt("estimator", _choice(*(e.value for e in Estimator)), "pseudo", "estimator"),
            Opt("downsample", _flag, False, "downsample the data at --alpha (seeded) before fitting",
                switch=True),
            _SEED, _LINK, _SCALED,
            Opt("density", _choice("uniform"), "uniform", "covariate law for the exact estimator"),
            Opt("dim", _int(1), None, "covariate dimension (checked against the data)"),
            Opt("max-iter", _int(1), 200, "Newton iteration cap"),
            Opt("grad-tol", _float, 1e-8, "gradient infinity-norm tolerance"),
        ],
    ),
    "sweep": (
        "Monte Carlo MSE sweep (synthetic) or repeated-holdout log-loss (real).",
        [
            Opt("mode", _choice("synthetic", "real"), "synthetic", "experiment kind"),
            Opt("alphas", _float_list, None, "downsampling rates, comma separated"),
            Opt("alpha-units", _choice("absolute", "p1"), "absolute",
                "read --alphas as rates or as multiples of P(Y=1)"),
            Opt("reps", _int(1), 500, "replications"),
            Opt("estimators", _estimator_list, None, "estimators, comma separated"),
            _SEED, _THREADS, _OUT, _FORMAT, _LINK,
            Opt("n", _int(1), 100000, "rows per synthetic dataset"),
            _DIM, _THETA,
            Opt("tau", _tau, None, "location (synthetic default 10; real default auto)"),
            _SCALED,
            Opt("data", _path, None, "CSV dataset (real mode)"),
            _LABEL,
            Opt("train-fraction", _float, 0.8, "training share of each holdout split"),
            Opt("standardize", _flag, False, "standardise features with training statistics",
                switch=True),
        ],
    ),
    "optimal-alpha": (
        "Closed-form optimal downsampling rate as JSON.",
        [
            _LINK, _THETA,
            Opt("tau", _float, 10.0, "location tau_n"),
            _DENSITY, _DIM,
            Opt("data", _path, None, "take covariate moments from this CSV instead of --density"),
            _LABEL,
        ],
    ),
    "efficiency": (
        "Efficiency cost (p1 + alpha (1 - p1)) tr(V(alpha)^-1) over a rate grid.",
        [
            _LINK, _THETA,
            Opt("tau", _float, 10.0, "location tau_n"),
            _DENSITY, _DIM,
            Opt("data", _path, None, "take covariate moments from this CSV instead of --density"),
            _LABEL,
            Opt("alphas", _float_list, None, "explicit rate grid (overrides the log grid)"),
            Opt("grid-points", _int(1), 400, "log-grid size"),
            Opt("alpha-min", _unit_rate, None, "log-grid start (default P(Y=1)/100)"),
            Opt("alpha-max", _unit_rate, 1.0, "log-grid end"),
            Opt("p1", _unit_rate, None, "positive rate in the size factor (default population value)"),
            Opt("c0", _float, 1.0, "cost constant"),
            _OUT, _FORMAT,
        ],
    ),
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dsglm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True
    for name, (summary, opts) in COMMANDS.items():
        p = sub.add_parser(name, help=summary, description=summary)
        p.add_argument("--config", metavar="PATH", help="JSON file of flag values (flags win)")
        for o in opts:
            default = "" if o.default is None else f" [default: {o.default}]"
            if o.switch:
                p.add_argument(f"--{o.name}", dest=o.dest, action="store_const", const=True,
                               default=None, help=o.help)
            else:
                p.add_argument(f"--{o.name}", dest=o.dest, default=None, metavar="V",
                               help=o.help + default)
    return parser


def _read_config(path: Optional[str], opts) -> dict:
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path} is not valid JSON: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise UsageError(f"config {path} must hold a JSON object")
    known = {o.dest for o in opts}
    out = {}
    for key, value in doc.items():
        dest = str(key).lstrip("-").replace("-", "_")
        if dest not in known:
            raise UsageError(f"config {path}: unknown key {key!r}")
        out[dest] = value
    return out


def resolve(args: argparse.Namespace, opts) -> dict:
    """Merge flags over the config file over defaults; returns parsed values keyed by dest."""
    config = _read_config(args.config, opts)
    resolved = {}
    for o in opts:
        raw = getattr(args, o.dest)
        if raw is None:
            raw = config.get(o.dest)
        if raw is None and o.dest == "seed":
            raw = os.environ.get(SEED_ENV) or None
        resolved[o.dest] = o.default if raw is None else o.parse(raw, o.name)
    return resolved


# ---------------------------------------------------------------------------
# helpers

def _theta(cfg) -> np.ndarray:
    theta = list(cfg["theta"])
    if len(theta) == 1 and cfg["dim"] > 1:
        theta = theta * cfg["dim"]
    if len(theta) != cfg["dim"]:
        raise UsageError(f"--theta has {len(theta)} entries but --dim is {cfg['dim']}")
    return np.asarray(theta, dtype=float)


def _emit(text: str, out: Optional[str]):
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _dump(doc) -> str:
    return json.dumps(doc, indent=2) + "\n"


def _moment_source(cfg, theta):
    """``(sample, law)`` for the asymptotic routines."""
    if cfg["data"] is not None:
        data = experiments.load_csv(cfg["data"], cfg["label"])
        if data.d != theta.size:
            raise UsageError(f"data has {data.d} features but theta has {theta.size} entries")
        return data.X, None
    return None, sampling.CovariateLaw.uniform_cube(theta.size)


def _echo(cfg) -> dict:
    return {k: v for k, v in cfg.items() if k not in ("threads", "out", "config")}


# ---------------------------------------------------------------------------
# subcommands

def cmd_simulate(cfg) -> int:
    if cfg["out"] is None:
        raise UsageError("--out is required")
    spec = sampling.SyntheticSpec(LinkSpec.parse(cfg["link"]), _theta(cfg), cfg["tau"], cfg["n"],
                                  scaled=cfg["scaled"], seed=cfg["seed"])
    data = sampling.generate(spec)
    experiments.write_dataset_csv(data, cfg["out"])
    doc = {"config": _echo(cfg), "n": data.n, "n_pos": data.n_pos, "positive_rate": data.positive_rate}
    sys.stdout.write(_dump(doc))
    return 0


def cmd_fit(cfg) -> int:
    if cfg["data"] is None:
        raise UsageError("--data is required")
    est = Estimator(cfg["estimator"])
    if est is Estimator.EXACT_MLE and cfg["dim"] is not None and cfg["dim"] > MAX_DIM:
        raise UnsupportedDimension(f"exact MLE supports dimension <= {MAX_DIM}, got {cfg['dim']}")
    data = experiments.load_csv(cfg["data"], cfg["label"])
    if cfg["dim"] is not None and cfg["dim"] != data.d:
        raise UsageError(f"--dim {cfg['dim']} does not match the data's {data.d} features")
    link = LinkSpec.parse(cfg["link"])
    alpha = cfg["alpha"]
    if cfg["downsample"]:
        data = sampling.downsample(data, alpha, (cfg["seed"], 0, 1, 0))
    if cfg["tau"] == "auto":
        p1 = data.positive_rate
        if cfg["downsample"] or alpha < 1:
            # undo the downsampling to estimate the population rate
            p1 = data.n_pos / (data.n_pos + data.n_neg / alpha)
        tau = experiments.tau_from_positive_rate(p1)
    else:
        tau = cfg["tau"]
    scale = links.scaling(link, tau) if cfg["scaled"] else 1.0
    law = sampling.CovariateLaw.uniform_cube(data.d) if est is Estimator.EXACT_MLE else None
    fc = FitConfig(grad_tol=cfg["grad_tol"], max_iter=cfg["max_iter"])
    result = fit(est, data, tau, alpha, link, fc, law=law, scale=scale)
    doc = {"config": _echo(cfg), "tau_n": tau, "n": data.n, "n_pos": data.n_pos, **result.to_dict()}
    sys.stdout.write(_dump(doc))
    return 0


def cmd_sweep(cfg) -> int:
    estimators = cfg["estimators"]
    if cfg["mode"] == "synthetic":
        if cfg["data"] is not None:
            raise UsageError("--data is only used with --mode real")
        tau = 10.0 if cfg["tau"] is None else cfg["tau"]
        if tau == "auto":
            raise UsageError("--tau auto needs --mode real")
        link = LinkSpec.parse(cfg["link"])
        theta = _theta(cfg)
        syn = sampling.SyntheticSpec(link, theta, tau, cfg["n"], scaled=cfg["scaled"])
        alphas = cfg["alphas"] if cfg["alphas"] is not None else [1.0]
        if cfg["alpha_units"] == "p1":
            p1 = sampling.positive_probability(link, theta, tau, syn.covariate_law, scaled=cfg["scaled"])
            alphas = [min(m * p1, 1.0) for m in alphas]
        kw = {} if estimators is None else {"estimators": estimators}
        spec = experiments.SweepSpec(syn, alphas, replications=cfg["reps"], master_seed=cfg["seed"], **kw)
        result = experiments.run_mse_sweep(spec, threads=cfg["threads"])
    else:
        if cfg["data"] is None:
            raise UsageError("--mode real needs --data")
        if cfg["alpha_units"] == "p1" and cfg["alphas"] is not None:
            data = experiments.load_csv(cfg["data"], cfg["label"])
            alphas = [min(m * data.positive_rate, 1.0) for m in cfg["alphas"]]
        else:
            data, alphas = None, cfg["alphas"]
        kw = {} if estimators is None else {"estimators": estimators}
        spec = experiments.RealDataSpec(
            cfg["data"], label_column=cfg["label"], alphas=alphas, replications=cfg["reps"],
            train_fraction=cfg["train_fraction"], tau_rule="auto" if cfg["tau"] is None else cfg["tau"],
            master_seed=cfg["seed"], standardize=cfg["standardize"], link=LinkSpec.parse(cfg["link"]),
            **kw,
        )
        result = experiments.run_real_data(spec, threads=cfg["threads"], data=data)
    if cfg["format"] == "json":
        doc = {"config": _echo(cfg), "spec": result.spec, "cells": [c.as_row() for c in result.cells]}
        text = _dump(doc)
    else:
        text = experiments.summarize(result, "csv")
    _emit(text, cfg["out"])
    return 0


def cmd_optimal_alpha(cfg) -> int:
    theta = _theta(cfg)
    sample, law = _moment_source(cfg, theta)
    report = asymptotics.optimal_alpha(LinkSpec.parse(cfg["link"]), theta, cfg["tau"], sample=sample, law=law)
    doc = {"config": _echo(cfg), **report.to_dict()}
    sys.stdout.write(_dump(doc))
    return 0


def cmd_efficiency(cfg) -> int:
    link = LinkSpec.parse(cfg["link"])
    theta = _theta(cfg)
    sample, law = _moment_source(cfg, theta)
    p1 = cfg["p1"]
    if cfg["alphas"] is not None:
        grid = np.asarray(cfg["alphas"], dtype=float)
    else:
        lo = cfg["alpha_min"]
        if lo is None:
            ref = p1
            if ref is None:
                ref = (float(np.mean(links.sf(link, cfg["tau"] + sample @ theta)))
                       if sample is not None else
                       sampling.positive_probability(link, theta, cfg["tau"], law))
            lo = ref / 100.0
        if not lo < cfg["alpha_max"]:
            raise UsageError("--alpha-min must be below --alpha-max")
        grid = np.geomspace(lo, cfg["alpha_max"], cfg["grid_points"])
    curve = asymptotics.efficiency_cost_curve(link, theta, cfg["tau"], p1, grid, sample=sample,
                                              law=law, c0=cfg["c0"])
    summary = {
        "alpha_star": curve.alpha_star,
        "grid_argmin": curve.grid_argmin,
        "grid_argmin_surrogate": curve.grid_argmin_surrogate,
        "p1": curve.p1,
        "cost_constant_c0": curve.cost_constant_c0,
        "condition_number_kappa": curve.condition_number_kappa,
    }
    if cfg["format"] == "json":
        text = _dump({"config": _echo(cfg), **summary, "curve": list(curve.rows())})
    else:
        lines = ["alpha,cost,surrogate,condition_ok"]
        lines += [f"{r['alpha']!r},{r['cost']!r},{r['surrogate']!r},{str(r['condition_ok']).lower()}"
                  for r in curve.rows()]
        text = "\n".join(lines) + "\n"
    _emit(text, cfg["out"])
    return 0


HANDLERS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "sweep": cmd_sweep,
    "optimal-alpha": cmd_optimal_alpha,
    "efficiency": cmd_efficiency,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = resolve(args, COMMANDS[args.command][1])
        return HANDLERS[args.command](cfg)
    except _Exit as exc:
        return exc.status
    except DsglmError as exc:
        message = " ".join(str(exc).split())
        print(f"code={exc.code} {message}", file=sys.stderr)
        return exc.exit_status
    except OSError as exc:
        print(f"code=IOError {exc.strerror or exc}: {exc.filename}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
