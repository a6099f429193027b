"""Command-line experiment harness.

Every subcommand reads an optional YAML config, applies command-line
overrides, runs the requested analyses per step size and writes
``report.json``, ``bounds.csv`` and ``trajectories/*.csv`` under ``--out``.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import datetime as _dt
import json
import math
import os
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from . import __version__
from .algorithms import ES_FIXED, PBIL_1D, AlgorithmSpec, run_ensemble, trial_rng, update_direction, initial_state
from .certificates import dini_check, es_certificate, pbil_certificate, verify_p1, verify_p4
from .errors import CertificateFailure, ConfigurationError, DomainExitError, InputError
from .flow import (
    StepSchedule,
    closed_form_flow,
    euler_ode_deviation,
    integrate_flow,
    psi_deviation,
)
from .meanfield import (
    default_meanfield,
    es_L_positivity_certificate,
    es_sphere_L_quadrature,
    es_sphere_constants,
    meanfield_mc,
)
from .ranking import WeightScheme
from .rates import (
    ADMISSIBLE,
    INCONCLUSIVE,
    NOT_ADMISSIBLE,
    LocalConfig,
    admissible_alpha,
    anytime_bound,
    hitting_time_bound,
    local_hitting_time_bound,
    local_probabilities,
    rate_report,
)
from .stats import estimate_moments, fourth_moment_lower_bound

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CERT_FAILURE = 2
EXIT_INCONCLUSIVE = 3

PROBLEMS = (PBIL_1D, ES_FIXED)
ANALYSES = ("meanfield", "flow", "certify", "rate", "hitting", "deviation", "stats")
SUBCOMMAND_ANALYSIS = {
    "meanfield": "meanfield",
    "flow": "flow",
    "certify": "certify",
    "rate": "rate",
    "hitting-time": "hitting",
    "deviation": "deviation",
    "stats": "stats",
}

# nested sections and their allowed keys with defaults
SECTIONS = {
    "hitting": {"eps": 0.05, "delta": 0.1, "n_trials": None},
    "local": {"zeta": None, "k": 50},
    "deviation": {"N": 100, "n_trials": 500},
    "meanfield": {"n_samples": 100_000},
    "es": {"n_samples": 200_000},
    "flow": {"T": 5.0, "dt": 1e-3},
    "stats": {"n_samples": 100_000},
}


@dataclass
class ExperimentConfig:
    problem: str = PBIL_1D
    weights: tuple = (1.0, 0.0)
    alpha: tuple = (0.05,)
    theta0: tuple = (0.5,)
    dim: int = 1
    n_iters: int = 2000
    n_trials: int = 500
    master_seed: int = 0
    analyses: tuple = ("rate",)
    output_dir: str = "out"
    n_max: Optional[int] = None
    export_trajectories: int = 10
    jobs: int = 1
    hitting: dict = field(default_factory=dict)
    local: dict = field(default_factory=dict)
    deviation: dict = field(default_factory=dict)
    meanfield: dict = field(default_factory=dict)
    es: dict = field(default_factory=dict)
    flow: dict = field(default_factory=dict)
    stats: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.problem not in PROBLEMS:
            raise ConfigurationError(f"problem must be one of {PROBLEMS}, got {self.problem!r}")
        self.weights = tuple(float(w) for w in _as_list(self.weights))
        self.alpha = tuple(float(a) for a in _as_list(self.alpha))
        self.theta0 = tuple(float(t) for t in _as_list(self.theta0))
        self.analyses = tuple(_as_list(self.analyses))
        if not self.alpha or any(not a > 0 for a in self.alpha):
            raise ConfigurationError("alpha values must be positive")
        if self.n_trials < 1:
            raise ConfigurationError("n_trials must be at least 1")
        if self.n_iters < 0:
            raise ConfigurationError("n_iters must be nonnegative")
        bad = [a for a in self.analyses if a not in ANALYSES]
        if bad:
            raise ConfigurationError(f"unknown analyses {bad}; choose from {ANALYSES}")
        for name, defaults in SECTIONS.items():
            given = dict(getattr(self, name) or {})
            unknown = set(given) - set(defaults)
            if unknown:
                raise ConfigurationError(f"unknown keys in section {name!r}: {sorted(unknown)}")
            setattr(self, name, {**defaults, **given})
        if self.problem == PBIL_1D and self.dim != 1:
            raise ConfigurationError("pbil-1d has dim 1")

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for k in ("weights", "alpha", "theta0", "analyses"):
            d[k] = list(d[k])
        return d


def _as_list(x):
    if isinstance(x, (list, tuple)):
        return list(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    return [x]


def load_config(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ConfigurationError("config must be a mapping")
    return data


# --------------------------------------------------------------- utilities

def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to ``None``."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else None
    return obj


def _fmt(x) -> str:
    return "nan" if x is None else f"{float(x):.17g}"


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


@dataclass
class EmpiricalRate:
    slope: float
    ci_low: float
    ci_high: float
    start: int
    stop: int
    truncated: bool


def estimate_empirical_rate(psi_series, n_boot: int = 1000, seed: int = 0) -> EmpiricalRate:
    """Least-squares slope of ``ln(mean Psi)`` over the second half of the horizon.

    The interval is a percentile bootstrap over trials. Points after the last
    strictly positive mean are dropped (``truncated`` is then set).
    """
    P = np.atleast_2d(np.asarray(psi_series, dtype=float))
    if P.shape[1] < 2:
        raise InputError("need at least two time points")
    mean = P.mean(axis=0)
    ok = (mean > 0) & np.isfinite(mean)
    if not ok[0]:
        raise InputError("mean psi must be positive at the start")
    stop = P.shape[1] if ok.all() else int(np.argmin(ok))
    truncated = stop < P.shape[1]
    start = P.shape[1] // 2
    if stop - start < 2:
        start = max(0, stop - 2) if truncated else start
    if stop - start < 2:
        raise InputError("fewer than two usable time points after burn-in")
    n = np.arange(start, stop, dtype=float)

    def slopes(means):
        y = np.log(means)
        xc = n - n.mean()
        return (y - y.mean(axis=-1, keepdims=True)) @ xc / (xc @ xc)

    slope = float(slopes(mean[start:stop]))
    rng = trial_rng(seed, 1 << 20)
    T = P.shape[0]
    counts = rng.multinomial(T, np.full(T, 1.0 / T), size=n_boot).astype(float)
    with np.errstate(divide="ignore"):
        boot = slopes((counts @ P[:, start:stop]) / T)
    boot = boot[np.isfinite(boot)]
    lo, hi = (np.percentile(boot, [2.5, 97.5]) if len(boot) else (math.nan, math.nan))
    return EmpiricalRate(slope, float(lo), float(hi), start, stop, truncated)


# ------------------------------------------------------------ experiment

@dataclass
class Report:
    data: dict
    exit_code: int


class _Context:
    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.scheme = WeightScheme(cfg.weights)
        self._cert = None
        self._es_constants = None

    def spec(self, alpha):
        return AlgorithmSpec(self.cfg.problem, self.scheme, alpha, dim=self.cfg.dim)

    def es_constants(self):
        if self._es_constants is None:
            self._es_constants = es_sphere_constants(
                self.cfg.dim, self.scheme, int(self.cfg.es["n_samples"]), self.cfg.master_seed
            )
        return self._es_constants

    def certificate(self):
        if self._cert is None:
            if self.cfg.problem == PBIL_1D:
                if self.scheme.weights != (1.0, 0.0):
                    raise ConfigurationError("the PBIL certificate requires weights (1, 0)")
                self._cert = pbil_certificate()
            else:
                self._cert = es_certificate(self.es_constants())
        return self._cert

    def psi0(self):
        return float(self.certificate().psi(self.cfg.theta0[-1]))


def _meanfield(ctx: _Context, alpha):
    cfg = ctx.cfg
    spec = ctx.spec(alpha)
    est = meanfield_mc(spec, list(cfg.theta0), int(cfg.meanfield["n_samples"]), cfg.master_seed)
    out = {"theta": list(cfg.theta0), "mc_value": est.value, "mc_std_error": est.std_error, "n_samples": est.n_samples}
    if cfg.problem == PBIL_1D and ctx.scheme.weights == (1.0, 0.0):
        out["exact"] = [float(default_meanfield(spec)(cfg.theta0[0]))]
    if cfg.problem == ES_FIXED:
        c = ctx.es_constants()
        out["es_constants"] = c.to_dict()
        out["L_quadrature"] = es_sphere_L_quadrature(cfg.dim, ctx.scheme)
        out["L_positivity_lower_bound"] = es_L_positivity_certificate(cfg.dim, ctx.scheme).bound
        out["exact"] = [-c.L * cfg.theta0[0]]
    return out


def _flow(ctx: _Context, alpha, outdir: Path):
    cfg = ctx.cfg
    cert = ctx.certificate()
    F = lambda th: cert.meanfield(th)  # noqa: E731
    path = integrate_flow(F, cfg.theta0[-1], float(cfg.flow["T"]), float(cfg.flow["dt"]))
    exact = np.asarray(cert.flow(path.times, cfg.theta0[-1]))
    path.to_csv(outdir / "flow.csv")
    return {"T": cfg.flow["T"], "dt": cfg.flow["dt"], "max_abs_error_vs_closed_form": float(np.max(np.abs(path.points[:, 0] - exact)))}


def _certify(ctx: _Context, alpha):
    cert = ctx.certificate()
    if cert.name == PBIL_1D:
        grid = np.linspace(0.01, 0.99, 99)
    else:
        grid = np.geomspace(1e-3, 1e3, 61)
    dini = dini_check(cert.psi, cert.meanfield, grid)
    th = ctx.cfg.theta0[-1]
    return {
        "certificate": cert.to_dict(),
        "dini_grid": {"C_upper": dini.C_upper, "C_lower": dini.C_lower, "heuristic": True, "n_points": len(grid)},
        "p1_max_ratio": verify_p1(cert, th, alpha, 10),
        "p4_max_ratio": verify_p4(cert, th, alpha, 10, seed=ctx.cfg.master_seed),
    }


def _rate(ctx: _Context, alpha, ens, outdir: Path):
    cfg = ctx.cfg
    cert = ctx.certificate()
    ab = admissible_alpha(cert.delta_A1, cert.delta_A2, alpha_hi=1.0)
    rep = rate_report(cert, alpha, cfg.n_max, ab.alpha_bar)
    out = {"rate": rep.to_dict(), "alpha_bar": dataclasses.asdict(ab)}
    out["alpha_certified_by_alpha_bar"] = alpha <= ab.alpha_bar
    n = np.arange(cfg.n_iters + 1)
    psi = ens.psi
    mean = psi.mean(axis=0)
    q05, q95 = np.quantile(psi, [0.05, 0.95], axis=0)
    bound = None
    if rep.status == ADMISSIBLE:
        bound = anytime_bound(rep.gamma, rep.gamma_bar, rep.n_star, ctx.psi0(), n)
        out["anytime_dominates"] = bool(np.all(mean <= bound))
        out["anytime_min_slack"] = float(np.min(bound - mean))
    rows = [
        [str(i), _fmt(None if bound is None else bound[i]), _fmt(mean[i]), _fmt(q05[i]), _fmt(q95[i])]
        for i in n
    ]
    _write_csv(outdir / "bounds.csv", ["n", "bound", "empirical_mean_psi", "empirical_q05", "empirical_q95"], rows)
    if cfg.n_iters >= 3:
        er = estimate_empirical_rate(psi, seed=cfg.master_seed)
        out["empirical_rate"] = dataclasses.asdict(er)
        lo_ok = rep.gamma_lower is not None and math.log(rep.gamma_lower) <= er.slope
        up_ok = rep.status == ADMISSIBLE and er.slope <= math.log(rep.gamma)
        out["sandwich"] = {
            "lower_holds": lo_ok,
            "upper_holds": up_ok,
            "lower_slack": None if rep.gamma_lower is None else er.slope - math.log(rep.gamma_lower),
            "upper_slack": math.log(rep.gamma) - er.slope,
        }
    return out, rep.status


def _hitting(ctx: _Context, alpha):
    cfg = ctx.cfg
    cert = ctx.certificate()
    h = cfg.hitting
    eps, delta = float(h["eps"]), float(h["delta"])
    trials = int(h["n_trials"] or cfg.n_trials)
    rep = rate_report(cert, alpha, cfg.n_max)
    out = {"eps": eps, "delta": delta, "C": cert.distance_constant, "n_trials": trials, "status": rep.status}
    if rep.status != ADMISSIBLE:
        out["tau_bar"] = None
        return out, rep.status
    psi0 = ctx.psi0()
    tau_bar = hitting_time_bound(eps, delta, cert.distance_constant, rep.gamma, rep.gamma_bar, rep.n_star, psi0)
    out["tau_bar"] = tau_bar
    ens = run_ensemble(ctx.spec(alpha), list(cfg.theta0), tau_bar, trials, cfg.master_seed, hit_eps=eps, jobs=cfg.jobs)
    tau = np.where(ens.first_hit >= 0, ens.first_hit + 1, np.iinfo(np.int64).max)
    out["empirical_fraction_within_tau_bar"] = float(np.mean(tau <= tau_bar))
    hit = tau[tau <= tau_bar]
    out["empirical_tau_quantiles"] = (
        {str(q): float(np.quantile(hit, q)) for q in (0.1, 0.5, 0.9)} if len(hit) else None
    )
    if cfg.local.get("zeta"):
        loc = LocalConfig(float(cfg.local["zeta"]), psi0)
        pr = local_probabilities(rep.gamma, rep.n_star, loc, int(cfg.local["k"]))
        out["local"] = dataclasses.asdict(pr)
        if pr.pr_omega_inf > 0:
            out["local"]["tau_bar_local"] = local_hitting_time_bound(
                eps, delta, cert.distance_constant, rep.gamma, rep.gamma_bar, rep.n_star, psi0, pr.pr_omega_inf
            )
    return out, rep.status


def _deviation(ctx: _Context, alpha):
    cfg = ctx.cfg
    cert = ctx.certificate()
    N = int(cfg.deviation["N"])
    trials = int(cfg.deviation["n_trials"])
    spec = ctx.spec(alpha)
    out = {"N": N, "n_trials": trials}
    if cfg.problem == PBIL_1D:
        e = euler_ode_deviation(spec, list(cfg.theta0), StepSchedule.constant(alpha, N), N, trials, cfg.master_seed, jobs=cfg.jobs)
        out["euler"] = {"empirical": e.empirical, "bound": e.bound, "holds": e.holds}
    p = psi_deviation(spec, cert, list(cfg.theta0), alpha, N, trials, cfg.master_seed, jobs=cfg.jobs)
    out["psi"] = {"empirical": p.empirical, "bound": p.bound, "holds": p.holds}
    return out


def _stats(ctx: _Context, alpha):
    cfg = ctx.cfg
    spec = ctx.spec(alpha)
    n = int(cfg.stats["n_samples"])
    g = trial_rng(cfg.master_seed, 0)
    from .algorithms import _draw, _noise_shape

    state = initial_state(spec, list(cfg.theta0))
    y = update_direction(spec, state, _draw(g, spec, (n,) + _noise_shape(spec)))[:, -1]
    m = estimate_moments(y)
    half = n // 2
    return {
        "quantity": "last component of F_n at theta0",
        "moments": dataclasses.asdict(m),
        "fourth_moment_bound": fourth_moment_lower_bound(m),
        "mc_abs_difference": float(np.mean(np.abs(y[:half] - y[half : 2 * half]))),
    }


def _write_trajectories(ens, cfg: ExperimentConfig, outdir: Path):
    tdir = outdir / "trajectories"
    tdir.mkdir(parents=True, exist_ok=True)
    count = min(int(cfg.export_trajectories), ens.n_trials)
    p = ens.states.shape[2]
    header = ["iter"] + [f"component_{j}" for j in range(p)] + ["psi"]
    for i in range(count):
        rows = [
            [str(k)] + [_fmt(x) for x in ens.states[i, k]] + [_fmt(ens.psi[i, k])]
            for k in range(ens.states.shape[1])
        ]
        _write_csv(tdir / f"trial_{i:05d}.csv", header, rows)


def run_experiment(cfg: ExperimentConfig) -> Report:
    """Run every requested analysis for each step size and write the outputs."""
    ctx = _Context(cfg)
    root = Path(cfg.output_dir)
    root.mkdir(parents=True, exist_ok=True)
    results = []
    statuses = []
    cert_dict = None
    errors = []
    for alpha in cfg.alpha:
        outdir = root if len(cfg.alpha) == 1 else root / f"alpha_{alpha:.17g}"
        outdir.mkdir(parents=True, exist_ok=True)
        res = {"alpha": alpha}
        try:
            cert = ctx.certificate()
            cert_dict = cert.to_dict()
            spec = ctx.spec(alpha)
            ens = run_ensemble(spec, list(cfg.theta0), cfg.n_iters, cfg.n_trials, cfg.master_seed, psi=cert.psi, jobs=cfg.jobs)
            _write_trajectories(ens, cfg, outdir)
            res["trajectory_length"] = int(ens.states.shape[1])
            if "meanfield" in cfg.analyses:
                res["meanfield"] = _meanfield(ctx, alpha)
            if "flow" in cfg.analyses:
                res["flow"] = _flow(ctx, alpha, outdir)
            if "certify" in cfg.analyses:
                res["certify"] = _certify(ctx, alpha)
            if "rate" in cfg.analyses:
                res["rate"], st = _rate(ctx, alpha, ens, outdir)
                statuses.append(st)
            if "hitting" in cfg.analyses:
                res["hitting"], st = _hitting(ctx, alpha)
                statuses.append(st)
            if "deviation" in cfg.analyses:
                res["deviation"] = _deviation(ctx, alpha)
            if "stats" in cfg.analyses:
                res["stats"] = _stats(ctx, alpha)
        except CertificateFailure as exc:
            res["error"] = {"module": "certificates", "message": str(exc), "alpha": alpha}
            statuses.append(NOT_ADMISSIBLE)
        except (DomainExitError, InputError) as exc:
            res["error"] = {"module": type(exc).__module__, "message": str(exc), "alpha": alpha}
            errors.append(exc)
        results.append(res)
    if errors:
        code, status = EXIT_ERROR, "error"
    elif NOT_ADMISSIBLE in statuses:
        code, status = EXIT_CERT_FAILURE, "certificate_failure"
    elif INCONCLUSIVE in statuses:
        code, status = EXIT_INCONCLUSIVE, "inconclusive"
    else:
        code, status = EXIT_OK, "ok"
    data = {
        "schema_version": 1,
        "config": cfg.to_dict(),
        "problem": cfg.problem,
        "certificate": cert_dict,
        "es_constants": None if ctx._es_constants is None else ctx._es_constants.to_dict(),
        "results": results,
        "status": status,
        "exit_code": code,
    }
    data = _clean(data)
    validate_report(data)
    full = dict(data)
    full["metadata"] = {"timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(), "version": __version__}
    with open(root / "report.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(full, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")
    return Report(full, code)


def load_schema() -> dict:
    return json.loads(resources.files("geoconv").joinpath("report.schema.json").read_text(encoding="utf-8"))


def validate_report(data: dict) -> None:
    import jsonschema

    jsonschema.validate(data, load_schema())


# ------------------------------------------------------------------- CLI

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="geoconv", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="YAML experiment config")
    parser.add_argument("--seed", type=int, help="master seed (overrides config)")
    parser.add_argument("--jobs", type=int, help="worker threads for ensembles")
    parser.add_argument("--out", help="output directory")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("run",) + tuple(SUBCOMMAND_ANALYSIS):
        p = sub.add_parser(name)
        p.add_argument("--problem", choices=PROBLEMS)
        p.add_argument("--alpha", type=float, nargs="+")
        p.add_argument("--theta0", type=float, nargs="+")
        p.add_argument("--weights", type=float, nargs="+")
        p.add_argument("--dim", type=int)
        p.add_argument("--n-iters", type=int)
        p.add_argument("--n-trials", type=int)
        if name == "hitting-time":
            p.add_argument("--eps", type=float)
            p.add_argument("--delta", type=float)
            p.add_argument("--zeta", type=float)
    return parser


def config_from_args(args) -> ExperimentConfig:
    data = load_config(args.config) if args.config else {}
    overrides = {
        "problem": args.problem,
        "alpha": args.alpha,
        "theta0": args.theta0,
        "weights": args.weights,
        "dim": args.dim,
        "n_iters": args.n_iters,
        "n_trials": args.n_trials,
        "master_seed": args.seed,
        "jobs": args.jobs,
        "output_dir": args.out,
    }
    data.update({k: v for k, v in overrides.items() if v is not None})
    if data.get("problem") == ES_FIXED:
        data.setdefault("weights", [0.5, 0.5, 0.0, 0.0])
        data.setdefault("theta0", [1.0])
    if args.command != "run":
        data["analyses"] = [SUBCOMMAND_ANALYSIS[args.command]]
    if args.command == "hitting-time":
        hit = dict(data.get("hitting") or {})
        for key in ("eps", "delta"):
            if getattr(args, key) is not None:
                hit[key] = getattr(args, key)
        data["hitting"] = hit
        if args.zeta is not None:
            data["local"] = {**(data.get("local") or {}), "zeta": args.zeta}
    return ExperimentConfig.from_dict(data)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
        report = run_experiment(cfg)
    except (ConfigurationError, InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    summary = {"status": report.data["status"], "output_dir": os.fspath(cfg.output_dir)}
    for res in report.data["results"]:
        line = {"alpha": res["alpha"]}
        if "rate" in res:
            r = res["rate"]["rate"]
            line.update(gamma=r["gamma"], n_star=r["n_star"], status=r["status"])
        if "error" in res:
            line["error"] = res["error"]["message"]
        summary.setdefault("results", []).append(line)
    print(json.dumps(summary))
    return report.exit_code


if __name__ == "__main__":
    sys.exit(main())
