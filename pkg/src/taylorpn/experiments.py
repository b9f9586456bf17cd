"""Experiment runners behind the ``taylor-pn`` command.

Each runner takes an :class:`ExperimentConfig`, writes CSV files into the
output directory and returns their paths. :func:`run` adds a JSON manifest
with the resolved configuration, timings and a SHA-256 of every output.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import filters as F
from . import gp, kernels
from . import odesolve as O
from .errors import TaylorPNError

EXPERIMENTS = ("posterior-demo", "tracking", "logistic", "fitzhugh-nagumo", "convergence")

DEFAULTS = {
    "posterior-demo": {
        "family": "exponential", "sigma2": 1.0, "lambda": 1.0, "a": 0.5,
        "orders": [0, 1, 2, 3], "x_min": -1.5, "x_max": 2.5, "points": 400,
    },
    "tracking": {
        "steps": 50, "q": 0.1, "gamma": 0.05**2, "dt": 1.0, "lambda": 1.0,
        "prior_var": 0.1, "seeds": 1, "filters": list(F.FILTERS),
    },
    "logistic": {"N": 10, "r": 3.0, "y0": 0.1, "T": 3.0, "lambda": 1.0, "sigma_min": 1e-6},
    "fitzhugh-nagumo": {
        "N": [100, 1000], "T": 20.0, "a": 0.2, "b": 0.2, "c": 3.0, "y0": [-1.0, 1.0],
        "lambda": 1.0, "sigma_min": 1e-6, "reference_N": 100000,
    },
    "convergence": {
        "N": [20, 40, 80, 160, 320], "r": 3.0, "y0": 0.1, "T": 3.0, "lambda": 1.0, "sigma_min": 1e-6,
    },
}


class ConfigError(ValueError):
    """Invalid experiment name or override."""


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    seed: int = 0
    out: Path = Path("out")
    overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; choose from {EXPERIMENTS}")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        object.__setattr__(self, "out", Path(self.out))

    def params(self) -> dict:
        """Defaults merged with overrides, each coerced to the default's type."""
        base = dict(DEFAULTS[self.experiment])
        for key, raw in self.overrides.items():
            if key not in base:
                raise ConfigError(f"unknown setting {key!r} for {self.experiment}; known: {sorted(base)}")
            base[key] = _coerce(key, raw, base[key])
        return base


def _coerce(key, raw, default):
    try:
        if isinstance(default, list):
            items = raw if isinstance(raw, list) else [v for v in str(raw).split(",") if v.strip()]
            kind = type(default[0]) if default else str
            return [kind(v.strip()) if isinstance(v, str) else kind(v) for v in items]
        if isinstance(default, bool):
            return str(raw).lower() in ("1", "true", "yes")
        if isinstance(default, int):
            value = float(raw)
            if value != int(value):
                raise ValueError
            return int(value)
        if isinstance(default, float):
            return float(raw)
        return str(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"cannot interpret {raw!r} as a value for {key!r}") from None


def parse_overrides(items) -> dict:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, value = item.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def fmt(v) -> str:
    return "%.17g" % v


def _write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(text)
    return path


def _csv(header, rows) -> str:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(v if isinstance(v, str) else fmt(v) for v in row))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------


def run_posterior_demo(cfg: ExperimentConfig) -> list[Path]:
    p = cfg.params()
    if p["points"] < 2 or not p["x_max"] > p["x_min"]:
        raise ConfigError("need points >= 2 and x_max > x_min")
    spec = kernels.KernelSpec(p["family"], p["sigma2"], p["lambda"])
    a = p["a"]
    xs = np.linspace(p["x_min"], p["x_max"], p["points"])
    derivs = lambda k: 3.0**k * [math.sin, math.cos, lambda z: -math.sin(z), lambda z: -math.cos(z)][k % 4](3.0 * a)
    rows = []
    for n in p["orders"]:
        data = gp.DerivativeData.from_derivatives(lambda alpha: derivs(alpha[0]), [a], n)
        post = gp.condition(spec, None, data)
        for x in xs:
            m, lo, hi = gp.credible_band(post, [x])
            rows.append([str(n), x, m, lo, hi, math.sin(3.0 * x)])
    return [_write(cfg.out / "posterior_demo.csv", _csv(["n", "x", "mean", "lower95", "upper95", "truth"], rows))]


def _tracking_setup(p: dict):
    tcfg = F.TrackingConfig(dt=p["dt"], q=p["q"], gamma=p["gamma"], steps=p["steps"], prior_var=p["prior_var"])
    if p["steps"] < 0 or p["q"] < 0 or p["gamma"] < 0 or not p["prior_var"] > 0:
        raise ConfigError("steps, q, gamma must be non-negative and prior_var positive")
    unknown = set(p["filters"]) - set(F.FILTERS)
    if unknown:
        raise ConfigError(f"unknown filters {sorted(unknown)}")
    return tcfg, F.tracking_model(tcfg)


def run_tracking(cfg: ExperimentConfig) -> list[Path]:
    p = cfg.params()
    if p["seeds"] < 1:
        raise ConfigError("seeds must be at least 1")
    tcfg, model = _tracking_setup(p)
    teks = F.TaylorEKFConfig(lam=p["lambda"])
    written, summary = [], []
    for k in range(p["seeds"]):
        seed = cfg.seed + k
        states, ys = F.simulate(model, tcfg.x0, tcfg.steps, seed)
        init = F.GaussianBelief(np.array(tcfg.x0), tcfg.prior_var * np.eye(4))
        for kind in p["filters"]:
            try:
                trace = F.run_filter(model, kind, ys, init, teks)
            except TaylorPNError as exc:
                raise TaylorPNError(f"seed {seed}, filter {kind}: {exc}") from exc
            written.append(_write(cfg.out / "traces" / f"seed{seed}_{kind}.csv",
                                  F.trace_to_csv(trace, states, tcfg.dt)))
            comp = F.component_rmse(trace, states) if tcfg.steps else np.zeros(4)
            pos = F.position_rmse(trace, states) if tcfg.steps else 0.0
            max_tr = max(float(np.trace(c)) for c in trace.covs())
            fallbacks = sum(bool(d.get("fallback")) for d in trace.diagnostics)
            summary.append([str(seed), kind, pos, *comp, max_tr, str(fallbacks)])
    header = ["seed", "filter", "position_rmse"] + [f"rmse_x{i}" for i in range(4)] + ["max_trace", "fallbacks"]
    written.append(_write(cfg.out / "rmse_summary.csv", _csv(header, summary)))
    agg = []
    for kind in p["filters"]:
        vals = np.array([row[2] for row in summary if row[1] == kind])
        traces = np.array([row[7] for row in summary if row[1] == kind])
        agg.append([kind, float(np.median(vals)), float(np.mean(vals)), str(int(np.sum(traces < 1e6))), str(len(vals))])
    written.append(_write(cfg.out / "rmse_aggregate.csv",
                          _csv(["filter", "median_position_rmse", "mean_position_rmse", "seeds_trace_below_1e6", "seeds"], agg)))
    return written


def _solver_config(p: dict, N: int, mode: str = "probabilistic") -> O.SolverConfig:
    return O.SolverConfig(N, kernels.KernelSpec("exponential", 1.0, p["lambda"]), p["sigma_min"], mode)


def run_ode(cfg: ExperimentConfig) -> list[Path]:
    p = cfg.params()
    written = []
    if cfg.experiment == "logistic":
        problem, exact = O.logistic(p["r"], p["y0"], p["T"])
        for mode in ("probabilistic", "classical"):
            traj = O.solve(problem, _solver_config(p, p["N"], mode))
            written.append(_write(cfg.out / f"logistic_{mode}.csv", O.trajectory_to_csv(traj, mode)))
        grid = [n * p["T"] / p["N"] for n in range(p["N"] + 1)]
        written.append(_write(cfg.out / "logistic_reference.csv",
                              _csv(["t", "y0"], [[t, exact(t)[0]] for t in grid])))
        return written
    problem = O.fitzhugh_nagumo(p["a"], p["b"], p["c"], tuple(p["y0"]), p["T"])
    if len(p["y0"]) != 2:
        raise ConfigError("y0 must have two entries")
    ref_N = p["reference_N"]
    ref = O.classical_euler(problem, ref_N)
    for N in p["N"]:
        for mode in ("probabilistic", "classical"):
            traj = O.solve(problem, _solver_config(p, N, mode))
            written.append(_write(cfg.out / f"fhn_N{N}_{mode}.csv", O.trajectory_to_csv(traj, mode)))
        if ref_N % N:
            raise ConfigError(f"reference_N={ref_N} must be a multiple of N={N}")
        sub = ref[:: ref_N // N]
        rows = [[n * p["T"] / N, *sub[n]] for n in range(N + 1)]
        written.append(_write(cfg.out / f"fhn_N{N}_reference.csv", _csv(["t", "y0", "y1"], rows)))
    return written


BRACKETS = {"mean_error": (0.8, 1.2), "max_eps": (1.8, 2.2)}


def run_convergence(cfg: ExperimentConfig) -> list[Path]:
    p = cfg.params()
    if len(p["N"]) < 2:
        raise ConfigError("convergence needs at least two step counts")
    problem, exact = O.logistic(p["r"], p["y0"], p["T"])
    table = O.convergence_study(problem, exact, p["N"], _solver_config(p, 1))
    written = [_write(cfg.out / "convergence.csv", table.to_csv())]
    rows = []
    for which, (lo, hi) in BRACKETS.items():
        order = table.order(which)
        succ = " ".join(fmt(v) for v in table.successive_orders(which))
        rows.append([which, order, lo, hi, str(int(lo <= order <= hi)), succ])
    written.append(_write(cfg.out / "orders.csv",
                          _csv(["quantity", "order", "bracket_low", "bracket_high", "within", "successive"], rows)))
    return written


RUNNERS = {
    "posterior-demo": run_posterior_demo,
    "tracking": run_tracking,
    "logistic": run_ode,
    "fitzhugh-nagumo": run_ode,
    "convergence": run_convergence,
}


def sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def run(cfg: ExperimentConfig) -> dict:
    """Run an experiment and write ``manifest.json``; returns the manifest."""
    params = cfg.params()
    cfg.out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    files = RUNNERS[cfg.experiment](cfg)
    runtime = time.perf_counter() - start
    manifest = {
        "experiment": cfg.experiment,
        "seed": int(cfg.seed),
        "overrides": dict(cfg.overrides),
        "config": params,
        "version": __version__,
        "runtime_seconds": runtime,
        "outputs": [{"file": str(Path(f).relative_to(cfg.out)), "sha256": sha256(f)} for f in files],
    }
    _write(cfg.out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest
