"""Classical and probabilistic Euler methods.

The probabilistic step treats ``y_n`` and ``f(t_n, y_n)`` as noisy
observations of the solution and its derivative at ``t_n`` (noise
``eps_n^2`` and ``(df_i/dy_i)^2 eps_n^2``), conditions a first-order
Taylor-kernel GP on them and reads off a Gaussian for ``y(t_n + h)``.
Each coordinate is handled on its own.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from . import kernels
from .errors import NonFinite, StepError
from .estimate import sigma_ml_noisy_n1
from .kernels import KernelSpec


@dataclass(frozen=True)
class ODEProblem:
    """``y' = f(t, y)`` on ``[0, T]`` with ``y(0) = y0``."""

    f: Callable
    T: float
    y0: tuple
    name: str = "ode"

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError("T must be positive")
        object.__setattr__(self, "y0", tuple(float(v) for v in np.atleast_1d(self.y0)))

    @property
    def dim(self) -> int:
        return len(self.y0)

    def rhs(self, t: float, y) -> np.ndarray:
        out = self.f(t, y)
        if ad.is_dual(out):
            return np.asarray(list(out), dtype=object)
        out = np.atleast_1d(np.asarray(out, dtype=float))
        if not np.all(np.isfinite(out)):
            raise NonFinite(f"f returned {out} at t = {t}")
        return out

    def rhs_and_diag_jacobian(self, t: float, y) -> tuple[np.ndarray, np.ndarray]:
        vals, J = ad.value_and_jacobian(lambda z: self.rhs(t, z), y)
        if not (np.all(np.isfinite(vals)) and np.all(np.isfinite(J))):
            raise NonFinite(f"f or its Jacobian is not finite at t = {t}")
        return vals, np.diag(J).copy()


@dataclass(frozen=True)
class EulerState:
    """Solver state at ``t``.

    ``sigma2``, ``a`` and ``b`` are the per-coordinate quantities of the
    step that produced this state; the initial state carries NaN, 1 and 1.
    """

    t: float
    y: np.ndarray
    eps2: np.ndarray
    sigma2: np.ndarray
    a: np.ndarray
    b: np.ndarray

    @classmethod
    def initial(cls, y0) -> "EulerState":
        y0 = np.atleast_1d(np.asarray(y0, dtype=float))
        d = y0.size
        return cls(0.0, y0, np.zeros(d), np.full(d, np.nan), np.ones(d), np.ones(d))

    @property
    def eps(self) -> np.ndarray:
        return np.sqrt(self.eps2)


@dataclass(frozen=True)
class SolverConfig:
    N: int
    kernel: KernelSpec = field(default_factory=KernelSpec)
    sigma_min: float = 1e-6
    mode: str = "probabilistic"

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise ValueError(f"N must be a positive integer, got {self.N!r}")
        if not self.sigma_min > 0:
            raise ValueError("sigma_min must be positive")
        if self.mode not in ("classical", "probabilistic"):
            raise ValueError(f"mode must be 'classical' or 'probabilistic', got {self.mode!r}")
        if self.kernel.dim not in (None, 1):
            raise ValueError("the solver kernel must be univariate")
        if not self.kernel.family.inner_product:
            raise ValueError("the solver kernel must be an inner-product family")


def euler_step(problem: ODEProblem, t: float, y, h: float) -> np.ndarray:
    if not h > 0:
        raise ValueError("h must be positive")
    y = np.atleast_1d(np.asarray(y, dtype=float))
    return y + h * problem.rhs(t, y)


def prob_euler_step(problem: ODEProblem, state: EulerState, h: float, config: SolverConfig) -> EulerState:
    """One step of the probabilistic Euler method, coordinate by coordinate."""
    if not h > 0:
        raise ValueError("h must be positive")
    spec = config.kernel
    c0 = kernels.coefficient(spec, (0,))
    c1 = kernels.coefficient(spec, (1,))
    lam = spec.lam_vector(1)[0]
    r_h = kernels.series_tail(spec, h, 1)
    fv, fy = problem.rhs_and_diag_jacobian(state.t, state.y)
    d = state.y.size
    y_new, eps2_new = np.empty(d), np.empty(d)
    s2, av, bv = np.empty(d), np.empty(d), np.empty(d)
    for i in range(d):
        e0 = state.eps2[i]
        e1 = fy[i] ** 2 * e0
        s = sigma_ml_noisy_n1(c0, c1, lam, state.y[i], fv[i], e0, e1, config.sigma_min)
        a = s * c0 / (s * c0 + e0)
        b = s * c1 * lam / (s * c1 * lam + e1)
        y_new[i] = a * state.y[i] + b * h * fv[i]
        eps2_new[i] = s * (c0 * (1.0 - a) + c1 * lam * (1.0 - b) * h * h + r_h)
        s2[i], av[i], bv[i] = s, a, b
    if not (np.all(np.isfinite(y_new)) and np.all(np.isfinite(eps2_new))):
        raise NonFinite(f"non-finite state after step at t = {state.t}")
    return EulerState(state.t + h, y_new, eps2_new, s2, av, bv)


def solve(problem: ODEProblem, config: SolverConfig) -> list[EulerState]:
    """States at ``t_n = n T / N`` for ``n = 0..N``."""
    h = problem.T / config.N
    state = EulerState.initial(problem.y0)
    out = [state]
    for n in range(config.N):
        try:
            if config.mode == "classical":
                y = euler_step(problem, state.t, state.y, h)
                state = replace(state, y=y)
            else:
                state = prob_euler_step(problem, state, h, config)
        except (ArithmeticError, ValueError) as exc:
            raise StepError(n, exc) from exc
        # exact grid times, free of accumulated rounding in t
        state = replace(state, t=(n + 1) * problem.T / config.N)
        out.append(state)
    return out


def times(traj: Sequence[EulerState]) -> np.ndarray:
    return np.array([s.t for s in traj])


def means(traj: Sequence[EulerState]) -> np.ndarray:
    return np.array([s.y for s in traj])


def stds(traj: Sequence[EulerState]) -> np.ndarray:
    return np.array([s.eps for s in traj])


@dataclass(frozen=True)
class ConvergenceTable:
    N: tuple
    h: tuple
    mean_error: tuple
    max_eps: tuple

    def successive_orders(self, which: str = "mean_error") -> np.ndarray:
        """``log2`` ratios between consecutive rows (one per refinement)."""
        e = np.asarray(getattr(self, which))
        h = np.asarray(self.h)
        return np.log(e[:-1] / e[1:]) / np.log(h[:-1] / h[1:])

    def order(self, which: str = "mean_error") -> float:
        """Least-squares slope of ``log(error)`` against ``log(h)``."""
        e = np.asarray(getattr(self, which))
        h = np.asarray(self.h)
        return float(np.polyfit(np.log(h), np.log(e), 1)[0])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["N", "h", "max_mean_error", "max_eps"])
        for row in zip(self.N, self.h, self.mean_error, self.max_eps):
            w.writerow([row[0]] + [fmt(v) for v in row[1:]])
        return buf.getvalue()


def convergence_study(problem: ODEProblem, reference: Callable[[float], np.ndarray], N_list: Sequence[int],
                      config: SolverConfig | None = None) -> ConvergenceTable:
    """Max mean error and max ``eps_n`` over the grid for each ``N``."""
    if len(N_list) < 2:
        raise ValueError("need at least two step counts to estimate an order")
    base = config or SolverConfig(N=1)
    hs, errs, epss = [], [], []
    for N in N_list:
        traj = solve(problem, replace(base, N=int(N)))
        ref = np.array([np.atleast_1d(reference(s.t)) for s in traj])
        hs.append(problem.T / N)
        errs.append(float(np.max(np.abs(means(traj) - ref))))
        epss.append(float(np.max(stds(traj))))
    return ConvergenceTable(tuple(int(n) for n in N_list), tuple(hs), tuple(errs), tuple(epss))


# ---------------------------------------------------------------------------
# reference problems


def logistic(r: float = 3.0, y0: float = 0.1, T: float = 3.0) -> tuple[ODEProblem, Callable]:
    """Logistic growth and its closed-form solution."""
    problem = ODEProblem(lambda t, y: [r * y[0] * (1.0 - y[0])], T, (y0,), "logistic")

    def exact(t):
        e = math.exp(r * t)
        return np.array([y0 * e / (1.0 + y0 * (e - 1.0))])

    return problem, exact


def fitzhugh_nagumo(a: float = 0.2, b: float = 0.2, c: float = 3.0, y0=(-1.0, 1.0), T: float = 20.0) -> ODEProblem:
    def f(t, y):
        return [c * (y[0] - y[0] ** 3 / 3.0 + y[1]), -(y[0] - a + b * y[1]) / c]

    return ODEProblem(f, T, tuple(y0), "fitzhugh-nagumo")


def classical_euler(problem: ODEProblem, N: int) -> np.ndarray:
    """Plain Euler trajectory as an array, without any state bookkeeping."""
    h = problem.T / N
    y = np.array(problem.y0, dtype=float)
    out = np.empty((N + 1, y.size))
    out[0] = y
    for n in range(N):
        y = y + h * np.asarray(problem.f(n * h, y), dtype=float)
        out[n + 1] = y
    return out


def fmt(v: float) -> str:
    return "%.17g" % v


def trajectory_to_csv(traj: Sequence[EulerState], mode: str) -> str:
    d = traj[0].y.size
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t"] + [f"y{i}" for i in range(d)] + [f"eps{i}" for i in range(d)]
               + [f"sigma2_{i}" for i in range(d)] + ["mode"])
    for s in traj:
        w.writerow([fmt(s.t)] + [fmt(v) for v in s.y] + [fmt(v) for v in s.eps]
                   + [fmt(v) for v in s.sigma2] + [mode])
    return buf.getvalue()
