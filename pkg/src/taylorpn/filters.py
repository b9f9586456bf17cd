"""Gaussian filters for nonlinear state-space models.

    x_j = Phi(x_{j-1}) + eta,   eta ~ N(0, Lambda)
    y_j = f(x_j) + xi,          xi ~ N(0, Gamma)

Three measurement updates are provided: the extended Kalman filter, the
unscented Kalman filter and the Taylor EKF. The Taylor EKF replaces the
linearised likelihood by one whose variance grows with the posterior
variance of a first-order probabilistic Taylor expansion of each
observation component, then takes a Laplace approximation of the result.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from . import autodiff as ad
from . import gp
from .errors import CholeskyFailure, DegenerateData, IllConditioned, StepError
from .estimate import sigma_ml
from .kernels import Exponential, Family, KernelSpec

Matrix = np.ndarray | Callable[[int], np.ndarray]
_EPS = np.finfo(float).eps


def _at(m: Matrix, j: int) -> np.ndarray:
    return np.asarray(m(j) if callable(m) else m, dtype=float)


# Observation-noise variances are raised to at least this value inside the
# filters. It has no effect at realistic noise levels and keeps the gain
# bounded when the model is declared noise-free and the covariance collapses.
OBS_NOISE_FLOOR = 1e-12


def _obs_noise(model, j: int) -> np.ndarray:
    G = _at(model.obs_noise, j).copy()
    d = np.diag(G)
    G[np.diag_indices_from(G)] = np.maximum(d, OBS_NOISE_FLOOR)
    return G


@dataclass(frozen=True)
class StateSpaceModel:
    """Dynamics, observation function and noise levels.

    Supply either ``transition_matrix`` (linear dynamics, required by the
    Taylor EKF) or a ``transition`` function. Matrices may be callables of
    the step index ``j`` for time-varying models. ``observation`` must be
    built from :mod:`taylorpn.autodiff` primitives so it can be
    differentiated.
    """

    dim_state: int
    dim_obs: int
    observation: Callable
    process_noise: Matrix
    obs_noise: Matrix
    transition_matrix: Matrix | None = None
    transition: Callable | None = None

    def __post_init__(self):
        if (self.transition_matrix is None) == (self.transition is None):
            raise ValueError("give exactly one of transition_matrix and transition")

    @property
    def linear(self) -> bool:
        return self.transition_matrix is not None

    def propagate(self, j: int, x):
        if self.linear:
            return _at(self.transition_matrix, j) @ x
        return self.transition(x)

    def transition_jacobian(self, j: int, x) -> np.ndarray:
        if self.linear:
            return _at(self.transition_matrix, j)
        return ad.jacobian(self.transition, x)

    def observe(self, x):
        out = self.observation(x)
        if ad.is_dual(out):
            return np.asarray(list(out), dtype=object)
        return np.atleast_1d(np.asarray(out, dtype=float))


@dataclass(frozen=True)
class GaussianBelief:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float)).copy()
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if cov.shape != (mean.size, mean.size):
            raise ValueError(f"covariance shape {cov.shape} does not match mean of size {mean.size}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", 0.5 * (cov + cov.T))

    @property
    def dim(self) -> int:
        return self.mean.size


@dataclass
class FilterTrace:
    kind: str
    beliefs: list = field(default_factory=list)
    predicted: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)

    def means(self) -> np.ndarray:
        return np.array([b.mean for b in self.beliefs])

    def covs(self) -> np.ndarray:
        return np.array([b.cov for b in self.beliefs])

    def __len__(self) -> int:
        return len(self.beliefs) - 1


# ---------------------------------------------------------------------------
# EKF


def predict(model: StateSpaceModel, j: int, belief: GaussianBelief) -> GaussianBelief:
    P = model.transition_jacobian(j - 1, belief.mean)
    mean = np.asarray(model.propagate(j - 1, belief.mean), dtype=float)
    return GaussianBelief(mean, P @ belief.cov @ P.T + _at(model.process_noise, j - 1))


def _spd_solve(S: np.ndarray, B: np.ndarray, what: str) -> np.ndarray:
    """Solve ``S X = B``; on failure retry with jitter ``tau I`` doubling from ``1e-12 trace(S)``."""
    try:
        return cho_solve(cho_factor(S, lower=True), B)
    except LinAlgError:
        pass
    tau = 1e-12 * abs(np.trace(S)) or 1e-300
    for _ in range(80):
        try:
            X = cho_solve(cho_factor(S + tau * np.eye(len(S)), lower=True), B)
            if np.all(np.isfinite(X)):
                return X
        except LinAlgError:
            pass
        tau *= 2.0
    raise IllConditioned(f"{what} is not positive definite even after jitter")


def ekf_update(model: StateSpaceModel, j: int, prior: GaussianBelief, y) -> GaussianBelief:
    y = np.atleast_1d(np.asarray(y, dtype=float))
    fx, F = ad.value_and_jacobian(model.observe, prior.mean)
    S = F @ prior.cov @ F.T + _obs_noise(model, j)
    S = 0.5 * (S + S.T)
    K = _spd_solve(S, F @ prior.cov, "innovation covariance").T
    mean = prior.mean + K @ (y - fx)
    # Joseph form: equal to prior.cov - K S K^T, but stays positive semi-definite
    IKF = np.eye(prior.dim) - K @ F
    cov = IKF @ prior.cov @ IKF.T + K @ _obs_noise(model, j) @ K.T
    return GaussianBelief(mean, cov)


def ekf_step(model: StateSpaceModel, j: int, belief: GaussianBelief, y) -> GaussianBelief:
    """One predict and update cycle of the extended Kalman filter."""
    return ekf_update(model, j, predict(model, j, belief), y)


# ---------------------------------------------------------------------------
# UKF


@dataclass(frozen=True)
class UnscentedParams:
    alpha: float = 1.0
    beta: float = 0.0
    kappa: float | None = None  # None -> 3 - d

    def weights(self, d: int) -> tuple[float, np.ndarray, np.ndarray]:
        kappa = 3.0 - d if self.kappa is None else self.kappa
        lam = self.alpha**2 * (d + kappa) - d
        wm = np.full(2 * d + 1, 0.5 / (d + lam))
        wc = wm.copy()
        wm[0] = lam / (d + lam)
        wc[0] = wm[0] + 1.0 - self.alpha**2 + self.beta
        return d + lam, wm, wc


def _matrix_sqrt(S: np.ndarray) -> np.ndarray:
    """Cholesky factor, or the eigenvalue-clipped symmetric root when ``S`` is not PD."""
    S = 0.5 * (S + S.T)
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        pass
    if not np.all(np.isfinite(S)):
        raise CholeskyFailure("covariance has non-finite entries")
    return sqrt_psd(S)


def sigma_points(belief: GaussianBelief, params: UnscentedParams = UnscentedParams()):
    d = belief.dim
    scale, wm, wc = params.weights(d)
    if scale <= 0:
        raise ValueError("unscented scaling d + lambda must be positive")
    L = _matrix_sqrt(scale * belief.cov)
    pts = np.empty((2 * d + 1, d))
    pts[0] = belief.mean
    for i in range(d):
        pts[1 + i] = belief.mean + L[:, i]
        pts[1 + d + i] = belief.mean - L[:, i]
    return pts, wm, wc


def unscented_transform(fn: Callable, belief: GaussianBelief, params: UnscentedParams = UnscentedParams()):
    """Mean, covariance and cross-covariance of ``fn(x)`` for ``x ~ belief``."""
    pts, wm, wc = sigma_points(belief, params)
    ys = np.array([np.atleast_1d(np.asarray(fn(p), dtype=float)) for p in pts])
    mean = wm @ ys
    dy = ys - mean
    dx = pts - belief.mean
    cov = (wc[:, None] * dy).T @ dy
    cross = (wc[:, None] * dx).T @ dy
    return mean, 0.5 * (cov + cov.T), cross


def ukf_step(model: StateSpaceModel, j: int, belief: GaussianBelief, y,
             params: UnscentedParams = UnscentedParams()) -> GaussianBelief:
    """One predict and update cycle of the unscented Kalman filter."""
    if model.linear:
        prior = predict(model, j, belief)
    else:
        m, P, _ = unscented_transform(lambda x: model.propagate(j - 1, x), belief, params)
        prior = GaussianBelief(m, P + _at(model.process_noise, j - 1))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    ym, S, C = unscented_transform(model.observe, prior, params)
    S = S + _obs_noise(model, j)
    try:
        K = _spd_solve(S, C.T, "innovation covariance").T
    except IllConditioned as exc:
        raise CholeskyFailure(str(exc)) from exc
    return GaussianBelief(prior.mean + K @ (y - ym), prior.cov - K @ S @ K.T)


# ---------------------------------------------------------------------------
# optimiser


@dataclass(frozen=True)
class OptimResult:
    x: np.ndarray
    fun: float
    grad: np.ndarray
    nit: int
    converged: bool
    message: str


def _safe_eval(fun_grad, x):
    # trial points far from the optimum may overflow; treat them as rejected
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            return fun_grad(x)
    except (OverflowError, ZeroDivisionError, ValueError):
        return math.inf, np.full(x.size, math.nan)


def minimize_bfgs(fun_grad: Callable[[np.ndarray], tuple[float, np.ndarray]], x0,
                  h0: np.ndarray | None = None, max_iter: int = 200, gtol: float = 1e-8,
                  c1: float = 1e-4, stall: int = 20) -> OptimResult:
    """BFGS with Armijo backtracking.

    ``h0`` is the initial inverse-Hessian approximation (identity by
    default). Stops when ``max|grad| <= gtol``, or unconverged after
    ``stall`` iterations without a new smallest gradient.
    """
    x = np.asarray(x0, dtype=float).copy()
    n = x.size
    H = np.eye(n) if h0 is None else np.array(h0, dtype=float)
    f, g = fun_grad(x)
    if not math.isfinite(f):
        return OptimResult(x, f, g, 0, False, "non-finite objective at start")
    best, since = np.max(np.abs(g)), 0
    for it in range(1, max_iter + 1):
        gmax = np.max(np.abs(g))
        if gmax <= gtol:
            return OptimResult(x, f, g, it - 1, True, "gradient tolerance reached")
        if gmax < best:
            best, since = gmax, 0
        else:
            since += 1
            if since > stall:
                return OptimResult(x, f, g, it - 1, False, "stalled")
        p = -H @ g
        slope = float(g @ p)
        if slope >= 0:
            H = np.eye(n) if h0 is None else np.array(h0, dtype=float)
            p = -H @ g
            slope = float(g @ p)
        t = 1.0
        while True:
            xn = x + t * p
            fn, gn = _safe_eval(fun_grad, xn)
            if math.isfinite(fn) and fn <= f + c1 * t * slope:
                break
            # at roundoff level f stops resolving progress; fall back on the exact gradient
            if (math.isfinite(fn) and fn <= f + 8.0 * _EPS * abs(f)
                    and np.max(np.abs(gn)) < np.max(np.abs(g))):
                break
            if math.isfinite(fn):
                # minimiser of the quadratic through f, slope and fn, safeguarded
                tq = -slope * t * t / (2.0 * (fn - f - slope * t))
                t = min(max(tq, 0.1 * t), 0.5 * t)
            else:
                t *= 0.25
            if t < 1e-16:
                return OptimResult(x, f, g, it, False, "line search failed")
        s, yv = xn - x, gn - g
        sy = float(s @ yv)
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(yv):
            rho = 1.0 / sy
            V = np.eye(n) - rho * np.outer(s, yv)
            H = V @ H @ V.T + rho * np.outer(s, s)
        x, f, g = xn, fn, gn
    conv = np.max(np.abs(g)) <= gtol
    return OptimResult(x, f, g, max_iter, bool(conv), "iteration cap reached")


# ---------------------------------------------------------------------------
# Taylor EKF


@dataclass(frozen=True)
class TaylorEKFConfig:
    family: Family = field(default_factory=Exponential)
    lam: float = 1.0
    max_iter: int = 200
    gtol: float = 1e-8
    # accepted first-order optimality when the line search stalls at roundoff
    accept_rtol: float = 1e-6


def _component_posteriors(model, prior: GaussianBelief, config: TaylorEKFConfig):
    """First-order probabilistic Taylor expansion of each observation component."""
    d = prior.dim
    a = prior.mean
    fx, F = ad.value_and_jacobian(model.observe, a)
    zero = (0,) * d
    posts, degenerate = [], []
    for l in range(fx.size):
        values = {zero: fx[l]}
        for i in range(d):
            values[tuple(1 if k == i else 0 for k in range(d))] = F[l, i]
        data = gp.DerivativeData(tuple(a), 1, values)
        spec = KernelSpec(config.family, 1.0, config.lam)
        try:
            s2 = sigma_ml(spec, None, data)
            degenerate.append(False)
        except DegenerateData:
            s2 = 1.0
            degenerate.append(True)
        posts.append(gp.condition(spec.replace(sigma2=s2), None, data))
    return posts, degenerate


def taylor_ekf_objective(model: StateSpaceModel, j: int, prior: GaussianBelief, y, posts) -> Callable:
    """Negative log of the unnormalised Taylor EKF posterior."""
    P = _spd_solve(prior.cov, np.eye(prior.dim), "predicted covariance")
    P = 0.5 * (P + P.T)
    gam = np.diag(_obs_noise(model, j))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    mu = prior.mean

    def objective(x):
        dx = x - mu
        out = 0.5 * np.dot(dx, np.dot(P, dx))
        for l, post in enumerate(posts):
            v = gam[l] + post.var(x)
            r = y[l] - post.mean(x)
            out = out + 0.5 * r * r / v + 0.5 * ad.log(v)
        return out

    return objective


def _initial_inverse_hessian(objective, prior: GaussianBelief) -> np.ndarray:
    # at the prior mean the widening vanishes, so this is close to the EKF update
    H = ad.hessian(objective, prior.mean)
    try:
        L = np.linalg.cholesky(H)
    except np.linalg.LinAlgError:
        return prior.cov
    Linv = np.linalg.inv(L)
    return Linv.T @ Linv


def taylor_ekf_step(model: StateSpaceModel, j: int, belief: GaussianBelief, y,
                    config: TaylorEKFConfig = TaylorEKFConfig()) -> tuple[GaussianBelief, dict]:
    """Laplace-approximated update with a variance-widened likelihood."""
    if not model.linear:
        raise ValueError("the Taylor EKF needs a linear transition")
    G = _at(model.obs_noise, j)
    if np.any(G - np.diag(np.diag(G))):
        raise ValueError("the Taylor EKF needs a diagonal observation noise matrix")
    prior = predict(model, j, belief)
    posts, degenerate = _component_posteriors(model, prior, config)
    objective = taylor_ekf_objective(model, j, prior, y, posts)
    res = minimize_bfgs(lambda x: ad.value_and_gradient(objective, x), prior.mean,
                        h0=_initial_inverse_hessian(objective, prior), max_iter=config.max_iter,
                        gtol=config.gtol)
    diag = {"iterations": res.nit, "converged": res.converged, "message": res.message,
            "sigma2_degenerate": any(degenerate), "jitter": 0.0, "fallback": False,
            "grad_inf": float(np.max(np.abs(res.grad))), "objective": float(res.fun)}
    if not res.converged and diag["grad_inf"] <= config.accept_rtol * (1.0 + abs(res.fun)):
        diag["converged"] = True
    if not diag["converged"]:
        diag["fallback"] = True
        return ekf_update(model, j, prior, y), diag
    H = ad.hessian(objective, res.x)
    tau = 0.0
    try:
        np.linalg.cholesky(H)
    except np.linalg.LinAlgError:
        tau = 1e-10 * max(abs(np.trace(H)), 1e-300)
        while True:
            try:
                np.linalg.cholesky(H + tau * np.eye(len(H)))
                break
            except np.linalg.LinAlgError:
                tau *= 2.0
                if not math.isfinite(tau):
                    raise CholeskyFailure("Laplace precision could not be regularised")
        H = H + tau * np.eye(len(H))
    diag["jitter"] = tau
    cov = np.linalg.inv(H)
    return GaussianBelief(res.x, cov), diag


# ---------------------------------------------------------------------------
# running


FILTERS = ("ekf", "ukf", "taylor-ekf")


def run_filter(model: StateSpaceModel, kind: str, ys: Sequence, initial: GaussianBelief,
               config: TaylorEKFConfig = TaylorEKFConfig()) -> FilterTrace:
    """Filter the observations ``y_1, ..., y_n`` starting from the belief at step 0."""
    if kind not in FILTERS:
        raise ValueError(f"unknown filter {kind!r}; choose from {FILTERS}")
    trace = FilterTrace(kind, [initial])
    belief = initial
    for j, y in enumerate(ys, start=1):
        try:
            if kind == "taylor-ekf":
                trace.predicted.append(predict(model, j, belief))
                belief, diag = taylor_ekf_step(model, j, belief, y, config)
            else:
                prior = predict(model, j, belief)
                trace.predicted.append(prior)
                belief = ekf_update(model, j, prior, y) if kind == "ekf" else ukf_step(model, j, belief, y)
                diag = {"converged": True}
        except StepError:
            raise
        except (ArithmeticError, ValueError, LinAlgError) as exc:
            raise StepError(j, exc) from exc
        if not (np.all(np.isfinite(belief.mean)) and np.all(np.isfinite(belief.cov))):
            raise StepError(j, IllConditioned("non-finite belief"))
        trace.beliefs.append(belief)
        trace.diagnostics.append(diag)
    return trace


def sqrt_psd(M: np.ndarray) -> np.ndarray:
    """Symmetric square root of a positive semi-definite matrix via eigh."""
    w, V = np.linalg.eigh(0.5 * (M + M.T))
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


def simulate(model: StateSpaceModel, x0, steps: int, rng_seed: int) -> tuple[np.ndarray, np.ndarray]:
    """States ``x_0..x_n`` and observations ``y_1..y_n``.

    Gaussian draws use numpy's PCG64 ``standard_normal`` mapped through the
    symmetric square root of each covariance.
    """
    rng = np.random.default_rng(rng_seed)
    x = np.asarray(x0, dtype=float)
    states, obs = [x], []
    for j in range(1, steps + 1):
        x = np.asarray(model.propagate(j - 1, x), dtype=float)
        x = x + sqrt_psd(_at(model.process_noise, j - 1)) @ rng.standard_normal(model.dim_state)
        y = model.observe(x) + sqrt_psd(_at(model.obs_noise, j)) @ rng.standard_normal(model.dim_obs)
        states.append(x)
        obs.append(y)
    return np.array(states), np.array(obs).reshape(steps, model.dim_obs)


# ---------------------------------------------------------------------------
# bearings-only tracking


@dataclass(frozen=True)
class TrackingConfig:
    dt: float = 1.0
    q: float = 0.1
    gamma: float = 0.05**2
    sensors: tuple = ((0.0, 5.0), (0.0, -5.0))
    x0: tuple = (0.0, 0.0, 0.1, 0.1)
    steps: int = 50
    prior_var: float = 0.1


def wiener_velocity(dt: float, q: float) -> tuple[np.ndarray, np.ndarray]:
    I, Z = np.eye(2), np.zeros((2, 2))
    A = np.block([[I, dt * I], [Z, I]])
    Q = q * np.block([[dt**3 / 3 * I, dt**2 / 2 * I], [dt**2 / 2 * I, dt * I]])
    return A, Q


def bearings(sensors) -> Callable:
    sensors = [tuple(map(float, s)) for s in sensors]

    def f(x):
        return [ad.atan((x[1] - s2) / (x[0] - s1)) for s1, s2 in sensors]

    return f


def tracking_model(cfg: TrackingConfig = TrackingConfig()) -> StateSpaceModel:
    A, Q = wiener_velocity(cfg.dt, cfg.q)
    q = len(cfg.sensors)
    return StateSpaceModel(4, q, bearings(cfg.sensors), Q, cfg.gamma * np.eye(q), transition_matrix=A)


def position_rmse(trace: FilterTrace, states: np.ndarray) -> float:
    err = trace.means()[1:, :2] - states[1:, :2]
    return float(np.sqrt(np.mean(np.sum(err**2, axis=1))))


def component_rmse(trace: FilterTrace, states: np.ndarray) -> np.ndarray:
    err = trace.means()[1:] - states[1:]
    return np.sqrt(np.mean(err**2, axis=0))


def trace_to_csv(trace: FilterTrace, states: np.ndarray | None = None, dt: float = 1.0) -> str:
    d = trace.beliefs[0].dim
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t"] + [f"true_state{i}" for i in range(d)] + [f"mean{i}" for i in range(d)]
               + [f"cov{i}{i}" for i in range(d)] + ["filter_kind", "converged"])
    for j, b in enumerate(trace.beliefs):
        truth = states[j] if states is not None else np.full(d, np.nan)
        conv = True if j == 0 else bool(trace.diagnostics[j - 1].get("converged", True))
        w.writerow([_fmt(j * dt)] + [_fmt(v) for v in truth] + [_fmt(v) for v in b.mean]
                   + [_fmt(v) for v in np.diag(b.cov)] + [trace.kind, int(conv)])
    return buf.getvalue()


def _fmt(v: float) -> str:
    return "%.17g" % v
