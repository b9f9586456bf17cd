"""Maximum-likelihood estimates of the kernel scale and length-scales.

Because the data covariance is diagonal, ``diag(sigma2 c_alpha lam^alpha)``,
the likelihood separates and most estimates have closed forms. Individual
``c_alpha`` are deliberately not estimable here: they cancel from the
posterior mean and only rescale the covariance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from . import multiindex as mi
from .errors import DegenerateData, NoConvergence, Unstable
from .gp import ZERO, DerivativeData, Polynomial
from .kernels import KernelSpec

UNSTABLE_RTOL = 1e-8


def residuals(prior: Polynomial | None, data: DerivativeData) -> dict:
    """``D^alpha f(a) - D^alpha m(a)`` for every index of the data."""
    prior = ZERO if prior is None else prior
    a = np.asarray(data.a)
    return {
        alpha: data.values[alpha] - (prior.derivative(alpha, a) if prior.coeffs else 0.0)
        for alpha in data.indices
    }


def _scaled_coefficients(spec: KernelSpec, data: DerivativeData, lam=None) -> dict:
    lam = spec.lam_vector(data.dim) if lam is None else np.broadcast_to(np.asarray(lam, float), (data.dim,))
    out = {}
    for alpha in data.indices:
        c = kernels.coefficient(spec, alpha)
        if not c > 0:
            raise ValueError(f"estimation needs c_alpha > 0, got c_{alpha} = {c}")
        out[alpha] = c * mi.power(lam, alpha)
    return out


def neg_log_likelihood(spec: KernelSpec, prior: Polynomial | None, data: DerivativeData,
                       sigma2: float | None = None, lam=None) -> float:
    """Exact negative log marginal likelihood of the derivative data.

    ``sigma2`` and ``lam`` override the values stored in ``spec``. Noise
    variances in ``data`` are included when present.
    """
    sigma2 = spec.sigma2 if sigma2 is None else sigma2
    r = residuals(prior, data)
    scaled = _scaled_coefficients(spec, data, lam)
    out = 0.5 * len(r) * math.log(2.0 * math.pi)
    for alpha, ra in r.items():
        v = sigma2 * scaled[alpha] + data.noise_var(alpha)
        out += 0.5 * (ra * ra / v + math.log(v))
    return out


def sigma_ml(spec: KernelSpec, prior: Polynomial | None, data: DerivativeData) -> float:
    """``sigma2`` maximising the noiseless likelihood at the kernel's ``lam``."""
    if data.noisy and any(data.noise.values()):
        raise ValueError("sigma_ml needs noiseless data")
    r = residuals(prior, data)
    scaled = _scaled_coefficients(spec, data)
    s = sum(ra * ra / scaled[alpha] for alpha, ra in r.items()) / len(r)
    if s == 0.0:
        raise DegenerateData("all residual derivatives vanish; the likelihood is unbounded")
    return s


def _floor(r: dict) -> float:
    return UNSTABLE_RTOL * (1.0 + max(abs(v) for v in r.values()))


def lambda_ml_n1(spec: KernelSpec, prior: Polynomial | None, data: DerivativeData) -> tuple[float, np.ndarray]:
    """Joint ``(sigma2, lam)`` estimate from value and gradient data."""
    if data.n != 1:
        raise ValueError("lambda_ml_n1 needs data of order n = 1")
    d = data.dim
    r = residuals(prior, data)
    f0 = r[(0,) * d]
    if abs(f0) < _floor(r):
        raise Unstable(f"|f_m(a)| = {abs(f0):.3g} is too small for a stable estimate")
    c0 = kernels.coefficient(spec, (0,) * d)
    lam = np.empty(d)
    for i in range(d):
        e = mi.unit(d, i)
        lam[i] = kernels.coefficient(spec, (0,) * d) / kernels.coefficient(spec, e) * (r[e] / f0) ** 2
        if not lam[i] > 0:
            raise Unstable(f"estimated length-scale {i} is {lam[i]}; it must be positive")
    return f0 * f0 / c0, lam


def _positive_root(a: float, b: float, c: float) -> float:
    """Positive root of ``a u^2 + b u + c`` with ``a > 0 >= c``."""
    if a == 0.0:
        return -c / b
    disc = b * b - 4.0 * a * c
    sq = math.sqrt(max(disc, 0.0))
    # both forms are algebraically equal; pick the one without cancellation
    if b <= 0:
        return (-b + sq) / (2.0 * a)
    return (-2.0 * c) / (b + sq)


def lambda_ml_n2_uniform(spec: KernelSpec, prior: Polynomial | None, data: DerivativeData) -> tuple[float, float]:
    """Joint ``(sigma2, lam)`` estimate for second-order data and a shared length-scale."""
    if data.n != 2:
        raise ValueError("lambda_ml_n2_uniform needs data of order n = 2")
    d = data.dim
    r = residuals(prior, data)
    c = {alpha: kernels.coefficient(spec, alpha) for alpha in data.indices}
    sums = [0.0, 0.0, 0.0]
    for alpha, ra in r.items():
        sums[sum(alpha)] += ra * ra / c[alpha]
    F, G, H = sums
    second = [abs(ra) for alpha, ra in r.items() if sum(alpha) == 2]
    if max(second) < _floor(r):
        raise Unstable("second derivatives vanish; the length-scale estimate is unbounded")
    N = len(r)
    M = (d * d + 2 * d) / N
    u = _positive_root(H * (2.0 - M), G * (1.0 - M), -M * F)
    if not u > 0:
        raise Unstable("no positive length-scale solves the stationarity equation")
    lam = 1.0 / u
    sigma2 = (F + G / lam + H / lam**2) / N
    return sigma2, lam


def lambda_ml_n2_aniso(spec: KernelSpec, prior: Polynomial | None, data: DerivativeData,
                       tol: float = 1e-10, max_sweeps: int = 200) -> np.ndarray:
    """Per-coordinate length-scales for second-order data by cyclic fixed point.

    Each coordinate solves its own quadratic stationarity condition with
    the other length-scales held fixed; sweeps start from ``lam = 1``. Every
    third sweep tries an Aitken extrapolation in ``log lam``, kept only if it
    lowers the profile likelihood, which helps strongly coupled coordinates.
    """
    if data.n != 2:
        raise ValueError("lambda_ml_n2_aniso needs data of order n = 2")
    d = data.dim
    r = residuals(prior, data)
    q = {alpha: r[alpha] ** 2 / kernels.coefficient(spec, alpha) for alpha in data.indices}
    for i in range(d):
        if abs(r[mi.unit(d, i, 2)]) < _floor(r):
            raise Unstable(f"second derivative along coordinate {i} vanishes")
    N = len(r)
    M = 2.0 / (d + 1)

    def profile_nll(lam):
        s2 = sum(qa / mi.power(lam, alpha) for alpha, qa in q.items()) / N
        return 0.5 * N * math.log(s2) + 0.5 * sum(sum(alpha[i] for alpha in q) * math.log(lam[i]) for i in range(d))

    def sweep(lam):
        lam = lam.copy()
        change = 0.0
        for i in range(d):
            A = B = R = 0.0
            for alpha, qa in q.items():
                k = alpha[i]
                rest = math.prod(lam[j] ** alpha[j] for j in range(d) if j != i)
                if k == 2:
                    A += qa / rest
                elif k == 1:
                    B += qa / rest
                else:
                    R += qa / rest
            u = _positive_root(A * (2.0 - M), B * (1.0 - M), -M * R)
            if not u > 0:
                raise Unstable(f"no positive length-scale for coordinate {i}")
            new = 1.0 / u
            change = max(change, abs(new - lam[i]) / lam[i])
            lam[i] = new
        return lam, change

    lam = np.ones(d)
    history = [np.log(lam)]
    for k in range(1, max_sweeps + 1):
        lam, change = sweep(lam)
        if change < tol:
            return lam
        history = (history + [np.log(lam)])[-3:]
        if k % 3 == 0 and len(history) == 3:
            x0, x1, x2 = history
            d1, d2 = x2 - x1, (x2 - x1) - (x1 - x0)
            with np.errstate(divide="ignore", invalid="ignore"):
                jump = np.where(np.abs(d2) > 1e-300, d1 * d1 / d2, 0.0)
            trial = np.exp(x2 - jump)
            if np.all(np.isfinite(trial)) and np.all(trial > 0) and profile_nll(trial) < profile_nll(lam):
                lam = trial
                history = [np.log(lam)]
    raise NoConvergence(f"length-scale fixed point not converged after {max_sweeps} sweeps")


@dataclass(frozen=True)
class CubicCoefficients:
    """``a3 s^3 + a2 s^2 + a1 s + a0``."""

    a3: float
    a2: float
    a1: float
    a0: float

    def __call__(self, s: float) -> float:
        return ((self.a3 * s + self.a2) * s + self.a1) * s + self.a0

    def derivative(self, s: float) -> float:
        return (3.0 * self.a3 * s + 2.0 * self.a2) * s + self.a1

    def as_tuple(self) -> tuple[float, float, float, float]:
        return self.a3, self.a2, self.a1, self.a0


def solve_cubic_real(c: CubicCoefficients) -> list[float]:
    """Sorted distinct real roots, each polished by two Newton steps."""
    if c.a3 == 0.0:
        raise ValueError("leading coefficient must be non-zero")
    b, cc, d = c.a2 / c.a3, c.a1 / c.a3, c.a0 / c.a3
    # x = scale * t keeps the monic coefficients of order one, so the
    # depressed-cubic constants neither underflow nor overflow
    scale = max(abs(b), math.sqrt(abs(cc)), np.cbrt(abs(d)))
    if scale == 0.0:
        return [0.0]
    if not math.isfinite(scale):
        raise ValueError("cubic coefficients must be finite")
    b, cc, d = b / scale, cc / scale**2, d / scale**3
    shift = b / 3.0
    p = cc - b * b / 3.0
    q = 2.0 * b**3 / 27.0 - b * cc / 3.0 + d
    disc = q * q / 4.0 + p**3 / 27.0
    if p == 0.0 and q == 0.0:
        ts = [0.0]
    elif disc > 0.0:
        sq = math.sqrt(disc)
        u = np.cbrt(-q / 2.0 - math.copysign(sq, q))
        ts = [u - p / (3.0 * u)]
    elif disc == 0.0:
        ts = [float(np.cbrt(-q))] if p == 0.0 else [3.0 * q / p, -1.5 * q / p]
    else:
        m = 2.0 * math.sqrt(-p / 3.0)
        arg = 3.0 * q / (p * m)
        theta = math.acos(max(-1.0, min(1.0, arg))) / 3.0
        ts = [m * math.cos(theta - 2.0 * math.pi * k / 3.0) for k in range(3)]
    roots = []
    for t in ts:
        x = float(t - shift) * scale
        for _ in range(2):
            fx, dfx = c(x), c.derivative(x)
            if dfx == 0.0:
                break
            nx = x - fx / dfx
            if abs(c(nx)) <= abs(fx):
                x = nx
        roots.append(x)
    roots.sort()
    out = []
    for x in roots:
        if out and abs(x - out[-1]) <= 1e-9 * max(scale, abs(x), abs(out[-1])):
            continue
        out.append(x)
    return out


def noisy_n1_cubic(c0, c1, lam, y0, y1, eps0sq, eps1sq) -> CubicCoefficients:
    """Stationarity cubic in ``sigma2`` for noisy value and derivative data."""
    L = c1 * lam
    f2, g2, e0, e1 = y0 * y0, y1 * y1, eps0sq, eps1sq
    a = 2.0 * c0 * c0 * L * L
    b = -f2 * c0 * L * L - g2 * c0 * c0 * L + 3.0 * c0 * L * L * e0 + 3.0 * c0 * c0 * L * e1
    c = (-2.0 * f2 * c0 * L * e1 - 2.0 * g2 * c0 * L * e0 + 4.0 * c0 * L * e0 * e1
         + c0 * c0 * e1 * e1 + L * L * e0 * e0)
    d = -f2 * c0 * e1 * e1 - g2 * L * e0 * e0 + c0 * e0 * e1 * e1 + L * e0 * e0 * e1
    return CubicCoefficients(a, b, c, d)


def neg_log_likelihood_noisy_n1(sigma2, c0, c1, lam, y0, y1, eps0sq, eps1sq) -> float:
    v0 = sigma2 * c0 + eps0sq
    v1 = sigma2 * c1 * lam + eps1sq
    return 0.5 * (y0 * y0 / v0 + math.log(v0) + y1 * y1 / v1 + math.log(v1)) + math.log(2.0 * math.pi)


def sigma_ml_noisy_n1(c0, c1, lam, y0, y1, eps0sq, eps1sq, sigma_min) -> float:
    """``sigma2`` maximising the likelihood of noisy value and derivative data.

    Compares the positive cubic roots and ``sigma_min**2`` by the negative
    log-likelihood and returns the best; never less than ``sigma_min**2``.
    """
    if not (c0 > 0 and c1 > 0 and lam > 0):
        raise ValueError("c0, c1 and lam must be positive")
    if eps0sq < 0 or eps1sq < 0:
        raise ValueError("noise variances must be non-negative")
    if not sigma_min > 0:
        raise ValueError("sigma_min must be positive")
    floor = sigma_min * sigma_min
    if eps0sq == 0.0 and eps1sq == 0.0:
        return max(0.5 * (y0 * y0 / c0 + y1 * y1 / (c1 * lam)), floor)
    roots = [s for s in solve_cubic_real(noisy_n1_cubic(c0, c1, lam, y0, y1, eps0sq, eps1sq)) if s > 0]
    if not roots:
        return floor
    # on [floor, inf) the optimum is a stationary point or the lower end
    candidates = [max(s, floor) for s in roots] + [floor]
    return min(candidates, key=lambda s: neg_log_likelihood_noisy_n1(s, c0, c1, lam, y0, y1, eps0sq, eps1sq))
