"""GP regression on derivative data at a single expansion point.

With a Taylor kernel and data ``D^alpha f(a)`` for ``|alpha| <= n`` the
data covariance matrix is diagonal, so the posterior is available in closed
form: the mean is the Taylor polynomial of ``f`` (corrected by the prior
mean) and the covariance is the kernel with its first ``n`` degrees removed.
Noisy data shrink each Taylor coefficient towards the prior.

:func:`condition_generic` builds the same posterior by solving the full
linear system and serves as an independent check.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from . import autodiff as ad
from . import kernels
from . import multiindex as mi
from .errors import IllConditioned, SingularModel
from .kernels import KernelSpec, variance_bound_constant  # noqa: F401  (re-export)


@dataclass(frozen=True)
class Polynomial:
    """``sum_alpha coeffs[alpha] * x^alpha`` in global coordinates."""

    coeffs: Mapping[tuple, float] = field(default_factory=dict)

    def __post_init__(self):
        clean = {}
        for alpha, c in dict(self.coeffs).items():
            alpha = mi.validate(alpha)
            if c != 0:
                clean[alpha] = clean.get(alpha, 0.0) + float(c)
        dims = {len(alpha) for alpha in clean}
        if len(dims) > 1:
            raise ValueError("polynomial multi-indices have inconsistent dimensions")
        object.__setattr__(self, "coeffs", clean)

    @property
    def degree(self) -> int:
        return max((sum(alpha) for alpha in self.coeffs), default=0)

    def __call__(self, x):
        x = kernels._point(x)
        zero = np.zeros(x.size)
        out = 0.0
        for alpha, c in self.coeffs.items():
            out = out + c * mi.monomial(x, zero, alpha)
        return out

    def derivative(self, beta, x) -> float:
        """``D^beta p(x)``."""
        beta = mi.validate(beta)
        x = np.atleast_1d(np.asarray(x, dtype=float))
        out = 0.0
        for alpha, c in self.coeffs.items():
            rest = mi.sub(alpha, beta)
            if rest is None:
                continue
            falling = math.prod(math.perm(k, j) for k, j in zip(alpha, beta))
            out += c * falling * mi.monomial(x, np.zeros(x.size), rest)
        return out


PriorMean = Polynomial
ZERO = Polynomial()


@dataclass(frozen=True)
class DerivativeData:
    """Values ``D^alpha f(a)`` (or noisy versions) for every ``|alpha| <= n``.

    ``noise`` maps each multi-index to its noise variance; ``None`` means
    noiseless data.
    """

    a: tuple[float, ...]
    n: int
    values: Mapping[tuple, float]
    noise: Mapping[tuple, float] | None = None

    def __post_init__(self):
        a = tuple(float(v) for v in np.atleast_1d(np.asarray(self.a, dtype=float)))
        object.__setattr__(self, "a", a)
        if int(self.n) != self.n or self.n < 0:
            raise ValueError(f"order n must be a non-negative integer, got {self.n!r}")
        object.__setattr__(self, "n", int(self.n))
        keys = mi.enumerate_upto(len(a), self.n)
        values = {mi.validate(k): float(v) for k, v in dict(self.values).items()}
        if set(values) != set(keys):
            missing = sorted(set(keys) - set(values))
            extra = sorted(set(values) - set(keys))
            raise ValueError(f"derivative data must cover |alpha| <= {self.n} exactly; missing {missing}, extra {extra}")
        object.__setattr__(self, "values", values)
        if self.noise is not None:
            noise = {mi.validate(k): float(v) for k, v in dict(self.noise).items()}
            if set(noise) != set(keys):
                raise ValueError("noise must have the same multi-indices as values")
            if any(not v >= 0 for v in noise.values()):
                raise ValueError("noise variances must be non-negative")
            object.__setattr__(self, "noise", noise)

    @property
    def dim(self) -> int:
        return len(self.a)

    @property
    def indices(self) -> tuple[tuple, ...]:
        return mi.enumerate_upto(self.dim, self.n)

    @property
    def noisy(self) -> bool:
        return self.noise is not None

    def noise_var(self, alpha) -> float:
        return 0.0 if self.noise is None else self.noise[tuple(alpha)]

    def vector(self) -> np.ndarray:
        return np.array([self.values[alpha] for alpha in self.indices])

    def with_noise(self, noise: Mapping | float) -> "DerivativeData":
        if np.isscalar(noise):
            noise = {alpha: float(noise) for alpha in self.indices}
        return DerivativeData(self.a, self.n, self.values, noise)

    @classmethod
    def from_polynomial(cls, p: Polynomial, a, n: int, noise=None) -> "DerivativeData":
        a = np.atleast_1d(np.asarray(a, dtype=float))
        values = {alpha: p.derivative(alpha, a) for alpha in mi.enumerate_upto(a.size, n)}
        out = cls(tuple(a), n, values)
        return out if noise is None else out.with_noise(noise)

    @classmethod
    def from_derivatives(cls, fn: Callable[[tuple], float], a, n: int) -> "DerivativeData":
        a = np.atleast_1d(np.asarray(a, dtype=float))
        return cls(tuple(a), n, {alpha: fn(alpha) for alpha in mi.enumerate_upto(a.size, n)})

    def to_json(self) -> str:
        rows = []
        for alpha in self.indices:
            row = {"alpha": list(alpha), "value": self.values[alpha]}
            if self.noise is not None:
                row["noise_var"] = self.noise[alpha]
            rows.append(row)
        return json.dumps({"a": list(self.a), "n": self.n, "values": rows})

    @classmethod
    def from_json(cls, text: str) -> "DerivativeData":
        obj = json.loads(text)
        rows = obj["values"]
        values = {tuple(r["alpha"]): r["value"] for r in rows}
        with_noise = [r for r in rows if "noise_var" in r]
        if with_noise and len(with_noise) != len(rows):
            raise ValueError("noise_var must be given for every entry or none")
        noise = {tuple(r["alpha"]): r["noise_var"] for r in rows} if with_noise else None
        return cls(tuple(obj["a"]), obj["n"], values, noise)


@dataclass(frozen=True)
class TaylorPosterior:
    """Closed-form posterior ``GP(s_{n,a}, P_{n,a})``."""

    spec: KernelSpec
    data: DerivativeData
    prior: Polynomial
    coef: dict  # alpha -> coefficient of (x - a)^alpha in the mean correction
    inflation: dict  # alpha -> weight of mono(x) mono(y) added back to the covariance

    @property
    def a(self) -> np.ndarray:
        return np.asarray(self.data.a)

    def mean(self, x):
        kernels.check_domain(self.spec, self.a, x)
        xp = kernels._point(x)
        out = self.prior(xp) if self.prior.coeffs else 0.0
        for alpha, c in self.coef.items():
            if c:
                out = out + c * mi.monomial(xp, self.a, alpha)
        return out

    def cov(self, x, y):
        out = kernels.tail_eval(self.spec, self.a, x, y, self.data.n)
        if self.inflation:
            xp, yp = kernels._point(x), kernels._point(y)
            for alpha, w in self.inflation.items():
                out = out + w * mi.monomial(xp, self.a, alpha) * mi.monomial(yp, self.a, alpha)
        return out

    def var(self, x):
        return self.cov(x, x)


def _check_dims(spec: KernelSpec, prior: Polynomial, data: DerivativeData):
    spec.lam_vector(data.dim)
    if prior.coeffs:
        if len(next(iter(prior.coeffs))) != data.dim:
            raise ValueError("prior mean dimension does not match the data")
        if prior.degree > data.n:
            raise ValueError(f"prior mean degree {prior.degree} exceeds data order {data.n}")


def condition(spec: KernelSpec, prior: Polynomial | None, data: DerivativeData) -> TaylorPosterior:
    """Posterior from the diagonal closed form; no linear solve."""
    prior = ZERO if prior is None else prior
    _check_dims(spec, prior, data)
    a = np.asarray(data.a)
    lam = spec.lam_vector(data.dim)
    coef, inflation = {}, {}
    for alpha in data.indices:
        s = spec.sigma2 * kernels.coefficient(spec, alpha) * mi.power(lam, alpha)
        e = data.noise_var(alpha)
        if s == 0.0 and e == 0.0:
            raise SingularModel(f"kernel coefficient for {alpha} is zero and the datum is noiseless")
        resid = data.values[alpha] - (prior.derivative(alpha, a) if prior.coeffs else 0.0)
        fact = float(mi.factorial_multi(alpha))
        w = 1.0 if e == 0.0 else s / (s + e)
        coef[alpha] = w * resid / fact
        if e > 0.0 and s > 0.0:
            inflation[alpha] = s * e / ((s + e) * fact * fact)
    return TaylorPosterior(spec, data, prior, coef, inflation)


def posterior_mean(post, x):
    return post.mean(x)


def posterior_cov(post, x, y):
    return post.cov(x, y)


@dataclass(frozen=True)
class MatrixPosterior:
    """Posterior computed from the full data covariance matrix."""

    spec: KernelSpec
    data: DerivativeData
    prior: Polynomial
    factor: tuple
    alpha_vec: np.ndarray

    @property
    def a(self) -> np.ndarray:
        return np.asarray(self.data.a)

    def _cross(self, x) -> np.ndarray:
        return np.array(
            [kernels.eval_mixed_derivative(self.spec, self.a, alpha, (0,) * self.data.dim, x, self.a)
             for alpha in self.data.indices]
        )

    def mean(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return float(self.prior(x)) + float(self._cross(x) @ self.alpha_vec)

    def cov(self, x, y):
        rx, ry = self._cross(x), self._cross(y)
        return float(kernels.eval(self.spec, self.a, x, y) - rx @ cho_solve(self.factor, ry))

    def var(self, x):
        return self.cov(x, x)


def data_matrix(spec: KernelSpec, data: DerivativeData) -> np.ndarray:
    """``R_a``: covariances between all derivative data, before noise."""
    a = np.asarray(data.a)
    idx = data.indices
    m = len(idx)
    R = np.empty((m, m))
    for i in range(m):
        for j in range(i, m):
            R[i, j] = R[j, i] = kernels.eval_mixed_derivative(spec, a, idx[j], idx[i], a, a)
    return R


def condition_generic(spec: KernelSpec, prior: Polynomial | None, data: DerivativeData) -> MatrixPosterior:
    """Posterior via a Cholesky solve with the full ``R_a + E`` matrix."""
    prior = ZERO if prior is None else prior
    _check_dims(spec, prior, data)
    a = np.asarray(data.a)
    G = data_matrix(spec, data)
    if data.noise is not None:
        G = G + np.diag([data.noise[alpha] for alpha in data.indices])
    resid = data.vector() - np.array([prior.derivative(alpha, a) for alpha in data.indices])
    try:
        factor = cho_factor(G, lower=True)
    except LinAlgError:
        jitter = 1e-12 * np.trace(G)
        try:
            factor = cho_factor(G + jitter * np.eye(len(G)), lower=True)
        except LinAlgError as exc:
            raise IllConditioned("data covariance matrix is not positive definite") from exc
    alpha_vec = cho_solve(factor, resid)
    if not np.all(np.isfinite(alpha_vec)):
        raise IllConditioned("non-finite solution of the data system")
    return MatrixPosterior(spec, data, prior, factor, alpha_vec)


def credible_band(post, x, z: float = 1.96) -> tuple[float, float, float]:
    """``(mean, lower, upper)`` of the marginal posterior at ``x``."""
    m = float(ad.value(post.mean(x)))
    v = max(float(ad.value(post.var(x))), 0.0)
    half = z * math.sqrt(v)
    return m, m - half, m + half
