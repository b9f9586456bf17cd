"""Taylor (power-series) kernels.

A Taylor kernel centred at ``a`` is

    K_a(x, y) = sigma2 * sum_alpha c_alpha lam^alpha / (alpha!)^2 (x-a)^alpha (y-a)^alpha

Inner-product kernels depend on ``x, y`` only through
``z = sum_i lam_i (x_i - a_i)(y_i - a_i)`` and are described by a univariate
coefficient sequence ``c_p``; they then have ``c_alpha = c_|alpha| alpha!/|alpha|!``
and every degree-``p`` block of the series collapses to ``c_p z^p / (p!)^2``.
The built-in families all belong to this class and have closed forms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from . import multiindex as mi
from .errors import Diverges, DomainError

_EPS = np.finfo(float).eps
SERIES_RTOL = 1e-15
SERIES_MAX_TERMS = 60


# ---------------------------------------------------------------------------
# families


class Family:
    name: str = "family"
    inner_product: bool = True

    def cp(self, p: int) -> float:
        raise NotImplementedError

    def weight(self, p: int) -> float:
        """``c_p / (p!)^2``, the coefficient of ``z^p`` in the profile."""
        cp = self.cp(p)
        if cp == 0.0:
            return 0.0
        return math.exp(math.log(cp) - 2.0 * math.lgamma(p + 1.0)) if p > 20 else cp / float(math.factorial(p)) ** 2

    def profile(self, z):
        """Closed form of ``sum_p c_p z^p / (p!)^2`` or ``None`` if unavailable."""
        return None

    def default_radius(self, lam: np.ndarray) -> float:
        return math.inf

    def max_radius(self, lam: np.ndarray) -> float:
        return self.default_radius(lam)

    def coefficient(self, alpha: mi.MultiIndex) -> float:
        p = sum(alpha)
        cp = self.cp(p)
        if cp == 0.0:
            return 0.0
        # c_p * alpha! / p!, computed in exact arithmetic where possible
        return cp * (math.prod(math.factorial(k) for k in alpha) / math.factorial(p))

    def __repr__(self):
        return self.name


class Exponential(Family):
    """``K = sigma2 exp(<x, y>_lam)``, ``c_p = p!``."""

    name = "exponential"

    def cp(self, p):
        return float(math.factorial(p))

    def weight(self, p):
        return 1.0 / math.factorial(p) if p <= 170 else 0.0

    def profile(self, z):
        return ad.exp(z)


class Szego(Family):
    """``K = sigma2 / (1 - <x, y>_lam)``, ``c_p = (p!)^2``."""

    name = "szego"

    def cp(self, p):
        return float(math.factorial(p)) ** 2

    def weight(self, p):
        return 1.0

    def profile(self, z):
        return 1.0 / (1.0 - z)

    def default_radius(self, lam):
        return 1.0 / math.sqrt(float(np.max(lam)))


class Bergman(Family):
    """``K = sigma2 / (1 - <x, y>_lam)^2``, ``c_p = (p + 1) (p!)^2``."""

    name = "bergman"

    def cp(self, p):
        return (p + 1) * float(math.factorial(p)) ** 2

    def weight(self, p):
        return float(p + 1)

    def profile(self, z):
        return 1.0 / (1.0 - z) ** 2

    def default_radius(self, lam):
        return 1.0 / math.sqrt(float(np.max(lam)))


@dataclass(frozen=True, repr=False)
class GenericInnerProduct(Family):
    """Inner-product kernel given by a coefficient sequence ``p -> c_p``.

    ``summable`` is the caller's assertion that the series converges on the
    chosen domain; it is not checked.
    """

    coefficients: Callable[[int], float] = None
    radius: float = math.inf
    summable: bool = False
    closed_form: Callable | None = None
    name: str = "generic-inner-product"

    def cp(self, p):
        return float(self.coefficients(p))

    def profile(self, z):
        return None if self.closed_form is None else self.closed_form(z)

    def default_radius(self, lam):
        return self.radius


@dataclass(frozen=True, repr=False)
class GenericPowerSeries(Family):
    """General Taylor kernel given by ``alpha -> c_alpha``."""

    coefficients: Callable[[tuple], float] = None
    radius: float = math.inf
    summable: bool = False
    name: str = "generic-power-series"
    inner_product = False

    def coefficient(self, alpha):
        return float(self.coefficients(tuple(alpha)))

    def default_radius(self, lam):
        return self.radius


FAMILIES = {"exponential": Exponential, "szego": Szego, "bergman": Bergman}


# ---------------------------------------------------------------------------
# spec


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family plus hyperparameters.

    ``lam`` may be a scalar (uniform length-scale, broadcast to any
    dimension) or a sequence fixing the dimension. ``radius=None`` selects
    the family's natural domain radius.
    """

    family: Family = field(default_factory=Exponential)
    sigma2: float = 1.0
    lam: float | tuple[float, ...] = 1.0
    radius: float | None = None

    def __post_init__(self):
        if isinstance(self.family, str):
            object.__setattr__(self, "family", family_from_name(self.family))
        lam = self.lam
        if np.ndim(lam) == 0:
            lam = float(lam)
            ok = lam > 0
        else:
            lam = tuple(float(l) for l in np.ravel(lam))
            ok = len(lam) > 0 and all(l > 0 for l in lam)
        if not ok:
            raise ValueError(f"length-scales must be positive, got {self.lam!r}")
        object.__setattr__(self, "lam", lam)
        if not self.sigma2 > 0:
            raise ValueError(f"sigma2 must be positive, got {self.sigma2!r}")
        object.__setattr__(self, "sigma2", float(self.sigma2))
        if isinstance(self.family, (GenericInnerProduct, GenericPowerSeries)) and not self.family.summable:
            raise ValueError("generic kernel families must assert summable=True")
        if self.radius is not None:
            if not self.radius > 0:
                raise ValueError("radius must be positive")
            lam_arr = np.atleast_1d(np.asarray(lam, dtype=float))
            limit = self.family.max_radius(lam_arr)
            if self.radius > limit * (1 + 1e-12):
                raise ValueError(
                    f"radius {self.radius} exceeds the convergence radius {limit} of {self.family}"
                )

    @property
    def dim(self) -> int | None:
        return None if isinstance(self.lam, float) else len(self.lam)

    def lam_vector(self, d: int) -> np.ndarray:
        if isinstance(self.lam, float):
            return np.full(d, self.lam)
        if len(self.lam) != d:
            raise ValueError(f"kernel has {len(self.lam)} length-scales, point has dimension {d}")
        return np.asarray(self.lam)

    def domain_radius(self, d: int = 1) -> float:
        if self.radius is not None:
            return float(self.radius)
        return float(self.family.default_radius(self.lam_vector(self.dim or d)))

    def replace(self, **changes) -> "KernelSpec":
        from dataclasses import replace

        return replace(self, **changes)

    def to_dict(self) -> dict:
        return {
            "family": self.family.name,
            "sigma2": self.sigma2,
            "lambda": self.lam if isinstance(self.lam, float) else list(self.lam),
            "radius": None if self.radius is None else self.radius,
        }


def family_from_name(name: str) -> Family:
    key = name.strip().lower().replace("ő", "o")
    try:
        return FAMILIES[key]()
    except KeyError:
        raise ValueError(f"unknown kernel family {name!r}; choose from {sorted(FAMILIES)}") from None


def parse_config(text: str) -> KernelSpec:
    """Read a kernel from a ``key = value`` block.

    Recognised keys: ``family``, ``sigma2``, ``lambda`` (scalar or
    comma-separated list, optionally bracketed) and ``radius`` (a number,
    ``inf`` or ``none``). Blank lines and ``#`` comments are ignored.
    """
    items = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" in line:
            key, val = line.split("=", 1)
        elif ":" in line:
            key, val = line.split(":", 1)
        else:
            raise ValueError(f"cannot parse kernel config line {raw!r}")
        items[key.strip().lower()] = val.strip()
    unknown = set(items) - {"family", "sigma2", "lambda", "radius"}
    if unknown:
        raise ValueError(f"unknown kernel config keys: {sorted(unknown)}")
    family = family_from_name(items.get("family", "exponential"))
    sigma2 = float(items.get("sigma2", 1.0))
    lam_text = items.get("lambda", "1").strip("[]() ")
    parts = [p for p in lam_text.replace(";", ",").split(",") if p.strip()]
    lam = float(parts[0]) if len(parts) == 1 and "," not in lam_text else tuple(float(p) for p in parts)
    radius_text = items.get("radius", "none").lower()
    radius = None if radius_text in ("none", "", "default") else float(radius_text)
    return KernelSpec(family, sigma2, lam, radius)


# ---------------------------------------------------------------------------
# evaluation


def _point(x) -> np.ndarray:
    if ad.is_dual(x):
        return np.asarray(list(x), dtype=object)
    return np.atleast_1d(np.asarray(x, dtype=float))


def check_domain(spec: KernelSpec, a, *points):
    a = np.atleast_1d(np.asarray(a, dtype=float))
    r = spec.domain_radius(a.size)
    if not math.isfinite(r):
        for x in points:
            if len(np.atleast_1d(x)) != a.size:
                raise ValueError(f"point dimension {len(np.atleast_1d(x))} != expansion point dimension {a.size}")
        return
    for x in points:
        xv = np.atleast_1d(ad.value(x)).astype(float)
        if xv.size != a.size:
            raise ValueError(f"point dimension {xv.size} != expansion point dimension {a.size}")
        if math.isfinite(r) and np.linalg.norm(xv - a) >= r:
            raise DomainError(f"||x - a|| = {np.linalg.norm(xv - a):.6g} >= domain radius {r:.6g}")


def inner(spec: KernelSpec, a, x, y):
    """Weighted inner product ``sum_i lam_i (x_i - a_i)(y_i - a_i)``."""
    a = np.atleast_1d(np.asarray(a, dtype=float))
    lam = spec.lam_vector(a.size)
    x, y = _point(x), _point(y)
    out = 0.0
    for i in range(a.size):
        out = out + lam[i] * (x[i] - a[i]) * (y[i] - a[i])
    return out


def coefficient(spec: KernelSpec, alpha) -> float:
    """``c_alpha`` of the kernel's power series."""
    return spec.family.coefficient(mi.validate(alpha))


def profile_partial(spec: KernelSpec, z, n: int):
    """``sum_{p <= n} c_p z^p / (p!)^2`` for an inner-product family."""
    out = 0.0
    zp = 1.0
    for p in range(n + 1):
        if p:
            zp = zp * z
        w = spec.family.weight(p)
        if w:
            out = out + w * zp
    return out


def _profile_series(spec: KernelSpec, z, start: int, max_terms: int = SERIES_MAX_TERMS, strict: bool = False):
    """``sum_{p >= start} c_p z^p / (p!)^2`` by adaptive partial summation.

    With ``strict`` the result is ``None`` when the stopping rule is not met
    within ``max_terms``.
    """
    out = 0.0
    zp = z**start if start else 1.0
    small = 0
    for p in range(start, start + max_terms):
        if p > start:
            zp = zp * z
        term = spec.family.weight(p) * zp
        out = out + term
        if abs(ad.value(term)) <= SERIES_RTOL * abs(ad.value(out)):
            small += 1
            if small == 2:
                return out
        else:
            small = 0
    return None if strict else out


def profile(spec: KernelSpec, z):
    """``K / sigma2`` as a function of the weighted inner product ``z``."""
    closed = spec.family.profile(z)
    if closed is not None:
        return closed
    return _profile_series(spec, z, 0)


def profile_tail(spec: KernelSpec, z, n: int):
    """``sum_{p > n} c_p z^p / (p!)^2``.

    Closed form minus the first ``n + 1`` terms. When the tail is small next
    to the closed form that difference loses digits, so the tail is summed
    directly instead, provided the series converges within the term budget.
    """
    closed = spec.family.profile(z)
    if closed is None:
        return _profile_series(spec, z, n + 1)
    tail = closed - profile_partial(spec, z, n)
    if abs(ad.value(tail)) < 0.5 * abs(ad.value(closed)):
        direct = _profile_series(spec, z, n + 1, strict=True)
        if direct is not None:
            return direct
    return tail


def _series_eval(spec: KernelSpec, a, x, y, n_min: int = 0):
    """Multi-index series ``sigma2 * sum_{|alpha| >= n_min}`` for non inner-product kernels."""
    a = np.atleast_1d(np.asarray(a, dtype=float))
    d = a.size
    lam = spec.lam_vector(d)
    x, y = _point(x), _point(y)
    out = 0.0
    small = 0
    for p in range(n_min, n_min + SERIES_MAX_TERMS):
        block = 0.0
        for alpha in mi.of_degree(d, p):
            c = spec.family.coefficient(alpha)
            if c:
                w = c * mi.power(lam, alpha) / float(mi.factorial_multi(alpha)) ** 2
                block = block + w * mi.monomial(x, a, alpha) * mi.monomial(y, a, alpha)
        out = out + block
        if abs(ad.value(block)) <= SERIES_RTOL * abs(ad.value(out)):
            small += 1
            if small == 2:
                break
        else:
            small = 0
    return spec.sigma2 * out


def eval(spec: KernelSpec, a, x, y):
    """``K_a(x, y)``."""
    check_domain(spec, a, x, y)
    if not spec.family.inner_product:
        return _series_eval(spec, a, x, y)
    return spec.sigma2 * profile(spec, inner(spec, a, x, y))


def eval_series(spec: KernelSpec, a, x, y, terms: int) -> float:
    """``K_a(x, y)`` truncated after ``terms`` degrees (reference for closed forms)."""
    check_domain(spec, a, x, y)
    if spec.family.inner_product:
        z = inner(spec, a, x, y)
        return spec.sigma2 * profile_partial(spec, z, terms - 1)
    a = np.atleast_1d(np.asarray(a, dtype=float))
    lam = spec.lam_vector(a.size)
    out = 0.0
    for alpha in mi.enumerate_upto(a.size, terms - 1):
        c = spec.family.coefficient(alpha)
        w = c * mi.power(lam, alpha) / float(mi.factorial_multi(alpha)) ** 2
        out += w * mi.monomial(x, a, alpha) * mi.monomial(y, a, alpha)
    return spec.sigma2 * out


def tail_eval(spec: KernelSpec, a, x, y, n: int):
    """``sigma2 * sum_{|alpha| > n} ...``: the kernel with its first ``n`` degrees removed."""
    check_domain(spec, a, x, y)
    if not spec.family.inner_product:
        return _series_eval(spec, a, x, y, n_min=n + 1)
    return spec.sigma2 * profile_tail(spec, inner(spec, a, x, y), n)


def eval_mixed_derivative(spec: KernelSpec, a, beta, gamma, x, y) -> float:
    """``D_y^beta D_x^gamma K_a(x, y)`` from the differentiated power series.

    At ``x = a`` or ``y = a`` the series is finite and the result exact.
    """
    check_domain(spec, a, x, y)
    a = np.atleast_1d(np.asarray(a, dtype=float))
    d = a.size
    beta, gamma = mi.validate(beta), mi.validate(gamma)
    lam = spec.lam_vector(d)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    base = mi.join(beta, gamma)
    x_at_a = bool(np.all(x == a))
    y_at_a = bool(np.all(y == a))
    out = 0.0
    small = 0
    for q in range(0, 400):
        block = 0.0
        for delta in mi.of_degree(d, q):
            alpha = mi.add(base, delta)
            ax = mi.sub(alpha, gamma)
            ay = mi.sub(alpha, beta)
            if (x_at_a and any(ax)) or (y_at_a and any(ay)):
                continue
            c = spec.family.coefficient(alpha)
            if not c:
                continue
            w = c * mi.power(lam, alpha) / (float(mi.factorial_multi(ax)) * float(mi.factorial_multi(ay)))
            block += w * mi.monomial(x, a, ax) * mi.monomial(y, a, ay)
        out += block
        if (x_at_a or y_at_a) and q >= max(sum(beta), sum(gamma)) - sum(base) + 1:
            break
        if q > 0 and abs(block) <= SERIES_RTOL * abs(out):
            small += 1
            if small == 2:
                break
        else:
            small = 0
    else:
        raise Diverges("mixed-derivative series did not converge")
    return spec.sigma2 * out


def series_tail(spec: KernelSpec, h: float, n: int) -> float:
    """``sum_{p > n} c_p lam^p h^(2p) / (p!)^2`` for a univariate kernel (no ``sigma2``)."""
    if spec.dim not in (None, 1):
        raise ValueError("series_tail needs a univariate kernel")
    if h < 0:
        raise ValueError("h must be non-negative")
    r = spec.domain_radius(1)
    if math.isfinite(r) and h >= r:
        raise DomainError(f"h = {h} >= domain radius {r}")
    if h == 0:
        return 0.0
    lam = spec.lam_vector(1)[0]
    return float(profile_tail(spec, lam * h * h, n))


def gram(spec: KernelSpec, a, points: Sequence) -> np.ndarray:
    pts = [np.atleast_1d(np.asarray(p, dtype=float)) for p in points]
    m = len(pts)
    out = np.empty((m, m))
    for i in range(m):
        for j in range(i, m):
            out[i, j] = out[j, i] = eval(spec, a, pts[i], pts[j])
    return out


def variance_bound_constant(spec: KernelSpec, n: int, radius: float | None = None, max_terms: int = 5000) -> float:
    """``C_{n,r}`` bounding ``P_n(x, x) <= sigma2 C_{n,r} ||x - a||^(2(n+1))`` on the ball of radius ``r``.

    ``radius`` defaults to the kernel's domain radius and must be finite.
    """
    d = spec.dim or 1
    r = spec.domain_radius(d) if radius is None else float(radius)
    if not (math.isfinite(r) and r > 0):
        raise ValueError("variance_bound_constant needs a finite positive radius")
    lam = spec.lam_vector(d)
    limit = spec.family.max_radius(lam)
    if r > limit * (1 + 1e-12):
        raise DomainError(f"radius {r} exceeds the convergence radius {limit}")
    r2 = r * r

    def block(p: int) -> float:
        if spec.family.inner_product:
            return spec.family.weight(p) * float(np.sum(lam)) ** p
        return sum(
            spec.family.coefficient(alpha) * mi.power(lam, alpha) / float(mi.factorial_multi(alpha)) ** 2
            for alpha in mi.of_degree(d, p)
        )

    head = block(n + 1)
    rest = 0.0
    weight = 1.0
    small = 0
    for q in range(1, max_terms + 1):
        weight *= r2
        term = block(n + 1 + q) * weight
        if not math.isfinite(term):
            raise Diverges("variance-bound series overflowed")
        rest += term
        if term <= SERIES_RTOL * rest:
            small += 1
            if small == 3:
                break
        else:
            small = 0
    else:
        raise Diverges(f"variance-bound series not converged after {max_terms} terms")
    return head + rest
