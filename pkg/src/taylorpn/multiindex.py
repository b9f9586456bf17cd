"""Multi-index helpers.

Multi-indices are plain tuples of non-negative ints. Enumeration is graded
lexicographic: by total degree first, then lexicographically with larger
leading entries first, e.g. for ``d=2, n=2``::

    (0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)
"""

from __future__ import annotations

import math
from functools import lru_cache
from typing import Sequence

MultiIndex = tuple[int, ...]

_INT_LIMIT = 2**63 - 1


def validate(alpha: Sequence[int]) -> MultiIndex:
    alpha = tuple(int(k) for k in alpha)
    if any(k < 0 for k in alpha):
        raise ValueError(f"multi-index entries must be non-negative: {alpha}")
    return alpha


def degree(alpha: MultiIndex) -> int:
    return sum(alpha)


@lru_cache(maxsize=None)
def of_degree(d: int, p: int) -> tuple[MultiIndex, ...]:
    """All multi-indices of length ``d`` with ``|alpha| == p``, lex-descending."""
    if d == 1:
        return ((p,),)
    out = []
    for first in range(p, -1, -1):
        for rest in of_degree(d - 1, p - first):
            out.append((first,) + rest)
    return tuple(out)


@lru_cache(maxsize=None)
def enumerate_upto(d: int, n: int) -> tuple[MultiIndex, ...]:
    """Every multi-index of length ``d`` with ``|alpha| <= n``; length is C(n+d, d)."""
    if d < 1 or n < 0:
        raise ValueError(f"need d >= 1 and n >= 0, got d={d}, n={n}")
    return tuple(alpha for p in range(n + 1) for alpha in of_degree(d, p))


def count_upto(d: int, n: int) -> int:
    return math.comb(n + d, d)


def factorial_multi(alpha: MultiIndex) -> int | float:
    """``alpha! = prod_j alpha_j!``, exact while it fits in a 64-bit int."""
    out = math.prod(math.factorial(k) for k in alpha)
    return out if out <= _INT_LIMIT else float(out)


def unit(d: int, i: int, k: int = 1) -> MultiIndex:
    return tuple(k if j == i else 0 for j in range(d))


def add(alpha: MultiIndex, beta: MultiIndex) -> MultiIndex:
    return tuple(p + q for p, q in zip(alpha, beta))


def sub(alpha: MultiIndex, beta: MultiIndex) -> MultiIndex | None:
    """``alpha - beta`` or ``None`` when some entry would go negative."""
    out = tuple(p - q for p, q in zip(alpha, beta))
    return None if any(k < 0 for k in out) else out


def join(beta: MultiIndex, gamma: MultiIndex) -> MultiIndex:
    """Componentwise maximum."""
    return tuple(max(p, q) for p, q in zip(beta, gamma))


def power(lam, alpha: MultiIndex) -> float:
    """``lam^alpha = prod_j lam_j^alpha_j``."""
    return math.prod(float(l) ** k for l, k in zip(lam, alpha))


def monomial(x, a, alpha: MultiIndex):
    """``prod_j (x_j - a_j)^alpha_j`` with ``0^0 = 1``.

    Entries of ``x`` may be autodiff numbers; the result then is one too.
    """
    if not (len(x) == len(a) == len(alpha)):
        raise ValueError("dimension mismatch between x, a and alpha")
    out = 1.0
    for xj, aj, k in zip(x, a, alpha):
        if k:
            out = out * (xj - aj) ** k
    return out
