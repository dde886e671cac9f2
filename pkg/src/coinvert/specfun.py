"""Bessel/Hankel evaluation, the 2D Helmholtz fundamental solution and
Bessel-zero counting.

Evaluation is delegated to :mod:`scipy.special` (AMOS / Cephes), which
covers real arguments well past the range used here.  The zero finder
brackets sign changes of ``J_n`` on a 0.1 grid and bisects.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

__all__ = [
    "WaveParams",
    "hankel1_0",
    "hankel1_1",
    "fundamental_solution",
    "bessel_zeros",
    "count_n0",
]

_ZERO_BRACKET_STEP = 0.1


@dataclass(frozen=True)
class WaveParams:
    """Wavenumber, relative noise level and decoupling tolerance."""

    k: float
    delta: float = 0.0
    epsilon: float = 1e-16

    def __post_init__(self):
        if not self.k > 0:
            raise ValueError(f"wavenumber must be positive, got {self.k}")
        if not 0 <= self.delta < 1:
            raise ValueError(f"noise level must lie in [0, 1), got {self.delta}")
        if self.epsilon < 0:
            raise ValueError(f"epsilon must be nonnegative, got {self.epsilon}")


def hankel1_0(t):
    """Hankel function of the first kind, order zero, for real ``t > 0``."""
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise ValueError("hankel1_0 is singular at t <= 0")
    return special.hankel1(0, t)


def hankel1_1(t):
    """Hankel function of the first kind, order one, for real ``t > 0``."""
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise ValueError("hankel1_1 is singular at t <= 0")
    return special.hankel1(1, t)


def fundamental_solution(x, z, k: float):
    """Outgoing fundamental solution ``(i/4) H0(k|x - z|)``.

    ``x`` and ``z`` are points of shape ``(..., 2)`` and broadcast against
    each other.
    """
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    r = np.hypot(x[..., 0] - z[..., 0], x[..., 1] - z[..., 1])
    if np.any(r == 0):
        raise ValueError("fundamental solution is singular at x = z")
    return 0.25j * special.hankel1(0, k * r)


def bessel_zeros(n: int, upper: float) -> list[float]:
    """All positive zeros of ``J_n`` strictly below ``upper``, ascending."""
    if upper <= 0:
        raise ValueError("upper must be positive")
    if n < 0:
        raise ValueError("order must be nonnegative")
    # J_n has no zeros below n (for n >= 1, j_{n,1} > n)
    start = max(float(n), _ZERO_BRACKET_STEP)
    if start >= upper:
        return []
    grid = np.arange(start, upper + _ZERO_BRACKET_STEP, _ZERO_BRACKET_STEP)
    grid = np.append(grid[grid < upper], upper)
    vals = special.jv(n, grid)
    zeros = []
    for a, b, fa, fb in zip(grid[:-1], grid[1:], vals[:-1], vals[1:]):
        if fa == 0.0:
            zeros.append(float(a))
            continue
        if fa * fb > 0:
            continue
        lo, hi, flo = a, b, fa
        while hi - lo > 1e-13:
            mid = 0.5 * (lo + hi)
            fm = special.jv(n, mid)
            if fm == 0.0:
                lo = hi = mid
                break
            if flo * fm < 0:
                hi = mid
            else:
                lo, flo = mid, fm
        root = 0.5 * (lo + hi)
        if root < upper:
            zeros.append(float(root))
    return zeros


def count_n0(k: float, R: float) -> int:
    """Uniqueness threshold: zeros of ``J_0`` below ``kR`` count once,
    zeros of ``J_n`` (n >= 1) count twice.
    """
    if k <= 0 or R <= 0:
        raise ValueError("k and R must be positive")
    kr = k * R
    total = len(bessel_zeros(0, kr))
    n = 1
    while True:
        m = len(bessel_zeros(n, kr))
        if m == 0:
            return total
        total += 2 * m
        n += 1
