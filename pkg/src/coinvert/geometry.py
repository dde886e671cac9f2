"""Closed parametric curves on [0, 2*pi) and their trapezoidal discretization.

Every curve is described by a parametrization ``t -> (x, x', x'')`` and
discretized at equispaced parameter values.  Weights are the trapezoidal
weights ``(2*pi/n) |x'(t)|``, which integrate smooth periodic functions
with spectral accuracy.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

__all__ = [
    "ParametricCurve",
    "StarShape",
    "RandomShapeSpec",
    "InvalidShapeError",
    "TRIG_DEGREE",
    "discretize",
    "make_circle",
    "make_nleaf",
    "make_kite",
    "make_star",
    "make_random_shape",
    "radial_param",
    "radial_samples",
    "relative_l2_error",
    "equispaced_angles",
    "read_curve_csv",
]

TRIG_DEGREE = 8

# t -> (x, x', x''), each of shape (n, 2)
Parametrization = Callable[[np.ndarray], tuple]


class InvalidShapeError(ValueError):
    """Raised for curves with nonpositive radius or degenerate speed."""


def equispaced_angles(n: int) -> np.ndarray:
    return 2 * np.pi * np.arange(n) / n


@dataclass(frozen=True, eq=False)
class ParametricCurve:
    """A closed curve sampled at ``n`` equispaced parameter values.

    Attributes
    ----------
    t : ndarray, shape (n,)
        Parameter values ``2*pi*i/n``.
    points, d_points, dd_points : ndarray, shape (n, 2)
        Nodes and their first and second parameter derivatives.
    param : callable, optional
        The parametrization the nodes came from; allows resampling and
        off-node evaluation.
    """

    t: np.ndarray
    points: np.ndarray
    d_points: np.ndarray
    dd_points: np.ndarray
    param: Optional[Parametrization] = field(default=None, repr=False)

    def __post_init__(self):
        if np.any(self.speed <= 0) or not np.all(np.isfinite(self.points)):
            raise InvalidShapeError("parametrization is not regular")

    @property
    def n_nodes(self) -> int:
        return len(self.t)

    @property
    def speed(self) -> np.ndarray:
        return np.hypot(self.d_points[:, 0], self.d_points[:, 1])

    @property
    def normals(self) -> np.ndarray:
        """Outward unit normals (counterclockwise orientation)."""
        s = self.speed
        return np.column_stack([self.d_points[:, 1] / s, -self.d_points[:, 0] / s])

    @property
    def weights(self) -> np.ndarray:
        return 2 * np.pi / self.n_nodes * self.speed

    @property
    def length(self) -> float:
        return float(self.weights.sum())

    def signed_area(self) -> float:
        x, y = self.points.T
        dx, dy = self.d_points.T
        return float(0.5 * np.sum(x * dy - y * dx) * 2 * np.pi / self.n_nodes)

    def integrate(self, values) -> complex:
        return np.sum(np.asarray(values) * self.weights)

    def resample(self, n_nodes: int) -> "ParametricCurve":
        if self.param is None:
            raise ValueError("curve has no parametrization to resample")
        return discretize(self.param, n_nodes)

    def evaluate(self, t) -> tuple:
        if self.param is None:
            raise ValueError("curve has no parametrization")
        return self.param(np.atleast_1d(np.asarray(t, dtype=float)))

    def rotated(self, angle: float) -> "ParametricCurve":
        c, s = np.cos(angle), np.sin(angle)
        rot = np.array([[c, -s], [s, c]])
        param = None
        if self.param is not None:
            base = self.param

            def param(t):
                return tuple(v @ rot.T for v in base(t))

        return ParametricCurve(
            self.t, self.points @ rot.T, self.d_points @ rot.T, self.dd_points @ rot.T, param
        )

    def to_csv(self, path) -> None:
        """Write ``t,x,y,nx,ny,w`` rows with 17 significant digits."""
        nrm = self.normals
        w = self.weights
        with open(Path(path), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "x", "y", "nx", "ny", "w"])
            for i in range(self.n_nodes):
                row = (self.t[i], *self.points[i], *nrm[i], w[i])
                writer.writerow([f"{v:.17g}" for v in row])


def read_curve_csv(path) -> dict:
    """Read a curve CSV back into arrays keyed by column name."""
    data = np.loadtxt(Path(path), delimiter=",", skiprows=1, ndmin=2)
    return {
        "t": data[:, 0],
        "points": data[:, 1:3],
        "normals": data[:, 3:5],
        "weights": data[:, 5],
    }


def discretize(param: Parametrization, n_nodes: int) -> ParametricCurve:
    if n_nodes < 8:
        raise ValueError("need at least 8 nodes")
    t = equispaced_angles(n_nodes)
    x, dx, ddx = param(t)
    return ParametricCurve(t, x, dx, ddx, param)


def _circle_param(center, radius):
    cx, cy = center

    def param(t):
        c, s = np.cos(t), np.sin(t)
        x = np.column_stack([cx + radius * c, cy + radius * s])
        dx = radius * np.column_stack([-s, c])
        ddx = -radius * np.column_stack([c, s])
        return x, dx, ddx

    return param


def make_circle(center=(0.0, 0.0), radius: float = 1.0, n_nodes: int = 64) -> ParametricCurve:
    if radius <= 0:
        raise ValueError("radius must be positive")
    return discretize(_circle_param(tuple(center), float(radius)), n_nodes)


def radial_param(r: Callable, dr: Callable, ddr: Callable) -> Parametrization:
    """Parametrization ``r(t)(cos t, sin t)`` of a star-like curve."""

    def param(t):
        c, s = np.cos(t), np.sin(t)
        rv, d1, d2 = r(t), dr(t), ddr(t)
        e = np.column_stack([c, s])
        e_perp = np.column_stack([-s, c])
        x = rv[:, None] * e
        dx = d1[:, None] * e + rv[:, None] * e_perp
        ddx = (d2 - rv)[:, None] * e + 2 * d1[:, None] * e_perp
        return x, dx, ddx

    return param


def make_nleaf(n: int, n_nodes: int, amplitude: float = 0.2) -> ParametricCurve:
    """The curve ``(1 + 0.2 cos nt)(cos t, sin t)``."""
    if n < 1:
        raise ValueError("leaf count must be positive")
    return discretize(
        radial_param(
            lambda t: 1 + amplitude * np.cos(n * t),
            lambda t: -amplitude * n * np.sin(n * t),
            lambda t: -amplitude * n * n * np.cos(n * t),
        ),
        n_nodes,
    )


def _kite_param(t):
    c, s = np.cos(t), np.sin(t)
    c2, s2 = np.cos(2 * t), np.sin(2 * t)
    x = np.column_stack([c + 0.65 * c2 - 0.65, 1.5 * s])
    dx = np.column_stack([-s - 1.3 * s2, 1.5 * c])
    ddx = np.column_stack([-c - 2.6 * c2, -1.5 * s])
    return x, dx, ddx


def make_kite(n_nodes: int) -> ParametricCurve:
    """The kite ``(cos t + 0.65 cos 2t - 0.65, 1.5 sin t)``."""
    return discretize(_kite_param, n_nodes)


@dataclass(frozen=True)
class StarShape:
    """Radial function ``a0 + sum_j a_j cos(jt) + b_j sin(jt)``, j = 1..8."""

    a0: float
    a: np.ndarray = field(default_factory=lambda: np.zeros(TRIG_DEGREE))
    b: np.ndarray = field(default_factory=lambda: np.zeros(TRIG_DEGREE))

    def __post_init__(self):
        a = np.zeros(TRIG_DEGREE)
        b = np.zeros(TRIG_DEGREE)
        a_in = np.asarray(self.a, dtype=float)
        b_in = np.asarray(self.b, dtype=float)
        if len(a_in) > TRIG_DEGREE or len(b_in) > TRIG_DEGREE:
            raise ValueError(f"at most {TRIG_DEGREE} cosine and sine coefficients")
        a[: len(a_in)] = a_in
        b[: len(b_in)] = b_in
        object.__setattr__(self, "a0", float(self.a0))
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @classmethod
    def circle(cls, radius: float) -> "StarShape":
        return cls(radius)

    @classmethod
    def from_vector(cls, c) -> "StarShape":
        c = np.asarray(c, dtype=float)
        return cls(c[0], c[1 : 1 + TRIG_DEGREE], c[1 + TRIG_DEGREE :])

    @classmethod
    def from_samples(cls, r) -> "StarShape":
        """Least-squares (FFT) projection of equispaced radial samples onto
        degree-8 trigonometric polynomials.  Exact for such polynomials when
        at least 17 samples are given.
        """
        r = np.asarray(r, dtype=float)
        n = len(r)
        if n < 2 * TRIG_DEGREE + 1:
            raise ValueError("need at least 17 samples")
        f = np.fft.rfft(r) / n
        a = 2 * f[1 : TRIG_DEGREE + 1].real
        b = -2 * f[1 : TRIG_DEGREE + 1].imag
        if n % 2 == 0 and n // 2 <= TRIG_DEGREE:
            a[n // 2 - 1] /= 2
        return cls(f[0].real, a, b)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([[self.a0], self.a, self.b])

    def _modes(self, t):
        j = np.arange(1, TRIG_DEGREE + 1)
        jt = np.outer(np.asarray(t, dtype=float), j)
        return j, np.cos(jt), np.sin(jt)

    def radius(self, t):
        _, c, s = self._modes(t)
        return self.a0 + c @ self.a + s @ self.b

    def d_radius(self, t):
        j, c, s = self._modes(t)
        return -s @ (j * self.a) + c @ (j * self.b)

    def dd_radius(self, t):
        j, c, s = self._modes(t)
        return -(c @ (j**2 * self.a) + s @ (j**2 * self.b))

    def rotated(self, angle: float) -> "StarShape":
        """Coefficients of ``t -> r(t - angle)``."""
        j = np.arange(1, TRIG_DEGREE + 1)
        c, s = np.cos(j * angle), np.sin(j * angle)
        return StarShape(self.a0, self.a * c - self.b * s, self.a * s + self.b * c)

    def param(self) -> Parametrization:
        return radial_param(self.radius, self.d_radius, self.dd_radius)


def make_star(shape: StarShape, n_nodes: int) -> ParametricCurve:
    t = equispaced_angles(n_nodes)
    if np.any(shape.radius(t) <= 0):
        raise InvalidShapeError("radial function is not positive at every node")
    return discretize(shape.param(), n_nodes)


@dataclass(frozen=True)
class RandomShapeSpec:
    """Knot data for a periodic cubic-spline radial function.

    Knots sit at ``T_i = 2*pi*i/n_T``; the spline closes periodically.
    """

    knot_radii: tuple
    seed: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "knot_radii", tuple(float(r) for r in self.knot_radii))
        if len(self.knot_radii) < 3:
            raise ValueError("need at least 3 knots")

    @property
    def n_knots(self) -> int:
        return len(self.knot_radii)

    @classmethod
    def draw(cls, rng, r_lo: float = 0.4, r_hi: float = 1.6, n_choices=range(8, 17)):
        """Draw ``n_T`` uniformly from ``n_choices`` and knot radii from U[r_lo, r_hi]."""
        seed = None
        if not isinstance(rng, np.random.Generator):
            seed = int(rng)
            rng = np.random.default_rng(seed)
        n_t = int(rng.choice(np.asarray(list(n_choices))))
        radii = rng.uniform(r_lo, r_hi, size=n_t)
        return cls(tuple(radii), seed)

    def spline(self) -> CubicSpline:
        n = self.n_knots
        knots = 2 * np.pi * np.arange(n + 1) / n
        values = np.append(self.knot_radii, self.knot_radii[0])
        return CubicSpline(knots, values, bc_type="periodic")

    def radius(self, t):
        return self.spline()(np.mod(t, 2 * np.pi))

    def overshoot(self, n_samples: int = 4096) -> float:
        """How far the spline leaves the knot range ``[min, max]``."""
        r = self.radius(equispaced_angles(n_samples))
        lo, hi = min(self.knot_radii), max(self.knot_radii)
        return float(max(0.0, lo - r.min(), r.max() - hi))

    def param(self) -> Parametrization:
        sp = self.spline()
        d1, d2 = sp.derivative(1), sp.derivative(2)

        def wrap(f):
            return lambda t: f(np.mod(t, 2 * np.pi))

        return radial_param(wrap(sp), wrap(d1), wrap(d2))


def make_random_shape(spec: RandomShapeSpec, n_nodes: int = 128) -> ParametricCurve:
    """Discretize the spline curve; 128 nodes unless asked otherwise."""
    t = equispaced_angles(n_nodes)
    if np.any(spec.radius(t) <= 0) or spec.radius(equispaced_angles(4096)).min() <= 0:
        raise InvalidShapeError("spline radius is not positive")
    return discretize(spec.param(), n_nodes)


def radial_samples(curve: ParametricCurve, angles, n_fine: int = 4096) -> np.ndarray:
    """Radial function of a curve about the origin, at the given polar angles.

    Works for any parametrized curve that is star-like with respect to the
    origin: each ray is intersected with the curve by root finding on the
    polar angle of ``x(t)``.
    """
    angles = np.mod(np.asarray(angles, dtype=float), 2 * np.pi)
    param = curve.param
    if param is None:
        raise ValueError("curve has no parametrization")

    def polar(t):
        x = param(np.atleast_1d(t))[0]
        return np.arctan2(x[:, 1], x[:, 0])

    tf = np.linspace(0, 2 * np.pi, n_fine + 1)
    phi = np.unwrap(polar(tf))
    if np.any(np.diff(phi) <= 0) or not np.isclose(phi[-1] - phi[0], 2 * np.pi):
        raise InvalidShapeError("curve is not star-like with respect to the origin")
    out = np.empty_like(angles)
    for i, theta in enumerate(angles):
        # shift target into the unwrapped range
        target = theta + 2 * np.pi * np.floor((phi[0] - theta) / (2 * np.pi) + 1)
        if target >= phi[-1]:
            target -= 2 * np.pi
        j = int(np.searchsorted(phi, target))
        j = min(max(j, 1), n_fine)

        def g(t, target=target):
            v = polar(t)[0]
            # keep the branch continuous with the fine-grid unwrapping
            v += 2 * np.pi * np.round((target - v) / (2 * np.pi))
            return v - target

        if g(tf[j - 1]) == 0:
            ts = tf[j - 1]
        elif g(tf[j]) == 0:
            ts = tf[j]
        else:
            ts = brentq(g, tf[j - 1], tf[j], xtol=1e-15)
        out[i] = np.linalg.norm(param(np.atleast_1d(ts))[0][0])
    return out


def relative_l2_error(r_true, r_rec) -> float:
    """Discrete relative L2 error of two radial functions on one angle grid."""
    r_true = np.asarray(r_true, dtype=float)
    r_rec = np.asarray(r_rec, dtype=float)
    if r_true.shape != r_rec.shape:
        raise ValueError("radial samples must share a grid")
    denom = np.sqrt(np.sum(r_true**2))
    if denom == 0:
        raise ZeroDivisionError("reference radial function vanishes")
    return float(np.sqrt(np.sum((r_true - r_rec) ** 2)) / denom)
