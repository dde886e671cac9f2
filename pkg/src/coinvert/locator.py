"""Direct-sampling localization of point sources.

For each source the decoupled incident field is sampled on a large circle
Gamma3 and correlated with outgoing phase factors,

    I(y) = Re sum_x u^i(x) exp(-i (k |x - y| + pi/4)) w_x,

which peaks near the source.  The grid argmax inside B1 is the estimate.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .decoupler import DensityPair, DomainError
from .geometry import ParametricCurve, make_circle

__all__ = [
    "GAMMA3_RADIUS",
    "GAMMA3_NODES",
    "SamplingGrid",
    "IndicatorField",
    "SourceSet",
    "far_circle",
    "indicator_values",
    "indicator_field",
    "locate_sources",
]

GAMMA3_RADIUS = 15.0
GAMMA3_NODES = 256


@dataclass(frozen=True)
class SamplingGrid:
    """Equispaced ``n_x`` by ``n_y`` points on ``[x_lo, x_hi] x [y_lo, y_hi]``."""

    x_lo: float = -1.0
    x_hi: float = 1.0
    y_lo: float = -1.0
    y_hi: float = 1.0
    n_x: int = 150
    n_y: int = 150

    def __post_init__(self):
        if self.n_x < 2 or self.n_y < 2:
            raise ValueError("a grid needs at least two points per axis")
        if not (self.x_lo < self.x_hi and self.y_lo < self.y_hi):
            raise ValueError("empty sampling box")

    @property
    def xs(self) -> np.ndarray:
        return np.linspace(self.x_lo, self.x_hi, self.n_x)

    @property
    def ys(self) -> np.ndarray:
        return np.linspace(self.y_lo, self.y_hi, self.n_y)

    @property
    def spacing(self) -> tuple[float, float]:
        return (self.x_hi - self.x_lo) / (self.n_x - 1), (self.y_hi - self.y_lo) / (self.n_y - 1)

    def points(self) -> np.ndarray:
        """Row-major (y outer, x inner) array of shape (n_y * n_x, 2)."""
        gx, gy = np.meshgrid(self.xs, self.ys)
        return np.column_stack([gx.ravel(), gy.ravel()])

    def inside(self, radius: float) -> np.ndarray:
        """Boolean (n_y, n_x) mask of points with norm strictly below ``radius``."""
        gx, gy = np.meshgrid(self.xs, self.ys)
        return np.hypot(gx, gy) < radius


@dataclass(frozen=True, eq=False)
class IndicatorField:
    """Indicator values on a grid for one source, with the admissible mask."""

    grid: SamplingGrid
    values: np.ndarray
    mask: np.ndarray

    @property
    def argmax_index(self) -> tuple[int, int]:
        """``(iy, ix)`` of the largest admissible value; first in row-major order on ties."""
        masked = np.where(self.mask, self.values, -np.inf)
        flat = int(np.argmax(masked))
        return divmod(flat, self.grid.n_x)

    @property
    def argmax(self) -> np.ndarray:
        iy, ix = self.argmax_index
        return np.array([self.grid.xs[ix], self.grid.ys[iy]])

    def refined_argmax(self) -> np.ndarray:
        """Grid argmax shifted to the vertex of 1D parabolas through the 3x3 neighborhood."""
        iy, ix = self.argmax_index
        hx, hy = self.grid.spacing
        out = self.argmax.astype(float)
        v = self.values
        if 0 < ix < self.grid.n_x - 1:
            out[0] += hx * _parabola_offset(v[iy, ix - 1], v[iy, ix], v[iy, ix + 1])
        if 0 < iy < self.grid.n_y - 1:
            out[1] += hy * _parabola_offset(v[iy - 1, ix], v[iy, ix], v[iy + 1, ix])
        return out

    def to_csv(self, path) -> None:
        xs, ys = self.grid.xs, self.grid.ys
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["ix", "iy", "x", "y", "value"])
            for iy in range(self.grid.n_y):
                for ix in range(self.grid.n_x):
                    writer.writerow([ix, iy, f"{xs[ix]:.17g}", f"{ys[iy]:.17g}", f"{self.values[iy, ix]:.17g}"])


def _parabola_offset(left, mid, right) -> float:
    curv = left - 2 * mid + right
    if curv >= 0:
        return 0.0
    return float(np.clip(0.5 * (left - right) / curv, -0.5, 0.5))


@dataclass(frozen=True)
class SourceSet:
    points: np.ndarray
    refined: bool = False

    def errors(self, truth) -> np.ndarray:
        return np.linalg.norm(self.points - np.asarray(truth, dtype=float), axis=1)

    def to_json(self, path, truth=None) -> None:
        payload = {"points": self.points.tolist(), "refined": self.refined}
        if truth is not None:
            payload["truth"] = np.asarray(truth, dtype=float).tolist()
            payload["errors"] = self.errors(truth).tolist()
        Path(path).write_text(json.dumps(payload, indent=2))


def far_circle(radius: float = GAMMA3_RADIUS, n_nodes: int = GAMMA3_NODES) -> ParametricCurve:
    return make_circle((0.0, 0.0), radius, n_nodes)


def indicator_values(u_far, gamma3: ParametricCurve, points, k: float, chunk: int = 2048) -> np.ndarray:
    """Indicator at ``points`` from incident-field samples ``u_far`` on Gamma3."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    weighted = np.asarray(u_far) * gamma3.weights * np.exp(-0.25j * np.pi)
    # Re(exp(-i k d) w) = cos(k d) Re w + sin(k d) Im w
    wr, wi = weighted.real.copy(), weighted.imag.copy()
    out = np.empty(len(pts))
    for start in range(0, len(pts), chunk):
        block = pts[start:start + chunk]
        kd = k * np.hypot(gamma3.points[None, :, 0] - block[:, None, 0], gamma3.points[None, :, 1] - block[:, None, 1])
        out[start:start + chunk] = np.cos(kd) @ wr + np.sin(kd) @ wi
    return out


def indicator_field(dp: DensityPair, grid: Optional[SamplingGrid] = None,
                    gamma3: Optional[ParametricCurve] = None, k: Optional[float] = None,
                    strict: bool = False) -> IndicatorField:
    """Indicator of one source over ``grid``.

    The indicator is evaluated at every grid point, but only points inside
    B1 take part in the argmax.  With ``strict=True`` any grid point outside
    B1 raises :class:`DomainError` instead.
    """
    grid = SamplingGrid() if grid is None else grid
    gamma3 = far_circle() if gamma3 is None else gamma3
    k = dp.k if k is None else k
    mask = grid.inside(dp.aux.r_inner)
    if strict and not mask.all():
        raise DomainError("sampling grid extends outside B1")
    if not mask.any():
        raise DomainError("sampling grid has no point inside B1")
    u_far = dp.incident(gamma3.points)
    vals = indicator_values(u_far, gamma3, grid.points(), k).reshape(grid.n_y, grid.n_x)
    return IndicatorField(grid, vals, mask)


def locate_sources(fields: Sequence[IndicatorField], refine: bool = False) -> SourceSet:
    """Grid argmax of each indicator; optional 3x3 quadratic refinement."""
    if len(fields) == 0:
        raise ValueError("no indicator fields given")
    pts = np.array([f.refined_argmax() if refine else f.argmax for f in fields])
    return SourceSet(pts, refine)
