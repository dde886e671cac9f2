"""Split measured total fields into incident and scattered parts.

Each source's data on the two measurement curves is fitted by single-layer
potentials on two auxiliary circles, the inner one (radius R1) carrying the
incident part and the outer one (radius R2) the scattered part.  The block
system is ill-posed; it is solved by Tikhonov regularization with the
parameter picked by Morozov's discrepancy principle.

All matrices are scaled by square roots of quadrature weights so that
Euclidean norms approximate L2 norms on the curves, and the conjugate
transpose is the discrete adjoint.
"""

from __future__ import annotations

import csv
import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .forward import MeasurementSet
from .geometry import ParametricCurve, make_circle
from .specfun import WaveParams, fundamental_solution

__all__ = [
    "AuxiliaryPair",
    "DiscreteOperator",
    "DensityPair",
    "GeometryError",
    "DomainError",
    "DiscrepancyError",
    "DiscrepancyFloorWarning",
    "assemble_operator",
    "decouple",
    "eval_incident",
    "eval_scattered",
    "single_layer",
]

logger = logging.getLogger(__name__)

LOG_ALPHA_MIN = -14.0
LOG_ALPHA_MAX = 2.0
BISECTION_STEPS = 60


class GeometryError(ValueError):
    """Curves intersect or violate the required nesting."""


class DomainError(ValueError):
    """A potential was evaluated outside the region where it is valid."""


class DiscrepancyError(ValueError):
    """The discrepancy target exceeds the data norm; no alpha attains it."""


class DiscrepancyFloorWarning(UserWarning):
    """Even the smallest alpha leaves a residual above the target."""


@dataclass(frozen=True, eq=False)
class AuxiliaryPair:
    """Circles of radius R1 (inside Gamma1) and R2 (enclosing the cavity)."""

    r_inner: float
    r_outer: float
    n_inner: int = 90
    n_outer: int = 160
    inner: ParametricCurve = field(init=False, repr=False)
    outer: ParametricCurve = field(init=False, repr=False)

    def __post_init__(self):
        if not 0 < self.r_inner < self.r_outer:
            raise GeometryError("need 0 < R1 < R2")
        object.__setattr__(self, "inner", make_circle((0.0, 0.0), self.r_inner, self.n_inner))
        object.__setattr__(self, "outer", make_circle((0.0, 0.0), self.r_outer, self.n_outer))


def single_layer(points, curve: ParametricCurve, density, k: float) -> np.ndarray:
    """Trapezoidal single layer ``sum_q Phi(x, y_q) w_q density_q``.

    ``density`` may be (n,) or (n, N); the result has leading dimension M.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    kern = fundamental_solution(pts[:, None, :], curve.points[None, :, :], k)
    return (kern * curve.weights) @ density


@dataclass(frozen=True, eq=False)
class DiscreteOperator:
    """Weighted block matrix ``W_x^(1/2) [Phi(x_p, y_q)] W_y^(1/2)`` and its SVD.

    Rows run over Gamma1 then Gamma2 nodes; columns over dB1 then dB2 nodes.
    """

    aux: AuxiliaryPair
    gamma1: ParametricCurve
    gamma2: ParametricCurve
    k: float
    matrix: np.ndarray
    row_scale: np.ndarray
    col_scale: np.ndarray
    u: np.ndarray
    s: np.ndarray
    vh: np.ndarray

    @property
    def n_inner(self) -> int:
        return self.aux.n_inner

    def apply(self, phi) -> np.ndarray:
        """Unweighted values of ``S phi`` on Gamma1 then Gamma2."""
        return (self.matrix @ (self.col_scale * np.asarray(phi))) / self.row_scale

    def adjoint(self, g) -> np.ndarray:
        """Unweighted values of ``S* g`` on dB1 then dB2."""
        return (self.matrix.conj().T @ (self.row_scale * np.asarray(g))) / self.col_scale

    def inner_data(self, a, b) -> complex:
        """L2(Gamma1 x Gamma2) inner product, conjugate-linear in ``b``."""
        return np.sum(self.row_scale**2 * a * np.conj(b))

    def inner_density(self, a, b) -> complex:
        return np.sum(self.col_scale**2 * a * np.conj(b))


def assemble_operator(aux: AuxiliaryPair, gamma1: ParametricCurve, gamma2: ParametricCurve, k: float) -> DiscreteOperator:
    r1 = np.linalg.norm(gamma1.points, axis=1)
    r2 = np.linalg.norm(gamma2.points, axis=1)
    if r1.min() <= aux.r_inner:
        raise GeometryError("auxiliary circle dB1 is not strictly inside Gamma1")
    if r2.max() >= aux.r_outer:
        raise GeometryError("Gamma2 is not strictly inside auxiliary circle dB2")
    x = np.concatenate([gamma1.points, gamma2.points])
    y = np.concatenate([aux.inner.points, aux.outer.points])
    dist = np.linalg.norm(x[:, None, :] - y[None, :, :], axis=2)
    if dist.min() < 1e-12:
        raise GeometryError("measurement and auxiliary nodes coincide")
    row_scale = np.sqrt(np.concatenate([gamma1.weights, gamma2.weights]))
    col_scale = np.sqrt(np.concatenate([aux.inner.weights, aux.outer.weights]))
    kern = fundamental_solution(x[:, None, :], y[None, :, :], k)
    matrix = row_scale[:, None] * kern * col_scale[None, :]
    u, s, vh = np.linalg.svd(matrix, full_matrices=False)
    return DiscreteOperator(aux, gamma1, gamma2, float(k), matrix, row_scale, col_scale, u, s, vh)


@dataclass(frozen=True, eq=False)
class DensityPair:
    """Regularized densities for one source and the Morozov bookkeeping."""

    phi1: np.ndarray
    phi2: np.ndarray
    aux: AuxiliaryPair
    k: float
    alpha: float
    residual: float
    target: float
    below_floor: bool = False

    def incident(self, points) -> np.ndarray:
        return eval_incident(self, points)

    def scattered(self, points) -> np.ndarray:
        return eval_scattered(self, points)

    def scaled(self, c: float) -> "DensityPair":
        return DensityPair(c * self.phi1, c * self.phi2, self.aux, self.k, self.alpha,
                           abs(c) * self.residual, abs(c) * self.target, self.below_floor)

    def to_files(self, directory, stem: str) -> None:
        """``curve,node,re,im`` CSV plus a JSON sidecar with alpha and residual."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        with open(directory / f"{stem}.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["curve", "node", "re", "im"])
            for label, phi in (("B1", self.phi1), ("B2", self.phi2)):
                for i, v in enumerate(phi):
                    writer.writerow([label, i, f"{v.real:.17g}", f"{v.imag:.17g}"])
        sidecar = {
            "alpha": self.alpha,
            "residual": self.residual,
            "target": self.target,
            "below_floor": self.below_floor,
            "k": self.k,
            "R1": self.aux.r_inner,
            "R2": self.aux.r_outer,
            "n1": self.aux.n_inner,
            "n2": self.aux.n_outer,
        }
        (directory / f"{stem}.json").write_text(json.dumps(sidecar, indent=2))

    @classmethod
    def from_files(cls, directory, stem: str) -> "DensityPair":
        directory = Path(directory)
        meta = json.loads((directory / f"{stem}.json").read_text())
        aux = AuxiliaryPair(meta["R1"], meta["R2"], meta["n1"], meta["n2"])
        phi1 = np.zeros(aux.n_inner, dtype=complex)
        phi2 = np.zeros(aux.n_outer, dtype=complex)
        with open(directory / f"{stem}.csv") as fh:
            for rec in csv.DictReader(fh):
                target = phi1 if rec["curve"] == "B1" else phi2
                target[int(rec["node"])] = complex(float(rec["re"]), float(rec["im"]))
        return cls(phi1, phi2, aux, meta["k"], meta["alpha"], meta["residual"],
                   meta["target"], meta["below_floor"])


def _check_distance(pts, curve, what):
    d = np.linalg.norm(pts[:, None, :] - curve.points[None, :, :], axis=2)
    if d.min() < 1e-8:
        raise DomainError(f"evaluation point within 1e-8 of a {what} node")


def eval_incident(dp: DensityPair, points) -> np.ndarray:
    """Regularized incident field, valid outside the closed disk B1."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if np.any(np.linalg.norm(pts, axis=1) <= dp.aux.r_inner):
        raise DomainError("incident-field representation is only valid outside B1")
    _check_distance(pts, dp.aux.inner, "dB1")
    return single_layer(pts, dp.aux.inner, dp.phi1, dp.k)


def eval_scattered(dp: DensityPair, points) -> np.ndarray:
    """Regularized scattered field, valid inside the disk B2."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if np.any(np.linalg.norm(pts, axis=1) >= dp.aux.r_outer):
        raise DomainError("scattered-field representation is only valid inside B2")
    _check_distance(pts, dp.aux.outer, "dB2")
    return single_layer(pts, dp.aux.outer, dp.phi2, dp.k)


def _tikhonov_residual(alpha, s, beta_abs2, perp2):
    f = alpha / (s**2 + alpha)
    return np.sqrt(np.sum(f**2 * beta_abs2) + perp2)


def tikhonov_solve(op: DiscreteOperator, data, alpha: float) -> np.ndarray:
    """Unweighted densities solving ``(alpha + S*S) phi = S* data``."""
    b = op.row_scale * np.asarray(data)
    beta = op.u.conj().T @ b
    c = op.vh.conj().T @ (op.s / (op.s**2 + alpha) * beta)
    return c / op.col_scale


def decouple(op: DiscreteOperator, data: MeasurementSet, params: WaveParams, rho: float = 1.0) -> list:
    """Regularized densities for every source in ``data``.

    The discrepancy target for source j is ``rho * delta * ||u_j^delta|| +
    epsilon``; alpha is found by bisection in log10(alpha), starting from
    [-14, 2] and widening the upper end until the residual exceeds the target.

    Raises
    ------
    DiscrepancyError
        If the target is not below the data norm.
    """
    if data.gamma1.n_nodes != op.gamma1.n_nodes or data.gamma2.n_nodes != op.gamma2.n_nodes:
        raise ValueError("measurement curves do not match the operator")
    norms = data.weighted_norms()
    stacked = data.stacked()
    out = []
    for j in range(data.n_sources):
        b = op.row_scale * stacked[j]
        beta = op.u.conj().T @ b
        beta_abs2 = np.abs(beta) ** 2
        perp2 = max(float(np.vdot(b, b).real - beta_abs2.sum()), 0.0)
        bnorm = float(np.linalg.norm(b))
        target = rho * params.delta * norms[j] + params.epsilon
        if target >= bnorm:
            raise DiscrepancyError(
                f"source {j}: discrepancy target {target:.3g} is not below the data norm {bnorm:.3g}"
            )

        def res(log_alpha):
            return _tikhonov_residual(10.0**log_alpha, op.s, beta_abs2, perp2)

        below_floor = False
        if res(LOG_ALPHA_MIN) >= target:
            below_floor = True
            log_alpha = LOG_ALPHA_MIN
            warnings.warn(
                f"source {j}: residual floor {res(LOG_ALPHA_MIN):.3g} exceeds target {target:.3g}; "
                "using the smallest alpha",
                DiscrepancyFloorWarning,
                stacklevel=2,
            )
        else:
            lo, hi = LOG_ALPHA_MIN, LOG_ALPHA_MAX
            while res(hi) < target:
                lo, hi = hi, hi + 4.0
            for _ in range(BISECTION_STEPS):
                mid = 0.5 * (lo + hi)
                if res(mid) < target:
                    lo = mid
                else:
                    hi = mid
            log_alpha = 0.5 * (lo + hi)
        alpha = 10.0**log_alpha
        phi = tikhonov_solve(op, stacked[j], alpha)
        residual = float(res(log_alpha))
        logger.debug("source %d: alpha=%.3e residual=%.3e target=%.3e", j, alpha, residual, target)
        out.append(
            DensityPair(phi[: op.n_inner], phi[op.n_inner :], op.aux, op.k, alpha, residual, target, below_floor)
        )
    return out
