"""Cavity recovery by minimizing the boundary defect over star-like curves.

A candidate boundary is ``r(t)(cos t, sin t)`` with ``r`` a trigonometric
polynomial of degree 8.  On the true boundary the regularized incident
plus scattered field nearly vanishes, so the sum over sources of the
squared L2 norm of that field on the candidate curve is minimized with a
Levenberg-Marquardt iteration and a forward-difference Jacobian.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .decoupler import DensityPair
from .geometry import StarShape, equispaced_angles, relative_l2_error
from .specfun import fundamental_solution

__all__ = [
    "AdmissibleClass",
    "ReconstructionResult",
    "InfeasibleShapeError",
    "boundary_defect",
    "defect_cost",
    "reconstruct_cavity",
    "fd_jacobian",
    "jacobian_check",
]

logger = logging.getLogger(__name__)


class InfeasibleShapeError(ValueError):
    """Candidate curve leaves the annulus between the auxiliary circles."""


@dataclass(frozen=True)
class AdmissibleClass:
    """Radial bounds ``a <= r <= b`` and the node count on candidate curves."""

    a: float
    b: float
    n_nodes: int = 64

    def __post_init__(self):
        if not 0 < self.a < self.b:
            raise ValueError("need 0 < a < b")

    @classmethod
    def for_aux(cls, r_inner: float, r_outer: float, margin: float = 0.01, n_nodes: int = 64):
        return cls(r_inner + margin, r_outer - margin, n_nodes)


@dataclass
class ReconstructionResult:
    shape: StarShape
    cost_history: list
    iterations: int
    termination: str
    relative_error: Optional[float] = None
    lambda_history: list = field(default_factory=list)

    @property
    def cost(self) -> float:
        return self.cost_history[-1]

    def to_json(self, path) -> None:
        payload = {
            "coefficients": self.shape.to_vector().tolist(),
            "a0": self.shape.a0,
            "a": self.shape.a.tolist(),
            "b": self.shape.b.tolist(),
            "cost_history": self.cost_history,
            "iterations": self.iterations,
            "termination": self.termination,
            "relative_error": self.relative_error,
        }
        Path(path).write_text(json.dumps(payload, indent=2))

    def to_curve_csv(self, path, n_angles: int = 128) -> None:
        """Reconstructed curve as ``t,r,x,y`` rows on equispaced angles."""
        t = equispaced_angles(n_angles)
        r = self.shape.radius(t)
        table = np.column_stack([t, r, r * np.cos(t), r * np.sin(t)])
        np.savetxt(path, table, delimiter=",", header="t,r,x,y", comments="", fmt="%.17g")


def _stack_densities(densities):
    if len(densities) == 0:
        raise ValueError("at least one source is required")
    aux = densities[0].aux
    k = densities[0].k
    phi1 = np.column_stack([dp.phi1 for dp in densities])
    phi2 = np.column_stack([dp.phi2 for dp in densities])
    return aux, k, phi1, phi2


def boundary_defect(shape: StarShape, densities, n_nodes: int = 64, k: Optional[float] = None,
                    bounds: Optional[tuple] = None) -> np.ndarray:
    """Weighted residual vector whose squared norm is the discrete defect.

    For each source j and candidate node x_i the entry is
    ``sqrt(w_i) * (u^i_j(x_i) + u^s_j(x_i))``; real and imaginary parts are
    interleaved, sources are stacked.  With ``bounds=(a, b)`` the radial
    function is clamped into ``[a, b]`` before evaluation.

    Raises
    ------
    InfeasibleShapeError
        If any node lies outside the open annulus ``R1 < |x| < R2``.
    """
    aux, k_dp, phi1, phi2 = _stack_densities(densities)
    k = k_dp if k is None else k
    t = equispaced_angles(n_nodes)
    r = shape.radius(t)
    dr = shape.d_radius(t)
    if bounds is not None:
        lo, hi = bounds
        inside = (r > lo) & (r < hi)
        r = np.clip(r, lo, hi)
        dr = np.where(inside, dr, 0.0)
    if np.any(r <= aux.r_inner) or np.any(r >= aux.r_outer):
        raise InfeasibleShapeError(
            f"candidate radius range [{r.min():.4f}, {r.max():.4f}] leaves the annulus "
            f"({aux.r_inner}, {aux.r_outer})"
        )
    pts = r[:, None] * np.column_stack([np.cos(t), np.sin(t)])
    sw = np.sqrt(2 * np.pi / n_nodes * np.sqrt(r**2 + dr**2))
    k1 = fundamental_solution(pts[:, None, :], aux.inner.points[None, :, :], k) * aux.inner.weights
    k2 = fundamental_solution(pts[:, None, :], aux.outer.points[None, :, :], k) * aux.outer.weights
    field_ = (k1 @ phi1 + k2 @ phi2) * sw[:, None]
    per_source = field_.T
    out = np.empty((per_source.shape[0], 2 * n_nodes))
    out[:, 0::2] = per_source.real
    out[:, 1::2] = per_source.imag
    return out.ravel()


def defect_cost(shape: StarShape, densities, n_nodes: int = 64, bounds=None) -> float:
    res = boundary_defect(shape, densities, n_nodes, bounds=bounds)
    return float(res @ res)


def fd_jacobian(fun, c: np.ndarray, step: float = 1e-6, f0=None) -> np.ndarray:
    """Forward-difference Jacobian of ``fun`` at ``c``."""
    f0 = fun(c) if f0 is None else f0
    jac = np.empty((f0.size, c.size))
    for i in range(c.size):
        e = c.copy()
        e[i] += step
        jac[:, i] = (fun(e) - f0) / step
    return jac


def reconstruct_cavity(densities, cls: AdmissibleClass, init: Optional[StarShape] = None,
                       k: Optional[float] = None, *, cost_tol: float = 1e-6, step_tol: float = 1e-5,
                       max_iter: int = 200, lam0: float = 1e-3, fd_step: float = 1e-6,
                       max_lambda: float = 1e12, max_step: Optional[float] = 0.1,
                       truth=None) -> ReconstructionResult:
    """Levenberg-Marquardt minimization of the boundary defect.

    Stops when the cost drops below ``cost_tol``, when an accepted step has
    norm below ``step_tol``, or after ``max_iter`` iterations.  If no damping
    up to ``max_lambda`` decreases the cost, the best shape so far is returned
    with termination ``"stalled"``.

    A trial step whose coefficient norm exceeds ``max_step`` is treated like
    a rejected step (damping raised tenfold).  Without this cap the first,
    nearly Gauss-Newton step from the unit circle can jump into the region
    where the radial clamp is active and the defect is flat.

    ``truth`` may be radial samples on 128 equispaced angles; the relative
    L2 error of the result is then filled in.
    """
    init = StarShape.circle(1.0) if init is None else init
    bounds = (cls.a, cls.b)

    def fun(c):
        return boundary_defect(StarShape.from_vector(c), densities, cls.n_nodes, k, bounds)

    c = init.to_vector()
    f = fun(c)
    cost = float(f @ f)
    history = [cost]
    lam_hist = []
    lam = lam0
    termination = "max_iter"
    it = 0
    if cost < cost_tol:
        termination = "cost"
    else:
        for it in range(1, max_iter + 1):
            jac = fd_jacobian(fun, c, fd_step, f)
            jtj = jac.T @ jac
            grad = jac.T @ f
            scale = np.maximum(np.diag(jtj), 1e-12 * max(np.diag(jtj).max(), 1e-300))
            accepted = False
            while lam <= max_lambda:
                try:
                    step = np.linalg.solve(jtj + lam * np.diag(scale), -grad)
                except np.linalg.LinAlgError:
                    lam *= 10
                    continue
                if max_step is not None and np.linalg.norm(step) > max_step:
                    lam *= 10
                    continue
                c_new = c + step
                f_new = fun(c_new)
                cost_new = float(f_new @ f_new)
                if cost_new < cost:
                    accepted = True
                    break
                lam *= 10
            if not accepted:
                termination = "stalled"
                it -= 1
                break
            c, f, cost = c_new, f_new, cost_new
            history.append(cost)
            lam_hist.append(lam)
            lam = max(lam / 10, 1e-15)
            logger.debug("LM iter %d cost %.6e |step| %.3e lambda %.1e", it, cost, np.linalg.norm(step), lam)
            if cost < cost_tol:
                termination = "cost"
                break
            if np.linalg.norm(step) < step_tol:
                termination = "step"
                break
    shape = StarShape.from_vector(c)
    err = None
    if truth is not None:
        err = relative_l2_error(truth, shape.radius(equispaced_angles(len(truth))))
    return ReconstructionResult(shape, history, it, termination, err, lam_hist)


def jacobian_check(shape: StarShape, densities, n_nodes: int = 64, k: Optional[float] = None,
                   steps=(1e-5, 1e-7)) -> float:
    """Largest column-wise relative deviation between FD Jacobians at two steps."""

    def fun(c):
        return boundary_defect(StarShape.from_vector(c), densities, n_nodes, k)

    c = shape.to_vector()
    f0 = fun(c)
    j1 = fd_jacobian(fun, c, steps[0], f0)
    j2 = fd_jacobian(fun, c, steps[1], f0)
    dev = 0.0
    for i in range(c.size):
        ref = np.linalg.norm(j2[:, i])
        diff = np.linalg.norm(j1[:, i] - j2[:, i])
        if ref == 0:
            if diff != 0:
                return float("inf")
            continue
        dev = max(dev, diff / ref)
    return float(dev)
