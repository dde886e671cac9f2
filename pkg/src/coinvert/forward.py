"""Synthetic data: interior sound-soft scattering by a Nystrom solver.

The scattered field is a double-layer potential ``u^s = D psi`` over the
cavity boundary.  Its interior trace gives the second-kind equation

    psi - 2 K psi = 2 u^i     on the boundary,

discretized with the Kussmaul-Martensen splitting of the logarithmic
singularity of the kernel (trigonometric product quadrature on 2n nodes).
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import linalg, special

from .geometry import ParametricCurve, make_circle
from .specfun import fundamental_solution

__all__ = [
    "BoundarySolution",
    "MeasurementSet",
    "EigenvalueProximityError",
    "SingularPointError",
    "km_log_weights",
    "solve_forward",
    "eval_scattered_field",
    "eval_total_field",
    "measure",
    "add_noise",
]

logger = logging.getLogger(__name__)

MAX_CONDITION = 1e12
# targets closer than this to the boundary use the boundary trace
ON_BOUNDARY_TOL = 1e-13
MAX_UPSAMPLED_NODES = 2**18
# node spacing must stay below distance / _NEAR_FACTOR
_NEAR_FACTOR = 6.0


class EigenvalueProximityError(RuntimeError):
    """The Nystrom matrix is numerically singular (k^2 near an eigenvalue)."""


class SingularPointError(ValueError):
    """Evaluation point coincides with a point source."""


def km_log_weights(n_nodes: int, t=None) -> np.ndarray:
    """Weights ``R_j(t)`` with ``int log(4 sin^2((t-s)/2)) f(s) ds ~ sum_j R_j(t) f(t_j)``.

    Without ``t`` returns the circulant first row (t = t_0 = 0), an array of
    length ``n_nodes``.  With ``t`` returns shape ``(len(t), n_nodes)``.
    """
    if n_nodes % 2:
        raise ValueError("Kussmaul-Martensen quadrature needs an even node count")
    n = n_nodes // 2
    tj = np.pi * np.arange(n_nodes) / n
    diff = -tj[None, :] if t is None else np.atleast_1d(t)[:, None] - tj[None, :]
    m = np.arange(1, n)
    acc = np.cos(diff[..., None] * m) @ (1.0 / m)
    out = -2 * np.pi / n * acc - np.pi / n**2 * np.cos(n * diff)
    return out[0] if t is None else out


def _kernel_parts(x_t, dx_t, ddx_t, t, x_s, dx_s, t_s, k):
    """Split ``L = L1 log(4 sin^2((t-s)/2)) + L2`` for the doubled double layer.

    Targets ``(x_t, t)`` are on the boundary; sources ``(x_s, t_s)`` are the
    quadrature nodes.  Coincident parameters get the analytic diagonal.
    """
    d = x_t[:, None, :] - x_s[None, :, :]
    r = np.hypot(d[..., 0], d[..., 1])
    numer = dx_s[None, :, 1] * d[..., 0] - dx_s[None, :, 0] * d[..., 1]
    diff = t[:, None] - t_s[None, :]
    same = np.abs(np.angle(np.exp(1j * diff))) < 1e-14
    r_safe = np.where(same, 1.0, r)
    kr = k * r_safe
    L = 0.5j * k * special.hankel1(1, kr) * numer / r_safe
    L1 = -k / (2 * np.pi) * numer * special.j1(kr) / r_safe
    log_term = np.log(np.where(same, 1.0, 4 * np.sin(diff / 2) ** 2))
    L2 = L - L1 * log_term
    if np.any(same):
        speed2 = dx_t[:, 0] ** 2 + dx_t[:, 1] ** 2
        curv = (dx_t[:, 1] * ddx_t[:, 0] - dx_t[:, 0] * ddx_t[:, 1]) / (2 * np.pi * speed2)
        rows, cols = np.nonzero(same)
        L1[rows, cols] = 0.0
        L2[rows, cols] = curv[rows]
    return L1, L2


@dataclass(frozen=True, eq=False)
class BoundarySolution:
    """Double-layer densities on the cavity boundary, one column per source."""

    cavity: ParametricCurve
    sources: np.ndarray
    density: np.ndarray
    k: float
    condition: float = float("nan")

    @property
    def n_sources(self) -> int:
        return self.sources.shape[0]

    def boundary_trace(self, t) -> np.ndarray:
        """Total field on the boundary at parameters ``t``; shape (len(t), N).

        Uses the Nystrom interpolant of ``2 K psi`` and the trigonometric
        interpolant of ``psi``.  Vanishes up to discretization error.
        """
        t = np.atleast_1d(np.asarray(t, dtype=float))
        c = self.cavity
        x, dx, ddx = c.evaluate(t)
        L1, L2 = _kernel_parts(x, dx, ddx, t, c.points, c.d_points, c.t, self.k)
        R = km_log_weights(c.n_nodes, t)
        two_k_psi = (R * L1 + 2 * np.pi / c.n_nodes * L2) @ self.density
        psi_t = _trig_interpolate(self.density, t)
        ui = fundamental_solution(x[:, None, :], self.sources[None, :, :], self.k)
        return ui + 0.5 * two_k_psi - 0.5 * psi_t


def _trig_interpolate(values: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Evaluate the trigonometric interpolant of equispaced samples at ``t``."""
    n = values.shape[0]
    coef = np.fft.fft(values, axis=0) / n
    freqs = np.fft.fftfreq(n, d=1.0 / n)
    if n % 2 == 0:
        # split the Nyquist mode symmetrically so the interpolant is real-symmetric
        nyq = n // 2
        coef = np.concatenate([coef, coef[nyq : nyq + 1] / 2], axis=0)
        coef[nyq] /= 2
        freqs = np.append(freqs, n // 2)
    basis = np.exp(1j * np.outer(t, freqs))
    return basis @ coef


def _upsample(values: np.ndarray, m: int) -> np.ndarray:
    """Trigonometric interpolation of equispaced samples onto ``m`` equispaced points."""
    n = values.shape[0]
    if m == n:
        return values
    coef = np.fft.fft(values, axis=0)
    out = np.zeros((m,) + values.shape[1:], dtype=complex)
    half = n // 2
    if n % 2 == 0:
        out[:half] = coef[:half]
        out[m - half + 1 :] = coef[half + 1 :]
        out[half] = coef[half] / 2
        out[m - half] = coef[half] / 2
    else:
        out[: half + 1] = coef[: half + 1]
        out[m - half :] = coef[half + 1 :]
    return np.fft.ifft(out, axis=0) * (m / n)


def solve_forward(cavity: ParametricCurve, sources, k: float, check_condition: bool = True) -> BoundarySolution:
    """Solve the interior Dirichlet problem for point sources inside ``cavity``.

    Parameters
    ----------
    cavity : ParametricCurve
        Counterclockwise boundary with an even node count.
    sources : array_like, shape (2,) or (N, 2)
        Source locations strictly inside the cavity.
    k : float
        Wavenumber.

    Raises
    ------
    EigenvalueProximityError
        When the condition number of the Nystrom matrix exceeds 1e12.
    """
    sources = np.atleast_2d(np.asarray(sources, dtype=float))
    n = cavity.n_nodes
    L1, L2 = _kernel_parts(
        cavity.points, cavity.d_points, cavity.dd_points, cavity.t,
        cavity.points, cavity.d_points, cavity.t, k,
    )
    row = km_log_weights(n)
    idx = (np.arange(n)[None, :] - np.arange(n)[:, None]) % n
    R = row[idx]
    A = np.eye(n) - (R * L1 + 2 * np.pi / n * L2)
    cond = float("nan")
    if check_condition:
        cond = float(np.linalg.cond(A))
        if not np.isfinite(cond) or cond > MAX_CONDITION:
            raise EigenvalueProximityError(
                f"Nystrom matrix condition number {cond:.3g} exceeds {MAX_CONDITION:g}; "
                f"k={k} is too close to a Dirichlet eigenvalue, choose a different k"
            )
    rhs = 2 * fundamental_solution(cavity.points[:, None, :], sources[None, :, :], k)
    density = linalg.solve(A, rhs)
    return BoundarySolution(cavity, sources, density, float(k), cond)


def _double_layer(points, nodes, d_nodes, density, k):
    d = points[:, None, :] - nodes[None, :, :]
    r = np.hypot(d[..., 0], d[..., 1])
    numer = d_nodes[None, :, 1] * d[..., 0] - d_nodes[None, :, 0] * d[..., 1]
    kern = 0.25j * k * special.hankel1(1, k * r) * numer / r
    return 2 * np.pi / nodes.shape[0] * kern @ density


def _upsampled_double_layer(sol: BoundarySolution, point, d: float) -> np.ndarray:
    """Double layer at one point a distance ``d`` from the boundary."""
    c = sol.cavity
    m = c.n_nodes
    while m < MAX_UPSAMPLED_NODES and 2 * np.pi * c.speed.max() / m > d / _NEAR_FACTOR:
        m *= 2
    fine = c.resample(m) if m > c.n_nodes else c
    dens = _upsample(sol.density, m)
    return _double_layer(np.atleast_2d(point), fine.points, fine.d_points, dens, sol.k)[0]


def _nearest_parameter(curve: ParametricCurve, p: np.ndarray) -> tuple[float, float]:
    """Parameter of the boundary point closest to ``p`` and the distance."""
    i = int(np.argmin(np.linalg.norm(curve.points - p, axis=1)))
    t = curve.t[i]
    for _ in range(30):
        x, dx, ddx = curve.evaluate(t)
        g = np.dot(x[0] - p, dx[0])
        h = np.dot(dx[0], dx[0]) + np.dot(x[0] - p, ddx[0])
        step = g / h if h > 0 else 0.0
        t = t - step
        if abs(step) < 1e-15:
            break
    x = curve.evaluate(t)[0][0]
    return float(t), float(np.linalg.norm(x - p))


def eval_scattered_field(sol: BoundarySolution, points, chunk: int = 512) -> np.ndarray:
    """Scattered field at points in the closed cavity; shape (M, N).

    Far from the boundary plain trapezoidal quadrature is spectrally
    accurate.  Near the boundary the density is upsampled by trigonometric
    interpolation; points on the boundary use the boundary trace.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    c = sol.cavity
    h = c.speed.max() * 2 * np.pi / c.n_nodes
    dist = np.min(
        np.hypot(pts[:, None, 0] - c.points[None, :, 0], pts[:, None, 1] - c.points[None, :, 1]),
        axis=1,
    )
    out = np.empty((len(pts), sol.n_sources), dtype=complex)
    far = dist > 8 * h
    for start in range(0, int(far.sum()), chunk):
        sel = np.flatnonzero(far)[start : start + chunk]
        out[sel] = _double_layer(pts[sel], c.points, c.d_points, sol.density, sol.k)
    for i in np.flatnonzero(~far):
        t_star, d = _nearest_parameter(c, pts[i])
        if d < ON_BOUNDARY_TOL:
            x = c.evaluate(t_star)[0]
            ui = fundamental_solution(x[:, None, :], sol.sources[None, :, :], sol.k)
            out[i] = (sol.boundary_trace(t_star) - ui)[0]
            continue
        x_star, dx_star, _ = c.evaluate(t_star)
        nrm = np.array([dx_star[0, 1], -dx_star[0, 0]]) / np.linalg.norm(dx_star[0])
        d_min = _NEAR_FACTOR * 2 * np.pi * c.speed.max() / MAX_UPSAMPLED_NODES
        if d >= d_min:
            out[i] = _upsampled_double_layer(sol, pts[i], d)
            continue
        # too close for affordable upsampling: cubic interpolation along the
        # inward normal through the boundary trace and three resolvable points
        ds = d_min * np.array([1.0, 2.0, 3.0])
        vals = [(sol.boundary_trace(t_star) - fundamental_solution(
            x_star[:, None, :], sol.sources[None, :, :], sol.k))[0]]
        vals += [_upsampled_double_layer(sol, x_star[0] - dj * nrm, dj) for dj in ds]
        nodes = np.concatenate([[0.0], ds])
        lag = np.array([
            np.prod([(d - nodes[m]) / (nodes[l] - nodes[m]) for m in range(4) if m != l])
            for l in range(4)
        ])
        out[i] = lag @ np.array(vals)
    return out


def eval_total_field(sol: BoundarySolution, curve_or_points) -> np.ndarray:
    """Total field ``u^i + u^s``; shape (M, N) for M points and N sources."""
    pts = curve_or_points.points if isinstance(curve_or_points, ParametricCurve) else curve_or_points
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    r = np.linalg.norm(pts[:, None, :] - sol.sources[None, :, :], axis=2)
    if np.any(r < 1e-8):
        raise SingularPointError("evaluation point within 1e-8 of a source")
    ui = fundamental_solution(pts[:, None, :], sol.sources[None, :, :], sol.k)
    return ui + eval_scattered_field(sol, pts)


@dataclass(frozen=True, eq=False)
class MeasurementSet:
    """Total-field samples on two measurement curves.

    ``u1`` has shape (N, n1) and ``u2`` shape (N, n2): one row per source.
    """

    gamma1: ParametricCurve
    gamma2: ParametricCurve
    u1: np.ndarray
    u2: np.ndarray
    k: float
    sources: Optional[np.ndarray] = None
    delta: float = 0.0
    seed: Optional[int] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.u1.shape[1] != self.gamma1.n_nodes or self.u2.shape[1] != self.gamma2.n_nodes:
            raise ValueError("sample counts do not match curve node counts")
        if self.u1.shape[0] != self.u2.shape[0]:
            raise ValueError("both curves need one row per source")
        if not (np.all(np.isfinite(self.u1)) and np.all(np.isfinite(self.u2))):
            raise ValueError("non-finite measurement values")

    @property
    def n_sources(self) -> int:
        return self.u1.shape[0]

    def stacked(self) -> np.ndarray:
        """Samples on both curves side by side, shape (N, n1 + n2)."""
        return np.concatenate([self.u1, self.u2], axis=1)

    def weighted_norms(self) -> np.ndarray:
        """Discrete L2(Gamma1 x Gamma2) norm of each source's data."""
        w = np.concatenate([self.gamma1.weights, self.gamma2.weights])
        return np.sqrt(np.sum(np.abs(self.stacked()) ** 2 * w, axis=1))

    def to_files(self, directory, stem: str = "measurements") -> Path:
        """Write a JSON manifest plus one ``curve,node,re,im`` CSV per source."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        curves = {}
        for name, curve in (("gamma1", self.gamma1), ("gamma2", self.gamma2)):
            fname = f"{stem}_{name}.csv"
            curve.to_csv(directory / fname)
            curves[name] = {"file": fname, **self.meta.get(name, {})}
        files = []
        for j in range(self.n_sources):
            fname = f"{stem}_source{j}.csv"
            with open(directory / fname, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["curve", "node", "re", "im"])
                for label, u in (("gamma1", self.u1[j]), ("gamma2", self.u2[j])):
                    for i, v in enumerate(u):
                        writer.writerow([label, i, f"{v.real:.17g}", f"{v.imag:.17g}"])
            files.append(fname)
        manifest = {
            "k": self.k,
            "delta": self.delta,
            "seed": self.seed,
            "curves": curves,
            "sources": None if self.sources is None else self.sources.tolist(),
            "data_files": files,
        }
        path = directory / f"{stem}.json"
        path.write_text(json.dumps(manifest, indent=2))
        return path

    @classmethod
    def from_files(cls, manifest_path) -> "MeasurementSet":
        """Load a manifest written by :meth:`to_files` (circular curves only)."""
        manifest_path = Path(manifest_path)
        man = json.loads(manifest_path.read_text())
        base = manifest_path.parent
        curves = {}
        for name in ("gamma1", "gamma2"):
            info = man["curves"][name]
            if "radius" not in info:
                raise ValueError(f"curve {name} lacks circle metadata")
            curves[name] = make_circle(info.get("center", (0.0, 0.0)), info["radius"], info["n_nodes"])
        u1, u2 = [], []
        for fname in man["data_files"]:
            rows = {"gamma1": {}, "gamma2": {}}
            with open(base / fname) as fh:
                for rec in csv.DictReader(fh):
                    rows[rec["curve"]][int(rec["node"])] = complex(float(rec["re"]), float(rec["im"]))
            u1.append([rows["gamma1"][i] for i in range(curves["gamma1"].n_nodes)])
            u2.append([rows["gamma2"][i] for i in range(curves["gamma2"].n_nodes)])
        meta = {name: {k: v for k, v in man["curves"][name].items() if k != "file"} for name in curves}
        return cls(
            curves["gamma1"],
            curves["gamma2"],
            np.array(u1),
            np.array(u2),
            float(man["k"]),
            None if man["sources"] is None else np.array(man["sources"], dtype=float),
            float(man["delta"]),
            man["seed"],
            meta,
        )


def measure(sol: BoundarySolution, gamma1: ParametricCurve, gamma2: ParametricCurve, meta=None) -> MeasurementSet:
    u1 = eval_total_field(sol, gamma1).T
    u2 = eval_total_field(sol, gamma2).T
    return MeasurementSet(gamma1, gamma2, u1, u2, sol.k, sol.sources.copy(), meta=dict(meta or {}))


def add_noise(data: MeasurementSet, delta: float, seed=None, per_sample: bool = True) -> MeasurementSet:
    """Perturb each sample by ``g1 * delta * |u| * exp(i*pi*g2)``, g1, g2 ~ U[-1, 1].

    ``per_sample=False`` draws one pair ``(g1, g2)`` per source and curve
    instead of one per sample.
    """
    if not 0 <= delta < 1:
        raise ValueError("noise level must lie in [0, 1)")
    if delta == 0:
        return replace(data, delta=0.0, seed=seed)
    rng = np.random.default_rng(seed)
    out = []
    for u in (data.u1, data.u2):
        shape = u.shape if per_sample else (u.shape[0], 1)
        g1 = rng.uniform(-1, 1, size=shape)
        g2 = rng.uniform(-1, 1, size=shape)
        out.append(u + g1 * delta * np.abs(u) * np.exp(1j * np.pi * g2))
    return replace(data, u1=out[0], u2=out[1], delta=float(delta), seed=seed)
