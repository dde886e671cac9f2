"""End-to-end experiments: synthetic data, decoupling, localization and recovery.

An :class:`ExperimentConfig` is a single JSON document.  A master seed fans
out into independent child seeds for the noise, the random cavity and the
random sources, so each stage can be rerun on its own.
"""

from __future__ import annotations

import copy
import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .decoupler import AuxiliaryPair, DensityPair, assemble_operator, decouple
from .forward import MeasurementSet, add_noise, measure, solve_forward
from .geometry import (
    InvalidShapeError,
    ParametricCurve,
    RandomShapeSpec,
    StarShape,
    equispaced_angles,
    make_circle,
    make_kite,
    make_nleaf,
    make_random_shape,
    make_star,
    radial_samples,
    relative_l2_error,
)
from .locator import SamplingGrid, far_circle, indicator_field, locate_sources
from .reconstruct import AdmissibleClass, reconstruct_cavity
from .specfun import WaveParams

__all__ = [
    "STAGES",
    "ExperimentConfig",
    "ConfigError",
    "StageError",
    "RunReport",
    "validate_config",
    "stage_seeds",
    "build_cavity",
    "build_sources",
    "draw_random_shape",
    "truth_radius",
    "run_experiment",
]

logger = logging.getLogger(__name__)

STAGES = ("forward", "decouple", "locate", "reconstruct")
ERROR_ANGLES = 128
# margin between a random cavity and the measurement / auxiliary circles
RANDOM_SHAPE_MARGIN = 0.05
MAX_SHAPE_DRAWS = 10_000


class ConfigError(ValueError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class StageError(RuntimeError):
    """A numerical failure inside one pipeline stage."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")


def _default_optimizer():
    return {
        "n_nodes": 64,
        "margin": 0.01,
        "init_radius": 1.0,
        "max_iter": 200,
        "cost_tol": 1e-6,
        "step_tol": 1e-5,
        "lam0": 1e-3,
        "fd_step": 1e-6,
        "max_step": 0.1,
    }


@dataclass
class ExperimentConfig:
    """Every numeric knob of one experiment.

    ``cavity`` is one of ``{"type": "nleaf", "n", "amplitude"}``,
    ``{"type": "kite"}``, ``{"type": "circle", "radius"}``,
    ``{"type": "star", "coefficients"}`` or
    ``{"type": "random", "r_lo", "r_hi"}`` (knots drawn from the shape seed).
    ``sources`` is ``{"type": "list", "points"}``,
    ``{"type": "ring", "n", "radius", "phase"}`` or
    ``{"type": "random", "n", "radius"}`` (uniform in a disk).
    """

    name: str = "experiment"
    k: float = 10.0
    delta: float = 0.1
    epsilon: float = 1e-16
    rho: float = 1.0
    per_sample_noise: bool = True
    cavity: dict = field(default_factory=lambda: {"type": "nleaf", "n": 5, "amplitude": 0.2})
    sources: dict = field(default_factory=lambda: {"type": "ring", "n": 5, "radius": 0.3, "phase": 0.0})
    forward_nodes: int = 256
    measurement_radii: tuple = (0.5, 0.7)
    measurement_nodes: int = 128
    aux_radii: tuple = (0.4, 1.5)
    aux_nodes: tuple = (90, 160)
    gamma3_radius: float = 15.0
    gamma3_nodes: int = 256
    grid: dict = field(default_factory=lambda: asdict(SamplingGrid()))
    refine_sources: bool = False
    optimizer: dict = field(default_factory=_default_optimizer)
    seed: int = 0
    out_dir: Optional[str] = None

    def __post_init__(self):
        self.measurement_radii = tuple(float(r) for r in self.measurement_radii)
        self.aux_radii = tuple(float(r) for r in self.aux_radii)
        self.aux_nodes = tuple(int(n) for n in self.aux_nodes)
        self.optimizer = {**_default_optimizer(), **self.optimizer}
        self.grid = {**asdict(SamplingGrid()), **self.grid}

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError([f"unknown config key '{key}'" for key in sorted(unknown)])
        return cls(**copy.deepcopy(data))

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        out = asdict(self)
        out["measurement_radii"] = list(self.measurement_radii)
        out["aux_radii"] = list(self.aux_radii)
        out["aux_nodes"] = list(self.aux_nodes)
        return out

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    def wave_params(self) -> WaveParams:
        return WaveParams(self.k, self.delta, self.epsilon)

    def sampling_grid(self) -> SamplingGrid:
        return SamplingGrid(**self.grid)

    def admissible_class(self) -> AdmissibleClass:
        r1, r2 = self.aux_radii
        opt = self.optimizer
        return AdmissibleClass.for_aux(r1, r2, opt["margin"], opt["n_nodes"])


def stage_seeds(master: int) -> dict:
    """Independent child seeds for the noise, cavity and source draws."""
    children = np.random.SeedSequence(int(master)).spawn(3)
    names = ("noise", "shape", "sources")
    return {n: int(c.generate_state(1, dtype=np.uint64)[0]) for n, c in zip(names, children)}


def validate_config(cfg: ExperimentConfig) -> list:
    """Human-readable list of violated constraints; empty when runnable."""
    out = []
    if not cfg.k > 0:
        out.append("wavenumber k must be positive")
    if not 0 <= cfg.delta < 1:
        out.append("noise level delta must lie in [0, 1)")
    if cfg.epsilon < 0:
        out.append("epsilon must be nonnegative")
    if cfg.rho <= 0:
        out.append("discrepancy factor rho must be positive")
    rg1, rg2 = cfg.measurement_radii
    r1, r2 = cfg.aux_radii
    if min(rg1, rg2, r1, r2) <= 0:
        out.append("all radii must be positive")
    if not r1 < rg1:
        out.append("auxiliary B1 not inside Γ1")
    if not rg1 < rg2:
        out.append("Γ1 not inside Γ2")
    if not rg2 < r2:
        out.append("Γ2 not inside auxiliary B2")
    if cfg.gamma3_radius <= r1:
        out.append("Γ3 must enclose B1")
    if cfg.measurement_nodes < 8 or cfg.forward_nodes < 8 or min(cfg.aux_nodes) < 8:
        out.append("node counts must be at least 8")
    try:
        SamplingGrid(**cfg.grid)
    except (TypeError, ValueError) as exc:
        out.append(f"invalid sampling grid: {exc}")
    opt = cfg.optimizer
    if opt["margin"] < 0 or r1 + opt["margin"] >= r2 - opt["margin"]:
        out.append("optimizer margin leaves no admissible radii")
    elif not r1 + opt["margin"] <= opt["init_radius"] <= r2 - opt["margin"]:
        out.append("initial circle outside the admissible annulus")

    out += _validate_sources(cfg)
    out += _validate_cavity(cfg)
    return out


def _validate_sources(cfg):
    out = []
    spec = cfg.sources
    r1 = cfg.aux_radii[0]
    kind = spec.get("type")
    if kind == "list":
        pts = np.asarray(spec.get("points", []), dtype=float).reshape(-1, 2)
        if len(pts) == 0:
            out.append("at least one source is required")
        for i, p in enumerate(pts):
            if np.hypot(*p) >= r1:
                out.append(f"source {i} at ({p[0]:g}, {p[1]:g}) not inside B1")
        if len(pts) > 1:
            d = np.linalg.norm(pts[:, None] - pts[None], axis=2) + np.eye(len(pts))
            if d.min() < 1e-8:
                out.append("source points must be distinct")
    elif kind in ("ring", "random"):
        if int(spec.get("n", 0)) < 1:
            out.append("at least one source is required")
        if not 0 <= float(spec.get("radius", -1)) < r1:
            out.append("source radius not inside B1")
    else:
        out.append(f"unknown source type '{kind}'")
    return out


def _validate_cavity(cfg):
    kind = cfg.cavity.get("type")
    if kind not in ("nleaf", "kite", "circle", "star", "random"):
        return [f"unknown cavity type '{kind}'"]
    if kind == "random":
        lo, hi = cfg.cavity.get("r_lo", 0.4), cfg.cavity.get("r_hi", 1.6)
        if not 0 < lo < hi:
            return ["random cavity needs 0 < r_lo < r_hi"]
        return []
    try:
        r = truth_radius(cfg, build_cavity(cfg, 512), 512)
    except (InvalidShapeError, ValueError) as exc:
        return [f"invalid cavity: {exc}"]
    out = []
    if r.min() <= cfg.measurement_radii[1]:
        out.append("measurement curve Γ2 not inside the cavity")
    if r.max() >= cfg.aux_radii[1]:
        out.append("cavity not inside auxiliary B2")
    return out


def draw_random_shape(seed: int, r_lo: float = 0.4, r_hi: float = 1.6, inner: float = 0.0,
                      outer: float = np.inf) -> RandomShapeSpec:
    """Random spline radial function lying strictly within ``(inner, outer)``.

    Draws are repeated from the same generator until the spline clears both
    bounds; raises after :data:`MAX_SHAPE_DRAWS` attempts.
    """
    rng = np.random.default_rng(seed)
    t = equispaced_angles(4096)
    for _ in range(MAX_SHAPE_DRAWS):
        spec = RandomShapeSpec.draw(rng, r_lo, r_hi)
        r = spec.radius(t)
        if r.min() > inner and r.max() < outer:
            return RandomShapeSpec(spec.knot_radii, seed)
    raise InvalidShapeError(f"no admissible random shape after {MAX_SHAPE_DRAWS} draws")


def _random_spec(cfg: ExperimentConfig) -> RandomShapeSpec:
    c = cfg.cavity
    if "knot_radii" in c:
        return RandomShapeSpec(tuple(c["knot_radii"]), c.get("seed"))
    seed = c.get("seed", stage_seeds(cfg.seed)["shape"])
    return draw_random_shape(seed, c.get("r_lo", 0.4), c.get("r_hi", 1.6),
                             cfg.measurement_radii[1] + RANDOM_SHAPE_MARGIN,
                             cfg.aux_radii[1] - RANDOM_SHAPE_MARGIN)


def build_cavity(cfg: ExperimentConfig, n_nodes: Optional[int] = None) -> ParametricCurve:
    n = cfg.forward_nodes if n_nodes is None else n_nodes
    c = cfg.cavity
    kind = c["type"]
    if kind == "nleaf":
        return make_nleaf(int(c["n"]), n, c.get("amplitude", 0.2))
    if kind == "kite":
        return make_kite(n)
    if kind == "circle":
        return make_circle((0.0, 0.0), c["radius"], n)
    if kind == "star":
        return make_star(StarShape.from_vector(c["coefficients"]), n)
    if kind == "random":
        return make_random_shape(_random_spec(cfg), n)
    raise ConfigError([f"unknown cavity type '{kind}'"])


def truth_radius(cfg: ExperimentConfig, cavity: Optional[ParametricCurve] = None,
                 n_angles: int = ERROR_ANGLES) -> np.ndarray:
    """Radial function of the true cavity on ``n_angles`` equispaced angles."""
    t = equispaced_angles(n_angles)
    c = cfg.cavity
    kind = c["type"]
    if kind == "nleaf":
        return 1.0 + c.get("amplitude", 0.2) * np.cos(int(c["n"]) * t)
    if kind == "circle":
        return np.full(n_angles, float(c["radius"]))
    if kind == "star":
        return StarShape.from_vector(c["coefficients"]).radius(t)
    if kind == "random":
        return _random_spec(cfg).radius(t)
    cavity = build_cavity(cfg) if cavity is None else cavity
    return radial_samples(cavity, t)


def build_sources(cfg: ExperimentConfig) -> np.ndarray:
    s = cfg.sources
    kind = s["type"]
    if kind == "list":
        return np.asarray(s["points"], dtype=float).reshape(-1, 2)
    n = int(s["n"])
    if kind == "ring":
        ang = 2 * np.pi * np.arange(n) / n + s.get("phase", 0.0)
        return s["radius"] * np.column_stack([np.cos(ang), np.sin(ang)])
    if kind == "random":
        rng = np.random.default_rng(s.get("seed", stage_seeds(cfg.seed)["sources"]))
        rad = s["radius"] * np.sqrt(rng.uniform(0, 1, n))
        ang = rng.uniform(0, 2 * np.pi, n)
        return np.column_stack([rad * np.cos(ang), rad * np.sin(ang)])
    raise ConfigError([f"unknown source type '{kind}'"])


@dataclass
class RunReport:
    name: str
    seed: int
    seeds: dict
    sources_true: list
    sources_found: list = field(default_factory=list)
    source_errors: list = field(default_factory=list)
    cavity_error: Optional[float] = None
    coefficients: list = field(default_factory=list)
    cost: Optional[float] = None
    termination: Optional[str] = None
    iterations: Optional[int] = None
    alphas: list = field(default_factory=list)
    residuals: list = field(default_factory=list)
    targets: list = field(default_factory=list)
    below_floor: list = field(default_factory=list)
    condition: Optional[float] = None
    timings: dict = field(default_factory=dict)
    files: dict = field(default_factory=dict)
    completed: list = field(default_factory=list)
    error: Optional[str] = None

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2))

    @classmethod
    def from_json(cls, path) -> "RunReport":
        return cls(**json.loads(Path(path).read_text()))


def _curves(cfg: ExperimentConfig):
    rg1, rg2 = cfg.measurement_radii
    g1 = make_circle((0.0, 0.0), rg1, cfg.measurement_nodes)
    g2 = make_circle((0.0, 0.0), rg2, cfg.measurement_nodes)
    meta = {"gamma1": {"radius": rg1, "n_nodes": cfg.measurement_nodes},
            "gamma2": {"radius": rg2, "n_nodes": cfg.measurement_nodes}}
    return g1, g2, meta


def _aux(cfg: ExperimentConfig) -> AuxiliaryPair:
    return AuxiliaryPair(*cfg.aux_radii, *cfg.aux_nodes)


def run_experiment(cfg: ExperimentConfig, out_dir=None, until: str = "reconstruct") -> RunReport:
    """Run the stages up to and including ``until``.

    Artifacts go to ``out_dir`` (or ``cfg.out_dir``) when given.  A stage
    failure is re-raised as :class:`StageError` after the partial report has
    been written.
    """
    if until not in STAGES:
        raise ValueError(f"unknown stage '{until}'")
    violations = validate_config(cfg)
    if violations:
        raise ConfigError(violations)
    out = out_dir if out_dir is not None else cfg.out_dir
    out = None if out is None else Path(out)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        cfg.save(out / "config.json")

    seeds = stage_seeds(cfg.seed)
    sources = build_sources(cfg)
    report = RunReport(cfg.name, int(cfg.seed), seeds, sources.tolist())
    last = STAGES.index(until)
    state = {}
    for stage in STAGES[: last + 1]:
        t0 = time.perf_counter()
        try:
            _STAGE_FUNCS[stage](cfg, state, report, out, sources, seeds)
        except Exception as exc:
            report.error = f"[{stage}] {type(exc).__name__}: {exc}"
            if out is not None:
                report.to_json(out / "report.json")
            raise StageError(stage, exc) from exc
        report.timings[stage] = time.perf_counter() - t0
        report.completed.append(stage)
        logger.info("stage %s done in %.2f s", stage, report.timings[stage])
    if out is not None:
        report.files["report"] = "report.json"
        report.to_json(out / "report.json")
    return report


def _stage_forward(cfg, state, report, out, sources, seeds):
    cavity = build_cavity(cfg)
    g1, g2, meta = _curves(cfg)
    sol = solve_forward(cavity, sources, cfg.k)
    report.condition = float(sol.condition)
    clean = measure(sol, g1, g2, meta)
    noisy = add_noise(clean, cfg.delta, seeds["noise"], per_sample=cfg.per_sample_noise)
    state["data"] = noisy
    state["truth"] = truth_radius(cfg, cavity)
    if out is not None:
        noisy.to_files(out / "measurements", "measurements")
        report.files["measurements"] = "measurements/measurements.json"
        t = equispaced_angles(ERROR_ANGLES)
        np.savetxt(out / "truth_curve.csv", np.column_stack([t, state["truth"]]), delimiter=",",
                   header="t,r", comments="", fmt="%.17g")
        report.files["truth_curve"] = "truth_curve.csv"


def _stage_decouple(cfg, state, report, out, sources, seeds):
    data: MeasurementSet = state["data"]
    op = assemble_operator(_aux(cfg), data.gamma1, data.gamma2, cfg.k)
    dps = decouple(op, data, cfg.wave_params(), rho=cfg.rho)
    state["densities"] = dps
    report.alphas = [dp.alpha for dp in dps]
    report.residuals = [dp.residual for dp in dps]
    report.targets = [dp.target for dp in dps]
    report.below_floor = [bool(dp.below_floor) for dp in dps]
    if out is not None:
        stems = [f"density{j}" for j in range(len(dps))]
        for stem, dp in zip(stems, dps):
            dp.to_files(out / "densities", stem)
        (out / "densities" / "manifest.json").write_text(json.dumps({"stems": stems}, indent=2))
        report.files["densities"] = "densities/manifest.json"


def _stage_locate(cfg, state, report, out, sources, seeds):
    grid = cfg.sampling_grid()
    g3 = far_circle(cfg.gamma3_radius, cfg.gamma3_nodes)
    fields_ = [indicator_field(dp, grid, g3, cfg.k) for dp in state["densities"]]
    found = locate_sources(fields_, refine=cfg.refine_sources)
    report.sources_found = found.points.tolist()
    report.source_errors = found.errors(sources).tolist()
    if out is not None:
        (out / "indicators").mkdir(exist_ok=True)
        for j, f in enumerate(fields_):
            f.to_csv(out / "indicators" / f"indicator{j}.csv")
        found.to_json(out / "sources.json", truth=sources)
        report.files["sources"] = "sources.json"
        report.files["indicators"] = [f"indicators/indicator{j}.csv" for j in range(len(fields_))]


def _stage_reconstruct(cfg, state, report, out, sources, seeds):
    opt = cfg.optimizer
    truth = state.get("truth")
    if truth is None:
        truth = truth_radius(cfg)
    res = reconstruct_cavity(
        state["densities"], cfg.admissible_class(), StarShape.circle(opt["init_radius"]), cfg.k,
        cost_tol=opt["cost_tol"], step_tol=opt["step_tol"], max_iter=opt["max_iter"],
        lam0=opt["lam0"], fd_step=opt["fd_step"], max_step=opt["max_step"], truth=truth,
    )
    report.cavity_error = res.relative_error
    report.coefficients = res.shape.to_vector().tolist()
    report.cost = res.cost
    report.termination = res.termination
    report.iterations = res.iterations
    if out is not None:
        res.to_json(out / "reconstruction.json")
        res.to_curve_csv(out / "reconstruction_curve.csv", ERROR_ANGLES)
        report.files["reconstruction"] = "reconstruction.json"
        report.files["reconstruction_curve"] = "reconstruction_curve.csv"


_STAGE_FUNCS = {
    "forward": _stage_forward,
    "decouple": _stage_decouple,
    "locate": _stage_locate,
    "reconstruct": _stage_reconstruct,
}


def load_measurements(out_dir) -> MeasurementSet:
    return MeasurementSet.from_files(Path(out_dir) / "measurements" / "measurements.json")


def load_densities(out_dir) -> list:
    base = Path(out_dir) / "densities"
    stems = json.loads((base / "manifest.json").read_text())["stems"]
    return [DensityPair.from_files(base, s) for s in stems]


def run_stage(cfg: ExperimentConfig, stage: str, out_dir) -> RunReport:
    """Run one stage from the artifacts of the previous one in ``out_dir``."""
    if stage not in STAGES:
        raise ValueError(f"unknown stage '{stage}'")
    violations = validate_config(cfg)
    if violations:
        raise ConfigError(violations)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seeds = stage_seeds(cfg.seed)
    sources = build_sources(cfg)
    report = RunReport(cfg.name, int(cfg.seed), seeds, sources.tolist())
    state = {}
    t0 = time.perf_counter()
    try:
        if stage == "decouple":
            state["data"] = load_measurements(out)
        elif stage in ("locate", "reconstruct"):
            state["densities"] = load_densities(out)
        _STAGE_FUNCS[stage](cfg, state, report, out, sources, seeds)
    except Exception as exc:
        report.error = f"[{stage}] {type(exc).__name__}: {exc}"
        report.to_json(out / f"report_{stage}.json")
        raise StageError(stage, exc) from exc
    report.timings[stage] = time.perf_counter() - t0
    report.completed.append(stage)
    report.to_json(out / f"report_{stage}.json")
    return report
