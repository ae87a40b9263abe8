"""Experiment definitions, convergence studies and CSV output."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path

import numpy as np

from feec_sl import _kernels as K
from feec_sl.femspace import DiscreteOneForm, DofMap, assemble_boundary_flux, l2_error
from feec_sl.mesh import Mesh, MeshError, generate_structured, load_mesh
from feec_sl.quadrature import triangle_rule
from feec_sl.solver import (
    BoundaryData,
    EnergyTrace,
    SimConfig,
    SolverState,
    divergence_residual,
    init_state,
    leray_init,
    step,
)

EXPERIMENTS = ("exp1", "exp2", "exp3", "exp5", "exp6")
UNIT_BOX = (-0.5, 0.5, -0.5, 0.5)
DOMAINS = {"exp1": UNIT_BOX, "exp2": (-1.0, 1.0, -1.0, 1.0), "exp3": UNIT_BOX, "exp5": UNIT_BOX}


class ConfigError(ValueError):
    pass


# -- exact fields ---------------------------------------------------------

def taylor_green(x: np.ndarray, t: float = 0.0, eps: float = 0.0) -> np.ndarray:
    a, b = np.pi * x[:, 0], np.pi * x[:, 1]
    amp = math.exp(-2 * np.pi**2 * eps * t)
    return amp * np.stack([np.cos(a) * np.sin(b), -np.sin(a) * np.cos(b)], axis=1)


def taylor_green_energy(t: float, eps: float, e0: float) -> float:
    return e0 * math.exp(-4 * np.pi**2 * eps * t)


def taylor_green_vorticity(x: np.ndarray) -> np.ndarray:
    return -2 * np.pi * np.cos(np.pi * x[:, 0]) * np.cos(np.pi * x[:, 1])


def taylor_green_advection(x: np.ndarray) -> np.ndarray:
    """``(u . grad) u`` of the steady vortex."""
    return -0.5 * np.pi * np.stack([np.sin(2 * np.pi * x[:, 0]), np.sin(2 * np.pi * x[:, 1])], axis=1)


def steady_vortex_forcing(eps: float):
    """Forcing that keeps the vortex steady: ``(u . grad) u - eps * laplace(u)``."""

    def f(t, x):
        return taylor_green_advection(x) + 2 * np.pi**2 * eps * taylor_green(x)

    return f


def hump(x: np.ndarray) -> np.ndarray:
    """Rotational initial field derived from the stream function ``e^x cos(pi x) cos(pi y)``."""
    ex = np.exp(x[:, 0])
    a, b = np.pi * x[:, 0], np.pi * x[:, 1]
    return np.stack(
        [
            -np.pi * ex * np.cos(a) * np.sin(b),
            np.pi * ex * np.sin(a) * np.cos(b) - ex * np.cos(a) * np.cos(b),
        ],
        axis=1,
    )


def lid_profile(y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    s = 1.0 - 100.0 * (0.5 - y) ** 2
    out = np.zeros_like(s)
    pos = s > 0
    out[pos] = np.exp(1.0 - 1.0 / s[pos])
    return out


def lid_forcing(t, x):
    return np.stack([lid_profile(x[:, 1]), np.zeros(len(x))], axis=1)


def swirl(x: np.ndarray) -> np.ndarray:
    r = np.hypot(x[:, 0], x[:, 1])
    th = np.arctan2(x[:, 1], x[:, 0])
    return np.stack([np.sin(2 * np.cos(r) - th), np.sin(np.cos(r) - 2 * th)], axis=1)


# -- specs and reports ----------------------------------------------------

@dataclass
class ExperimentSpec:
    exp: str = "exp1"
    n: int = 16
    mesh_file: str | None = None
    order: int = 1
    conservative: bool = False
    eps: float = 0.0
    tau: float | None = None
    tau_per_h: float | None = 0.065804
    T: float = 1.0
    out_dir: str | None = None
    levels: int = 3
    snapshot_every: int = 0

    def __post_init__(self):
        if self.exp not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.exp!r}")
        if self.order not in (1, 2):
            raise ConfigError("order must be 1 or 2")
        if self.tau is None and not (self.tau_per_h and self.tau_per_h > 0):
            raise ConfigError("need a positive tau or tau_per_h")
        if self.tau is not None and self.tau <= 0:
            raise ConfigError("tau must be positive")
        if self.T <= 0:
            raise ConfigError("T must be positive")
        if self.eps < 0:
            raise ConfigError("eps must be non-negative")
        if self.n < 1:
            raise ConfigError("n must be positive")

    def timestep(self, h: float) -> tuple[float, int]:
        """Uniform step dividing ``T`` exactly, not larger than the requested one."""
        tau = self.tau if self.tau is not None else self.tau_per_h * h
        steps = max(1, math.ceil(self.T / tau - 1e-9))
        return self.T / steps, steps


@dataclass
class ConvergenceRow:
    h: float
    tau: float
    l2_error: float
    eoc: float = float("nan")


@dataclass
class ConvergenceReport:
    rows: list[ConvergenceRow] = field(default_factory=list)

    def add(self, h: float, tau: float, err: float) -> None:
        self.rows.append(ConvergenceRow(h, tau, err))
        self.rows.sort(key=lambda r: -r.h)
        for prev, cur in zip(self.rows, self.rows[1:]):
            cur.eoc = eoc(prev.l2_error, cur.l2_error, prev.h / cur.h)
        self.rows[0].eoc = float("nan")

    @property
    def final_eoc(self) -> float:
        return self.rows[-1].eoc if len(self.rows) > 1 else float("nan")


def eoc(e_coarse: float, e_fine: float, ratio: float = 2.0) -> float:
    return math.log(e_coarse / e_fine) / math.log(ratio)


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    state: SolverState
    report: ConvergenceReport
    trace: EnergyTrace
    max_div_residual: float
    files: list[Path] = field(default_factory=list)


# -- meshes ---------------------------------------------------------------

def bundled_mesh_text(name: str = "annulus.msh") -> str:
    return resources.files("feec_sl").joinpath("data", name).read_text()


def build_mesh(spec: ExperimentSpec) -> Mesh:
    if spec.mesh_file is not None:
        try:
            mesh = load_mesh(Path(spec.mesh_file).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read mesh file: {exc}") from exc
    elif spec.exp == "exp6":
        mesh = load_mesh(bundled_mesh_text())
    else:
        return generate_structured(spec.n, spec.n, DOMAINS[spec.exp])
    box = DOMAINS.get(spec.exp)
    if box is not None:
        lo, hi = mesh.vertices.min(axis=0), mesh.vertices.max(axis=0)
        want = np.array(box)
        got = np.array([lo[0], hi[0], lo[1], hi[1]])
        if not np.allclose(got, want, atol=1e-9):
            raise ConfigError(f"{spec.exp} needs the domain {box}, mesh covers {tuple(got)}")
    return mesh


# -- runners --------------------------------------------------------------

def _config(spec: ExperimentSpec, mesh: Mesh, **kw) -> tuple[SimConfig, int]:
    tau, steps = spec.timestep(mesh.h)
    cfg = SimConfig(tau=tau, T=spec.T, eps=spec.eps, order=spec.order, conservative=spec.conservative, **kw)
    return cfg, steps


def _march(state: SolverState, cfg: SimConfig, steps: int, spec: ExperimentSpec, files: list[Path]) -> tuple[SolverState, float]:
    worst = 0.0
    for _ in range(steps):
        state = step(state, cfg)
        worst = max(worst, divergence_residual(state, cfg))
        if spec.snapshot_every and spec.out_dir and state.step % spec.snapshot_every == 0:
            files.append(write_field(state.omega, Path(spec.out_dir), state.t))
    return state, worst


def run_exp1(spec: ExperimentSpec) -> ExperimentResult:
    mesh = build_mesh(spec)
    dm = DofMap(mesh, spec.order)
    cfg, steps = _config(spec, mesh)
    st = init_state(leray_init(dm, taylor_green), cfg)
    files: list[Path] = []
    st, worst = _march(st, cfg, steps, spec, files)
    err = l2_error(st.omega, lambda x: taylor_green(x, st.t, spec.eps))
    rep = ConvergenceReport()
    rep.add(mesh.h, cfg.tau, err)
    return _finish(spec, st, rep, worst, files)


def exp2_boundary() -> BoundaryData:
    return BoundaryData(velocity=taylor_green, vorticity=taylor_green_vorticity)


def run_exp2(spec: ExperimentSpec) -> ExperimentResult:
    mesh = build_mesh(spec)
    dm = DofMap(mesh, spec.order)
    bd = exp2_boundary()
    cfg, steps = _config(spec, mesh, forcing=steady_vortex_forcing(spec.eps), boundary=bd)
    st = init_state(_interpolate_with_flux(dm, bd), cfg)
    files: list[Path] = []
    st, worst = _march(st, cfg, steps, spec, files)
    rep = ConvergenceReport()
    rep.add(mesh.h, cfg.tau, l2_error(st.omega, taylor_green))
    return _finish(spec, st, rep, worst, files)


def _interpolate_with_flux(dm: DofMap, bd: BoundaryData) -> DiscreteOneForm:
    return leray_init(dm, bd.velocity, flux=assemble_boundary_flux(dm, bd.velocity))


def exp2_sweep(spec: ExperimentSpec, eps_values=(1.0, 1e-2, 1e-4, 0.0)) -> dict[float, float]:
    return {e: run_exp2(replace(spec, eps=e, out_dir=None)).report.rows[0].l2_error for e in eps_values}


def run_exp3(spec: ExperimentSpec) -> ExperimentResult:
    mesh = build_mesh(spec)
    dm = DofMap(mesh, spec.order)
    cfg, steps = _config(spec, mesh)
    st = init_state(leray_init(dm, hump), cfg)
    files: list[Path] = []
    st, worst = _march(st, cfg, steps, spec, files)
    return _finish(spec, st, ConvergenceReport(), worst, files)


def run_exp5(spec: ExperimentSpec) -> ExperimentResult:
    mesh = build_mesh(spec)
    dm = DofMap(mesh, spec.order)
    cfg, steps = _config(spec, mesh, forcing=lid_forcing)
    st = init_state(DiscreteOneForm.zeros(dm), cfg)
    files: list[Path] = []
    st, worst = _march(st, cfg, steps, spec, files)
    res = _finish(spec, st, ConvergenceReport(), worst, files)
    if spec.out_dir:
        res.files.append(write_field(st.omega, Path(spec.out_dir), st.t))
    return res


def run_exp6(spec: ExperimentSpec) -> ExperimentResult:
    mesh = build_mesh(spec)
    dm = DofMap(mesh, spec.order)
    cfg, steps = _config(spec, mesh)
    st = init_state(leray_init(dm, swirl), cfg)
    files: list[Path] = []
    st, worst = _march(st, cfg, steps, spec, files)
    return _finish(spec, st, ConvergenceReport(), worst, files)


RUNNERS = {"exp1": run_exp1, "exp2": run_exp2, "exp3": run_exp3, "exp5": run_exp5, "exp6": run_exp6}


def run_experiment(spec: ExperimentSpec) -> ExperimentResult:
    return RUNNERS[spec.exp](spec)


def _finish(spec, st, rep, worst, files) -> ExperimentResult:
    worst = max(worst, st.trace.records[0].div_residual)
    res = ExperimentResult(spec, st, rep, st.trace, worst, files)
    if spec.out_dir:
        out = Path(spec.out_dir)
        res.files.append(write_energy(st.trace, out))
        if rep.rows:
            res.files.append(write_errors(rep, out))
    return res


# -- convergence ----------------------------------------------------------

def l2_difference(coarse: DiscreteOneForm, fine: DiscreteOneForm, degree: int = 6) -> float:
    """L2 distance between two discrete fields on nested meshes, integrated on the finer one."""
    fm = fine.dof_map.mesh
    cm = coarse.dof_map.mesh
    pts, wts = triangle_rule(degree)
    acc = np.zeros(fm.n_triangles)
    for lam, w in zip(pts, wts):
        x = np.ascontiguousarray(fine.dof_map.physical_points(lam))
        uc, elems = K.eval_many(x, np.full(len(x), -1, dtype=np.int64), coarse.coeffs, cm.kernel_geometry, coarse.dof_map.kernel_basis)
        if np.any(elems < 0):
            raise MeshError("meshes are not nested: fine quadrature point outside the coarse mesh")
        d = fine.values_all(lam) - uc
        acc += w * np.einsum("td,td->t", d, d)
    return float(np.sqrt(np.sum(acc * fm.area)))


def convergence_driver(spec: ExperimentSpec, sizes: list[int] | None = None) -> ConvergenceReport:
    """Run on structured meshes with ``n`` doubling; exact errors, or self-convergence for exp3."""
    if spec.exp not in ("exp1", "exp2", "exp3"):
        raise ConfigError(f"{spec.exp} has no convergence study")
    if sizes is None:
        sizes = [spec.n * 2**k for k in range(spec.levels)]
    if len(sizes) < 2:
        raise ConfigError("need at least two meshes")
    rep = ConvergenceReport()
    if spec.exp == "exp3":
        runs = [run_exp3(replace(spec, n=n, mesh_file=None, out_dir=None)) for n in sizes]
        ref = runs[-1].state.omega
        for r in runs[:-1]:
            rep.add(r.state.dof_map.mesh.h, r.state.system.tau, l2_difference(r.state.omega, ref))
    else:
        for n in sizes:
            r = run_experiment(replace(spec, n=n, mesh_file=None, out_dir=None))
            rep.add(*_row(r.report.rows[0]))
    if spec.out_dir:
        write_errors(rep, Path(spec.out_dir))
    return rep


def _row(r: ConvergenceRow):
    return r.h, r.tau, r.l2_error


# -- output ---------------------------------------------------------------

def write_errors(rep: ConvergenceReport, out: Path) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / "errors.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["h", "tau", "l2_error", "eoc"])
        for r in rep.rows:
            w.writerow([repr(r.h), repr(r.tau), repr(r.l2_error), "" if math.isnan(r.eoc) else repr(r.eoc)])
    return path


def write_energy(trace: EnergyTrace, out: Path) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / "energy.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "t", "energy", "dissipation", "work", "mu"])
        for r in trace.records:
            w.writerow([r.step, repr(r.t), repr(r.energy), repr(r.dissipation), repr(r.work), repr(r.mu)])
    return path


def sample_field(form: DiscreteOneForm, n: int = 128) -> np.ndarray:
    """Rows ``(x, y, ux, uy, |u|)`` on an n x n grid over the mesh bounding box; points off the mesh are dropped."""
    mesh = form.dof_map.mesh
    lo, hi = mesh.vertices.min(axis=0), mesh.vertices.max(axis=0)
    xs = np.linspace(lo[0], hi[0], n)
    ys = np.linspace(lo[1], hi[1], n)
    X, Y = np.meshgrid(xs, ys)
    pts = np.ascontiguousarray(np.stack([X.ravel(), Y.ravel()], axis=1))
    vals, elems = K.eval_many(pts, np.full(len(pts), -1, dtype=np.int64), form.coeffs, mesh.kernel_geometry, form.dof_map.kernel_basis)
    keep = elems >= 0
    mag = np.hypot(vals[:, 0], vals[:, 1])
    return np.column_stack([pts, vals, mag])[keep]


def write_field(form: DiscreteOneForm, out: Path, t: float, n: int = 128) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"field_{t:.4f}.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "ux", "uy", "|u|"])
        for row in sample_field(form, n):
            w.writerow([repr(float(v)) for v in row])
    return path


# -- configuration --------------------------------------------------------

def parse_config(text: str) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value")
        k, v = (s.strip() for s in line.split("=", 1))
        if not k:
            raise ConfigError(f"line {lineno}: empty key")
        out[k.replace("-", "_")] = v
    return out


# per-experiment defaults for keys the config leaves out
EXPERIMENT_DEFAULTS = {
    "exp2": {"tau_per_h": 0.032902},
    "exp5": {"n": 8, "tau": 0.01, "T": 7.93},
    "exp6": {"tau": 0.01},
}

_BOOL = {"1": True, "true": True, "yes": True, "on": True, "0": False, "false": False, "no": False, "off": False}


def spec_from_mapping(values: dict[str, object]) -> ExperimentSpec:
    types = {f.name: f.type for f in fields(ExperimentSpec)}
    kw = {}
    defaults = dict(EXPERIMENT_DEFAULTS.get(str(values.get("exp", "exp1")), {}))
    if "tau" in values or "tau_per_h" in values:
        defaults.pop("tau", None)
        defaults.pop("tau_per_h", None)
    values = {**defaults, **values}
    for k, v in values.items():
        if k not in types:
            raise ConfigError(f"unknown config key {k!r}")
        if v is None:
            continue
        t = str(types[k])
        try:
            if isinstance(v, str):
                if "bool" in t:
                    v = _BOOL[v.lower()]
                elif "int" in t:
                    v = int(v)
                elif "float" in t:
                    v = None if v.lower() == "none" else float(v)
            kw[k] = v
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"bad value for {k}: {v!r}") from exc
    return ExperimentSpec(**kw)
