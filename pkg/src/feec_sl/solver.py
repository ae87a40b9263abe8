"""Time stepping for the momentum 1-form formulation.

Each step solves the symmetric saddle-point system

    [ a M + eps K   B    0 ] [omega ]   [ rhs ]
    [ B^T           0    e ] [  p   ] = [  g  ]
    [ 0             e^T  0 ] [lambda]   [  0  ]

with ``a = 1/tau`` (first order) or ``3/(2 tau)`` (second order).  ``e`` holds
the integrals of the 0-form basis and fixes the pressure mean; ``g`` is zero
unless inhomogeneous normal boundary flux is prescribed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from feec_sl.femspace import (
    DiscreteOneForm,
    DiscreteZeroForm,
    DofMap,
    VectorField,
    assemble_boundary_flux,
    assemble_boundary_tangential,
    assemble_curl_stiffness,
    assemble_grad_coupling,
    assemble_load,
    assemble_mass,
    assemble_zero_form_stiffness,
    zero_form_integrals,
)
from feec_sl.projection import discrete_gradient, interpolate
from feec_sl.transport import FlowEvaluator, PullbackStats, sl_pullback

log = logging.getLogger(__name__)

Forcing = Callable[[float, np.ndarray], np.ndarray]


class SolverError(RuntimeError):
    pass


class LinearSolveFailure(SolverError):
    def __init__(self, message: str, residual: float = float("nan")):
        super().__init__(f"{message} (relative residual {residual:.3e})")
        self.residual = residual


class NoConvergence(SolverError):
    pass


@dataclass
class BoundaryData:
    """Prescribed (steady) boundary values for non-free boundaries.

    ``velocity`` gives the normal flux on the boundary and the field used for
    transported edge parts leaving the mesh; ``vorticity`` is the scalar curl
    entering the natural viscous boundary term.
    """

    velocity: VectorField
    vorticity: Callable[[np.ndarray], np.ndarray] | None = None


@dataclass
class SimConfig:
    tau: float
    T: float
    eps: float = 0.0
    forcing: Forcing | None = None
    order: int = 1
    conservative: bool = False
    inner_tol: float = 1e-12
    inner_cap: int = 10
    solve_tol: float = 1e-12
    boundary: BoundaryData | None = None
    keep_boundary: bool = True  # put feet of wall nodes back on the wall

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.T < self.tau:
            raise ValueError("T must be at least tau")
        if self.eps < 0:
            raise ValueError("eps must be non-negative")
        if self.order not in (1, 2):
            raise ValueError("order must be 1 or 2")

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.tau))


@dataclass
class EnergyRecord:
    step: int
    t: float
    energy: float
    dissipation: float
    work: float
    mu: float
    inner_iterations: int = 0
    div_residual: float = 0.0
    constraint_residual: float = 0.0


@dataclass
class EnergyTrace:
    records: list[EnergyRecord] = field(default_factory=list)

    def append(self, rec: EnergyRecord) -> None:
        self.records.append(rec)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def __len__(self) -> int:
        return len(self.records)


def solve_saddle(A, rhs, tol: float = 1e-12, refine: int = 3) -> np.ndarray:
    """Direct sparse solve with residual check; ``A`` may be a matrix or ``(rows, cols, vals, n)``."""
    if isinstance(A, tuple):
        r, c, v, n = A
        A = sp.csc_matrix((v, (r, c)), shape=(n, n))
    return SaddleFactor(sp.csc_matrix(A), tol, refine).solve(np.asarray(rhs, dtype=float))


class SaddleFactor:
    """LU factorisation of a sparse system with iterative refinement and a residual contract."""

    def __init__(self, A: sp.csc_matrix, tol: float = 1e-12, refine: int = 3):
        self.A = A
        self.tol = tol
        self.refine = refine
        try:
            self.lu = spla.splu(A)
        except RuntimeError as exc:
            raise LinearSolveFailure(f"factorization failed: {exc}") from exc

    def solve(self, b: np.ndarray) -> np.ndarray:
        bn = np.linalg.norm(b)
        x = self.lu.solve(b)
        if bn == 0.0:
            return x
        for _ in range(self.refine + 1):
            r = b - self.A @ x
            res = np.linalg.norm(r) / bn
            if not np.isfinite(res):
                break
            if res <= self.tol:
                return x
            x = x + self.lu.solve(r)
        res = np.linalg.norm(b - self.A @ x) / bn
        if not res <= self.tol:
            raise LinearSolveFailure("saddle-point solve did not reach tolerance", res)
        return x


class SaddleSystem:
    """Cached operators and factorisations for one dof map, viscosity and timestep."""

    def __init__(self, dm: DofMap, eps: float, tau: float, tol: float = 1e-12):
        self.dm = dm
        self.eps = eps
        self.tau = tau
        self.tol = tol
        self.M = assemble_mass(dm)
        self.K = assemble_curl_stiffness(dm)
        self.B = assemble_grad_coupling(dm)
        self.e = zero_form_integrals(dm)
        self.n = dm.n_dof
        self.np = dm.n_p
        self._factors: dict[float, SaddleFactor] = {}

    def matrix(self, alpha: float) -> sp.csc_matrix:
        e = sp.csr_matrix(self.e[:, None])
        return sp.bmat(
            [
                [alpha * self.M + self.eps * self.K, self.B, None],
                [self.B.T, None, e],
                [None, e.T, None],
            ],
            format="csc",
        )

    def factor(self, alpha: float) -> SaddleFactor:
        f = self._factors.get(alpha)
        if f is None:
            f = self._factors[alpha] = SaddleFactor(self.matrix(alpha), self.tol)
        return f

    def rhs(self, mom: np.ndarray, con: np.ndarray | None = None) -> np.ndarray:
        b = np.zeros(self.n + self.np + 1)
        b[: self.n] = mom
        if con is not None:
            b[self.n : self.n + self.np] = con
        return b

    def split(self, x: np.ndarray):
        return x[: self.n], x[self.n : self.n + self.np], x[-1]


@dataclass
class SolverState:
    omega: DiscreteOneForm
    omega_prev: DiscreteOneForm | None = None
    pressure: DiscreteZeroForm | None = None
    mu: float = 0.0
    t: float = 0.0
    step: int = 0
    system: SaddleSystem | None = None
    trace: EnergyTrace = field(default_factory=EnergyTrace)
    last_pullback: PullbackStats | None = None
    inner_iterations: list[int] = field(default_factory=list)

    @property
    def dof_map(self) -> DofMap:
        return self.omega.dof_map


def init_state(omega0: DiscreteOneForm, config: SimConfig) -> SolverState:
    dm = omega0.dof_map
    if dm.order != config.order:
        raise ValueError(f"scheme order {config.order} needs the order-{config.order} space, got {dm.order}")
    system = SaddleSystem(dm, config.eps, config.tau, config.solve_tol)
    st = SolverState(omega=omega0, pressure=DiscreteZeroForm(dm, np.zeros(dm.n_p)), system=system)
    st.trace.append(_record(st, config, 0, 0.0))
    return st


def _load(dm: DofMap, config: SimConfig, t: float) -> np.ndarray:
    if config.forcing is None:
        return np.zeros(dm.n_dof)
    return assemble_load(dm, lambda x: config.forcing(t, x))


def _boundary_terms(system: SaddleSystem, config: SimConfig):
    """Extra momentum and constraint right-hand sides from prescribed boundary data (cached)."""
    bd = config.boundary
    if bd is None:
        return 0.0, None
    cache = system.__dict__.setdefault("_bterms", {})
    key = id(bd)
    if key not in cache:
        dm = system.dm
        mom = np.zeros(dm.n_dof)
        if bd.vorticity is not None and config.eps > 0:
            mom = config.eps * assemble_boundary_tangential(dm, bd.vorticity)
        cache[key] = (mom, assemble_boundary_flux(dm, bd.velocity))
    return cache[key]


def _clamp(config: SimConfig) -> bool:
    return config.keep_boundary and config.boundary is None


def _exterior(config: SimConfig):
    return None if config.boundary is None else config.boundary.velocity


def _record(st: SolverState, config: SimConfig, iters: int, cres: float, F: np.ndarray | None = None) -> EnergyRecord:
    sysm = st.system
    w = st.omega.coeffs
    Mw = sysm.M @ w
    energy = 0.5 * float(w @ Mw)
    diss = config.eps * float(w @ (sysm.K @ w))
    work = 0.0 if F is None else float(F @ w)
    return EnergyRecord(st.step, st.t, energy, diss, work, st.mu, iters, divergence_residual(st, config), cres)


def divergence_residual(st: SolverState, config: SimConfig | None = None) -> float:
    """``||B^T omega - g||_inf / ||omega||_M`` (zero for the zero field)."""
    sysm = st.system
    w = st.omega.coeffs
    r = sysm.B.T @ w
    if config is not None and config.boundary is not None:
        r = r - _boundary_terms(sysm, config)[1]
    nrm = np.sqrt(max(float(w @ (sysm.M @ w)), 0.0))
    amax = float(np.abs(r).max(initial=0.0))
    return amax / nrm if nrm > 0 else amax


def _pullbacks(st: SolverState, config: SimConfig, second: bool):
    """Right-hand side ``M * (transported history)`` and the leading coefficient."""
    tau = config.tau
    ext = _exterior(config)
    w1 = st.omega
    if not second:
        if config.order == 1:
            fe = FlowEvaluator(tau, w1, order=1)
        else:  # start-up step of the second-order scheme: Heun with u* = u^0
            fe = FlowEvaluator(tau, w1, w1, order=2)
        pb, stats = sl_pullback(w1, fe, 1, ext, _clamp(config))
        st.last_pullback = stats
        return 1.0 / tau, st.system.M @ pb.coeffs / tau
    fe = FlowEvaluator(tau, w1, st.omega_prev, order=2)
    pb1, s1 = sl_pullback(w1, fe, 1, ext, _clamp(config))
    pb2, s2 = sl_pullback(st.omega_prev, fe, 2, ext, _clamp(config))
    st.last_pullback = PullbackStats(
        s1.n_edges + s2.n_edges, s1.n_outside + s2.n_outside, max(s1.max_outside_fraction, s2.max_outside_fraction)
    )
    return 1.5 / tau, st.system.M @ (4.0 * pb1.coeffs - pb2.coeffs) / (2.0 * tau)


def _advance(st: SolverState, config: SimConfig, second: bool) -> SolverState:
    sysm = st.system
    dm = st.dof_map
    t_new = (st.step + 1) * config.tau
    alpha, mom = _pullbacks(st, config, second)
    F = _load(dm, config, t_new)
    bmom, bcon = _boundary_terms(sysm, config)
    mom = mom + F + bmom
    lu = sysm.factor(alpha)
    b = sysm.rhs(mom, bcon)
    iters, cres, mu = 0, 0.0, 0.0
    if not config.conservative:
        x = lu.solve(b)
        w, p, _ = sysm.split(x)
    else:
        w, p, mu, iters, cres = _energy_tracking_solve(st, config, lu, b, F)
    new = SolverState(
        omega=DiscreteOneForm(dm, w),
        omega_prev=st.omega,
        pressure=DiscreteZeroForm(dm, p),
        mu=mu,
        t=t_new,
        step=st.step + 1,
        system=sysm,
        trace=st.trace,
        last_pullback=st.last_pullback,
        inner_iterations=st.inner_iterations + ([iters] if config.conservative else []),
    )
    new.trace.append(_record(new, config, iters, cres, F))
    return new


def _energy_tracking_solve(st: SolverState, config: SimConfig, lu: SaddleFactor, b: np.ndarray, F: np.ndarray):
    """Inner iteration for the energy constraint, bordered solve by block elimination."""
    sysm = st.system
    M, K = sysm.M, sysm.K
    tau, eps = config.tau, config.eps
    w_old = st.omega.coeffs
    e_old = float(w_old @ (M @ w_old))
    ref = np.sqrt(e_old)
    zb = lu.solve(b)
    wk = w_old.copy()
    n = sysm.n
    for k in range(1, config.inner_cap + 1):
        Mw, Kw = M @ wk, K @ wk
        q, s = float(wk @ Mw), float(wk @ Kw)
        col = np.zeros_like(b)
        col[:n] = Mw + 2 * eps * tau * Kw - tau * F
        row = 2 * Mw + 4 * eps * tau * Kw
        c = e_old + q + 2 * eps * tau * s + tau * float(F @ wk)
        za = lu.solve(col)
        denom = float(row @ za[:n])
        if denom == 0.0:
            raise LinearSolveFailure("singular energy constraint", float("inf"))
        mu = (float(row @ zb[:n]) - c) / denom
        x = zb - mu * za
        w_new = x[:n]
        _check_bordered(sysm, lu, x, mu, col, b, row, c, config.solve_tol)
        d = w_new - wk
        inc = np.sqrt(max(float(d @ (M @ d)), 0.0))
        wk = w_new
        if inc <= config.inner_tol * max(ref, 1e-300) or ref == 0.0:
            break
    else:
        if inc > 100 * config.inner_tol * ref:
            raise NoConvergence(f"energy iteration stalled: increment {inc / ref:.3e} after {config.inner_cap} steps")
    _, p, _ = sysm.split(x)
    cres = _constraint_residual(sysm, config, w_old, wk, F)
    return wk, p, mu, k, cres


def _check_bordered(sysm, lu, x, mu, col, b, row, c, tol):
    r = lu.A @ x + mu * col - b
    rs = float(row @ x[: sysm.n]) - c
    scale = np.linalg.norm(b) + abs(c)
    res = np.sqrt(r @ r + rs * rs) / scale if scale > 0 else 0.0
    if not res <= max(tol, 1e-12) * 10:
        raise LinearSolveFailure("bordered energy system did not reach tolerance", res)


def _constraint_residual(sysm, config, w_old, w, F) -> float:
    """Relative residual of the discrete energy identity for the accepted step."""
    M, K = sysm.M, sysm.K
    lhs = float(w @ (M @ w)) + 2 * config.eps * config.tau * float(w @ (K @ w)) - config.tau * float(F @ w)
    rhs = float(w_old @ (M @ w_old))
    return abs(lhs - rhs) / rhs if rhs > 0 else abs(lhs)


def step_bdf1(state: SolverState, config: SimConfig) -> SolverState:
    return _advance(state, config, second=False)


def step_bdf2(state: SolverState, config: SimConfig) -> SolverState:
    if state.omega_prev is None:
        raise ValueError("the two-step scheme needs two history levels")
    return _advance(state, config, second=True)


def step_conservative(state: SolverState, config: SimConfig) -> SolverState:
    if not config.conservative:
        config = replace(config, conservative=True)
    return step(state, config)


def step(state: SolverState, config: SimConfig) -> SolverState:
    """One step of the configured scheme; the second-order scheme starts with one first-order step."""
    second = config.order == 2 and state.omega_prev is not None
    return _advance(state, config, second)


def run(state: SolverState, config: SimConfig, n_steps: int | None = None, callback=None) -> SolverState:
    n = config.n_steps if n_steps is None else n_steps
    for _ in range(n):
        state = step(state, config)
        if callback is not None:
            callback(state)
    return state


def leray_init(dm: DofMap, raw: VectorField, tol: float = 1e-12, flux: np.ndarray | None = None) -> DiscreteOneForm:
    """Discretely divergence-free part of the interpolant of ``raw``.

    Solves the Neumann problem ``(d phi, d psi) = (I w, d psi) - flux`` for
    ``phi`` with zero mean and returns ``I w - d phi``.
    """
    w = interpolate(dm, raw)
    B = assemble_grad_coupling(dm)
    L = assemble_zero_form_stiffness(dm)
    e = sp.csr_matrix(zero_form_integrals(dm)[:, None])
    A = sp.bmat([[L, e], [e.T, None]], format="csc")
    rhs = np.zeros(dm.n_p + 1)
    rhs[: dm.n_p] = B.T @ w.coeffs
    if flux is not None:
        rhs[: dm.n_p] -= flux
    phi = solve_saddle(A, rhs, tol)[: dm.n_p]
    return DiscreteOneForm(dm, w.coeffs - discrete_gradient(dm) @ phi)
