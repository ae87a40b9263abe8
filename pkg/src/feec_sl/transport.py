"""Semi-Lagrangian transport: smoothed velocities, backward flow maps, projected pullbacks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from feec_sl import _kernels as K
from feec_sl.femspace import DiscreteOneForm, VectorField
from feec_sl.projection import form_integrals, project_global, projector, segment_integrals
from feec_sl.tracer import TraceOverflow


class OutsideDomain(ValueError):
    pass


class SmoothedVelocity:
    """Axis-wise segment averages of the vector proxy of a discrete 1-form.

    Component ``i`` at ``x`` is the mean of ``u_i`` over the axis-``i``
    segment of length ``h_min`` centred at ``x``; parts of the segment that
    leave the domain are dropped and the mean is taken over the rest.
    """

    def __init__(self, form: DiscreteOneForm, width: float | None = None):
        self.form = form
        mesh = form.dof_map.mesh
        self.width = mesh.h_min if width is None else float(width)

    def eval_many(self, points, hints=None, clamp: bool = False):
        """Values (n, 2), containing elements and evaluation points (clamped if requested)."""
        mesh = self.form.dof_map.mesh
        pts = np.ascontiguousarray(points, dtype=float).reshape(-1, 2)
        if hints is None:
            hints = np.full(len(pts), -1, dtype=np.int64)
        vals, elems, status, used = K.smooth_many(
            pts,
            np.asarray(hints, dtype=np.int64),
            self.form.coeffs,
            mesh.kernel_geometry,
            self.form.dof_map.kernel_basis,
            0.5 * self.width,
            clamp,
        )
        bad = np.flatnonzero(status == K.OUTSIDE_DOMAIN)
        if bad.size:
            raise OutsideDomain(f"point {pts[bad[0]].tolist()} is outside the mesh")
        if np.any(status == K.OVERFLOW):
            raise TraceOverflow("smoothing segment walk hit its iteration cap")
        return vals, elems, used


def smooth_eval(sv: SmoothedVelocity, x) -> np.ndarray:
    return sv.eval_many(np.asarray(x, dtype=float)[None])[0][0]


class FlowEvaluator:
    """Backward flow maps over one or two steps from smoothed velocities at earlier times.

    ``order=1``: explicit Euler with ``u^{n-1}``.  ``order=2``: Heun with the
    extrapolation ``u* = 2 u^{n-1} - u^{n-2}``, built at coefficient level.
    """

    def __init__(self, tau: float, prev: DiscreteOneForm, prev2: DiscreteOneForm | None = None, order: int = 1):
        if tau <= 0:
            raise ValueError("tau must be positive")
        if order not in (1, 2):
            raise ValueError("order must be 1 or 2")
        if order == 2 and prev2 is None:
            raise ValueError("second-order flow needs two velocity levels")
        self.tau = float(tau)
        self.order = order
        self.u1 = SmoothedVelocity(prev)
        if order == 2:
            self.u2 = SmoothedVelocity(prev2)
            self.ustar = SmoothedVelocity(2.0 * prev - prev2)

    def map_points(self, points, hints=None, horizon: int = 1) -> np.ndarray:
        """Backward images of ``points`` over ``horizon`` steps (1 or 2)."""
        x = np.ascontiguousarray(points, dtype=float).reshape(-1, 2)
        tau = self.tau
        if self.order == 1:
            if horizon != 1:
                raise ValueError("the Euler flow only covers one step")
            u, _, _ = self.u1.eval_many(x, hints)
            return x - tau * u
        us, elems, _ = self.ustar.eval_many(x, hints)
        if horizon == 1:
            ub, _, _ = self.u1.eval_many(x - tau * us, elems, clamp=True)
            return x - 0.5 * tau * (us + ub)
        if horizon == 2:
            ub, _, _ = self.u2.eval_many(x - 2.0 * tau * us, elems, clamp=True)
            return x - tau * (us + ub)
        raise ValueError("horizon must be 1 or 2")


def flow_back_euler(fe: FlowEvaluator, x) -> np.ndarray:
    if fe.order != 1:
        raise ValueError("not an Euler flow evaluator")
    return fe.map_points(np.asarray(x, dtype=float)[None])[0]


def flow_back_heun(fe: FlowEvaluator, x, horizon: int = 1) -> np.ndarray:
    if fe.order != 2:
        raise ValueError("not a Heun flow evaluator")
    return fe.map_points(np.asarray(x, dtype=float)[None], horizon=horizon)[0]


@dataclass
class PullbackStats:
    n_edges: int
    n_outside: int
    max_outside_fraction: float


@dataclass
class TransportedIntegrals:
    values: np.ndarray
    starts: np.ndarray
    ends: np.ndarray
    outside_length: np.ndarray
    total_length: np.ndarray

    @property
    def stats(self) -> PullbackStats:
        frac = np.divide(
            self.outside_length, self.total_length, out=np.zeros_like(self.total_length), where=self.total_length > 0
        )
        return PullbackStats(len(self.values), int(np.count_nonzero(self.outside_length > 0)), float(frac.max(initial=0)))


def boundary_nodes(dm) -> np.ndarray:
    """Mask of 0-form nodes lying on the mesh boundary."""
    mesh = dm.mesh
    mask = np.zeros(dm.n_p, dtype=bool)
    be = np.flatnonzero(mesh.boundary_edge)
    mask[mesh.edges[be].ravel()] = True
    if dm.order == 2:
        mask[mesh.n_vertices + be] = True
    return mask


def transported_edge_integrals(
    form: DiscreteOneForm,
    fe: FlowEvaluator,
    horizon: int = 1,
    exterior: VectorField | None = None,
    keep_boundary: bool = True,
) -> TransportedIntegrals:
    """Integrals of ``form`` over the straight images of every (small) edge under the backward flow.

    Parts of an image outside the mesh contribute the matching fraction of
    the original edge's integral, or, when ``exterior`` is given, the exact
    line integral of that field.  With ``keep_boundary`` (impermeable walls)
    images of boundary nodes that land outside are put back on the boundary.
    """
    dm = form.dof_map
    mesh = dm.mesh
    pr = projector(dm)
    hints = dm.node_hints()
    mapped = fe.map_points(dm.nodes, hints, horizon)
    if keep_boundary:
        mapped = K.clamp_outside(mapped, boundary_nodes(dm), hints, mesh.kernel_geometry)
    starts = np.ascontiguousarray(mapped[pr.small_nodes[:, 0]])
    ends = np.ascontiguousarray(mapped[pr.small_nodes[:, 1]])
    inside, out_len, tot_len, oseg, status = K.transported_integrals(
        starts, ends, pr.small_hints, form.coeffs, mesh.kernel_geometry, dm.kernel_basis
    )
    bad = np.flatnonzero(status != K.OK)
    if bad.size:
        raise TraceOverflow(f"tracing transported edge {bad[0]} failed (status {status[bad[0]]})")
    original = form_integrals(form).values
    vals = inside.copy()
    out = np.flatnonzero(out_len > 0)
    if out.size:
        if exterior is None:
            vals[out] += out_len[out] / tot_len[out] * original[out]
        else:
            vals[out] += segment_integrals(exterior, oseg[out, :2], oseg[out, 2:])
    tiny = tot_len < 1e-14 * mesh.h
    vals[tiny] = original[tiny]
    return TransportedIntegrals(vals, starts, ends, out_len, tot_len)


def sl_pullback(
    form_prev: DiscreteOneForm,
    fe: FlowEvaluator,
    horizon: int = 1,
    exterior: VectorField | None = None,
    keep_boundary: bool = True,
) -> tuple[DiscreteOneForm, PullbackStats]:
    """Projected pullback of ``form_prev`` under the backward flow over ``horizon`` steps."""
    ti = transported_edge_integrals(form_prev, fe, horizon, exterior, keep_boundary)
    return project_global(form_prev.dof_map, ti.values), ti.stats
