"""Splitting straight segments over mesh elements and integrating 1-forms along them."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from feec_sl import _kernels as K
from feec_sl.femspace import DiscreteOneForm
from feec_sl.mesh import Mesh


class TraceError(RuntimeError):
    pass


class TraceOverflow(TraceError):
    """The walk exceeded its iteration cap: the mesh or segment is geometrically inconsistent."""


class InvalidStart(TraceError):
    """The start point is not inside the given start element."""


@dataclass
class Piece:
    element: int
    start: np.ndarray
    end: np.ndarray
    ref_start: np.ndarray
    ref_end: np.ndarray


@dataclass
class PolylineTrace:
    x0: np.ndarray
    x1: np.ndarray
    pieces: list[Piece] = field(default_factory=list)
    outside_length: float = 0.0
    total_length: float = 0.0

    @property
    def elements(self) -> list[int]:
        return [p.element for p in self.pieces]

    @property
    def inside_length(self) -> float:
        return float(sum(np.linalg.norm(p.end - p.start) for p in self.pieces))


def _raise_status(status: int, what: str) -> None:
    if status == K.OVERFLOW:
        raise TraceOverflow(f"iteration cap hit while tracing {what}")
    if status == K.INVALID_START:
        raise InvalidStart(f"start point not in start element for {what}")


def trace_segment(mesh: Mesh, x0, k0: int, x1) -> PolylineTrace:
    x0 = np.asarray(x0, dtype=float)
    x1 = np.asarray(x1, dtype=float)
    cap = 4 * mesh.n_triangles + 8
    rec_t = np.empty(cap, dtype=np.int64)
    rec_s0 = np.empty(cap)
    rec_s1 = np.empty(cap)
    dummy = np.zeros(1)
    basis = _null_basis(mesh)
    status, n, s_out, _ = K.walk(
        x0[0], x0[1], int(k0), x1[0], x1[1], mesh.kernel_geometry, dummy, basis, False, rec_t, rec_s0, rec_s1
    )
    _raise_status(status, f"{x0.tolist()} -> {x1.tolist()}")
    d = x1 - x0
    total = float(np.linalg.norm(d))
    tr = PolylineTrace(x0, x1, total_length=total, outside_length=(1.0 - s_out) * total)
    for i in range(n):
        t = int(rec_t[i])
        a, b = x0 + rec_s0[i] * d, x0 + rec_s1[i] * d
        tr.pieces.append(Piece(t, a, b, mesh.to_reference(t, a), mesh.to_reference(t, b)))
    return tr


def _null_basis(mesh: Mesh):
    z = np.zeros((mesh.n_triangles, 1), dtype=np.int64)
    return (z, z, z, z - 1, mesh.lambda_grads)


def integrate_along(form: DiscreteOneForm, trace: PolylineTrace) -> float:
    """Exact line integral (two-point Gauss per piece) over the inside pieces of a trace."""
    g = np.array([K.G1, K.G2])
    total = 0.0
    for p in trace.pieces:
        d = p.end - p.start
        for s in g:
            r = p.ref_start + s * (p.ref_end - p.ref_start)
            total += 0.5 * float(form.eval(p.element, r) @ d)
    return total


def integrate_with_outflow(form: DiscreteOneForm, trace: PolylineTrace, original_edge_integral: float) -> float:
    """Inside integral plus the outside fraction of the untransported edge's integral."""
    h = form.dof_map.mesh.h
    if trace.total_length < 1e-14 * h:
        return float(original_edge_integral)
    ratio = trace.outside_length / trace.total_length
    return integrate_along(form, trace) + ratio * float(original_edge_integral)
