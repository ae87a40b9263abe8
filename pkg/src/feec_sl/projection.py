"""Interpolation of edge integrals onto the discrete 1-form spaces.

Small-edge integral layout (order 2), ``n_small = 2*ne + 3*nt``:

* ``2e``     : ``[start(e), mid(e)]``
* ``2e + 1`` : ``[mid(e), end(e)]``
* ``2*ne + 3*t + m`` : interior small edge of triangle ``t`` attached to local
  vertex ``m``, running from ``mid(v_m, v_{m+1})`` to ``mid(v_m, v_{m+2})``.

For order 1 there is one integral per mesh edge, oriented low -> high vertex.
Edge coefficients are obtained from exact 2x2 solves (shared per mesh edge),
interior coefficients from a per-element least-squares fit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from feec_sl.femspace import (
    SMALL_EDGE_TABLE,
    DiscreteOneForm,
    DiscreteZeroForm,
    DofMap,
    VectorField,
)
from feec_sl.mesh import Mesh
from feec_sl.quadrature import gauss_line

COND_LIMIT = 1e6


class DegenerateElementError(ArithmeticError):
    pass


@dataclass
class EdgeIntegralVector:
    order: int
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("edge integrals must be finite")


def _unit(i):
    e = np.zeros(3)
    e[i] = 1.0
    return e


def _slot_endpoints(mesh: Mesh, order: int):
    """Barycentric endpoints (nt, ns, 2, 3) of each element's small edges in slot order.

    Order 2 slots: ``2k, 2k+1`` are the two halves of face ``k`` (global
    orientation), ``6 + m`` the interior edge at vertex ``m``.
    """
    tris = mesh.triangles
    nt = len(tris)
    ns = 3 if order == 1 else 9
    out = np.zeros((nt, ns, 2, 3))
    rows = np.arange(nt)
    for k in range(3):
        i, j = (k + 1) % 3, (k + 2) % 3
        fwd = tris[:, i] < tris[:, j]
        s = np.where(fwd, i, j)
        e = np.where(fwd, j, i)
        if order == 1:
            out[rows, k, 0, s] = 1.0
            out[rows, k, 1, e] = 1.0
        else:
            out[rows, 2 * k, 0, s] = 1.0
            out[rows, 2 * k, 1, s] += 0.5
            out[rows, 2 * k, 1, e] += 0.5
            out[rows, 2 * k + 1, 0, s] += 0.5
            out[rows, 2 * k + 1, 0, e] += 0.5
            out[rows, 2 * k + 1, 1, e] = 1.0
    if order == 2:
        for m in range(3):
            out[:, 6 + m, 0] = 0.5 * (_unit(m) + _unit((m + 1) % 3))
            out[:, 6 + m, 1] = 0.5 * (_unit(m) + _unit((m + 2) % 3))
    return out


def _slot_integrals(dm: DofMap) -> np.ndarray:
    """``R[t, s, j] = integral of local basis j over small-edge slot s``; shape (nt, ns, nloc)."""
    mesh = dm.mesh
    ends = _slot_endpoints(mesh, dm.order)
    V = mesh.vertices[mesh.triangles]  # (nt, 3, 2)
    xa = np.einsum("tsi,tid->tsd", ends[:, :, 0], V)
    xb = np.einsum("tsi,tid->tsd", ends[:, :, 1], V)
    d = xb - xa
    g, w = gauss_line(2)
    R = np.zeros((mesh.n_triangles, ends.shape[1], dm.n_local))
    for gq, wq in zip(g, w):
        lam = (1 - gq) * ends[:, :, 0] + gq * ends[:, :, 1]
        for s in range(ends.shape[1]):
            B = dm.basis_values(lam[:, s])
            R[:, s] += wq * np.einsum("tjd,td->tj", B, d[:, s])
    return R


def _edge_blocks(R: np.ndarray) -> np.ndarray:
    """The three 2x2 edge blocks per element, shape (nt, 3, 2, 2)."""
    nt = R.shape[0]
    blocks = np.empty((nt, 3, 2, 2))
    for k in range(3):
        blocks[:, k] = R[:, 2 * k : 2 * k + 2, 2 * k : 2 * k + 2]
    return blocks


def _check_blocks(blocks: np.ndarray) -> None:
    cond = np.linalg.cond(blocks.reshape(-1, 2, 2))
    if not np.all(cond < COND_LIMIT):
        raise DegenerateElementError(f"edge block condition number {cond.max():.3g} >= {COND_LIMIT:g}")


def _interior_solver(A: np.ndarray) -> np.ndarray:
    """Normal-equation least-squares operator ``(A^T A)^{-1} A^T`` for stacked (n, 3, 2) A."""
    At = np.swapaxes(A, 1, 2)
    return np.linalg.solve(At @ A, At)


class Projector:
    """Sparse interpolation ``P`` (n_dof x n_small) and its left inverse ``R`` (n_small x n_dof)."""

    def __init__(self, dm: DofMap):
        self.dof_map = dm
        mesh = dm.mesh
        nt, ne, nv = mesh.n_triangles, mesh.n_edges, mesh.n_vertices
        if dm.order == 1:
            self.n_small = ne
            self.P = sp.identity(ne, format="csr")
            self.R = sp.identity(ne, format="csr")
            self.small_nodes = mesh.edges.copy()
            self.small_hints = mesh.edge_tris[:, 0].copy()
            return
        self.n_small = 2 * ne + 3 * nt
        Rl = _slot_integrals(dm)
        blocks = _edge_blocks(Rl)
        _check_blocks(blocks)
        binv = np.linalg.inv(blocks)  # (nt, 3, 2, 2)

        # small-edge global columns of each element's 9 slots
        cols = np.empty((nt, 9), dtype=np.int64)
        cols[:, 0:6:2] = 2 * mesh.tri_edges
        cols[:, 1:6:2] = 2 * mesh.tri_edges + 1
        cols[:, 6:] = 2 * ne + 3 * np.arange(nt)[:, None] + np.arange(3)

        # edge rows: computed once per mesh edge from its first element
        t0, k0 = mesh.edge_tris[:, 0], mesh.edge_face[:, 0]
        be = binv[t0, k0]  # (ne, 2, 2)
        e = np.arange(ne)
        er = np.stack([2 * e, 2 * e + 1], axis=1)
        P_rows = [np.repeat(er, 2, axis=1).ravel()]
        P_cols = [np.tile(er, (1, 2)).ravel()]
        P_vals = [be.reshape(ne, 4).ravel()]

        # interior rows: S (I_int - G c_edge), with c_edge from the shared edge rows
        pe = np.zeros((nt, 6, 6))
        for k in range(3):
            pe[:, 2 * k : 2 * k + 2, 2 * k : 2 * k + 2] = be[mesh.tri_edges[:, k]]
        A = Rl[:, 6:, 6:]
        S = _interior_solver(A)  # (nt, 2, 3)
        Gm = Rl[:, 6:, :6]
        loc = np.concatenate([-S @ Gm @ pe, S], axis=2)  # (nt, 2, 9)
        irow = dm.ldof[:, 6:]
        P_rows.append(np.repeat(irow, 9, axis=1).ravel())
        P_cols.append(np.tile(cols, (1, 2)).ravel())
        P_vals.append(loc.ravel())
        self.P = _csr(P_rows, P_cols, P_vals, (dm.n_dof, self.n_small))

        # integrals of members: edge rows from the first element, interior rows per element
        bb = blocks[t0, k0]
        R_rows = [np.repeat(er, 2, axis=1).ravel()]
        R_cols = [np.tile(er, (1, 2)).ravel()]
        R_vals = [bb.reshape(ne, 4).ravel()]
        R_rows.append(np.repeat(cols[:, 6:], 8, axis=1).ravel())
        R_cols.append(np.tile(dm.ldof, (1, 3)).ravel())
        R_vals.append(Rl[:, 6:, :].ravel())
        self.R = _csr(R_rows, R_cols, R_vals, (self.n_small, dm.n_dof))

        # endpoints as 0-form node ids (P2 nodes) and a hint element
        sn = np.empty((self.n_small, 2), dtype=np.int64)
        sn[0:2 * ne:2, 0] = mesh.edges[:, 0]
        sn[0:2 * ne:2, 1] = nv + e
        sn[1:2 * ne:2, 0] = nv + e
        sn[1:2 * ne:2, 1] = mesh.edges[:, 1]
        for m in range(3):
            idx = 2 * ne + 3 * np.arange(nt) + m
            sn[idx, 0] = nv + mesh.tri_edges[:, (m + 2) % 3]
            sn[idx, 1] = nv + mesh.tri_edges[:, (m + 1) % 3]
        hints = np.empty(self.n_small, dtype=np.int64)
        hints[0:2 * ne:2] = t0
        hints[1:2 * ne:2] = t0
        hints[2 * ne :] = np.repeat(np.arange(nt), 3)
        self.small_nodes = sn
        self.small_hints = hints

    def small_edge_points(self) -> tuple[np.ndarray, np.ndarray]:
        nodes = self.dof_map.nodes
        return nodes[self.small_nodes[:, 0]], nodes[self.small_nodes[:, 1]]


def _csr(rows, cols, vals, shape):
    A = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=shape
    ).tocsr()
    A.sum_duplicates()
    A.sort_indices()
    return A


def projector(dm: DofMap) -> Projector:
    """The (cached) projector of a dof map."""
    p = dm._cache.get("projector")
    if p is None:
        p = dm._cache["projector"] = Projector(dm)
    return p


# -- per-element interface -------------------------------------------------

def _numbered_slots(mesh: Mesh, t: int) -> list[int]:
    """Slot index of each small edge in the standard numbering 1..9 for element ``t``."""
    g = mesh.triangles[t]
    out = []
    for m, a, b in SMALL_EDGE_TABLE:
        if m in (a, b):
            k = 3 - a - b
            other = b if m == a else a
            out.append(2 * k if g[m] < g[other] else 2 * k + 1)
        else:
            out.append(6 + m)
    return out


def small_edges(mesh: Mesh, t: int, order: int = 2) -> np.ndarray:
    """Oriented small edges of element ``t``: (9, 2, 2) in the standard numbering, or (3, 2, 2) big edges."""
    ends = _slot_endpoints(_single(mesh, t), order)[0]
    V = mesh.vertices[mesh.triangles[t]]
    seg = np.einsum("sei,id->sed", ends, V)
    if order == 1:
        return seg
    return seg[_numbered_slots(mesh, t)]


def _single(mesh: Mesh, t: int) -> Mesh:
    tri = mesh.triangles[t : t + 1]
    # keep the global vertex ids so orientations match the parent mesh
    return _TriangleView(mesh.vertices, tri)


class _TriangleView:
    def __init__(self, vertices, triangles):
        self.vertices = vertices
        self.triangles = triangles


def _function_integral(G, lam0, lam1, x0, x1, m, a, b) -> float:
    g, w = gauss_line(2)
    acc = 0.0
    for gq, wq in zip(g, w):
        lam = (1 - gq) * lam0 + gq * lam1
        v = lam[a] * G[b] - lam[b] * G[a]
        if m >= 0:
            v = lam[m] * v
        acc += wq * v @ (x1 - x0)
    return acc


def local_projection_matrix(dm: DofMap, t: int) -> np.ndarray:
    """``M[i, j] = integral over small edge i of w^{s_j}``, standard numbering, each ``w`` oriented like its edge."""
    mesh = dm.mesh
    ends = _slot_endpoints(_single(mesh, t), dm.order)[0]
    V = mesh.vertices[mesh.triangles[t]]
    G = mesh.lambda_grads[t]
    if dm.order == 1:
        funcs = [(-1, int(np.argmax(ends[k, 0])), int(np.argmax(ends[k, 1]))) for k in range(3)]
        rows = list(range(3))
    else:
        rows = _numbered_slots(mesh, t)
        funcs = []
        for n, (m, a, b) in enumerate(SMALL_EDGE_TABLE):
            s = rows[n]
            if s < 6:  # orient like the (global) small edge
                k = s // 2
                sa, sb = (k + 1) % 3, (k + 2) % 3
                if mesh.triangles[t, sa] > mesh.triangles[t, sb]:
                    sa, sb = sb, sa
                a, b = sa, sb
            funcs.append((m, a, b))
    n = len(rows)
    M = np.empty((n, n))
    for i, s in enumerate(rows):
        x0, x1 = ends[s, 0] @ V, ends[s, 1] @ V
        for j, f in enumerate(funcs):
            M[i, j] = _function_integral(G, ends[s, 0], ends[s, 1], x0, x1, *f)
    return M


def local_project(dm: DofMap, t: int, integrals, interior: tuple[int, int] | None = None) -> np.ndarray:
    """Local coefficients from the small-edge integrals of element ``t`` (standard numbering).

    Returns 3 coefficients (order 1) or 8 (order 2) in the dof map's local
    order; with ``interior=(m1, m2)`` the last two instead belong to the
    interior functions anchored at local vertices ``m1`` and ``m2``.
    """
    I = np.asarray(integrals, dtype=float)
    if dm.order == 1:
        return I.copy()
    mesh = dm.mesh
    slots = np.empty(9)
    slots[_numbered_slots(mesh, t)] = I
    ends = _slot_endpoints(_single(mesh, t), 2)[0]
    V = mesh.vertices[mesh.triangles[t]]
    G = mesh.lambda_grads[t]
    funcs = [(dm.lm[t, j], dm.la[t, j], dm.lb[t, j]) for j in range(6)]
    anchors = tuple(dm.lm[t, 6:]) if interior is None else interior
    funcs += [(m, (m + 1) % 3, (m + 2) % 3) for m in anchors]
    Rl = np.empty((9, 8))
    for s in range(9):
        x0, x1 = ends[s, 0] @ V, ends[s, 1] @ V
        for j, f in enumerate(funcs):
            Rl[s, j] = _function_integral(G, ends[s, 0], ends[s, 1], x0, x1, *f)
    blocks = _edge_blocks(Rl[None])
    _check_blocks(blocks)
    c = np.empty(8)
    for k in range(3):
        c[2 * k : 2 * k + 2] = np.linalg.solve(blocks[0, k], slots[2 * k : 2 * k + 2])
    rhs = slots[6:] - Rl[6:, :6] @ c[:6]
    c[6:] = _interior_solver(Rl[None, 6:, 6:])[0] @ rhs
    return c


# -- global interface ------------------------------------------------------

def project_global(dm: DofMap, integrals: EdgeIntegralVector | np.ndarray) -> DiscreteOneForm:
    vals = integrals.values if isinstance(integrals, EdgeIntegralVector) else np.asarray(integrals, float)
    pr = projector(dm)
    if vals.shape != (pr.n_small,):
        raise ValueError(f"expected {pr.n_small} edge integrals, got {vals.shape}")
    return DiscreteOneForm(dm, pr.P @ vals)


def field_integrals(dm: DofMap, u: VectorField, n_gauss: int = 5) -> EdgeIntegralVector:
    """Line integrals of a vectorised field over every (small) edge."""
    pr = projector(dm)
    a, b = pr.small_edge_points()
    return EdgeIntegralVector(dm.order, segment_integrals(u, a, b, n_gauss))


def segment_integrals(u: VectorField, a: np.ndarray, b: np.ndarray, n_gauss: int = 5) -> np.ndarray:
    g, w = gauss_line(n_gauss)
    d = b - a
    out = np.zeros(len(a))
    for gq, wq in zip(g, w):
        out += wq * np.einsum("nd,nd->n", np.asarray(u(a + gq * d), dtype=float), d)
    return out


def form_integrals(form: DiscreteOneForm) -> EdgeIntegralVector:
    """Small-edge integrals of a member of the discrete space."""
    return EdgeIntegralVector(form.dof_map.order, projector(form.dof_map).R @ form.coeffs)


def interpolate(dm: DofMap, u: VectorField) -> DiscreteOneForm:
    return project_global(dm, field_integrals(dm, u))


def node_differences(dm: DofMap) -> sp.csr_matrix:
    """``T`` with ``(T phi)[s] = phi(end_s) - phi(start_s)`` over all (small) edges."""
    pr = projector(dm)
    n = pr.n_small
    r = np.repeat(np.arange(n), 2)
    c = pr.small_nodes.ravel()
    v = np.tile([-1.0, 1.0], n)
    return sp.csr_matrix((v, (r, c)), shape=(n, dm.n_p))


def discrete_gradient(dm: DofMap) -> sp.csr_matrix:
    """Coefficients of ``d phi`` from nodal values: exact for the 0-form space."""
    D = dm._cache.get("gradient")
    if D is None:
        D = dm._cache["gradient"] = (projector(dm).P @ node_differences(dm)).tocsr()
    return D


def gradient_form(phi: DiscreteZeroForm) -> DiscreteOneForm:
    return DiscreteOneForm(phi.dof_map, discrete_gradient(phi.dof_map) @ phi.coeffs)
