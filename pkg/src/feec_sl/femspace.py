"""Discrete 0- and 1-form spaces on triangle meshes and their Galerkin matrices.

Order 1 uses Whitney edge functions (one dof per edge) with P1 Lagrange
0-forms.  Order 2 uses small-edge functions ``lambda_v * w_e``: two per mesh
edge plus two interior functions per triangle, with P2 Lagrange 0-forms.

Every local 1-form basis function is stored generically as
``lambda_m * (lambda_a grad lambda_b - lambda_b grad lambda_a)`` through the
integer tables ``la``, ``lb``, ``lm`` (``lm = -1`` means no prefactor).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp

from feec_sl.mesh import Mesh
from feec_sl.quadrature import gauss_line, triangle_rule

VectorField = Callable[[np.ndarray], np.ndarray]

# Local shape functions of the unit triangle in the standard numbering
# (small edges 1..9): entry (m, a, b) is lambda_m * w^{a->b}, with the big
# edges oriented cyclically 0->1->2->0.
SMALL_EDGE_TABLE = (
    (0, 2, 0),
    (2, 2, 0),
    (2, 1, 2),
    (1, 1, 2),
    (1, 0, 1),
    (0, 0, 1),
    (1, 2, 0),
    (2, 0, 1),
    (0, 1, 2),
)

_REF_GRADS = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])


def _pick(lam, idx):
    return lam[idx] if lam.ndim == 1 else np.take_along_axis(lam, idx, axis=1)


def _cross(a, b):
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def reference_shape_functions(x, y) -> np.ndarray:
    """The nine small-edge shape functions of the unit triangle at (x, y), shape (9, 2)."""
    lam = np.array([1.0 - x - y, x, y])
    out = np.empty((9, 2))
    for n, (m, a, b) in enumerate(SMALL_EDGE_TABLE):
        out[n] = lam[m] * (lam[a] * _REF_GRADS[b] - lam[b] * _REF_GRADS[a])
    return out


class DofMap:
    """Degrees of freedom of the order-``p`` 1-form space and its companion 0-form space.

    1-form dof layout: order 1 -> dof ``e`` per mesh edge ``e``; order 2 ->
    ``2e`` (half attached to the edge's start vertex), ``2e+1`` (end vertex),
    then ``2*ne + 2*t + {0, 1}`` for the two interior functions of triangle
    ``t`` that are not anchored at its lowest-index vertex.

    0-form nodes: vertices, then (order 2) edge midpoints at ``nv + e``.
    """

    def __init__(self, mesh: Mesh, order: int):
        if order not in (1, 2):
            raise ValueError("order must be 1 or 2")
        self.mesh = mesh
        self.order = order
        nt, ne, nv = mesh.n_triangles, mesh.n_edges, mesh.n_vertices
        tris = mesh.triangles
        nloc = 3 if order == 1 else 8
        ldof = np.empty((nt, nloc), dtype=np.int64)
        la = np.empty_like(ldof)
        lb = np.empty_like(ldof)
        lm = np.full_like(ldof, -1)
        for k in range(3):
            i, j = (k + 1) % 3, (k + 2) % 3
            fwd = tris[:, i] < tris[:, j]
            start = np.where(fwd, i, j)
            end = np.where(fwd, j, i)
            e = mesh.tri_edges[:, k]
            if order == 1:
                ldof[:, k], la[:, k], lb[:, k] = e, start, end
            else:
                c0, c1 = 2 * k, 2 * k + 1
                ldof[:, c0], la[:, c0], lb[:, c0], lm[:, c0] = 2 * e, start, end, start
                ldof[:, c1], la[:, c1], lb[:, c1], lm[:, c1] = 2 * e + 1, start, end, end
        if order == 2:
            low = np.argmin(tris, axis=1)
            rows = np.arange(nt)
            slot = np.zeros(nt, dtype=np.int64)
            for m in range(3):
                keep = low != m
                col = 6 + slot
                r = rows[keep]
                ldof[r, col[keep]] = 2 * ne + 2 * r + slot[keep]
                la[r, col[keep]] = (m + 1) % 3
                lb[r, col[keep]] = (m + 2) % 3
                lm[r, col[keep]] = m
                slot += keep
            self.dropped_vertex = low
        self.ldof, self.la, self.lb, self.lm = ldof, la, lb, lm
        self.n_dof = ne if order == 1 else 2 * ne + 2 * nt
        self.n_p = nv if order == 1 else nv + ne
        if order == 1:
            self.p_dofs = tris.copy()
            self.nodes = mesh.vertices.copy()
        else:
            self.p_dofs = np.concatenate([tris, nv + mesh.tri_edges], axis=1)
            self.nodes = np.concatenate([mesh.vertices, mesh.edge_midpoints()])
        self._cache = {}

    @property
    def n_local(self) -> int:
        return self.ldof.shape[1]

    @property
    def kernel_basis(self):
        return (self.ldof, self.la, self.lb, self.lm, self.mesh.lambda_grads)

    def node_hints(self) -> np.ndarray:
        """An element containing each 0-form node."""
        m = self.mesh
        hv = m.vt_idx[m.vt_ptr[:-1]]
        if self.order == 1:
            return hv
        return np.concatenate([hv, m.edge_tris[:, 0]])

    # -- vectorised basis evaluation at one reference point, all elements --
    def _take(self, G, idx):
        return np.take_along_axis(G, idx[:, :, None], axis=1)

    def basis_values(self, lam) -> np.ndarray:
        """Vector proxies of all local basis functions, shape (nt, nloc, 2).

        ``lam`` is one barycentric point (3,) shared by all elements or one
        point per element (nt, 3).
        """
        lam = np.asarray(lam, dtype=float)
        G = self.mesh.lambda_grads
        Ga, Gb = self._take(G, self.la), self._take(G, self.lb)
        w = _pick(lam, self.la)[..., None] * Gb - _pick(lam, self.lb)[..., None] * Ga
        if self.order == 2:
            w = w * np.where(self.lm >= 0, _pick(lam, np.maximum(self.lm, 0)), 1.0)[..., None]
        return w

    def basis_curls(self, lam) -> np.ndarray:
        """Scalar curls of all local basis functions, shape (nt, nloc)."""
        lam = np.asarray(lam, dtype=float)
        G = self.mesh.lambda_grads
        Ga, Gb = self._take(G, self.la), self._take(G, self.lb)
        c0 = 2.0 * _cross(Ga, Gb)
        if self.order == 1:
            return c0
        w0 = lam[self.la][..., None] * Gb - lam[self.lb][..., None] * Ga
        Gm = self._take(G, np.maximum(self.lm, 0))
        return _cross(Gm, w0) + lam[np.maximum(self.lm, 0)] * c0

    def zero_form_basis(self, lam):
        """Values (nloc_p,) and gradients (nt, nloc_p, 2) of the 0-form basis."""
        lam = np.asarray(lam, dtype=float)
        G = self.mesh.lambda_grads
        if self.order == 1:
            return lam.copy(), G.copy()
        vals = np.empty(6)
        grads = np.empty((G.shape[0], 6, 2))
        for i in range(3):
            vals[i] = lam[i] * (2 * lam[i] - 1)
            grads[:, i] = (4 * lam[i] - 1) * G[:, i]
        for k in range(3):
            a, b = (k + 1) % 3, (k + 2) % 3
            vals[3 + k] = 4 * lam[a] * lam[b]
            grads[:, 3 + k] = 4 * (lam[a] * G[:, b] + lam[b] * G[:, a])
        return vals, grads

    def physical_points(self, lam) -> np.ndarray:
        v = self.mesh.vertices[self.mesh.triangles]
        return np.einsum("i,tid->td", np.asarray(lam, dtype=float), v)


@dataclass
class DiscreteOneForm:
    dof_map: DofMap
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape != (self.dof_map.n_dof,):
            raise ValueError(f"expected {self.dof_map.n_dof} coefficients, got {self.coeffs.shape}")

    @classmethod
    def zeros(cls, dof_map: DofMap) -> "DiscreteOneForm":
        return cls(dof_map, np.zeros(dof_map.n_dof))

    def eval(self, t: int, r) -> np.ndarray:
        return eval_one_form(self, t, r)

    def curl(self, t: int, r) -> float:
        return curl_eval(self, t, r)

    def values_all(self, lam) -> np.ndarray:
        """Vector proxy at the same reference point of every element, shape (nt, 2)."""
        B = self.dof_map.basis_values(lam)
        return np.einsum("tj,tjd->td", self.coeffs[self.dof_map.ldof], B)

    def curls_all(self, lam) -> np.ndarray:
        C = self.dof_map.basis_curls(lam)
        return np.einsum("tj,tj->t", self.coeffs[self.dof_map.ldof], C)

    def __add__(self, other):
        return DiscreteOneForm(self.dof_map, self.coeffs + other.coeffs)

    def __sub__(self, other):
        return DiscreteOneForm(self.dof_map, self.coeffs - other.coeffs)

    def __mul__(self, a: float):
        return DiscreteOneForm(self.dof_map, a * self.coeffs)

    __rmul__ = __mul__


@dataclass
class DiscreteZeroForm:
    dof_map: DofMap
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape != (self.dof_map.n_p,):
            raise ValueError(f"expected {self.dof_map.n_p} coefficients, got {self.coeffs.shape}")

    def eval(self, t: int, r) -> float:
        lam = _lam(r)
        vals, _ = self.dof_map.zero_form_basis(lam)
        return float(self.coeffs[self.dof_map.p_dofs[t]] @ vals)


def _lam(r) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    return np.array([1.0 - r[0] - r[1], r[0], r[1]])


def _ref_check(r):
    lam = _lam(r)
    if lam.min() < -1e-12:
        raise ValueError(f"reference point {tuple(r)} outside the reference triangle")
    return lam


def whitney_eval(mesh: Mesh, t: int, i: int, r) -> np.ndarray:
    """Whitney function of local edge ``i`` (global orientation) at reference point ``r``."""
    lam = _ref_check(r)
    G = mesh.lambda_grads[t]
    a, b = (i + 1) % 3, (i + 2) % 3
    if mesh.triangles[t, a] > mesh.triangles[t, b]:
        a, b = b, a
    return lam[a] * G[b] - lam[b] * G[a]


def small_edge_eval(mesh: Mesh, t: int, i: int, j: int, r) -> np.ndarray:
    """``lambda_{v_i} * w^{e_j}``: local vertex ``i`` times the Whitney function of local edge ``j``."""
    lam = _ref_check(r)
    return lam[i] * whitney_eval(mesh, t, j, r)


def eval_one_form(form: DiscreteOneForm, t: int, r) -> np.ndarray:
    dm = form.dof_map
    lam = _lam(r)
    G = dm.mesh.lambda_grads[t]
    out = np.zeros(2)
    for j in range(dm.n_local):
        a, b, m = dm.la[t, j], dm.lb[t, j], dm.lm[t, j]
        w = lam[a] * G[b] - lam[b] * G[a]
        if m >= 0:
            w = lam[m] * w
        out += form.coeffs[dm.ldof[t, j]] * w
    return out


def curl_eval(form: DiscreteOneForm, t: int, r) -> float:
    dm = form.dof_map
    lam = _lam(r)
    G = dm.mesh.lambda_grads[t]
    out = 0.0
    for j in range(dm.n_local):
        a, b, m = dm.la[t, j], dm.lb[t, j], dm.lm[t, j]
        c = 2.0 * _cross(G[a], G[b])
        if m >= 0:
            c = _cross(G[m], lam[a] * G[b] - lam[b] * G[a]) + lam[m] * c
        out += form.coeffs[dm.ldof[t, j]] * c
    return float(out)


# -- assembly -------------------------------------------------------------

def _assemble(rows, cols, local, shape) -> sp.csr_matrix:
    nt, nr = rows.shape
    nc = cols.shape[1]
    R = np.broadcast_to(rows[:, :, None], (nt, nr, nc)).ravel()
    C = np.broadcast_to(cols[:, None, :], (nt, nr, nc)).ravel()
    A = sp.coo_matrix((local.ravel(), (R, C)), shape=shape).tocsr()
    A.sum_duplicates()
    A.sort_indices()
    return A


def assemble_mass(dm: DofMap) -> sp.csr_matrix:
    """Mass matrix ``M[a, b] = (w_a, w_b)`` (degree-4 rule, exact for p <= 2)."""
    if "mass" in dm._cache:
        return dm._cache["mass"]
    pts, wts = triangle_rule(4)
    area = dm.mesh.area
    loc = 0.0
    for lam, w in zip(pts, wts):
        B = dm.basis_values(lam)
        loc = loc + w * np.einsum("tid,tjd->tij", B, B)
    loc = loc * area[:, None, None]
    M = _assemble(dm.ldof, dm.ldof, loc, (dm.n_dof, dm.n_dof))
    dm._cache["mass"] = M
    return M


def assemble_curl_stiffness(dm: DofMap) -> sp.csr_matrix:
    """``K[a, b] = (curl w_a, curl w_b)``."""
    if "curl" in dm._cache:
        return dm._cache["curl"]
    pts, wts = triangle_rule(4)
    loc = 0.0
    for lam, w in zip(pts, wts):
        C = dm.basis_curls(lam)
        loc = loc + w * C[:, :, None] * C[:, None, :]
    loc = loc * dm.mesh.area[:, None, None]
    K = _assemble(dm.ldof, dm.ldof, loc, (dm.n_dof, dm.n_dof))
    dm._cache["curl"] = K
    return K


def assemble_grad_coupling(dm: DofMap) -> sp.csr_matrix:
    """``B[a, c] = (w_a, grad N_c)``; the discrete divergence constraint is ``B.T @ omega = 0``."""
    if "grad" in dm._cache:
        return dm._cache["grad"]
    pts, wts = triangle_rule(4)
    loc = 0.0
    for lam, w in zip(pts, wts):
        B = dm.basis_values(lam)
        _, dN = dm.zero_form_basis(lam)
        loc = loc + w * np.einsum("tid,tjd->tij", B, dN)
    loc = loc * dm.mesh.area[:, None, None]
    Bm = _assemble(dm.ldof, dm.p_dofs, loc, (dm.n_dof, dm.n_p))
    dm._cache["grad"] = Bm
    return Bm


def assemble_zero_form_stiffness(dm: DofMap) -> sp.csr_matrix:
    """``L[c, d] = (grad N_c, grad N_d)``."""
    pts, wts = triangle_rule(4)
    loc = 0.0
    for lam, w in zip(pts, wts):
        _, dN = dm.zero_form_basis(lam)
        loc = loc + w * np.einsum("tid,tjd->tij", dN, dN)
    loc = loc * dm.mesh.area[:, None, None]
    return _assemble(dm.p_dofs, dm.p_dofs, loc, (dm.n_p, dm.n_p))


def zero_form_integrals(dm: DofMap) -> np.ndarray:
    """``(N_c, 1)`` for every 0-form basis function."""
    pts, wts = triangle_rule(4)
    vals = sum(w * dm.zero_form_basis(lam)[0] for lam, w in zip(pts, wts))
    loc = dm.mesh.area[:, None] * vals[None, :]
    return np.bincount(dm.p_dofs.ravel(), weights=loc.ravel(), minlength=dm.n_p)


def assemble_load(dm: DofMap, f: VectorField, degree: int = 4) -> np.ndarray:
    """``F[a] = (f, w_a)`` for a vectorised field ``f(points (N, 2)) -> (N, 2)``."""
    pts, wts = triangle_rule(degree)
    loc = 0.0
    for lam, w in zip(pts, wts):
        fx = np.asarray(f(dm.physical_points(lam)), dtype=float)
        loc = loc + w * np.einsum("tjd,td->tj", dm.basis_values(lam), fx)
    loc = loc * dm.mesh.area[:, None]
    return np.bincount(dm.ldof.ravel(), weights=loc.ravel(), minlength=dm.n_dof)


def _boundary_quadrature(mesh: Mesh, n: int = 4):
    """Per boundary edge: triangle, face, Gauss points (nb, n, 2), ccw tangent, length."""
    be = np.flatnonzero(mesh.boundary_edge)
    t = mesh.edge_tris[be, 0]
    k = mesh.edge_face[be, 0]
    a = mesh.vertices[mesh.triangles[t, (k + 1) % 3]]
    b = mesh.vertices[mesh.triangles[t, (k + 2) % 3]]
    s, w = gauss_line(n)
    x = a[:, None, :] + s[None, :, None] * (b - a)[:, None, :]
    length = np.linalg.norm(b - a, axis=1)
    tangent = (b - a) / length[:, None]
    return t, x, w, tangent, length


def assemble_boundary_flux(dm: DofMap, u: VectorField) -> np.ndarray:
    """``g[c] = int_{boundary} (u . n) N_c ds`` with outward normal ``n``."""
    mesh = dm.mesh
    t, x, w, tan, length = _boundary_quadrature(mesh)
    nrm = np.stack([tan[:, 1], -tan[:, 0]], axis=1)
    g = np.zeros(dm.n_p)
    for q in range(x.shape[1]):
        lam = np.stack([mesh.barycentric(ti, xi) for ti, xi in zip(t, x[:, q])])
        un = np.einsum("nd,nd->n", np.asarray(u(x[:, q]), dtype=float), nrm)
        vals = _zero_form_values_batch(dm, lam)
        np.add.at(g, dm.p_dofs[t], (w[q] * length * un)[:, None] * vals)
    return g


def assemble_boundary_tangential(dm: DofMap, c: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """``r[a] = int_{boundary} c (w_a . tangent) ds`` with counter-clockwise tangent."""
    mesh = dm.mesh
    t, x, w, tan, length = _boundary_quadrature(mesh)
    G = mesh.lambda_grads[t]
    la, lb, lm = dm.la[t], dm.lb[t], dm.lm[t]
    r = np.zeros(dm.n_dof)
    for q in range(x.shape[1]):
        lam = np.stack([mesh.barycentric(ti, xi) for ti, xi in zip(t, x[:, q])])
        La = np.take_along_axis(lam, la, 1)
        Lb = np.take_along_axis(lam, lb, 1)
        Ga = np.take_along_axis(G, la[:, :, None], 1)
        Gb = np.take_along_axis(G, lb[:, :, None], 1)
        wv = La[..., None] * Gb - Lb[..., None] * Ga
        if dm.order == 2:
            wv = wv * np.where(lm >= 0, np.take_along_axis(lam, np.maximum(lm, 0), 1), 1.0)[..., None]
        cv = np.asarray(c(x[:, q]), dtype=float)
        contrib = (w[q] * length * cv)[:, None] * np.einsum("njd,nd->nj", wv, tan)
        np.add.at(r, dm.ldof[t], contrib)
    return r


def _zero_form_values_batch(dm: DofMap, lam: np.ndarray) -> np.ndarray:
    if dm.order == 1:
        return lam
    out = np.empty((len(lam), 6))
    out[:, :3] = lam * (2 * lam - 1)
    for k in range(3):
        out[:, 3 + k] = 4 * lam[:, (k + 1) % 3] * lam[:, (k + 2) % 3]
    return out


def l2_error(form: DiscreteOneForm, analytic: VectorField | None, quad_degree: int = 6) -> float:
    """``sqrt(sum_K int_K |u_h - u|^2)``; ``analytic=None`` gives the L2 norm of ``u_h``."""
    if quad_degree < 6:
        raise ValueError("error quadrature must be exact to degree >= 6")
    dm = form.dof_map
    pts, wts = triangle_rule(quad_degree)
    acc = np.zeros(dm.mesh.n_triangles)
    for lam, w in zip(pts, wts):
        uh = form.values_all(lam)
        if analytic is not None:
            uh = uh - np.asarray(analytic(dm.physical_points(lam)), dtype=float)
        acc += w * np.einsum("td,td->t", uh, uh)
    return float(np.sqrt(np.sum(acc * dm.mesh.area)))


def energy(form: DiscreteOneForm) -> float:
    M = assemble_mass(form.dof_map)
    return 0.5 * float(form.coeffs @ (M @ form.coeffs))


def triplets(A: sp.spmatrix) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Coordinate (row, col, value) view of a sparse matrix."""
    C = sp.coo_matrix(A)
    return C.row.astype(np.int64), C.col.astype(np.int64), C.data.copy()
