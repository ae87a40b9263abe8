"""Triangular meshes: topology, affine reference maps, point location, file I/O."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from feec_sl import _kernels

OUTSIDE = -1
INSIDE_TOL = 1e-12


class MeshError(ValueError):
    pass


class MeshParseError(MeshError):
    pass


class MeshTopologyError(MeshError):
    pass


class DegenerateTriangleError(MeshError):
    pass


@dataclass(frozen=True)
class ReferenceMap:
    """Affine map ``x = origin + jacobian @ r`` from the reference triangle onto an element."""

    jacobian: np.ndarray
    origin: np.ndarray
    inverse: np.ndarray
    det: float

    def to_physical(self, r) -> np.ndarray:
        return self.origin + self.jacobian @ np.asarray(r, dtype=float)

    def to_reference(self, x) -> np.ndarray:
        return self.inverse @ (np.asarray(x, dtype=float) - self.origin)


class Mesh:
    """Immutable 2D simplicial mesh.

    Local face ``k`` of a triangle is the edge opposite local vertex ``k``,
    running from local vertex ``(k+1) % 3`` to ``(k+2) % 3``.  Global edges
    are oriented from the lower to the higher vertex index;
    ``tri_edge_sign[t, k]`` is +1 when the local direction of face ``k``
    agrees with the global one.
    """

    def __init__(self, vertices, triangles):
        vertices = np.array(vertices, dtype=float)
        triangles = np.array(triangles, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != 2:
            raise MeshError("vertices must have shape (nv, 2)")
        if triangles.ndim != 2 or triangles.shape[1] != 3:
            raise MeshError("triangles must have shape (nt, 3)")
        if triangles.size and (triangles.min() < 0 or triangles.max() >= len(vertices)):
            raise MeshTopologyError("triangle references a missing vertex")

        v = vertices[triangles]
        e1 = v[:, 1] - v[:, 0]
        e2 = v[:, 2] - v[:, 0]
        det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        triangles = triangles.copy()
        flip = det < 0
        triangles[flip] = triangles[flip][:, [0, 2, 1]]

        self.vertices = vertices
        self.triangles = triangles
        self._build_geometry()
        self._build_topology()
        for arr in vars(self).values():
            if isinstance(arr, np.ndarray):
                arr.setflags(write=False)

    def _build_geometry(self):
        v = self.vertices[self.triangles]
        jac = np.empty((len(v), 2, 2))
        jac[:, :, 0] = v[:, 1] - v[:, 0]
        jac[:, :, 1] = v[:, 2] - v[:, 0]
        det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
        lengths = np.linalg.norm(v[:, [2, 0, 1]] - v[:, [1, 2, 0]], axis=2)
        hmax = lengths.max() if len(v) else 0.0
        bad = det <= 1e-14 * hmax**2
        if np.any(bad):
            raise DegenerateTriangleError(f"degenerate triangle(s): {np.flatnonzero(bad)[:10].tolist()}")
        inv = np.empty_like(jac)
        inv[:, 0, 0] = jac[:, 1, 1] / det
        inv[:, 0, 1] = -jac[:, 0, 1] / det
        inv[:, 1, 0] = -jac[:, 1, 0] / det
        inv[:, 1, 1] = jac[:, 0, 0] / det
        grads = np.empty((len(v), 3, 2))
        grads[:, 1] = inv[:, 0]
        grads[:, 2] = inv[:, 1]
        grads[:, 0] = -inv[:, 0] - inv[:, 1]
        self.jac = jac
        self.inv_jac = inv
        self.origin = np.ascontiguousarray(v[:, 0])
        self.det = det
        self.area = 0.5 * det
        self.lambda_grads = grads

    def _build_topology(self):
        tris = self.triangles
        nt = len(tris)
        a = tris[:, [1, 2, 0]]
        b = tris[:, [2, 0, 1]]
        lo = np.minimum(a, b).ravel()
        hi = np.maximum(a, b).ravel()
        edges, inverse, counts = np.unique(
            np.stack([lo, hi], axis=1), axis=0, return_inverse=True, return_counts=True
        )
        inverse = inverse.ravel()
        if np.any(counts > 2):
            raise MeshTopologyError("non-manifold edge shared by more than two triangles")
        self.edges = edges.astype(np.int64)
        self.tri_edges = inverse.reshape(nt, 3).astype(np.int64)
        self.tri_edge_sign = np.where(a < b, 1, -1).astype(np.int64)

        ne = len(edges)
        edge_tris = -np.ones((ne, 2), dtype=np.int64)
        edge_face = -np.ones((ne, 2), dtype=np.int64)
        slot = np.zeros(ne, dtype=np.int64)
        for t in range(nt):
            for k in range(3):
                e = self.tri_edges[t, k]
                edge_tris[e, slot[e]] = t
                edge_face[e, slot[e]] = k
                slot[e] += 1
        self.edge_tris = edge_tris
        self.edge_face = edge_face
        self.boundary_edge = counts == 1

        nb = -np.ones((nt, 3), dtype=np.int64)
        inner = np.flatnonzero(~self.boundary_edge)
        t0, t1 = edge_tris[inner, 0], edge_tris[inner, 1]
        nb[t0, edge_face[inner, 0]] = t1
        nb[t1, edge_face[inner, 1]] = t0
        self.neighbors = nb

        # vertex -> incident triangles (CSR, ascending triangle ids)
        flat = tris.ravel()
        order = np.argsort(flat, kind="stable")
        self.vt_idx = (order // 3).astype(np.int64)
        self.vt_ptr = np.concatenate([[0], np.cumsum(np.bincount(flat, minlength=len(self.vertices)))]).astype(np.int64)

        elen = np.linalg.norm(self.vertices[edges[:, 1]] - self.vertices[edges[:, 0]], axis=1)
        self.edge_length = elen
        self.h = float(elen.max())
        self.h_min = float(elen.min())

        # boundary segments oriented counter-clockwise (domain on the left)
        bsegs = []
        for e in np.flatnonzero(self.boundary_edge):
            t, k = edge_tris[e, 0], edge_face[e, 0]
            bsegs.append((tris[t, (k + 1) % 3], tris[t, (k + 2) % 3]))
        self.boundary_segments = np.array(bsegs, dtype=np.int64).reshape(-1, 2)

    # -- sizes -----------------------------------------------------------
    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    # -- geometry --------------------------------------------------------
    def reference_map(self, t: int) -> ReferenceMap:
        return ReferenceMap(self.jac[t], self.origin[t], self.inv_jac[t], float(self.det[t]))

    def to_physical(self, t: int, r) -> np.ndarray:
        return self.origin[t] + self.jac[t] @ np.asarray(r, dtype=float)

    def to_reference(self, t: int, x) -> np.ndarray:
        return self.inv_jac[t] @ (np.asarray(x, dtype=float) - self.origin[t])

    def barycentric(self, t: int, x) -> np.ndarray:
        r = self.to_reference(t, x)
        return np.array([1.0 - r[0] - r[1], r[0], r[1]])

    def edge_midpoints(self) -> np.ndarray:
        return 0.5 * (self.vertices[self.edges[:, 0]] + self.vertices[self.edges[:, 1]])

    @property
    def kernel_geometry(self):
        """Arrays consumed by the compiled tracing kernels."""
        try:
            return self._geom
        except AttributeError:
            bseg = self.vertices[self.boundary_segments].reshape(-1, 2, 2)
            geom = (
                self.inv_jac,
                self.origin,
                self.neighbors,
                self.triangles,
                self.vt_ptr,
                self.vt_idx,
                np.ascontiguousarray(bseg),
            )
            self._geom = geom
            return geom

    def __repr__(self):
        return f"Mesh(nv={self.n_vertices}, ne={self.n_edges}, nt={self.n_triangles}, h={self.h:.4g})"


def generate_structured(nx: int, ny: int, rect=(0.0, 1.0, 0.0, 1.0)) -> Mesh:
    """Uniform nx-by-ny grid, each cell cut along its lower-left to upper-right diagonal.

    ``rect`` is ``(xmin, xmax, ymin, ymax)``.
    """
    if nx < 1 or ny < 1:
        raise ValueError("nx and ny must be positive")
    x0, x1, y0, y1 = map(float, rect)
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    verts = np.stack([X.ravel(), Y.ravel()], axis=1)
    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    ll = (j * (nx + 1) + i).ravel()
    lr, ul = ll + 1, ll + nx + 1
    ur = ul + 1
    tris = np.concatenate([np.stack([ll, lr, ur], 1), np.stack([ll, ur, ul], 1)])
    return Mesh(verts, tris)


def generate_disk(n_rings: int = 3, n_inner: int = 6, radius: float = 1.0, hole: float = 0.0) -> Mesh:
    """Polygonal disk, or annulus when ``hole > 0``, from concentric rings of points.

    Rings are joined by a Delaunay triangulation; for an annulus the
    triangles spanning the hole are dropped.
    """
    from scipy.spatial import Delaunay

    if hole > 0:
        radii = np.linspace(hole, radius, n_rings + 1)
        dr = (radius - hole) / n_rings
        counts = [max(n_inner, int(round(2 * np.pi * r / dr))) for r in radii]
        pts = []
    else:
        radii = radius * np.arange(1, n_rings + 1) / n_rings
        counts = [n_inner * k for k in range(1, n_rings + 1)]
        pts = [(0.0, 0.0)]
    for r, m in zip(radii, counts):
        th = 2 * np.pi * np.arange(m) / m
        pts.extend(zip(r * np.cos(th), r * np.sin(th)))
    pts = np.array(pts)
    tri = Delaunay(pts).simplices
    if hole > 0:
        on_hole = np.linalg.norm(pts, axis=1) < hole * (1 + 1e-9)
        tri = tri[~on_hole[tri].all(axis=1)]
    return Mesh(pts, tri)


def load_mesh(text: str) -> Mesh:
    """Parse the ASCII mesh format: ``nv nt``, then nv ``x y`` lines, then nt ``i j k`` lines."""
    rows = []
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            rows.append(line.split())
    if not rows:
        raise MeshParseError("empty mesh file")
    try:
        nv, nt = (int(s) for s in rows[0])
    except ValueError as exc:
        raise MeshParseError(f"bad header {rows[0]!r}") from exc
    if len(rows) != 1 + nv + nt:
        raise MeshParseError(f"expected {nv} vertex and {nt} triangle lines, got {len(rows) - 1} lines")
    try:
        verts = np.array([[float(a) for a in r] for r in rows[1 : 1 + nv]])
        tris = np.array([[int(a) for a in r] for r in rows[1 + nv :]], dtype=np.int64)
    except ValueError as exc:
        raise MeshParseError(str(exc)) from exc
    if verts.shape != (nv, 2) or tris.shape != (nt, 3):
        raise MeshParseError("wrong number of columns")
    if tris.size and (tris.min() < 0 or tris.max() >= nv):
        raise MeshParseError("triangle references a vertex index out of range")
    return Mesh(verts, tris)


def dump_mesh(mesh: Mesh) -> str:
    lines = [f"{mesh.n_vertices} {mesh.n_triangles}"]
    lines += [f"{x:.17g} {y:.17g}" for x, y in mesh.vertices]
    lines += [f"{i} {j} {k}" for i, j, k in mesh.triangles]
    return "\n".join(lines) + "\n"


def locate_point(mesh: Mesh, x, hint: int = 0) -> int:
    """Element whose closed triangle contains ``x``, or ``OUTSIDE``.

    Walks from ``hint`` and falls back to a full scan; when ``x`` lies on
    shared edges or vertices the lowest containing element id is returned.
    """
    x = np.asarray(x, dtype=float)
    return int(_kernels.locate(x[0], x[1], int(hint), mesh.kernel_geometry, True))


def locate_points(mesh: Mesh, points, hints=None) -> np.ndarray:
    pts = np.ascontiguousarray(points, dtype=float).reshape(-1, 2)
    if hints is None:
        hints = np.zeros(len(pts), dtype=np.int64)
    return _kernels.locate_many(pts, np.ascontiguousarray(hints, dtype=np.int64), mesh.kernel_geometry)
