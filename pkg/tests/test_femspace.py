import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from feec_sl.femspace import (
    DiscreteOneForm,
    DofMap,
    assemble_curl_stiffness,
    assemble_grad_coupling,
    assemble_mass,
    curl_eval,
    energy,
    eval_one_form,
    l2_error,
    reference_shape_functions,
    small_edge_eval,
    whitney_eval,
)
from feec_sl.mesh import generate_disk, generate_structured, load_mesh
from feec_sl.projection import discrete_gradient, interpolate
from feec_sl.quadrature import gauss_line, triangle_rule

from conftest import field

REF = load_mesh("3 1\n0 0\n1 0\n0 1\n0 1 2\n")


def const(c):
    return field(lambda x, y: (np.full_like(x, c[0]), np.full_like(x, c[1])))


def random_points(rng, n):
    r = rng.random((n, 2))
    flip = r.sum(axis=1) > 1
    r[flip] = 1 - r[flip]
    return r


def test_dof_counts():
    m = generate_structured(3, 2)
    d1, d2 = DofMap(m, 1), DofMap(m, 2)
    assert (d1.n_dof, d1.n_p) == (m.n_edges, m.n_vertices)
    assert (d2.n_dof, d2.n_p) == (2 * m.n_edges + 2 * m.n_triangles, m.n_vertices + m.n_edges)
    with pytest.raises(ValueError):
        DofMap(m, 3)


def test_whitney_examples():
    # local edge 2 joins local vertices 0 and 1: the edge (0,0)->(1,0)
    assert np.allclose(whitney_eval(REF, 0, 2, (0, 0)), [1, 0])
    assert np.allclose(whitney_eval(REF, 0, 2, (0, 1)), [0, 0])


@pytest.mark.parametrize("i", [0, 1, 2])
def test_whitney_unit_circulation(i):
    a, b = sorted([(i + 1) % 3, (i + 2) % 3])
    xa, xb = REF.vertices[a], REF.vertices[b]
    g, w = gauss_line(2)
    total = sum(wq * whitney_eval(REF, 0, i, xa + s * (xb - xa)) @ (xb - xa) for s, wq in zip(g, w))
    assert total == pytest.approx(1.0, abs=1e-14)
    # and zero circulation over the other edges
    for j in {0, 1, 2} - {i}:
        c, d = sorted([(j + 1) % 3, (j + 2) % 3])
        xc, xd = REF.vertices[c], REF.vertices[d]
        other = sum(wq * whitney_eval(REF, 0, i, xc + s * (xd - xc)) @ (xd - xc) for s, wq in zip(g, w))
        assert other == pytest.approx(0.0, abs=1e-14)


def test_small_edge_table_examples():
    assert np.allclose(reference_shape_functions(0.0, 1.0)[1], [-1, -1])
    assert np.allclose(reference_shape_functions(1.0, 0.0)[4], [1, 1])


@given(st.floats(0, 1), st.floats(0, 1))
def test_small_edge_relation(x, y):
    if x + y > 1:
        x, y = 1 - x, 1 - y
    f = reference_shape_functions(x, y)
    assert np.allclose(f[6] + f[7] + f[8], 0, atol=1e-15)


def test_small_edge_table_formulas(rng):
    # closed forms of a few table entries, derived by hand from lambda_m * w^{a->b}
    for x, y in random_points(rng, 20):
        f = reference_shape_functions(x, y)
        assert np.allclose(f[1], [-y * y, y * (x - 1)])
        assert np.allclose(f[4], [x * (1 - y), x * x])
        assert np.allclose(f[8], [-(1 - x - y) * y, (1 - x - y) * x])


def test_small_edge_eval_matches_product(rng):
    for x, y in random_points(rng, 5):
        lam = np.array([1 - x - y, x, y])
        for i in range(3):
            for j in range(3):
                assert np.allclose(small_edge_eval(REF, 0, i, j, (x, y)), lam[i] * whitney_eval(REF, 0, j, (x, y)))


def test_gram_rank_eight():
    pts, w = triangle_rule(6)
    F = np.array([reference_shape_functions(p[1], p[2]) for p in pts])  # (q, 9, 2)
    G = np.einsum("q,qid,qjd->ij", w, F, F)
    s = np.linalg.svd(G, compute_uv=False)
    assert s[8] / s[0] < 1e-10
    assert s[7] / s[0] > 1e-6


def test_eval_single_coefficient_and_zero():
    dm = DofMap(REF, 1)
    for k in range(3):
        c = np.zeros(dm.n_dof)
        c[REF.tri_edges[0, k]] = 1
        f = DiscreteOneForm(dm, c)
        assert np.allclose(eval_one_form(f, 0, (0.2, 0.3)), whitney_eval(REF, 0, k, (0.2, 0.3)))
    z = DiscreteOneForm.zeros(DofMap(REF, 2))
    assert np.allclose(eval_one_form(z, 0, (0.2, 0.3)), 0)
    assert curl_eval(z, 0, (0.2, 0.3)) == 0


def test_constant_interpolant_p2(rng):
    m = generate_disk(2, 6)
    f = interpolate(DofMap(m, 2), const((1.0, 0.0)))
    t = rng.integers(0, m.n_triangles, 10)
    for ti, r in zip(t, random_points(rng, 10)):
        assert np.allclose(eval_one_form(f, ti, r), [1, 0], atol=1e-12)


def test_whitney_curl_is_two():
    dm = DofMap(REF, 1)
    c = np.zeros(dm.n_dof)
    c[REF.tri_edges[0, 2]] = 1
    f = DiscreteOneForm(dm, c)
    for r in [(0, 0), (0.3, 0.3), (0, 1)]:
        assert curl_eval(f, 0, r) == pytest.approx(2.0)


def test_curl_of_gradient_interpolant(dm8):
    f = interpolate(dm8, const((1.0, 1.0)))
    for t in range(0, dm8.mesh.n_triangles, 7):
        assert abs(curl_eval(f, t, (0.2, 0.5))) < 1e-12


def test_p2_curl_against_finite_differences(rng):
    m = generate_structured(2, 2)
    dm = DofMap(m, 2)
    f = DiscreteOneForm(dm, rng.standard_normal(dm.n_dof))
    t = 3
    J = m.jac[t]
    hstep = 1e-6
    for r in random_points(rng, 5) * 0.8 + 0.05:
        x = m.to_physical(t, r)

        def u(p):
            return eval_one_form(f, t, m.to_reference(t, p))

        du2dx = (u(x + [hstep, 0])[1] - u(x - [hstep, 0])[1]) / (2 * hstep)
        du1dy = (u(x + [0, hstep])[0] - u(x - [0, hstep])[0]) / (2 * hstep)
        assert curl_eval(f, t, r) == pytest.approx(du2dx - du1dy, rel=1e-6, abs=1e-6)
    assert J.shape == (2, 2)


def _quadrature_gram(dm, kind):
    """Dense oracle: 25-point-per-element (degree 10) quadrature of basis products."""
    m = dm.mesh
    pts, w = triangle_rule(10)
    A = np.zeros((dm.n_dof, dm.n_dof))
    for t in range(m.n_triangles):
        vals = []
        for lam in pts:
            r = lam[1:]
            row = []
            for j in range(dm.n_local):
                c = np.zeros(dm.n_dof)
                c[dm.ldof[t, j]] = 1
                f = DiscreteOneForm(dm, c)
                row.append(eval_one_form(f, t, r) if kind == "mass" else [curl_eval(f, t, r)])
            vals.append(row)
        vals = np.array(vals)
        loc = np.einsum("q,qid,qjd->ij", w, vals, vals) * m.area[t]
        idx = dm.ldof[t]
        A[np.ix_(idx, idx)] += loc
    return A


@pytest.mark.parametrize("order", [1, 2])
def test_mass_and_stiffness_against_oracle(order):
    dm = DofMap(generate_structured(1, 1), order)
    M = assemble_mass(dm).toarray()
    K = assemble_curl_stiffness(dm).toarray()
    assert np.allclose(M, _quadrature_gram(dm, "mass"), atol=1e-14)
    assert np.allclose(K, _quadrature_gram(dm, "curl"), atol=1e-13)
    assert np.abs(M - M.T).max() < 1e-15
    assert np.abs(K - K.T).max() < 1e-13
    assert np.linalg.eigvalsh(M).min() > 0


def test_mass_unit_field_norm():
    dm = DofMap(generate_structured(1, 1), 1)
    f = interpolate(dm, const((1.0, 0.0)))
    assert f.coeffs @ assemble_mass(dm) @ f.coeffs == pytest.approx(1.0, abs=1e-12)


def test_stiffness_diagonal_single_triangle():
    # curl w = 2 grad(la) x grad(lb) = 1/area, so each diagonal entry is 1/area
    K = assemble_curl_stiffness(DofMap(REF, 1)).toarray()
    assert np.allclose(np.diag(K), 4 * REF.area[0])
    m = load_mesh("3 1\n0.1 0.2\n1.3 0.1\n0.4 0.9\n0 1 2\n")
    K = assemble_curl_stiffness(DofMap(m, 1)).toarray()
    assert np.allclose(np.diag(K), 1 / m.area[0])


@pytest.mark.parametrize("order", [1, 2])
def test_stiffness_kills_gradients(order, rng):
    dm = DofMap(generate_disk(3, 6), order)
    phi = rng.standard_normal(dm.n_p)
    K = assemble_curl_stiffness(dm)
    assert np.abs(K @ (discrete_gradient(dm) @ phi)).max() < 1e-11


def test_grad_coupling(dm8, rng):
    B = assemble_grad_coupling(dm8)
    assert B.shape == (dm8.n_dof, dm8.n_p)
    assert np.abs(B @ np.ones(dm8.n_p)).max() < 1e-12
    # B^T D is the 0-form stiffness, hence symmetric positive semidefinite
    S = (B.T @ discrete_gradient(dm8)).toarray()
    assert np.abs(S - S.T).max() < 1e-11
    psi = rng.standard_normal(dm8.n_p)
    assert psi @ S @ psi >= -1e-12


def test_grad_coupling_entries_against_quadrature():
    m = generate_structured(1, 1)
    dm = DofMap(m, 2)
    B = assemble_grad_coupling(dm).toarray()
    pts, w = triangle_rule(8)
    ref = np.zeros_like(B)
    for t in range(m.n_triangles):
        for lam, wq in zip(pts, w):
            _, grads = dm.zero_form_basis(lam)
            for j in range(dm.n_local):
                c = np.zeros(dm.n_dof)
                c[dm.ldof[t, j]] = 1
                v = eval_one_form(DiscreteOneForm(dm, c), t, lam[1:])
                for a in range(6):
                    ref[dm.ldof[t, j], dm.p_dofs[t, a]] += wq * m.area[t] * v @ grads[t, a]
    assert np.allclose(B, ref, atol=1e-13)


@pytest.mark.parametrize("order", [1, 2])
def test_tangential_continuity(order, rng):
    m = generate_disk(4, 7)
    dm = DofMap(m, order)
    f = DiscreteOneForm(dm, rng.standard_normal(dm.n_dof))
    interior = np.flatnonzero(~m.boundary_edge)
    for e in rng.choice(interior, 100, replace=False):
        a, b = m.vertices[m.edges[e]]
        tang = b - a
        for s in np.linspace(0, 1, 5):
            x = a + s * tang
            t0, t1 = m.edge_tris[e]
            v0 = eval_one_form(f, t0, m.to_reference(t0, x))
            v1 = eval_one_form(f, t1, m.to_reference(t1, x))
            assert abs((v0 - v1) @ tang) < 1e-12


@pytest.mark.parametrize("order", [1, 2])
def test_definiteness(order, rng):
    dm = DofMap(generate_structured(5, 5), order)
    M, K = assemble_mass(dm), assemble_curl_stiffness(dm)
    for _ in range(100):
        y = rng.standard_normal(dm.n_dof)
        assert y @ M @ y > 0
        assert y @ K @ y >= -1e-12


def test_l2_error_examples(rng):
    m = generate_structured(4, 4)
    dm = DofMap(m, 2)
    lin = field(lambda x, y: (x - 2 * y, 3 * x + y))
    assert l2_error(interpolate(dm, lin), lin) < 1e-12
    z = DiscreteOneForm.zeros(dm)
    assert l2_error(z, const((1.0, 0.0))) == pytest.approx(1.0, abs=1e-12)
    f = DiscreteOneForm(dm, rng.standard_normal(dm.n_dof))
    norm = np.sqrt(f.coeffs @ assemble_mass(dm) @ f.coeffs)
    assert l2_error(f, None) == pytest.approx(norm, abs=1e-10)
    assert energy(f) == pytest.approx(0.5 * l2_error(f, None) ** 2, abs=1e-10)
    with pytest.raises(ValueError):
        l2_error(f, None, quad_degree=4)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_form_arithmetic_is_linear(seed):
    dm = DofMap(generate_structured(2, 3), 2)
    rng = np.random.default_rng(seed)
    a = DiscreteOneForm(dm, rng.standard_normal(dm.n_dof))
    b = DiscreteOneForm(dm, rng.standard_normal(dm.n_dof))
    r = random_points(rng, 1)[0]
    lhs = eval_one_form(a * 2.0 - b, 1, r)
    assert np.allclose(lhs, 2 * eval_one_form(a, 1, r) - eval_one_form(b, 1, r), atol=1e-12)
