import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from feec_sl.femspace import DiscreteOneForm, DiscreteZeroForm, DofMap, eval_one_form, l2_error
from feec_sl.harness import taylor_green
from feec_sl.mesh import generate_disk, generate_structured, load_mesh
from feec_sl.projection import (
    _check_blocks,
    DegenerateElementError,
    EdgeIntegralVector,
    field_integrals,
    form_integrals,
    gradient_form,
    interpolate,
    local_project,
    local_projection_matrix,
    project_global,
    projector,
    segment_integrals,
    small_edges,
)

from conftest import UNIT_BOX, field

REF = load_mesh("3 1\n0 0\n1 0\n0 1\n0 1 2\n")


def random_points(rng, n):
    r = rng.random((n, 2))
    flip = r.sum(axis=1) > 1
    r[flip] = 1 - r[flip]
    return r


def local_function(mesh, t, m, a, b, r):
    """``lambda_m * (lambda_a grad lambda_b - lambda_b grad lambda_a)`` on element t."""
    lam = np.array([1 - r[0] - r[1], r[0], r[1]])
    G = mesh.lambda_grads[t]
    w = lam[a] * G[b] - lam[b] * G[a]
    return w if m < 0 else lam[m] * w


def element_field(form, t):
    """The restriction of ``form`` to element ``t`` as a vectorised field (extended polynomially)."""
    mesh = form.dof_map.mesh

    def u(x):
        return np.array([eval_one_form(form, t, mesh.to_reference(t, xi)) for xi in x])

    return u


def test_small_edges_reference():
    s = small_edges(REF, 0)
    assert s.shape == (9, 2, 2)
    assert np.allclose(s[8], [[0.5, 0], [0, 0.5]])
    assert np.allclose(s[0], [[0, 0], [0, 0.5]])
    assert small_edges(REF, 0, order=1).shape == (3, 2, 2)


def test_small_edges_cover_big_edges(rng):
    m = generate_disk(3, 6)
    for t in rng.integers(0, m.n_triangles, 10):
        s = small_edges(m, t)
        attached = np.linalg.norm(s[:6, 1] - s[:6, 0], axis=1).sum()
        V = m.vertices[m.triangles[t]]
        perim = sum(np.linalg.norm(V[i] - V[(i + 1) % 3]) for i in range(3))
        assert attached == pytest.approx(perim, rel=1e-13)


def test_local_projection_matrix_structure():
    m = generate_disk(2, 5)
    assert np.allclose(local_projection_matrix(DofMap(m, 1), 3), np.eye(3))
    M = local_projection_matrix(DofMap(m, 2), 3)
    assert M.shape == (9, 9)
    # interior block: rows/cols 7..9 in the standard numbering
    assert np.linalg.matrix_rank(M[6:, 6:], tol=1e-10) == 2


def test_local_project_p1_identity():
    dm = DofMap(REF, 1)
    assert np.allclose(local_project(dm, 0, [1, 0, 0]), [1, 0, 0])
    assert np.allclose(local_project(DofMap(REF, 2), 0, np.zeros(9)), 0)


@pytest.mark.parametrize("seed", range(5))
def test_local_project_reproduces_members(seed):
    rng = np.random.default_rng(seed)
    m = generate_disk(3, 6)
    dm = DofMap(m, 2)
    form = DiscreteOneForm(dm, rng.standard_normal(dm.n_dof))
    t = int(rng.integers(m.n_triangles))
    s = small_edges(m, t)
    integrals = segment_integrals(element_field(form, t), s[:, 0], s[:, 1], 4)
    c = local_project(dm, t, integrals)
    for r in random_points(rng, 10):
        v = sum(c[j] * local_function(m, t, dm.lm[t, j], dm.la[t, j], dm.lb[t, j], r) for j in range(8))
        assert np.allclose(v, eval_one_form(form, t, r), atol=1e-11)


def test_representation_independence(rng):
    m = generate_disk(3, 6)
    dm = DofMap(m, 2)
    t = 5
    integrals = rng.standard_normal(9)  # generic, not from a member: exercises the least-squares step
    values = []
    for anchors in [(0, 1), (1, 2), (0, 2)]:
        c = local_project(dm, t, integrals, interior=anchors)
        funcs = [(dm.lm[t, j], dm.la[t, j], dm.lb[t, j]) for j in range(6)]
        funcs += [(a, (a + 1) % 3, (a + 2) % 3) for a in anchors]
        pts = random_points(np.random.default_rng(3), 10)
        values.append([sum(ci * local_function(m, t, *f, r) for ci, f in zip(c, funcs)) for r in pts])
    assert np.allclose(values[0], values[1], atol=1e-11)
    assert np.allclose(values[0], values[2], atol=1e-11)


def test_edge_blocks_are_affine_invariant():
    # the guard can never fire on a valid element: each edge block is the same constant matrix
    m = load_mesh("3 1\n0 0\n1 0\n0.5 1e-7\n0 1 2\n")
    M = local_projection_matrix(DofMap(m, 2), 0)
    for k in range(3):
        assert np.allclose(M[2 * k : 2 * k + 2, 2 * k : 2 * k + 2], [[3 / 8, 1 / 8], [1 / 8, 3 / 8]])


def test_degenerate_block_guard():
    blocks = np.tile(np.eye(2), (1, 3, 1, 1))
    _check_blocks(blocks)
    blocks[0, 1] = [[1, 1], [1, 1 + 1e-9]]
    with pytest.raises(DegenerateElementError):
        _check_blocks(blocks)


def test_edge_integral_vector_rejects_nan():
    with pytest.raises(ValueError):
        EdgeIntegralVector(1, [0.0, np.nan])


def test_project_global_constant(dm8, rng):
    f = interpolate(dm8, field(lambda x, y: (np.ones_like(x), np.zeros_like(x))))
    m = dm8.mesh
    for t, r in zip(rng.integers(0, m.n_triangles, 20), random_points(rng, 20)):
        assert np.allclose(eval_one_form(f, t, r), [1, 0], atol=1e-11)


def test_project_global_shape_check(dm8):
    with pytest.raises(ValueError):
        project_global(dm8, np.zeros(3))


def test_idempotence(dm8, rng):
    X = project_global(dm8, rng.standard_normal(projector(dm8).n_small))
    Y = project_global(dm8, form_integrals(X))
    assert np.abs(X.coeffs - Y.coeffs).max() < 1e-12


def test_p1_projection_is_identity_on_coefficients(rng):
    dm = DofMap(generate_disk(3, 6), 1)
    c = rng.standard_normal(dm.n_dof)
    assert np.allclose(project_global(dm, form_integrals(DiscreteOneForm(dm, c))).coeffs, c, atol=1e-13)


def test_p1_integrals_are_exact_edge_integrals(rng):
    # oracle: 10-point Gauss along each mesh edge of the evaluated form
    m = generate_structured(3, 3)
    dm = DofMap(m, 1)
    f = DiscreteOneForm(dm, rng.standard_normal(dm.n_dof))
    I = form_integrals(f).values
    for e in range(m.n_edges):
        t = m.edge_tris[e, 0]
        a, b = m.vertices[m.edges[e]]
        ref = segment_integrals(element_field(f, t), a[None], b[None], 10)[0]
        assert I[e] == pytest.approx(ref, abs=1e-13)


@settings(max_examples=25, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2**31 - 1))
def test_linearity(a, b, seed):
    dm = DofMap(generate_structured(3, 2), 2)
    rng = np.random.default_rng(seed)
    n = projector(dm).n_small
    I1, I2 = rng.standard_normal(n), rng.standard_normal(n)
    lhs = project_global(dm, a * I1 + b * I2).coeffs
    rhs = a * project_global(dm, I1).coeffs + b * project_global(dm, I2).coeffs
    assert np.allclose(lhs, rhs, atol=1e-12)


def test_gradient_form_integrals_are_node_differences(rng):
    dm = DofMap(generate_disk(3, 6), 2)
    phi = DiscreteZeroForm(dm, rng.standard_normal(dm.n_p))
    g = gradient_form(phi)
    pr = projector(dm)
    diff = phi.coeffs[pr.small_nodes[:, 1]] - phi.coeffs[pr.small_nodes[:, 0]]
    assert np.allclose(form_integrals(g).values, diff, atol=1e-12)


def test_interpolation_order_exp1_p2():
    u0 = lambda x: taylor_green(x, 0.0)  # noqa: E731
    errs = []
    for n in (8, 16):
        dm = DofMap(generate_structured(n, n, UNIT_BOX), 2)
        errs.append(l2_error(interpolate(dm, u0), u0))
    assert errs[0] / errs[1] >= 3.5


def test_field_integrals_linear_exact():
    dm = DofMap(generate_structured(2, 2), 2)
    lin = field(lambda x, y: (2 * x + y, x - y))
    I = field_integrals(dm, lin).values
    assert np.allclose(form_integrals(interpolate(dm, lin)).values, I, atol=1e-13)
