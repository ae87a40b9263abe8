import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from feec_sl.femspace import DiscreteOneForm, DofMap, eval_one_form, l2_error
from feec_sl.harness import taylor_green
from feec_sl.mesh import generate_structured, locate_point
from feec_sl.projection import form_integrals, interpolate, projector, segment_integrals
from feec_sl.transport import (
    FlowEvaluator,
    OutsideDomain,
    SmoothedVelocity,
    flow_back_euler,
    flow_back_heun,
    sl_pullback,
    smooth_eval,
    transported_edge_integrals,
)

from conftest import UNIT_BOX, field

ONE_X = field(lambda x, y: (np.ones_like(x), np.zeros_like(x)))
ROTATION = field(lambda x, y: (-y, x))


def pointwise(form):
    """Evaluate a form at physical points by locating each point (independent of the tracer)."""
    mesh = form.dof_map.mesh

    def u(x):
        out = []
        for xi in x:
            t = locate_point(mesh, xi)
            out.append(eval_one_form(form, t, mesh.to_reference(t, xi)))
        return np.array(out)

    return u


@pytest.fixture(scope="module")
def box16():
    return DofMap(generate_structured(16, 16, UNIT_BOX), 2)


@pytest.fixture(scope="module")
def unit8():
    return DofMap(generate_structured(8, 8), 1)


def test_smoothing_constant(unit8, rng):
    sv = SmoothedVelocity(interpolate(unit8, ONE_X))
    pts = rng.random((200, 2))
    pts[:20, 0] = 0.0  # on the boundary: truncated segments
    vals, _, _ = sv.eval_many(pts)
    assert np.allclose(vals, [1, 0], atol=1e-12)
    assert np.allclose(smooth_eval(sv, (1.0, 1.0)), [1, 0], atol=1e-12)


def test_smoothing_affine_interior(box16, rng):
    lin = field(lambda x, y: (x + 0.3, -y + 2 * x))
    sv = SmoothedVelocity(interpolate(box16, lin))
    margin = 0.5 - box16.mesh.h_min / 2 - 1e-9
    pts = (rng.random((200, 2)) * 2 - 1) * margin
    vals, _, _ = sv.eval_many(pts)
    assert np.allclose(vals, lin(pts), atol=1e-12)


def test_smoothing_on_interior_edge_matches_numerical_average(rng):
    dm = DofMap(generate_structured(6, 6), 1)
    f = DiscreteOneForm(dm, rng.standard_normal(dm.n_dof))
    sv = SmoothedVelocity(f)
    m = dm.mesh
    e = int(np.flatnonzero(~m.boundary_edge)[7])
    x = m.vertices[m.edges[e]].mean(axis=0)
    got = smooth_eval(sv, x)
    u = pointwise(f)
    half = m.h_min / 2
    s = (np.arange(4000) + 0.5) / 4000 * 2 * half - half
    ref = [u(x + np.outer(s, ax))[:, i].mean() for i, ax in enumerate(np.eye(2))]
    assert np.allclose(got, ref, atol=1e-5)


def test_smoothing_outside_raises(unit8):
    with pytest.raises(OutsideDomain):
        smooth_eval(SmoothedVelocity(interpolate(unit8, ONE_X)), (1.5, 0.5))


def test_euler_examples(unit8, box16):
    fe = FlowEvaluator(0.1, interpolate(unit8, ONE_X))
    assert np.allclose(flow_back_euler(fe, (0.5, 0.5)), [0.4, 0.5], atol=1e-12)
    fz = FlowEvaluator(0.1, DiscreteOneForm.zeros(unit8))
    assert np.allclose(flow_back_euler(fz, (0.3, 0.7)), [0.3, 0.7])
    fr = FlowEvaluator(0.01, interpolate(box16, ROTATION))
    assert np.allclose(flow_back_euler(fr, (0.3, 0.0)), [0.3, -0.003], atol=1e-12)


def test_heun_examples(unit8, box16):
    c = interpolate(unit8, ONE_X)
    fe = FlowEvaluator(0.1, c, c, order=2)
    assert np.allclose(flow_back_heun(fe, (0.5, 0.5)), [0.4, 0.5], atol=1e-12)
    assert np.allclose(flow_back_heun(fe, (0.5, 0.5), horizon=2), [0.3, 0.5], atol=1e-12)
    rot = interpolate(box16, ROTATION)
    tau = 0.01
    fr = FlowEvaluator(tau, rot, rot, order=2)
    exact = 0.3 * np.array([np.cos(tau), -np.sin(tau)])
    assert np.linalg.norm(flow_back_heun(fr, (0.3, 0.0)) - exact) < 1e-5
    exact2 = 0.3 * np.array([np.cos(2 * tau), -np.sin(2 * tau)])
    assert np.linalg.norm(flow_back_heun(fr, (0.3, 0.0), horizon=2) - exact2) < 1e-5


def test_flow_evaluator_arguments(unit8):
    z = DiscreteOneForm.zeros(unit8)
    with pytest.raises(ValueError):
        FlowEvaluator(0.0, z)
    with pytest.raises(ValueError):
        FlowEvaluator(0.1, z, order=2)
    with pytest.raises(ValueError):
        FlowEvaluator(0.1, z).map_points(np.zeros((1, 2)) + 0.5, horizon=2)


@pytest.mark.parametrize("order", [1, 2])
def test_zero_velocity_pullback_is_identity(order, rng):
    dm = DofMap(generate_structured(6, 6, UNIT_BOX), order)
    w = DiscreteOneForm(dm, rng.standard_normal(dm.n_dof))
    z = DiscreteOneForm.zeros(dm)
    fe = FlowEvaluator(0.05, z) if order == 1 else FlowEvaluator(0.05, z, z, order=2)
    for horizon in (1, order):
        out, stats = sl_pullback(w, fe, horizon)
        assert np.abs((w.coeffs - out.coeffs) / 0.05).max() < 1e-12
        assert stats.n_outside == 0


def test_constant_shift_integrals(rng):
    dm = DofMap(generate_structured(8, 8), 2)
    w = interpolate(dm, field(lambda x, y: (np.sin(3 * y), np.cos(2 * x) * y)))
    tau, c = 0.03, np.array([0.7, -0.4])
    fe = FlowEvaluator(tau, interpolate(dm, field(lambda x, y: (np.full_like(x, c[0]), np.full_like(x, c[1])))))
    ti = transported_edge_integrals(w, fe, keep_boundary=False)
    a, b = projector(dm).small_edge_points()
    a, b = a - tau * c, b - tau * c
    inside = np.all((a > 0) & (a < 1) & (b > 0) & (b < 1), axis=1)
    ref = segment_integrals(pointwise(w), a[inside], b[inside], 6)
    # the integrand is piecewise quadratic: Gauss on the whole segment is only approximate across kinks
    assert np.allclose(ti.values[inside], ref, atol=5e-4)
    assert np.allclose(ti.starts, a) and np.allclose(ti.ends, b)


def test_rotation_pullback_converges():
    tau_per_h = 0.1
    errs = []
    for n in (8, 16):
        dm = DofMap(generate_structured(n, n, UNIT_BOX), 2)
        tau = tau_per_h * dm.mesh.h
        rot = interpolate(dm, ROTATION)
        w = interpolate(dm, lambda x: taylor_green(x))
        out, _ = sl_pullback(w, FlowEvaluator(tau, rot, rot, order=2))
        c, s = np.cos(tau), np.sin(tau)
        R = np.array([[c, s], [-s, c]])  # backward rotation by tau

        def exact(x):
            return taylor_green(x @ R.T) @ R

        errs.append(l2_error(out, exact))
    assert errs[1] < errs[0] / 2.5


@settings(max_examples=10, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2), st.integers(0, 2**31 - 1))
def test_pullback_linear_in_form(a, b, seed):
    rng = np.random.default_rng(seed)
    dm = DofMap(generate_structured(5, 5, UNIT_BOX), 2)
    vel = interpolate(dm, lambda x: taylor_green(x))
    fe = FlowEvaluator(0.04, vel, vel * 0.9, order=2)
    f = DiscreteOneForm(dm, rng.standard_normal(dm.n_dof))
    g = DiscreteOneForm(dm, rng.standard_normal(dm.n_dof))
    lhs, _ = sl_pullback(f * a + g * b, fe, 2)
    pf, _ = sl_pullback(f, fe, 2)
    pg, _ = sl_pullback(g, fe, 2)
    assert np.allclose(lhs.coeffs, a * pf.coeffs + b * pg.coeffs, atol=1e-12 * (1 + abs(a) + abs(b)) * 10)


def test_lipschitz_bound(rng):
    dm = DofMap(generate_structured(16, 16, UNIT_BOX), 1)
    f = interpolate(dm, lambda x: taylor_green(x))
    sv = SmoothedVelocity(f)
    h = dm.mesh.h_min
    x = (rng.random((1000, 2)) - 0.5) * 0.98
    y = np.clip(x + rng.normal(scale=h / 5, size=x.shape), -0.5, 0.5)
    ux, _, _ = sv.eval_many(x)
    uy, _, _ = sv.eval_many(y)
    ratio = np.linalg.norm(ux - uy, axis=1) / np.linalg.norm(x - y, axis=1)
    umax = np.abs(pointwise(f)(x)).max()
    assert ratio.max() <= 10 * umax / h


def test_pullback_of_member_under_zero_flow_keeps_integrals(rng):
    dm = DofMap(generate_structured(4, 4), 2)
    w = DiscreteOneForm(dm, rng.standard_normal(dm.n_dof))
    z = DiscreteOneForm.zeros(dm)
    ti = transported_edge_integrals(w, FlowEvaluator(0.1, z))
    assert np.allclose(ti.values, form_integrals(w).values, atol=1e-13)
