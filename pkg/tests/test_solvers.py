import numpy as np
import pytest

from levyscope.errors import CFLViolation
from levyscope.functions import Grid, GridFunction, TestFunction
from levyscope.measures import LevyMeasure, build_quadrature
from levyscope.operators import eval_levy
from levyscope import solvers
from levyscope.solvers import Control, ProblemSpec


@pytest.fixture(scope="module")
def half():
    return LevyMeasure.stable(0.5)


def test_stencil_is_monotone(half):
    g = Grid(2.0, 0.05)
    st = solvers.assemble(half, g, 0.1, nu=0.1)
    A = st.matrix.tocoo()
    off = A.data[A.row != A.col]
    assert off.min() >= 0.0 and st.min_offdiag >= 0.0
    assert np.allclose(np.asarray(st.matrix.sum(axis=1)).ravel(), 0.0, atol=1e-10)
    u = np.random.default_rng(0).normal(size=g.size)
    assert np.allclose(st.apply(u), st.matrix @ u, atol=1e-9)
    assert np.all(st.apply(np.full(g.size, 3.3)) == 0.0)


def test_stencil_2d_monotone():
    mu = LevyMeasure.stable(1.2, dim=2)
    g = Grid(1.0, 0.125, 2)
    st = solvers.assemble(mu, g, 0.25, nu=0.0)
    assert st.min_offdiag >= 0.0


def test_cfl_table_measure():
    mu = LevyMeasure.table([(1.5, 4.0)])
    g = Grid(2.0, 0.05)
    p = ProblemSpec("parabolic_interface", mu, hamiltonian=0.0)
    assert solvers.cfl_bound(p, g) == pytest.approx(0.25, rel=1e-12)


def test_cfl_heat_and_scaling(half):
    g = Grid(1.0, 0.05)
    p = ProblemSpec("parabolic_interface", half, nu=0.3, hamiltonian=0.0, measure_scale=0.0)
    assert solvers.cfl_bound(p, g) == pytest.approx(g.h ** 2 / 0.6, rel=1e-12)
    p2 = ProblemSpec("parabolic_interface", half, nu=0.6, hamiltonian=0.0, measure_scale=0.0)
    assert solvers.cfl_bound(p2, g) == pytest.approx(solvers.cfl_bound(p, g) / 2, rel=1e-12)
    dt, rep = solvers.cfl_bound(p, g, report=True)
    assert rep["dt_max"] == dt


def test_cfl_violation(half):
    g = Grid(1.0, 0.05)
    p = ProblemSpec("parabolic_interface", half, nu=0.1)
    u0 = GridFunction.sample(g, TestFunction.cosine([1.0]))
    with pytest.raises(CFLViolation):
        solvers.solve_parabolic(p, u0, dt=1.0, steps=3)


def test_constants_are_stationary(half):
    g = Grid(1.0, 0.05)
    p = ProblemSpec("parabolic_interface", half, nu=0.1)
    u0 = GridFunction(g, np.full(g.shape, 0.7))
    out = solvers.solve_parabolic(p, u0, steps=40, every=10)
    assert np.all(out.u.flat == 0.7)
    assert [round(t / out.step) for t, _ in out.snapshots] == [0, 10, 20, 30, 40]
    assert out.certificate["monotone"]


def reference_hj(u, h, dt, steps):
    """Explicit Godunov scheme for u_t + |u_x|^2 / 2 = 0 with edge ghosts."""
    u = u.copy()
    for _ in range(steps):
        ext = np.concatenate([[u[0]], u, [u[-1]]])
        back = (ext[1:-1] - ext[:-2]) / h
        fwd = (ext[2:] - ext[1:-1]) / h
        H = 0.5 * np.maximum(np.maximum(back, 0) ** 2, np.minimum(fwd, 0) ** 2)
        u = u - dt * H
    return u


def test_pure_hamilton_jacobi_matches_reference(half):
    g = Grid(2.0, 0.05)
    p = ProblemSpec("parabolic_interface", half, measure_scale=0.0)
    u0 = GridFunction.sample(g, TestFunction.cosine([1.0]))
    out = solvers.solve_parabolic(p, u0, steps=30)
    ref = reference_hj(u0.flat, g.h, out.step, 30)
    assert np.abs(out.u.flat - ref).max() <= 1e-13


def test_parabolic_order_and_shift(half):
    g = Grid(2.0, 0.1)
    p = ProblemSpec("parabolic_interface", half, nu=0.05)
    pairs = solvers.random_ordered_pairs(g, 5, seed=11)
    rep = solvers.discrete_comparison_test(p, pairs, g, steps=30)
    assert rep.passed
    u0 = pairs[0][0]
    same = solvers.discrete_comparison_test(p, [(u0, u0)], g, steps=30)
    assert same.passed and same.max_violation == 0.0
    v0 = u0.with_values(u0.values + 1.0, u0.sup_bound + 1.0)
    P = solvers.max_slope(u0.flat, g) * 1.05 + 1e-9
    st = solvers.assemble(half, g, solvers.default_delta(g), 0.05)
    dt = 0.9 * solvers.cfl_bound(p, g, None, P, st)
    a = solvers.solve_parabolic(p, u0, g, dt=dt, steps=30, slope_bound=P, stencil=st, every=1)
    b = solvers.solve_parabolic(p, v0, g, dt=dt, steps=30, slope_bound=P, stencil=st, every=1)
    for (_, x), (_, y) in zip(a.snapshots, b.snapshots):
        gap = y.flat - x.flat
        assert gap.min() >= 1.0 - 1e-12 and gap.max() <= 1.0 + 1e-12


def test_stationary_diagonal_problem(half):
    g = Grid(1.0, 0.05)
    f = np.linspace(-1, 1, g.size)
    p = ProblemSpec("stationary_semilinear", half, gamma=2.0, hamiltonian=0.0, source=f,
                    measure_scale=0.0)
    out = solvers.solve_stationary(p, g, tol=1e-14)
    assert np.allclose(out.u.flat, f / 2.0, atol=1e-14)


def test_stationary_manufactured(half):
    g = Grid(4.0, 0.05)
    w = TestFunction.gaussian([0.0], 1.0)
    nu, gamma = 0.1, 1.0
    rule = build_quadrature(half, 1.0)
    pts = g.nodes()
    v, grad, hess = w.derivatives(pts)
    lev = np.array([eval_levy(half, w, x, rule=rule) for x in pts])
    f = gamma * v + 0.5 * grad[:, 0] ** 2 - nu * hess[:, 0, 0] - lev
    p = ProblemSpec("stationary_semilinear", half, nu=nu, gamma=gamma, source=f)
    out = solvers.solve_stationary(p, g, tol=1e-10)
    err = np.abs(out.u.flat - v).max()
    assert err <= 10 * (g.h + 1e-6)


def test_stationary_source_shift(half):
    g = Grid(2.0, 0.1)
    f = np.cos(g.nodes()[:, 0])
    p = ProblemSpec("stationary_semilinear", half, gamma=2.0, source=f)
    p1 = ProblemSpec("stationary_semilinear", half, gamma=2.0, source=f + 1.0)
    a = solvers.solve_stationary(p, g, tol=1e-12).u.flat
    b = solvers.solve_stationary(p1, g, tol=1e-12).u.flat
    assert (b - a).min() >= -1e-11
    assert (b - a).max() <= 0.5 + 1e-11


def test_bellman_single_control_reduces(half):
    g = Grid(2.0, 0.1)
    f = np.sin(g.nodes()[:, 0])
    bell = ProblemSpec("bellman", half, gamma=1.0, controls=[Control(f, sigma=0.3)])
    lin = ProblemSpec("stationary_semilinear", half, nu=0.045, gamma=1.0, hamiltonian=0.0,
                      source=f)
    a = solvers.solve_bellman(bell, g, tol=1e-11)
    b = solvers.solve_stationary(lin, g, tol=1e-11)
    assert np.abs(a.u.flat - b.u.flat).max() <= 1e-9


def test_bellman_ordered_sources_pick_smaller(half):
    g = Grid(2.0, 0.1)
    x = g.nodes()[:, 0]
    f1, f2 = np.cos(x), np.cos(x) + 0.5
    bell = ProblemSpec("bellman", half, gamma=1.0,
                       controls=[Control(f2, sigma=0.3), Control(f1, sigma=0.3)])
    out = solvers.solve_bellman(bell, g, tol=1e-11)
    assert np.all(out.policy == 1)
    ref = solvers.solve_bellman(ProblemSpec("bellman", half, gamma=1.0,
                                            controls=[Control(f1, sigma=0.3)]), g, tol=1e-11)
    assert np.abs(out.u.flat - ref.u.flat).max() <= 1e-9


def test_bellman_crossing_sources_match_min_source_solve(half):
    g = Grid(2.0, 0.05)
    x = g.nodes()[:, 0]
    f1, f2 = np.sin(x), 0.5 * x
    bell = ProblemSpec("bellman", half, gamma=1.0,
                       controls=[Control(f1, sigma=0.3), Control(f2, sigma=0.3)])
    out = solvers.solve_bellman(bell, g, tol=1e-10)
    assert set(np.unique(out.policy)) == {0, 1}
    ref = solvers.solve_bellman(ProblemSpec("bellman", half, gamma=1.0,
                                            controls=[Control(np.minimum(f1, f2), sigma=0.3)]),
                                g, tol=1e-11)
    assert np.abs(out.u.flat - ref.u.flat).max() <= 1e-8
    assert out.certificate["residual"] <= 1e-10
    assert out.certificate["max_increase_after_first_improvement"] <= 1e-10


def test_bellman_distinct_dynamics_certificate(half):
    g = Grid(2.0, 0.05)
    x = g.nodes()[:, 0]
    bell = ProblemSpec("bellman", half, gamma=1.0,
                       controls=[Control(np.cos(x), sigma=0.5),
                                 Control(np.cos(x) + 0.2 * x, sigma=0.1, drift=0.4)])
    out = solvers.solve_bellman(bell, g, tol=1e-10)
    assert out.certificate["max_increase_after_first_improvement"] <= 1e-10
    assert out.certificate["min_offdiag"] >= 0.0
    # the discrete Bellman residual vanishes at the returned value
    assert out.residual_history[-1] <= 1e-10


def test_nonlocal_stencil_consistency(half):
    # linear interpolation of the outer weights costs h^2/8 sup|phi''| per unit mass
    g = Grid(8.0, 0.02)
    phi = TestFunction.gaussian([0.0], 1.0)
    st = solvers.assemble(half, g, solvers.default_delta(g), 0.0)
    rule = build_quadrature(half, st.delta)
    applied = st.apply(phi(g.nodes()))
    for x in (0.0, 0.5, -1.0):
        val, err = eval_levy(half, phi, [x], rule=rule, full_output=True)
        bound = err + g.h ** 2 / 8 * st.parts["outer"]
        assert abs(applied[g.index_of([x])] - val) <= bound


def test_stationary_comparison(half):
    g = Grid(2.0, 0.1)
    p = ProblemSpec("stationary_semilinear", half, nu=0.05, gamma=1.0)
    pairs = solvers.random_ordered_pairs(g, 5, seed=2)
    rep = solvers.discrete_comparison_test(p, pairs, g, tol=1e-11)
    assert rep.passed and not rep.violations


def test_comparison_rejects_unordered(half):
    g = Grid(1.0, 0.1)
    p = ProblemSpec("parabolic_interface", half)
    a = GridFunction(g, np.zeros(g.shape))
    b = GridFunction(g, np.full(g.shape, -1.0))
    with pytest.raises(ValueError):
        solvers.discrete_comparison_test(p, [(a, b)], g, steps=2)
