import numpy as np
from hypothesis import assume, given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from levyscope.functions import Grid, GridFunction, TestFunction
from levyscope.measures import LevyMeasure, small_ball_moment
from levyscope.nonsmooth import check_semiconvexity, inf_convolution, sup_convolution
from levyscope.operators import eval_levy
from levyscope import solvers
from levyscope import viscosity as V

GRID = Grid(1.0, 0.1)
finite = st.floats(-5, 5, allow_nan=False)
node_values = arrays(float, GRID.shape, elements=finite)


@given(node_values, st.floats(-3, 3))
def test_interpolation_stays_in_range(vals, x):
    u = GridFunction(GRID, vals)
    v = u.value([x])
    assert vals.min() - 1e-12 <= v <= vals.max() + 1e-12


@given(node_values, st.integers(0, GRID.size - 1))
def test_interpolation_reproduces_nodes(vals, i):
    u = GridFunction(GRID, vals)
    assert u.value(GRID.nodes()[i]) == vals[i]


@settings(max_examples=40, deadline=None)
@given(node_values, node_values, st.floats(-1, 1), st.sampled_from([0.05, 0.1, 0.2]))
def test_sup_convolution_order(a, b, r, alpha):
    lo = np.minimum(a, b)
    U, W = GridFunction(GRID, lo), GridFunction(GRID, a)
    su, sw = sup_convolution(U, [r], alpha), sup_convolution(W, [r], alpha)
    assert np.all(su.values.flat <= sw.values.flat)
    assert np.all(su.values.flat >= lo.ravel())
    assert np.all(inf_convolution(U, [r], alpha).values.flat <= lo.ravel())


@settings(max_examples=25, deadline=None)
@given(st.floats(0.1, 1.9), st.floats(0.05, 1.0))
def test_small_ball_moment_closed_form(alpha, delta):
    mu = LevyMeasure.stable(alpha)
    assert np.isclose(small_ball_moment(mu, 2.0, delta), 2 * delta ** (2 - alpha) / (2 - alpha),
                      rtol=1e-12)


@settings(max_examples=15, deadline=None)
@given(st.floats(-3, 3), st.floats(-2, 2))
def test_operator_ignores_constant_shift(c, x):
    mu = LevyMeasure.stable(0.8)
    phi = TestFunction.gaussian([0.0], 1.0)
    # the offset cancels in phi(x+z) - phi(x) only up to rounding of |c|
    assert np.isclose(eval_levy(mu, phi.shifted(c), [x]), eval_levy(mu, phi, [x]),
                      rtol=1e-12, atol=1e-12 * (1 + abs(c)))


@settings(max_examples=30, deadline=None)
@given(node_values, st.floats(-3, 3))
def test_stencil_difference_form(vals, c):
    stencil = solvers.assemble(LevyMeasure.stable(0.5), GRID, 0.2, 0.1)
    u = vals.ravel()
    assert np.allclose(stencil.apply(u), stencil.matrix @ u, atol=1e-8 * (1 + np.abs(u).max()))
    assert np.allclose(stencil.apply(u + c), stencil.apply(u), atol=1e-8 * (1 + abs(c)))


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2 ** 16))
def test_catalog_audits_hold_for_any_sample_seed(seed):
    for F in V.catalog()["nonlinearities"].values():
        assert V.check_ellipticity(F, seed=seed).passed
        assert V.check_A2_A4(F, seed=seed).passed


@settings(max_examples=30, deadline=None)
@given(node_values, st.floats(-2, 2), st.sampled_from([0.2, 0.1, 0.05, 0.01]))
def test_semiconvexity_floor_is_sharp(vals, r, alpha):
    # once the unit-ball constraint cannot bind, every candidate parabola has
    # second difference exactly -1/alpha and the max sits on the floor
    assume(1 / (2 * alpha) - abs(r) > np.ptp(vals))
    rep = check_semiconvexity(sup_convolution(GridFunction(GRID, vals), [r], alpha))
    assert rep.min_second_difference >= -1 / alpha - 1e-9 * (1 + np.abs(vals).max()) / alpha ** 2
