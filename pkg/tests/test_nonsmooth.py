import numpy as np
import pytest

from levyscope.errors import GridTooCoarse, InconsistentGrids
from levyscope.functions import Grid, GridFunction, TestFunction
from levyscope.nonsmooth import (SemiJet, check_semiconvexity, inf_convolution, jet_probe,
                                 relaxed_limit, sup_convolution)


@pytest.fixture(scope="module")
def grid():
    return Grid(2.0, 0.05)


def test_constant_with_slope(grid):
    # max of -r w - w^2/(2 alpha) at w = -alpha r
    U = GridFunction(grid, np.zeros(grid.shape))
    res = sup_convolution(U, [2.0], 0.1)
    assert np.allclose(res.values.flat, 0.2, atol=1e-15)
    assert np.allclose(res.argmax_map[:, 0], -0.2, atol=1e-12)


def test_identity_case(grid):
    U = GridFunction(grid, np.full(grid.shape, 1.25))
    res = sup_convolution(U, [0.0], 0.3)
    assert np.all(res.values.flat == 1.25)
    assert np.all(res.argmax_map == 0)
    assert np.all(inf_convolution(U, [0.0], 0.3).values.flat == 1.25)


def test_domination_and_duality(grid):
    rng = np.random.default_rng(3)
    for _ in range(5):
        U = GridFunction(grid, rng.uniform(-1, 1, grid.shape))
        r = rng.uniform(-1, 1, 1)
        sup = sup_convolution(U, r, 0.1)
        assert np.all(sup.values.flat >= U.flat)
        inf = inf_convolution(U, r, 0.1)
        neg = sup_convolution(U.with_values(-U.values), -r, 0.1)
        assert np.array_equal(inf.values.flat, -neg.values.flat)
        assert np.all(inf.values.flat <= U.flat)


def test_coarse_grid_rejected():
    g = Grid(1.0, 0.5)
    with pytest.raises(GridTooCoarse):
        sup_convolution(GridFunction(g, np.zeros(g.shape)), [0.0], 0.1)


def test_semiconvexity_of_kink(grid):
    U = GridFunction.sample(grid, lambda p: -np.abs(p[:, 0]))
    for alpha in (0.2, 0.1, 0.05):
        rep = check_semiconvexity(sup_convolution(U, [0.0], alpha))
        assert rep.passed
        assert rep.min_second_difference >= -1.0 / alpha - rep.tol


def test_semiconvexity_smooth_and_convex(grid):
    U = GridFunction.sample(grid, lambda p: np.cos(p[:, 0]))
    rep = check_semiconvexity(sup_convolution(U, [0.0], 0.05), tol=1e-2)
    assert rep.min_second_difference >= -1.0 - 1e-2
    V = GridFunction.sample(grid, lambda p: p[:, 0] ** 2 / 4)
    # the clamped extension is flat outside the box, so skip a boundary layer
    rep = check_semiconvexity(sup_convolution(V, [0.0], 0.05), tol=1e-9, margin=0.25)
    assert rep.min_second_difference >= -1e-9


def test_recovery_rate():
    # h well below alpha |V'| so the discrete maximizer can move
    V = GridFunction.sample(Grid(2.0, 0.005), TestFunction.gaussian([0.0], 0.6))
    alphas = np.array([0.2, 0.1, 0.05, 0.025])
    dist = [np.abs(inf_convolution(V, [0.0], a).values.flat - V.flat).max() for a in alphas]
    slope = np.polyfit(np.log(alphas), np.log(dist), 1)[0]
    assert slope == pytest.approx(1.0, abs=0.25)


def test_relaxed_limit_spike():
    g = Grid(1.0, 0.05)
    pts = g.nodes()[:, 0]
    family = []
    for eps in (0.04, 0.01, 0.0025):
        family.append((eps, GridFunction(g, (np.abs(pts) < eps / 2).astype(float))))
    upper = relaxed_limit(family, "upper")
    lower = relaxed_limit(family, "lower")
    assert upper.value([0.0]) == 1.0
    assert np.all(upper.flat[np.abs(pts) > 0.06] == 0.0)
    assert np.all(lower.flat == 0.0)


def test_relaxed_limit_squeeze():
    g = Grid(1.0, 0.05)
    U = GridFunction.sample(g, lambda p: np.sin(p[:, 0]))
    rng = np.random.default_rng(5)
    family = [(e, U.with_values(U.values + e * rng.uniform(-1, 1, g.shape), 2.0))
              for e in (0.01, 0.005, 0.0025)]
    lim, rep = relaxed_limit(family, "upper", full_output=True)
    rho = np.sqrt(0.0025)
    assert np.abs(lim.flat - U.flat).max() <= 0.0025 + rho + 1e-12
    assert [s["eps"] for s in rep["schedule"]] == [0.01, 0.005, 0.0025]


def test_relaxed_limit_validation():
    g, g2 = Grid(1.0, 0.05), Grid(1.0, 0.1)
    with pytest.raises(InconsistentGrids):
        relaxed_limit([(0.1, GridFunction(g, np.zeros(g.shape))),
                       (0.05, GridFunction(g2, np.zeros(g2.shape)))])
    with pytest.raises(ValueError):
        relaxed_limit([(0.05, GridFunction(g, np.zeros(g.shape))),
                       (0.1, GridFunction(g, np.zeros(g.shape)))])


def test_jet_probe_exact_and_fitted():
    phi = TestFunction.quadratic_clamped([0.3], cap=5.0, hessian=2.0)
    jet = jet_probe(phi, [0.3])
    assert np.allclose(jet.p, 0.0) and np.allclose(jet.X, 2.0)
    errs = []
    for h in (0.1, 0.05):
        u = GridFunction.sample(Grid(1.0, h), TestFunction.cosine([1.0]))
        jet = jet_probe(u, [0.0])
        assert jet.diagnostic
        errs.append(abs(jet.X[0, 0] + 1.0))
    assert errs[1] < errs[0] / 3
    const = jet_probe(GridFunction(Grid(1.0, 0.1), np.full(21, 2.0)), [0.0])
    assert np.allclose(const.p, 0) and np.allclose(const.X, 0)


def test_semijet_requires_symmetry():
    with pytest.raises(ValueError):
        SemiJet([0.0, 0.0], [[1.0, 2.0], [0.0, 1.0]])
