import math

import numpy as np
import pytest

from levyscope.functions import Grid, GridFunction, JumpMap, TestFunction
from levyscope.measures import LevyMeasure, small_ball_moment
from levyscope import solvers
from levyscope import viscosity as V
from levyscope.viscosity import Nonlinearity


@pytest.fixture(scope="module")
def half():
    return LevyMeasure.stable(0.5)


@pytest.fixture(scope="module")
def manufactured(half):
    w = TestFunction.gaussian([0.0], 1.0)
    g = Grid(4.0, 0.05)
    return w, GridFunction.sample(g, w)


# -- structural audits -------------------------------------------------------

def test_ellipticity_reflexive_and_trace_drop():
    F = Nonlinearity.stationary(1.0, 1.0, 1.0, 0.0)
    x, p, N = np.array([0.2]), np.array([0.4]), np.array([[0.7]])
    assert F(x, 0.3, p, N, 0.1) == F(x, 0.3, p, N, 0.1)
    assert F(x, 0.3, p, N, 0.1) - F(x, 0.3, p, N + np.eye(1), 0.1) == pytest.approx(1.0)
    F2 = Nonlinearity.stationary(1.0, 1.0, 1.0, 0.0)
    x2, p2, N2 = np.zeros(2), np.zeros(2), np.eye(2)
    assert F2(x2, 0.0, p2, N2, 0.0) - F2(x2, 0.0, p2, 2 * N2, 0.0) == pytest.approx(2.0)
    assert V.check_ellipticity(F).passed
    assert V.check_ellipticity(F2, dim=2).passed


def test_ellipticity_rejects_unordered_samples():
    F = Nonlinearity.stationary()
    bad = [(np.zeros(1), 0.0, np.zeros(1), np.eye(1) * 0.5, np.eye(1), 0.0, 0.0)]
    with pytest.raises(ValueError):
        V.check_ellipticity(F, bad)


def test_A2_A4_linear_dependence():
    F = Nonlinearity.stationary(1.0, 0.0, 1.0, 0.0)
    x, p, X = np.zeros(1), np.array([0.5]), np.zeros((1, 1))
    assert F(x, 1.0, p, X, 0.0) - F(x, 0.5, p, X, 0.0) == 0.5
    assert F(x, 0.0, p, X, 0.0) - F(x, 0.0, p, X, 1.0) == 1.0
    assert V.check_A2_A4(F).passed


def test_bellman_gamma_and_attestation():
    ctl = [solvers.Control(0.0, sigma=0.5), solvers.Control(1.0, sigma=0.2, drift=[0.3])]
    F = Nonlinearity.bellman(2.0, ctl)
    assert V.check_A2_A4(F).passed
    assert V.check_ellipticity(F).passed
    assert V.attest_A3(F)["attested"]
    assert not V.attest_A3(Nonlinearity.custom(lambda *a: 0.0))["attested"]


def test_catalog_passes_all_audits(half):
    cat = V.catalog()
    for F in cat["nonlinearities"].values():
        assert V.check_ellipticity(F).passed
        assert V.check_A2_A4(F).passed
    for jmap in cat["jump_maps"].values():
        assert V.check_A1(half, jmap).passed


@pytest.mark.parametrize("audit", ["ellipticity", "A2_A4"])
def test_counterexamples_fail_with_witness(audit):
    check = V.check_ellipticity if audit == "ellipticity" else V.check_A2_A4
    for F in V.counterexamples()[audit]:
        rep = check(F)
        assert not rep.passed and rep.failures
        assert rep.to_dict()["failures"]


def test_A1_counterexamples_fail(half):
    for jmap in V.counterexamples()["A1"]:
        rep = V.check_A1(half, jmap)
        assert not rep.passed and rep.failures


def test_A1_identity_ratios_vanish(half):
    rep = V.check_A1(half, JumpMap.identity())
    assert rep.passed
    assert rep.details["max_square_ratio"] == 0.0 and rep.details["max_first_ratio"] == 0.0


def test_A1_shear_constant(half):
    # shear localized to B: c2 = L^2 int_B |z|^2 with L = amplitude * frequency
    jmap = JumpMap.shear(0.3, 2.0)
    rep = V.check_A1(half, jmap)
    expected = 0.6 ** 2 * small_ball_moment(half, 2.0, 1.0)
    assert rep.details["c_bar"][0] == pytest.approx(expected, rel=1e-9)
    assert expected == pytest.approx(0.48)
    assert rep.details["max_square_ratio"] <= expected


# -- sub/supersolution audits ------------------------------------------------

def test_manufactured_probe_is_w_itself(half, manufactured):
    w, u = manufactured
    F = V.manufactured_nonlinearity(w, half, 1.0, 0.1, 1.0, 0.0)
    nodes = V.interior_nodes(u.grid, 3 * u.grid.h)[::8]
    bank = V.ProbeBank(tuple(w.shifted(-0.3) for _ in nodes), tuple(int(i) for i in nodes),
                       {"probe": "w - 0.3"})
    for verify in (V.verify_subsolution, V.verify_supersolution):
        rep = verify(u, F, half, probe_bank=bank)
        assert rep.passed and len(rep.contacts) == len(nodes)
        for c in rep.contacts:
            assert abs(c["F_value"]) <= c["error_bound"] + 10 * u.grid.h


@pytest.mark.parametrize("slack", [2.0, -2.0])
def test_manufactured_slack_verdicts(half, manufactured, slack):
    w, u = manufactured
    F = V.manufactured_nonlinearity(w, half, 1.0, 0.1, 1.0, slack)
    sub = V.verify_subsolution(u, F, half, probe_bank=V.build_probe_bank(u, "max", stride=8))
    sup = V.verify_supersolution(u, F, half, probe_bank=V.build_probe_bank(u, "min", stride=8))
    if slack > 0:
        assert sub.passed and not sup.passed
        assert -sub.max_F >= 0.5 * slack
        assert sup.failures[0]["F_value"] < 0
    else:
        assert sup.passed and not sub.passed
        assert sup.min_F >= 0.5 * -slack


def test_global_and_local_contacts_agree(half, manufactured):
    w, u = manufactured
    F = V.manufactured_nonlinearity(w, half, 1.0, 0.1, 1.0, 1.0)
    bank = V.build_probe_bank(u, "max", stride=10)
    local = V.verify_subsolution(u, F, half, probe_bank=bank)
    glob = V.verify_subsolution(u, F, half, probe_bank=bank, radius=math.inf)
    verdicts = {(c["probe"], c["node"]): c["verdict"] for c in local.contacts}
    common = [(c["probe"], c["node"]) for c in glob.contacts
              if (c["probe"], c["node"]) in verdicts]
    assert common
    for c in glob.contacts:
        key = (c["probe"], c["node"])
        if key in verdicts:
            assert c["verdict"] == verdicts[key]


def test_report_is_deterministic(half, manufactured):
    w, u = manufactured
    F = V.manufactured_nonlinearity(w, half, slack=1.0)
    bank = V.build_probe_bank(u, "max", stride=20)
    a = V.verify_subsolution(u, F, half, probe_bank=bank).to_dict()
    b = V.verify_subsolution(u, F, half, probe_bank=bank).to_dict()
    assert a == b
    assert set(a["contacts"][0]) >= {"node", "probe", "kind", "p", "X", "l_inner",
                                     "l_outer", "F_value", "verdict"}


# -- stability -----------------------------------------------------------------

def test_stability_constant_family(half):
    g = Grid(2.0, 0.1)
    c = 0.4
    F = Nonlinearity.stationary(1.0, 0.0, 1.0, 0.5)
    family = [(e, GridFunction(g, np.full(g.shape, c))) for e in (0.1, 0.05, 0.025)]
    rep = V.stability_experiment(family, F, half)
    assert np.all(rep.limit.flat == c)
    direct = V.verify_subsolution(GridFunction(g, np.full(g.shape, c)), F, half)
    assert rep.passed == direct.passed
    assert [x["F_value"] for x in rep.verification.contacts] == [
        x["F_value"] for x in direct.contacts]


def test_stability_vanishing_viscosity(half):
    g = Grid(2.0, 0.05)
    src = lambda p: np.cos(2 * p[:, 0])
    eps = [0.1, 0.05, 0.025]
    family = V.vanishing_viscosity_family(half, g, eps, source=src)
    F = Nonlinearity.stationary(1.0, 0.0, 1.0, src)
    rep = V.stability_experiment(family, F, half,
                                 probe_bank=V.build_probe_bank(family[-1][1], "max", stride=4))
    assert rep.passed
    assert [s["eps"] for s in rep.relaxed["schedule"]] == eps


def test_stability_injected_spike_fails(half):
    g = Grid(2.0, 0.1)
    F = Nonlinearity.stationary(1.0, 0.0, 1.0, 0.0)
    node = g.index_of([0.5])
    family = []
    for e in (0.1, 0.05, 0.025):
        vals = np.zeros(g.size)
        vals[node] = 1.0
        family.append((e, GridFunction(g, vals.reshape(g.shape))))
    rep = V.stability_experiment(family, F, half)
    assert not rep.passed
    assert node in {c["node"] for c in rep.verification.failures}


# -- localizer and the doubled-variable surrogate ------------------------------

def test_localizer_properties(half):
    rep = V.check_localizer(half)
    assert rep.passed
    rows = rep.details["rows"]
    assert [r["beta"] for r in rows] == [1.0, 0.5, 0.25]
    assert rows[-1]["sup_nonlocal"] < rows[0]["sup_nonlocal"]


def test_two_point_check_ordered_pair(half):
    u = TestFunction.quadratic_clamped([0.0], cap=0.5, hessian=-1.0, value=0.0)
    v = TestFunction.quadratic_clamped([0.0], cap=1.5, hessian=1.0, value=1.0)
    Fu = Nonlinearity.custom(lambda x, uu, p, X, l: -1.0, name="always_sub")
    Fv = Nonlinearity.custom(lambda x, vv, p, X, l: 1.0, name="always_super")
    rep = V.two_point_check(u, v, Fu, Fv, half, eps=0.1)
    assert rep.passed
    assert rep.details["matrix_lower_eig"] >= 0.0
    rep_b = V.two_point_check(u, v, Fu, Fv, half, eps=0.1, beta=0.5)
    assert rep_b.passed


def test_two_point_check_detects_wrong_sign(half):
    u = TestFunction.gaussian([0.0], 1.0)
    v = TestFunction.gaussian([0.0], 1.0).shifted(0.5)
    Fu = Nonlinearity.custom(lambda x, uu, p, X, l: 1.0, name="never_sub")
    rep = V.two_point_check(u, v, Fu, Nonlinearity.custom(lambda *a: 1.0), half, eps=0.1)
    assert not rep.passed
    assert {"check": "sub_inequality"} in rep.failures
