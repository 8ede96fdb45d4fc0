import numpy as np
import pytest

from levyscope.contacts import certify_contact, find_contacts
from levyscope.errors import NoContacts, NotContactPoint
from levyscope.functions import Grid, GridFunction, JumpMap, TestFunction, weight_map

FORMS = [
    TestFunction.cosine([1.3]),
    TestFunction.gaussian([0.2], 0.7, 1.5),
    TestFunction.bump([0.1], 1.2),
    TestFunction.quadratic_clamped([0.0], cap=2.0, hessian=1.5, slope=[0.3], value=0.4),
    TestFunction.localizer(0.5, 2.0),
]


@pytest.mark.parametrize("phi", FORMS, ids=lambda f: f.form)
def test_derivatives_match_finite_differences(phi):
    x = np.array([[0.37], [-0.81], [1.93]])
    h = 1e-5
    _, g, H = phi.derivatives(x)
    fd1 = (phi(x + h) - phi(x - h)) / (2 * h)
    fd2 = (phi(x + h) - 2 * phi(x) + phi(x - h)) / h ** 2
    assert np.allclose(g[:, 0], fd1, atol=1e-7)
    assert np.allclose(H[:, 0, 0], fd2, atol=2e-4)


def test_derivatives_2d_gaussian():
    phi = TestFunction.gaussian([0.1, -0.2], 0.9)
    x = np.array([0.3, 0.4])
    g, H = phi.gradient(x), phi.hessian(x)
    h = 1e-5
    e = np.eye(2)
    fd = np.array([(phi.value(x + h * v) - phi.value(x - h * v)) / (2 * h) for v in e])
    assert np.allclose(g, fd, atol=1e-8)
    assert np.allclose(H, H.T)


def test_quadratic_clamped_is_bounded():
    phi = TestFunction.quadratic_clamped([0.0], cap=2.0, hessian=4.0)
    x = np.linspace(-50, 50, 1001)[:, None]
    assert phi(x).max() <= 2.0 + 1e-12
    assert phi.sup_norm() >= phi(x).max()


def test_localizer_levels():
    psi = TestFunction.localizer(0.5, 3.0)
    assert psi.value([1.9]) == 0.0
    assert psi.value([4.0]) == pytest.approx(4.0)
    assert psi.value([-10.0]) == pytest.approx(4.0)


def test_offset_shift():
    phi = TestFunction.cosine([1.0]).shifted(-2.0)
    assert phi.value([0.0]) == pytest.approx(-1.0)
    assert np.allclose(phi.gradient([0.3]), TestFunction.cosine([1.0]).gradient([0.3]))


def test_grid_validation():
    with pytest.raises(ValueError):
        Grid(1.0, 0.3)
    with pytest.raises(ValueError):
        Grid(1.0, 0.1, extension="mirror")
    g = Grid(1.0, 0.25, 2)
    assert g.shape == (9, 9) and g.size == 81
    assert g.index_of([0.25, -1.0]) == 5 * 9 + 0


def test_interpolation_weights_partition_unity():
    g = Grid(1.0, 0.1, 2)
    pts = np.random.default_rng(1).uniform(-3, 3, (50, 2))
    idx, w = g.interp_weights(pts)
    assert np.all(w >= 0)
    assert np.allclose(w.sum(axis=1), 1.0)


def test_clamp_and_periodic_extension():
    g = Grid(1.0, 0.5)
    u = GridFunction(g, [1.0, 2.0, 3.0, 4.0, 5.0])
    assert u.value([7.0]) == 5.0 and u.value([-7.0]) == 1.0
    gp = Grid(1.0, 0.5, extension="periodic")
    v = GridFunction(gp, [1.0, 2.0, 3.0, 4.0, 9.0])
    assert v.values[-1] == 1.0
    assert v.value([0.25 + 2.0]) == pytest.approx(v.value([0.25]))


def test_constant_grid_function_exact_interpolation():
    g = Grid(2.0, 0.1, 2)
    u = GridFunction(g, np.full(g.shape, 1.7))
    pts = np.random.default_rng(0).uniform(-5, 5, (200, 2))
    assert np.all(u(pts) == 1.7)


def test_sup_bound_declaration():
    g = Grid(1.0, 0.5)
    with pytest.raises(ValueError):
        GridFunction(g, [0, 0, 3.0, 0, 0], sup_bound=1.0)


def test_jump_maps():
    z = np.array([[0.5], [2.0]])
    ident = JumpMap.identity()
    assert np.array_equal(ident([0.3], z), z)
    shear = JumpMap.shear(0.5, 1.0)
    # inside the ball only
    assert shear([np.pi / 2], z)[0, 0] == pytest.approx(0.75)
    assert shear([np.pi / 2], z)[1, 0] == 2.0
    assert shear.lipschitz_x == 0.5
    lin = JumpMap.linear([[2.0]])
    assert np.allclose(lin([0.0], z), 2 * z)


def test_weight_maps():
    z = np.array([[0.5], [3.0]])
    assert np.all(weight_map("zero")(None, z) == 0)
    assert np.all(weight_map("constant", 2.0)(None, z) == 2.0)
    assert np.allclose(weight_map("saturated", 1.0)(None, z), [0.5, 1.0])
    with pytest.raises(ValueError):
        weight_map("bogus")


def test_certify_contact_grid():
    g = Grid(2.0, 0.1)
    u = GridFunction.sample(g, lambda p: -np.abs(p[:, 0]))
    cert = certify_contact(u, TestFunction.constant(0.0), [0.0], "max")
    assert cert.margin == pytest.approx(0.1)
    with pytest.raises(NotContactPoint):
        certify_contact(u, TestFunction.constant(0.0), [0.5], "max")
    # a local window accepts a point that is not a global maximum
    w = GridFunction.sample(g, lambda p: np.cos(3 * p[:, 0]))
    probe = TestFunction.constant(0.0)
    with pytest.raises(NotContactPoint):
        certify_contact(w, probe, [2 * np.pi / 3 - 0.0944], "max")
    cert = certify_contact(w, probe, [0.0], "max", radius=0.3)
    assert cert.radius == 0.3


def test_find_contacts():
    g = Grid(2.0, 0.1)
    u = GridFunction.sample(g, lambda p: np.cos(np.pi * p[:, 0]))
    found = find_contacts(u, TestFunction.constant(0.0), "max", radius=0.5)
    xs = sorted(round(float(c.x[0]), 6) for c in found)
    assert xs == [0.0]
    mins = find_contacts(u, TestFunction.constant(0.0), "min", radius=0.5)
    assert sorted(round(float(c.x[0]), 6) for c in mins) == [-1.0, 1.0]
    with pytest.raises(NoContacts):
        find_contacts(GridFunction.sample(g, lambda p: p[:, 0]), TestFunction.constant(0.0),
                      "max", radius=0.5)
