"""Viscosity inequalities, structural assumptions and stability experiments.

The sub/supersolution audits replace "for every test function" by a finite,
reproducible probe bank: clamped quadratics anchored at each interior node
(slope from central differences, curvature swept over multiples of 1/h)
plus a few smooth global probes. At each discrete contact point the
nonlinearity is evaluated with

    l = inner(probe) + outer(u, p = grad probe(x))

and compared with zero up to a tolerance built from the quadrature error
and the grid resolution.
"""

from dataclasses import dataclass, field
import math

import numpy as np

from levyscope.contacts import certify_contact, find_contacts
from levyscope.errors import NoContacts, NotContactPoint
from levyscope.functions import Grid, GridFunction, JumpMap, TestFunction
from levyscope.measures import build_quadrature, second_moment_matrix
from levyscope.nonsmooth import relaxed_limit
from levyscope.operators import eval_inner, eval_levy, eval_levy_ito, eval_outer
from levyscope import solvers

ELLIPTIC_SLACK = 1e-12


def _source_at(source, x):
    if source is None:
        return 0.0
    if callable(source):
        return float(np.asarray(source(np.asarray(x, dtype=float)[None, :])).ravel()[0])
    if isinstance(source, GridFunction):
        return source.value(x)
    return float(source)


@dataclass(frozen=True)
class Nonlinearity:
    """F(x, u, p, X, l) from a small catalog.

    ``stationary_semilinear``  gamma u + c_H |p|^2/2 - nu tr X - l - f(x)
    ``parabolic_interface``    c_H |p|^2/2 - nu tr X - l (the u_t term lives in the solver)
    ``bellman``                gamma u + max_a {-l - sigma_a^2 tr X / 2 - b_a.p - f_a(x)}
    ``custom``                 any callable, for constructed counterexamples
    """

    kind: str
    gamma: float = 1.0
    l_lipschitz: float = 1.0
    viscosity: float = 0.0
    hamiltonian: float = 1.0
    source: object = None
    controls: tuple = ()
    func: object = None
    name: str = ""

    @classmethod
    def stationary(cls, gamma=1.0, nu=0.0, hamiltonian=1.0, source=None):
        if gamma <= 0:
            raise ValueError("stationary nonlinearities need gamma > 0")
        return cls("stationary_semilinear", gamma, 1.0, nu, hamiltonian, source)

    @classmethod
    def parabolic(cls, nu=0.0, hamiltonian=1.0):
        return cls("parabolic_interface", 0.0, 1.0, nu, hamiltonian)

    @classmethod
    def bellman(cls, gamma, controls):
        if gamma <= 0 or not controls:
            raise ValueError("bellman needs gamma > 0 and at least one control")
        return cls("bellman", gamma, 1.0, 0.0, 0.0, None, tuple(controls))

    @classmethod
    def custom(cls, func, gamma=1.0, l_lipschitz=1.0, name="custom"):
        return cls("custom", gamma, l_lipschitz, func=func, name=name)

    def with_source(self, source):
        return Nonlinearity(self.kind, self.gamma, self.l_lipschitz, self.viscosity,
                            self.hamiltonian, source, self.controls, self.func, self.name)

    def __call__(self, x, u, p, X, l):
        p = np.atleast_1d(np.asarray(p, dtype=float))
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.kind == "custom":
            return float(self.func(x, u, p, X, l))
        tr = float(np.trace(X))
        if self.kind == "bellman":
            best = -math.inf
            for c in self.controls:
                b = np.zeros_like(p) if c.drift is None else np.atleast_1d(c.drift)
                val = -l - 0.5 * c.sigma ** 2 * tr - float(b @ p) - _source_at(c.source, x)
                best = max(best, val)
            return self.gamma * u + best
        value = self.hamiltonian * 0.5 * float(p @ p) - self.viscosity * tr - l
        if self.kind == "stationary_semilinear":
            value += self.gamma * u - _source_at(self.source, x)
        return float(value)

    def describe(self):
        out = {"kind": self.kind, "gamma": self.gamma, "l_lipschitz": self.l_lipschitz,
               "nu": self.viscosity, "c_H": self.hamiltonian}
        if self.name:
            out["name"] = self.name
        if self.controls:
            out["controls"] = [{"sigma": c.sigma,
                                "drift": None if c.drift is None else np.atleast_1d(c.drift).tolist()}
                               for c in self.controls]
        return out


@dataclass
class AuditReport:
    """Outcome of a structural check; ``failures`` hold witness dicts."""

    name: str
    passed: bool
    checked: int
    failures: list = field(default_factory=list)
    details: dict = field(default_factory=dict)

    def to_dict(self):
        return {"name": self.name, "passed": self.passed, "checked": self.checked,
                "failures": _jsonable(self.failures), "details": _jsonable(self.details)}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


# -- structural assumptions ------------------------------------------------

def _random_sym(rng, d, scale=1.0):
    a = rng.standard_normal((d, d)) * scale
    return 0.5 * (a + a.T)


def ellipticity_samples(dim=1, count=64, seed=0):
    """Tuples (x, u, p, M, N, l1, l2) with M >= N and l1 >= l2."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(count):
        N = _random_sym(rng, dim)
        b = rng.standard_normal((dim, dim))
        M = N + b @ b.T * (i % 4 != 0)
        l2 = rng.normal()
        l1 = l2 + abs(rng.normal()) * (i % 3 != 0)
        out.append((rng.uniform(-1, 1, dim), rng.normal(), rng.normal(size=dim), M, N, l1, l2))
    return out


def check_ellipticity(F, samples=None, dim=1, seed=0):
    """F(x,u,p,M,l1) <= F(x,u,p,N,l2) + 1e-12 whenever M >= N and l1 >= l2."""
    samples = ellipticity_samples(dim, seed=seed) if samples is None else samples
    failures = []
    for x, u, p, M, N, l1, l2 in samples:
        if np.linalg.eigvalsh(np.atleast_2d(M) - np.atleast_2d(N)).min() < -1e-12 or l1 < l2:
            raise ValueError("ellipticity samples must satisfy M >= N and l1 >= l2")
        a, b = F(x, u, p, M, l1), F(x, u, p, N, l2)
        if a > b + ELLIPTIC_SLACK:
            failures.append({"x": x, "u": u, "p": p, "M": M, "N": N, "l1": l1, "l2": l2,
                             "F_M": a, "F_N": b})
    return AuditReport("ellipticity", not failures, len(samples), failures,
                       {"slack": ELLIPTIC_SLACK, "F": F.describe()})


def monotonicity_samples(dim=1, count=64, seed=0):
    """(x, u, v, p, X, l, l2) with u >= v; l2 is a perturbation of l."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        v = rng.normal()
        u = v + abs(rng.normal())
        l = rng.normal()
        out.append((rng.uniform(-1, 1, dim), u, v, rng.normal(size=dim),
                    _random_sym(rng, dim), l, l + rng.normal()))
    return out


def check_A2_A4(F, samples=None, dim=1, seed=0):
    """Properness F(u) - F(v) >= gamma (u - v) and l-Lipschitz bound, on samples."""
    samples = monotonicity_samples(dim, seed=seed) if samples is None else samples
    failures = []
    for x, u, v, p, X, l, l2 in samples:
        if u < v:
            raise ValueError("samples must satisfy u >= v")
        gap = F(x, u, p, X, l) - F(x, v, p, X, l)
        if gap < F.gamma * (u - v) - ELLIPTIC_SLACK * (1 + abs(u) + abs(v)):
            failures.append({"check": "A2", "x": x, "u": u, "v": v, "F_gap": gap,
                             "required": F.gamma * (u - v)})
        dl = abs(F(x, u, p, X, l) - F(x, u, p, X, l2))
        if dl > F.l_lipschitz * abs(l - l2) + ELLIPTIC_SLACK * (1 + abs(l) + abs(l2)):
            failures.append({"check": "A4", "x": x, "l1": l, "l2": l2, "F_change": dl,
                             "allowed": F.l_lipschitz * abs(l - l2)})
    return AuditReport("A2_A4", not failures, 2 * len(samples), failures,
                       {"gamma": F.gamma, "l_lipschitz": F.l_lipschitz, "F": F.describe()})


def attest_A3(F):
    """Symbolic attestation for the catalog (no numeric test exists)."""
    ok = F.kind in ("stationary_semilinear", "bellman", "parabolic_interface")
    reason = ("constant bounded coefficients; Hamiltonian depends on p only, so the "
              "x-moduli vanish" if ok else "not a catalog nonlinearity; not attested")
    return {"assumption": "A3", "attested": ok, "method": "catalog", "reason": reason}


def _pairs_default(dim, count=12, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        x = rng.uniform(-2, 2, dim)
        y = x + rng.uniform(-0.5, 0.5, dim)
        out.append((x, y))
    return out


def check_A1(measure, jmap, point_pairs=None, tol=1e-9, c_bar=None, rule=None):
    """Quadrature check of the jump-map conditions.

    Reports sup_x of the small-ball second moment of j, and per pair (x, y)
    the ratios

        r2 = int |j(x,z) - j(y,z)|^2 mu(dz) / |x - y|^2
        r1 = int_{|z|>1} |j(x,z) - j(y,z)| mu(dz) / |x - y|

    against ``c_bar = (c2, c1)``; by default ``c2 = L^2 int_B |z|^2`` (plus
    the same moment outside B if j varies there) and ``c1 = L int_{|z|>1} |z|``
    (0 if j is constant outside B), L the declared Lipschitz constant. The
    linear growth |j(x,z)| <= c|z| is checked on every quadrature node.
    """
    d = measure.dim
    jmap = JumpMap.identity(d) if jmap is None else jmap
    rule = build_quadrature(measure, 1.0) if rule is None else rule
    pairs = _pairs_default(d) if point_pairs is None else point_pairs
    L = jmap.lipschitz_x
    m2_in = second_moment_matrix(measure, 0.0, 1.0)
    m2_out = second_moment_matrix(measure, 1.0, math.inf)
    with np.errstate(invalid="ignore"):
        out2 = float(np.trace(m2_out))
    if measure.kind == "bounded_table":
        pts = measure.atom_points
        r = np.linalg.norm(pts, axis=1)
        out1 = float(measure.atom_masses[r > 1] @ r[r > 1])
    else:
        dirs, weights, radials = measure.directions()
        out1 = float(sum(w * rad.moment(1.0, 1.0, math.inf) for w, rad in zip(weights, radials)))
    if c_bar is None:
        c2 = L ** 2 * float(np.trace(m2_in))
        c1 = 0.0
        if jmap.varies_outside:
            c2 += L ** 2 * out2
            c1 = L * out1
    else:
        c2, c1 = c_bar

    failures = []
    if not (math.isfinite(c2) and math.isfinite(c1)):
        failures.append({"check": "finite_constants", "c_bar": (c2, c1),
                         "reason": "j varies with x where mu has no first or second moment"})
    nodes = np.concatenate([rule.inner_nodes, rule.outer_nodes])
    norms = np.linalg.norm(nodes, axis=1)
    xs = [p for pair in pairs for p in pair]
    ball_moments = []
    bound = jmap.linear_bound
    for x in xs:
        x = np.asarray(x, dtype=float)
        Jin = jmap.inner_matrix(x)
        jz = jmap(x, nodes)
        ratio = np.linalg.norm(jz, axis=1) / norms
        k = int(np.argmax(ratio))
        if ratio[k] > bound * (1 + tol):
            failures.append({"check": "linear_bound", "x": x, "z": nodes[k],
                             "ratio": float(ratio[k]), "declared": bound})
        ball_moments.append(float(np.trace(Jin @ m2_in @ Jin.T)))
    sup_ball = max(ball_moments)
    if sup_ball > bound ** 2 * float(np.trace(m2_in)) * (1 + tol) + 1e-15:
        failures.append({"check": "ball_moment", "value": sup_ball,
                         "allowed": bound ** 2 * float(np.trace(m2_in))})

    ratios = []
    for x, y in pairs:
        x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        dist = float(np.linalg.norm(x - y))
        if dist == 0:
            continue
        din = jmap.inner_matrix(x) - jmap.inner_matrix(y)
        dout = jmap.outer_matrix(x) - jmap.outer_matrix(y)
        sq = float(np.trace(din @ m2_in @ din.T))
        first = 0.0
        if np.any(dout != 0):
            with np.errstate(invalid="ignore"):
                sq += float(np.trace(dout @ m2_out @ dout.T))
            first = float(np.linalg.norm(dout, 2)) * out1
        r2, r1 = sq / dist ** 2, first / dist
        if not math.isfinite(r2):
            r2 = math.inf
        ratios.append((r2, r1))
        if not r2 <= c2 * (1 + tol) + 1e-15:
            failures.append({"check": "square_ratio", "x": x, "y": y, "ratio": r2, "c_bar": c2})
        if not r1 <= c1 * (1 + tol) + 1e-15:
            failures.append({"check": "first_ratio", "x": x, "y": y, "ratio": r1, "c_bar": c1})
    details = {"sup_ball_second_moment": sup_ball, "c_bar": (c2, c1),
               "max_square_ratio": max((r[0] for r in ratios), default=0.0),
               "max_first_ratio": max((r[1] for r in ratios), default=0.0),
               "jmap": jmap.describe()}
    return AuditReport("A1", not failures, len(xs) + len(ratios), failures, details)


# -- shipped catalog and counterexamples ----------------------------------

def catalog():
    """Nonlinearities and jump maps that satisfy the structural assumptions."""
    ctl = [solvers.Control(0.0, sigma=0.5), solvers.Control(1.0, sigma=0.2, drift=[0.3])]
    return {
        "nonlinearities": {
            "stationary": Nonlinearity.stationary(1.0, 0.1, 1.0, lambda p: np.cos(p[:, 0])),
            "stationary_inviscid": Nonlinearity.stationary(0.5, 0.0, 1.0, 0.2),
            "bellman": Nonlinearity.bellman(1.0, ctl),
        },
        "jump_maps": {
            "identity": JumpMap.identity(),
            "shear": JumpMap.shear(0.3, 2.0),
        },
    }


def counterexamples():
    """Constructed violations, each paired with the audit it must fail."""
    broken_sign = Nonlinearity.custom(lambda x, u, p, X, l: u + l, name="plus_l")
    broken_trace = Nonlinearity.custom(lambda x, u, p, X, l: u + np.trace(X) - l,
                                       name="plus_trace")
    weak_gamma = Nonlinearity.custom(lambda x, u, p, X, l: 0.5 * u - l, gamma=1.0,
                                     name="overstated_gamma")
    steep_l = Nonlinearity.custom(lambda x, u, p, X, l: u - 3.0 * l, l_lipschitz=1.0,
                                  name="understated_l_lipschitz")
    return {
        "ellipticity": [broken_sign, broken_trace],
        "A2_A4": [weak_gamma, steep_l],
        "A1": [JumpMap.shear(0.5, 1.0, declared_bound=1.0),
               JumpMap.linear([[1.0]], amplitude=0.5)],
    }


# -- probe bank and audits ---------------------------------------------------

@dataclass(frozen=True)
class ProbeBank:
    """Probes, each optionally anchored at a node index (local contact)."""

    probes: tuple
    anchors: tuple
    description: dict

    def __len__(self):
        return len(self.probes)


def interior_nodes(grid, margin):
    pts = grid.nodes()
    return np.flatnonzero(np.all(np.abs(pts) <= grid.L - margin + 1e-12, axis=1))


def build_probe_bank(u, kind="max", curvatures=(0.5, 1.0, 2.0, 4.0), delta=None,
                     smooth=True, stride=1):
    """Clamped quadratics touching ``u`` at interior nodes, plus smooth probes.

    The sign of the curvature follows ``kind`` (above for ``max``, below
    for ``min``); slopes are central differences of ``u``.
    """
    g = u.grid
    delta = 2.0 * g.h if delta is None else delta
    sign = 1.0 if kind == "max" else -1.0
    cap = 4.0 * (1.0 + u.sup_bound)
    pts = g.nodes()
    probes, anchors = [], []
    for i in interior_nodes(g, delta + g.h)[::stride]:
        x0 = pts[i]
        slope = np.array([(u(x0 + g.h * e) - u(x0 - g.h * e))[0] / (2 * g.h)
                          for e in np.eye(g.dim)])
        for c in curvatures:
            probes.append(TestFunction.quadratic_clamped(
                x0, cap=cap, hessian=sign * c / g.h, slope=slope, value=u.value(x0)))
            anchors.append(int(i))
    if smooth:
        probes.append(TestFunction.cosine(np.ones(g.dim)))
        anchors.append(None)
        probes.append(TestFunction.gaussian(np.zeros(g.dim), 1.0, -sign))
        anchors.append(None)
    desc = {"kind": kind, "curvatures_over_h": list(curvatures), "cap": cap,
            "anchored": sum(a is not None for a in anchors),
            "smooth": ["cosine(k=1)", "gaussian(width=1)"] if smooth else [], "stride": stride}
    return ProbeBank(tuple(probes), tuple(anchors), desc)


@dataclass
class VerificationReport:
    kind: str
    passed: bool
    contacts: list
    bank: dict
    delta: float
    tol: float

    @property
    def max_F(self):
        return max(c["F_value"] for c in self.contacts)

    @property
    def min_F(self):
        return min(c["F_value"] for c in self.contacts)

    @property
    def failures(self):
        return [c for c in self.contacts if not c["verdict"]]

    def to_dict(self):
        return _jsonable({"kind": self.kind, "passed": self.passed, "delta": self.delta,
                          "tol": self.tol, "bank": self.bank, "contacts": self.contacts})


def _local_gradient_norm(probe, x, radius):
    d = probe.dim
    t = np.linspace(-radius, radius, 9)
    if d == 1:
        pts = x[None, :] + t[:, None]
    else:
        a, b = np.meshgrid(t, t, indexing="ij")
        pts = x[None, :] + np.stack([a.ravel(), b.ravel()], axis=1)
    return float(np.linalg.norm(probe.derivatives(pts)[1], axis=1).max())


def _verify(u, F, measure, kind, jmap, delta, probe_bank, tol, radius):
    g = u.grid
    delta = 2.0 * g.h if delta is None else delta
    radius = delta if radius is None else radius
    bank = build_probe_bank(u, kind, delta=delta) if probe_bank is None else probe_bank
    rule = build_quadrature(measure, delta)
    pts = g.nodes()
    interior = set(interior_nodes(g, delta + g.h).tolist())
    contacts = []
    for j, (probe, anchor) in enumerate(zip(bank.probes, bank.anchors)):
        if anchor is not None:
            try:
                certs = [certify_contact(u, probe, pts[anchor], kind, radius)]
            except NotContactPoint:
                continue
        else:
            try:
                certs = find_contacts(u, probe, kind, radius)
            except NoContacts:
                continue
        for cert in certs:
            x = cert.x
            node = g.index_of(x)
            if node not in interior:
                continue
            val, p, X = (a[0] for a in probe.derivatives(x[None, :]))
            split = eval_levy_ito(measure, jmap, probe, x, p=p, delta=delta, rule=rule, u=u)
            ux = u.value(x)
            Fv = F(x, ux, p, X, split.total)
            allowance = (tol + split.error_bound * F.l_lipschitz
                         + 10.0 * g.h * (1.0 + _local_gradient_norm(probe, x, delta)))
            ok = Fv <= allowance if kind == "max" else Fv >= -allowance
            contacts.append({"node": node, "x": x, "probe": j, "probe_label": probe.label,
                             "kind": kind, "p": p, "X": X, "l_inner": split.inner,
                             "l_outer": split.outer, "error_bound": split.error_bound,
                             "F_value": Fv, "allowance": allowance, "verdict": bool(ok)})
    if not contacts:
        raise NoContacts("the probe bank produced no contact points")
    contacts.sort(key=lambda c: (c["probe"], c["node"]))
    passed = all(c["verdict"] for c in contacts)
    return VerificationReport(kind, passed, contacts, bank.description, delta, tol)


def verify_subsolution(u, F, measure, jmap=None, delta=None, probe_bank=None, tol=1e-6,
                       radius=None):
    """Audit F(x, u, grad phi, D^2 phi, l) <= 0 at discrete maxima of u - phi.

    ``radius`` is the contact window (default ``delta``; ``math.inf`` gives
    global contacts).
    """
    return _verify(u, F, measure, "max", jmap, delta, probe_bank, tol, radius)


def verify_supersolution(v, F, measure, jmap=None, delta=None, probe_bank=None, tol=1e-6,
                         radius=None):
    """Audit F(...) >= 0 at discrete minima of v - phi."""
    return _verify(v, F, measure, "min", jmap, delta, probe_bank, tol, radius)


# -- manufactured problems ---------------------------------------------------

def manufactured_source(w, measure, gamma=1.0, nu=0.0, hamiltonian=1.0, slack=0.0,
                        jmap=None):
    """Source f with F[w] = -slack for the stationary model, as a callable on points."""
    rule = build_quadrature(measure, 1.0)
    cache = {}

    def f(points):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.empty(len(points))
        for i, x in enumerate(points):
            key = tuple(np.round(x, 14))
            if key not in cache:
                v, grad, hess = (a[0] for a in w.derivatives(x[None, :]))
                lev = eval_levy(measure, w, x, rule=rule, jmap=jmap)
                cache[key] = (gamma * v + hamiltonian * 0.5 * float(grad @ grad)
                              - nu * float(np.trace(hess)) - lev + slack)
            out[i] = cache[key]
        return out

    return f


def manufactured_nonlinearity(w, measure, gamma=1.0, nu=0.0, hamiltonian=1.0, slack=0.0,
                              jmap=None):
    """Stationary F for which ``w`` has residual exactly ``-slack``."""
    return Nonlinearity.stationary(gamma, nu, hamiltonian,
                                   manufactured_source(w, measure, gamma, nu, hamiltonian,
                                                       slack, jmap))


# -- stability ---------------------------------------------------------------

@dataclass
class StabilityReport:
    limit: GridFunction
    relaxed: dict
    verification: VerificationReport

    @property
    def passed(self):
        return self.verification.passed


def vanishing_viscosity_family(measure, grid, eps_list, gamma=1.0, hamiltonian=1.0,
                               source=0.0, tol=1e-9):
    """Stationary solutions with nu = eps, sorted by decreasing eps."""
    family = []
    for eps in sorted(eps_list, reverse=True):
        problem = solvers.ProblemSpec("stationary_semilinear", measure, nu=eps, gamma=gamma,
                                      hamiltonian=hamiltonian, source=source)
        family.append((eps, solvers.solve_stationary(problem, grid, tol=tol).u))
    return family


def stability_experiment(family, F, measure, probe_bank=None, eps_list=None, jmap=None,
                         delta=None, tol=1e-6):
    """Relaxed upper limit of a subsolution family, audited against ``F``.

    ``family`` is a list of (eps, GridFunction) or a callable eps -> GridFunction
    used with ``eps_list``.
    """
    if callable(family):
        family = [(e, family(e)) for e in sorted(eps_list, reverse=True)]
    limit, relaxed = relaxed_limit(family, "upper", full_output=True)
    report = verify_subsolution(limit, F, measure, jmap, delta, probe_bank, tol)
    return StabilityReport(limit, relaxed, report)


# -- localization family and the two-point surrogate ---------------------

def check_localizer(measure, betas=(1.0, 0.5, 0.25), level=1.0, jmap=None, samples=41):
    """The three properties used to localize comparison arguments.

    psi_beta > level for |x| >= 2/beta; sup |D psi_beta|, |D^2 psi_beta|
    and sup |I[psi_beta]| decrease as beta decreases.
    """
    d = measure.dim
    rows = []
    failures = []
    rule = build_quadrature(measure, 1.0)
    for beta in betas:
        psi = TestFunction.localizer(beta, level, d)
        far = np.linspace(2.0 / beta, 6.0 / beta, samples)
        dirs = np.eye(d)[0]
        far_pts = far[:, None] * dirs[None, :]
        far_ok = bool(np.all(psi(far_pts) > level))
        r = np.linspace(0.0, 3.0 / beta, samples)
        pts = r[:, None] * dirs[None, :]
        _, grads, hess = psi.derivatives(pts)
        g1 = float(np.linalg.norm(grads, axis=1).max())
        g2 = float(np.abs(hess).max())
        nonlocal_sup = max(abs(eval_levy(measure, psi, x, rule=rule, jmap=jmap)) for x in pts)
        rows.append({"beta": beta, "far_level_ok": far_ok, "sup_grad": g1, "sup_hess": g2,
                     "sup_nonlocal": nonlocal_sup})
        if not far_ok:
            failures.append({"beta": beta, "check": "level"})
    for a, b in zip(rows, rows[1:]):
        for key in ("sup_grad", "sup_hess", "sup_nonlocal"):
            if not b[key] < a[key]:
                failures.append({"check": key, "beta": b["beta"], "value": b[key],
                                 "previous": a[key]})
    return AuditReport("localizer", not failures, len(rows), failures, {"rows": rows})


def _critical_pair(u, v, eps, x0, y0, psi=None, iters=50):
    """Newton refinement of a maximum of u(x) - v(y) - |x-y|^2/2eps - psi(x)."""
    d = u.dim
    x, y = np.array(x0, dtype=float), np.array(y0, dtype=float)
    eye = np.eye(d)
    for _ in range(iters):
        gu, hu = u.gradient(x), u.hessian(x)
        gv, hv = v.gradient(y), v.hessian(y)
        gp = psi.gradient(x) if psi is not None else 0.0
        hp = psi.hessian(x) if psi is not None else 0.0
        G = np.concatenate([gu - (x - y) / eps - gp, -gv + (x - y) / eps])
        H = np.block([[hu - eye / eps - hp, eye / eps], [eye / eps, -hv - eye / eps]])
        step = np.linalg.solve(H, -G)
        x, y = x + step[:d], y + step[d:]
        if np.abs(step).max() < 1e-14:
            break
    return x, y


def two_point_check(u, v, F_sub, F_sup, measure, eps, delta=0.25, alpha=0.05, beta=None,
                    level=None, grid=None, tol=1e-6):
    """Doubled-variable surrogate for closed-form u (sub) and v (super).

    Maximizes u(x) - v(y) - |x-y|^2/(2 eps) [- psi_beta(x)] on a grid, refines
    by Newton, then checks the two one-sided inequalities with the nonlocal
    terms split at ``delta`` and the matrix bounds
    -I/alpha <= diag(X, -Y) <= D^2 phi + o(1).
    """
    d = u.dim
    grid = grid or Grid(3.0, 0.05, d)
    pts = grid.nodes()
    psi = None
    if beta is not None:
        psi = TestFunction.localizer(beta, level if level is not None else
                                     u.sup_norm() + v.sup_norm(), d)
    uv = u(pts)[:, None] - v(pts)[None, :]
    diff = pts[:, None, :] - pts[None, :, :]
    obj = uv - np.sum(diff ** 2, axis=2) / (2 * eps)
    if psi is not None:
        obj = obj - psi(pts)[:, None]
    i, j = np.unravel_index(int(np.argmax(obj)), obj.shape)
    x, y = _critical_pair(u, v, eps, pts[i], pts[j], psi)
    q = (x - y) / eps
    p = q + (psi.gradient(x) if psi is not None else 0.0)
    X, Y = u.hessian(x), v.hessian(y)
    # phi(., y) and -phi(x, .) as closed-form probes
    big = 1e6
    phx = TestFunction.quadratic_clamped(y, cap=big, hessian=1.0 / eps)
    phy = TestFunction.quadratic_clamped(x, cap=big, hessian=-1.0 / eps)
    rule = build_quadrature(measure, delta)
    lx, ex = eval_inner(measure, phx, x, delta, rule, full_output=True)
    if psi is not None:
        lp, ep = eval_inner(measure, psi, x, delta, rule, full_output=True)
        lx, ex = lx + lp, ex + ep
    ox, eox = eval_outer(measure, u, x, p, delta, rule, full_output=True)
    ly, ey = eval_inner(measure, phy, y, delta, rule, full_output=True)
    oy, eoy = eval_outer(measure, v, y, q, delta, rule, full_output=True)
    f_sub = F_sub(x, u.value(x), p, X, lx + ox)
    f_sup = F_sup(y, v.value(y), q, Y, ly + oy)
    allow_x = tol + (ex + eox) * F_sub.l_lipschitz
    allow_y = tol + (ey + eoy) * F_sup.l_lipschitz
    block = np.block([[X, np.zeros((d, d))], [np.zeros((d, d)), -Y]])
    eye = np.eye(d)
    d2phi = np.block([[eye, -eye], [-eye, eye]]) / eps
    if psi is not None:
        d2phi[:d, :d] += psi.hessian(x)
    lower = float(np.linalg.eigvalsh(block + np.eye(2 * d) / alpha).min())
    upper = float(np.linalg.eigvalsh(d2phi - block).min())
    checks = {"sub_inequality": f_sub <= allow_x, "super_inequality": f_sup >= -allow_y,
              "matrix_lower": lower >= -1e-9, "matrix_upper": upper >= -1e-9}
    failures = [k for k, ok in checks.items() if not ok]
    details = {"x": x, "y": y, "p": p, "q": q, "X": X, "Y": Y, "F_sub": f_sub,
               "F_super": f_sup, "matrix_lower_eig": lower, "matrix_upper_eig": upper,
               "checks": checks}
    return AuditReport("two_point", not failures, len(checks),
                       [{"check": k} for k in failures], details)
