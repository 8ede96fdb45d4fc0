"""Monotone finite-difference schemes for the model nonlocal equations.

The spatial operator is split as

    F_h[u] = gamma u + c_H H_G(D-u, D+u) - A u - f

with ``H_G`` the Godunov flux for 1/2|p|^2 and ``A`` a sparse matrix with
nonnegative off-diagonal entries and zero row sums. ``A`` collects

* viscosity ``nu`` (and control diffusion 1/2 sigma^2) as second differences,
* the inner part of the nonlocal operator as 1/2 tr(M(delta) D^2 u) with
  M(delta) the exact second moment of the small ball,
* the outer part as grid interpolation at x + z for every quadrature node z,
  plus the tail mass at the far-field node,
* the compensator drift of delta < |z| <= 1 (nonzero only for asymmetric
  measures), upwinded.

Because grid nodes share the fractional part of x + z, the outer part
collapses to a stencil indexed by integer shifts; the matrix is assembled
once from that stencil.
"""

from dataclasses import dataclass, field
import math

import numpy as np
from scipy import sparse

from levyscope.errors import CFLViolation, NonConvergence
from levyscope.functions import Grid, GridFunction, JumpMap
from levyscope.measures import build_quadrature, second_moment_matrix

#: Quadrature options for scheme assembly: the scheme error is O(h), so a
#: looser rule than for pointwise evaluation is enough.
SCHEME_RULE = {1: {"tol": 1e-6}, 2: {"tol": 1e-4, "n_theta": 32, "r_cap": 8.0,
                                     "resolution": 1.0, "n_outer": 4}}


@dataclass
class Control:
    """One control of a Bellman problem: diffusion, drift, source, jump map."""

    source: object
    sigma: float = 0.0
    drift: np.ndarray = None
    jmap: JumpMap = None


@dataclass
class ProblemSpec:
    """A model problem on a grid.

    ``kind`` is ``parabolic_interface`` (u_t + c_H/2|Du|^2 - nu Lap u - I[u] = 0),
    ``stationary_semilinear`` (gamma u + c_H/2|Du|^2 - nu Lap u - I[u] = f) or
    ``bellman`` (gamma u + max_a {-L_a u - f_a} = 0). ``source`` may be an
    array of node values or a callable on node coordinates.
    """

    kind: str
    measure: object = None
    nu: float = 0.0
    gamma: float = 1.0
    hamiltonian: float = 1.0
    source: object = 0.0
    controls: list = field(default_factory=list)
    horizon: float = 0.0
    jmap: JumpMap = None
    measure_scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("parabolic_interface", "stationary_semilinear", "bellman"):
            raise ValueError(f"unknown problem kind {self.kind!r}")
        if self.nu < 0:
            raise ValueError("nu must be nonnegative")
        if self.kind != "parabolic_interface" and self.gamma <= 0:
            raise ValueError("stationary problems need gamma > 0")
        if self.kind == "bellman" and not self.controls:
            raise ValueError("bellman problems need at least one control")


def _node_values(grid, source):
    if callable(source):
        return np.asarray(source(grid.nodes()), dtype=float).reshape(grid.shape)
    arr = np.asarray(source, dtype=float)
    if arr.ndim == 0:
        return np.full(grid.shape, float(arr))
    return arr.reshape(grid.shape)


@dataclass
class Stencil:
    """Assembled linear part ``A`` with its monotonicity data."""

    matrix: sparse.csr_matrix
    rate: float          # max over rows of the off-diagonal sum
    parts: dict          # per-term contribution to ``rate``
    min_offdiag: float
    delta: float

    def apply(self, u):
        return apply_zero_rowsum(self.matrix, u)


def apply_zero_rowsum(A, u):
    """``A @ u`` for a zero-row-sum matrix, written as sum_j a_ij (u_j - u_i).

    The difference form maps constants to exactly zero.
    """
    A = A.tocsr()
    rows = np.repeat(np.arange(A.shape[0]), np.diff(A.indptr))
    keep = rows != A.indices
    r, c = rows[keep], A.indices[keep]
    return np.bincount(r, A.data[keep] * (u[c] - u[r]), minlength=A.shape[0])


def _jump_matrix(jmap, dim):
    if jmap is None:
        return np.eye(dim)
    if jmap.lipschitz_x != 0.0 or jmap.kind == "shear":
        if jmap.kind == "shear" and jmap.amplitude == 0.0:
            return np.eye(dim)
        raise ValueError("the schemes support x-independent jump maps only")
    return jmap.inner_matrix(np.zeros(dim))


def _add(kernel, center, shift, weight):
    kernel[tuple(center + np.asarray(shift))] += weight


def stencil_kernel(measure, grid, delta, nu=0.0, sigma=0.0, jmap=None, drift=None,
                   scale=1.0, rule_options=None):
    """Shift-indexed weights of the linear part and their split by term."""
    d, h, n = grid.dim, grid.h, grid.n
    periodic = grid.extension == "periodic"
    span = n - 1
    kernel = np.zeros((2 * span + 1,) * d)
    center = np.full(d, span)
    parts = {"viscous": 0.0, "inner": 0.0, "outer": 0.0, "drift": 0.0}
    eye = np.eye(d, dtype=int)

    diff = nu + 0.5 * sigma ** 2
    for a in range(d):
        _add(kernel, center, eye[a], diff / h ** 2)
        _add(kernel, center, -eye[a], diff / h ** 2)
    parts["viscous"] = 2.0 * d * diff / h ** 2

    if drift is not None:
        # drift b enters as +b.grad u; upwind in the direction of b
        b = np.atleast_1d(np.asarray(drift, dtype=float))
        for a in range(d):
            _add(kernel, center, eye[a] if b[a] > 0 else -eye[a], abs(b[a]) / h)
        parts["drift"] += float(np.abs(b).sum()) / h

    if measure is not None and scale != 0.0:
        J = _jump_matrix(jmap, d)
        opts = dict(SCHEME_RULE[d])
        opts.update(rule_options or {})
        tol = opts.pop("tol")
        rule = build_quadrature(measure, delta, tol, **opts)
        M = scale * J @ second_moment_matrix(measure, 0.0, delta) @ J.T
        for a in range(d):
            _add(kernel, center, eye[a], 0.5 * M[a, a] / h ** 2)
            _add(kernel, center, -eye[a], 0.5 * M[a, a] / h ** 2)
        if d == 2 and M[0, 1] != 0.0:
            m01 = M[0, 1]
            diag = np.array([1, 1]) if m01 > 0 else np.array([1, -1])
            _add(kernel, center, diag, abs(m01) / (2 * h ** 2))
            _add(kernel, center, -diag, abs(m01) / (2 * h ** 2))
            for a in range(d):
                _add(kernel, center, eye[a], -abs(m01) / (2 * h ** 2))
                _add(kernel, center, -eye[a], -abs(m01) / (2 * h ** 2))
        parts["inner"] = float(np.trace(M)) / h ** 2

        z = rule.outer_nodes @ J.T
        w = scale * rule.outer_weights
        if w.size:
            s = z / h
            s0 = np.floor(s)
            t = s - s0
            for corner in np.array(np.meshgrid(*([[0, 1]] * d), indexing="ij")).reshape(d, -1).T:
                sh = s0 + corner
                wt = w * np.prod(np.where(corner == 1, t, 1.0 - t), axis=1)
                sh = np.mod(sh, span) if periodic else np.clip(sh, -span, span)
                np.add.at(kernel, tuple((sh + center).astype(int).T), wt)
            near = np.linalg.norm(rule.outer_nodes, axis=1) <= 1.0
            comp = w[near] @ z[near] if near.any() and not rule.symmetric else np.zeros(d)
            # compensator -comp.grad u: upwind
            for a in range(d):
                if comp[a] != 0.0:
                    _add(kernel, center, -eye[a] if comp[a] > 0 else eye[a], abs(comp[a]) / h)
            parts["drift"] += float(np.abs(comp).sum()) / h
        tw = scale * rule.tail_weights
        if tw.size and tw.sum() > 0:
            if periodic:
                m = span ** d
                idx = np.array(np.meshgrid(*([np.arange(span)] * d), indexing="ij")).reshape(d, -1)
                np.add.at(kernel, tuple(idx + center[:, None]), tw.sum() / m)
            else:
                far = np.trunc(1e12 * (rule.tail_dirs @ J.T) / h)
                far = np.clip(far, -span, span).astype(int)
                np.add.at(kernel, tuple((far + center).T), tw)
        parts["outer"] = float(w.sum() + tw.sum())

    kernel[tuple(center)] = 0.0
    return kernel, parts


def assemble(measure, grid, delta, nu=0.0, sigma=0.0, jmap=None, drift=None, scale=1.0,
             rule_options=None):
    """Sparse matrix of the linear part; see :func:`stencil_kernel`."""
    kernel, parts = stencil_kernel(measure, grid, delta, nu, sigma, jmap, drift, scale,
                                   rule_options)
    d, n = grid.dim, grid.n
    span = n - 1
    periodic = grid.extension == "periodic"
    multi = np.array(np.unravel_index(np.arange(grid.size), grid.shape)).T
    rows, cols, vals = [], [], []
    for s in np.argwhere(kernel != 0.0):
        shift = s - span
        tgt = multi + shift
        tgt = np.mod(tgt, span) if periodic else np.clip(tgt, 0, span)
        rows.append(np.arange(grid.size))
        cols.append(np.ravel_multi_index(tuple(tgt.T), grid.shape))
        vals.append(np.full(grid.size, kernel[tuple(s)]))
    if rows:
        rows, cols, vals = map(np.concatenate, (rows, cols, vals))
        keep = rows != cols
        off = sparse.csr_matrix((vals[keep], (rows[keep], cols[keep])),
                                shape=(grid.size, grid.size))
    else:
        off = sparse.csr_matrix((grid.size, grid.size))
    off.sum_duplicates()
    min_off = float(off.data.min()) if off.nnz else 0.0
    rowsum = np.asarray(off.sum(axis=1)).ravel()
    A = (off - sparse.diags(rowsum)).tocsr()
    return Stencil(A, float(rowsum.max()) if rowsum.size else 0.0, parts, min_off, delta)


def godunov(u, grid):
    """Godunov flux of 1/2|p|^2 and the largest one-sided slope."""
    v = u.reshape(grid.shape)
    h = grid.h
    total = np.zeros(grid.shape)
    slope = 0.0
    for a in range(grid.dim):
        if grid.extension == "periodic":
            core = np.take(v, np.arange(grid.n - 1), axis=a)
            prev = np.take(np.roll(core, 1, axis=a), np.arange(grid.n) % (grid.n - 1), axis=a)
            nxt = np.take(np.roll(core, -1, axis=a), np.arange(grid.n) % (grid.n - 1), axis=a)
        else:
            idx = np.arange(grid.n)
            prev = np.take(v, np.clip(idx - 1, 0, grid.n - 1), axis=a)
            nxt = np.take(v, np.clip(idx + 1, 0, grid.n - 1), axis=a)
        back = (v - prev) / h
        fwd = (nxt - v) / h
        up = np.maximum(np.maximum(back, 0.0), -np.minimum(fwd, 0.0))
        total += 0.5 * up ** 2
        slope = max(slope, float(np.abs(back).max()), float(np.abs(fwd).max()))
    return total.ravel(), slope


def max_slope(values, grid):
    return godunov(np.asarray(values, dtype=float).ravel(), grid)[1]


def default_delta(grid):
    return min(1.0, 2.0 * grid.h)


def cfl_bound(problem, grid, delta=None, slope_bound=0.0, stencil=None, report=False):
    """Largest explicit step keeping the update monotone.

    dt_max = 1 / (2 d nu / h^2 + tr M(delta) / h^2 + outer mass + drift / h
    + c_H d P / h), P the slope bound.
    """
    delta = default_delta(grid) if delta is None else delta
    if stencil is None:
        stencil = assemble(problem.measure, grid, delta, problem.nu,
                           jmap=problem.jmap, scale=problem.measure_scale)
    lh = abs(problem.hamiltonian) * grid.dim * slope_bound / grid.h
    denom = stencil.rate + lh
    dt = math.inf if denom == 0 else 1.0 / denom
    if not report:
        return dt
    terms = dict(stencil.parts)
    terms["hamiltonian"] = lh
    return dt, {"formula": "1 / (2 d nu/h^2 + tr M(delta)/h^2 + outer mass + |c|/h "
                           "+ c_H d P/h)", "terms": terms, "dt_max": dt,
                "row_rate": stencil.rate}


@dataclass
class SchemeState:
    u: GridFunction
    step: float
    delta: float
    residual_history: list
    policy: np.ndarray = None
    certificate: dict = field(default_factory=dict)
    snapshots: list = field(default_factory=list)
    iterations: int = 0


def _certificate(stencil, step, zeroth, lh):
    conv = 1.0 - step * (stencil.rate + zeroth + lh)
    return {"min_offdiag": stencil.min_offdiag, "row_rate": stencil.rate,
            "diagonal_weight": conv, "monotone": stencil.min_offdiag >= 0.0 and conv >= -1e-14}


def solve_parabolic(problem, u0, grid=None, delta=None, dt=None, steps=None,
                    times=(), slope_bound=None, stencil=None, every=None):
    """Explicit monotone time stepping up to ``problem.horizon`` (or ``steps``).

    Snapshots are kept at the physical ``times`` (rounded to the nearest
    step) and, when ``every`` is set, at every ``every``-th step and the last.
    """
    grid = u0.grid if grid is None else grid
    delta = default_delta(grid) if delta is None else delta
    if stencil is None:
        stencil = assemble(problem.measure, grid, delta, problem.nu,
                           jmap=problem.jmap, scale=problem.measure_scale)
    u = u0.flat.copy()
    P = max_slope(u, grid) * 1.05 + 1e-9 if slope_bound is None else slope_bound
    dt_max = cfl_bound(problem, grid, delta, P, stencil)
    if dt is None:
        dt = 0.9 * dt_max
    elif dt > dt_max * (1 + 1e-12):
        raise CFLViolation(f"dt={dt:.6g} exceeds the CFL bound {dt_max:.6g}")
    if steps is None:
        steps = int(math.ceil(problem.horizon / dt - 1e-9)) if problem.horizon > 0 else 0
        if steps:
            dt = problem.horizon / steps
    gamma = problem.gamma if problem.kind != "parabolic_interface" else 0.0
    f = _node_values(grid, problem.source).ravel() if gamma else 0.0
    lh_coef = abs(problem.hamiltonian) * grid.dim / grid.h
    cert = _certificate(stencil, dt, gamma, lh_coef * P)
    want = set(int(round(t / dt)) for t in times)
    if every:
        want.update(range(0, steps + 1, int(every)))
        want.add(steps)
    snaps = [(0.0, u.copy())] if 0 in want else []
    history = []
    for n in range(1, steps + 1):
        H, slope = godunov(u, grid)
        if slope > P:
            raise CFLViolation(f"slope {slope:.6g} left the bound P={P:.6g} at step {n}")
        rhs = problem.hamiltonian * H - stencil.apply(u) + gamma * u - f
        u = u - dt * rhs
        history.append(float(np.abs(rhs).max()))
        if n in want:
            snaps.append((n * dt, u.copy()))
    cert["slope_bound"] = P
    out = GridFunction(grid, u, max(u0.sup_bound, float(np.abs(u).max())))
    return SchemeState(out, dt, delta, history, certificate=cert,
                       snapshots=[(t, GridFunction(grid, s, max(u0.sup_bound, float(np.abs(s).max()))))
                                  for t, s in snaps], iterations=steps)


def _stationary_step(problem, grid, stencil, slope_bound):
    lh = abs(problem.hamiltonian) * grid.dim * slope_bound / grid.h
    return 0.9 / (problem.gamma + stencil.rate + lh)


def solve_stationary(problem, grid, delta=None, tol=1e-10, u_init=None, max_iter=200_000,
                     slope_bound=None, stencil=None, source=None):
    """Damped fixed point ``u <- u - rho F_h[u]`` until sup|F_h[u]| <= tol.

    ``rho = 0.9 / (gamma + row rate + c_H d P / h)`` keeps the map monotone
    and contracting with factor ``1 - rho gamma``. ``P`` defaults to
    ``Lip(f) / gamma + 1``.
    """
    delta = default_delta(grid) if delta is None else delta
    if stencil is None:
        stencil = assemble(problem.measure, grid, delta, problem.nu,
                           jmap=problem.jmap, scale=problem.measure_scale)
    f = _node_values(grid, problem.source if source is None else source).ravel()
    if slope_bound is None:
        slope_bound = max_slope(f, grid) / problem.gamma + 1.0
    rho = _stationary_step(problem, grid, stencil, slope_bound)
    u = (f / problem.gamma).copy() if u_init is None else np.array(u_init, dtype=float).ravel()
    history = []
    for it in range(max_iter):
        H, slope = godunov(u, grid) if problem.hamiltonian else (0.0, 0.0)
        if slope > slope_bound:
            slope_bound = 1.5 * slope
            rho = _stationary_step(problem, grid, stencil, slope_bound)
        res = problem.gamma * u + problem.hamiltonian * H - stencil.apply(u) - f
        r = float(np.abs(res).max())
        history.append(r)
        if r <= tol:
            break
        u = u - rho * res
    else:
        raise NonConvergence(f"residual {history[-1]:.3g} > tol after {max_iter} iterations",
                             history)
    cert = _certificate(stencil, rho, problem.gamma,
                        abs(problem.hamiltonian) * grid.dim * slope_bound / grid.h)
    cert["slope_bound"] = slope_bound
    out = GridFunction(grid, u, float(np.abs(u).max()))
    return SchemeState(out, rho, delta, history, certificate=cert, iterations=it)


def _control_stencils(problem, grid, delta):
    return [assemble(problem.measure, grid, delta, problem.nu, sigma=c.sigma,
                     jmap=c.jmap, drift=c.drift, scale=problem.measure_scale)
            for c in problem.controls]


def solve_bellman(problem, grid, delta=None, tol=1e-10, max_policy=50, max_iter=200_000):
    """Howard policy iteration for ``gamma u + max_a {-L_a u - f_a} = 0``.

    Policy evaluation runs the damped iteration on the frozen linear
    problem to residual ``tol / 10``, warm-started from the previous value.
    The certificate records the largest node-wise increase of the value
    between consecutive evaluations after the first improvement.
    """
    delta = default_delta(grid) if delta is None else delta
    stencils = _control_stencils(problem, grid, delta)
    fs = np.stack([_node_values(grid, c.source).ravel() for c in problem.controls])
    lam = problem.gamma
    rate = max(s.rate for s in stencils)
    rho = 0.9 / (lam + rate)
    idx = np.arange(grid.size)

    def hamiltonians(u):
        return np.stack([-s.apply(u) - f for s, f in zip(stencils, fs)])

    def residual(u):
        return lam * u + hamiltonians(u).max(axis=0)

    # start from the first control everywhere; the first evaluation solves it
    policy = np.zeros(grid.size, dtype=int)
    u = -fs[0] / lam
    history, values, sweeps = [], [], 0
    max_increase = 0.0
    for k in range(max_policy):
        # frozen-policy matrix rows
        A = sparse.csr_matrix((grid.size, grid.size))
        for a, s in enumerate(stencils):
            mask = sparse.diags((policy == a).astype(float))
            A = A + mask @ s.matrix
        A = A.tocsr()
        f = fs[policy, idx]
        for it in range(max_iter):
            res = lam * u - apply_zero_rowsum(A, u) - f
            if np.abs(res).max() <= tol / 10:
                break
            u = u - rho * res
            sweeps += 1
        else:
            raise NonConvergence("policy evaluation did not converge", history)
        if values and k >= 1:
            max_increase = max(max_increase, float((u - values[-1]).max()))
        values.append(u.copy())
        r = float(np.abs(residual(u)).max())
        history.append(r)
        ham = hamiltonians(u)
        new = np.argmax(ham, axis=0)
        # keep the current control on ties so the policy can settle
        cur = ham[policy, idx]
        best = ham[new, idx]
        new = np.where(best > cur + 1e-14, new, policy)
        if np.array_equal(new, policy) and r <= tol:
            break
        policy = new
    else:
        raise NonConvergence("policy iteration did not settle", history)
    cert = {"policy_iterations": k + 1, "evaluation_sweeps": sweeps,
            "max_increase_after_first_improvement": max_increase,
            "residual": history[-1], "min_offdiag": min(s.min_offdiag for s in stencils)}
    out = GridFunction(grid, u, float(np.abs(u).max()))
    return SchemeState(out, rho, delta, history, policy=policy, certificate=cert,
                       iterations=sweeps)


@dataclass
class ComparisonReport:
    pairs: int
    violations: list
    max_violation: float
    threshold: float

    @property
    def passed(self):
        return not self.violations


def random_ordered_pairs(grid, count, seed, amplitude=1.0, noise=0.2):
    """Seeded pairs ``u0 <= v0``: a random cosine plus node noise, and a
    nonnegative gap that vanishes on part of the grid. ``noise=0`` gives
    smooth pairs (smooth bump-shaped gaps)."""
    rng = np.random.default_rng(seed)
    pts = grid.nodes()
    pairs = []
    for _ in range(count):
        k = rng.uniform(0.5, 3.0, grid.dim)
        phase = rng.uniform(0, 2 * np.pi)
        base = amplitude * np.cos(pts @ k + phase)
        if noise:
            base = base + noise * rng.standard_normal(len(pts))
            gap = np.maximum(0.0, rng.uniform(-0.5, 1.0, len(pts)))
        else:
            c = rng.uniform(-grid.L, grid.L, grid.dim)
            width = rng.uniform(0.3, 1.0)
            gap = rng.uniform(0.1, 1.0) * np.exp(-np.sum((pts - c) ** 2, axis=1) / width ** 2)
            gap = np.where(gap < 1e-3, 0.0, gap)
        pairs.append((GridFunction(grid, base), GridFunction(grid, base + gap)))
    return pairs


def discrete_comparison_test(problem, pairs, grid=None, delta=None, steps=50, tol=1e-10):
    """Run ordered pairs through the solver and record ordering violations.

    Parabolic problems evolve both initial data with one common step;
    stationary problems solve with sources ``f_u <= f_v`` taken from the
    pairs. Violations are differences above a rounding threshold
    (1e-12 per step, ``2 tol / gamma`` for stationary solves).
    """
    grid = pairs[0][0].grid if grid is None else grid
    delta = default_delta(grid) if delta is None else delta
    stencil = assemble(problem.measure, grid, delta, problem.nu, jmap=problem.jmap,
                       scale=problem.measure_scale)
    violations, worst = [], 0.0
    if problem.kind == "parabolic_interface":
        thr = 1e-12
        for i, (u0, v0) in enumerate(pairs):
            if np.any(u0.flat > v0.flat):
                raise ValueError(f"pair {i} is not ordered")
            P = max(max_slope(u0.flat, grid), max_slope(v0.flat, grid)) * 1.05 + 1e-9
            dt = 0.9 * cfl_bound(problem, grid, delta, P, stencil)
            ru = solve_parabolic(problem, u0, grid, delta, dt, steps, slope_bound=P,
                                 stencil=stencil, every=1)
            rv = solve_parabolic(problem, v0, grid, delta, dt, steps, slope_bound=P,
                                 stencil=stencil, every=1)
            for (t, a), (_, b) in zip(ru.snapshots, rv.snapshots):
                gap = float((a.flat - b.flat).max())
                worst = max(worst, gap)
                if gap > thr:
                    node = int(np.argmax(a.flat - b.flat))
                    violations.append({"pair": i, "time": t, "node": node, "excess": gap})
    else:
        thr = 2.0 * tol / problem.gamma
        for i, (fu, fv) in enumerate(pairs):
            if np.any(fu.flat > fv.flat):
                raise ValueError(f"pair {i} is not ordered")
            P = max(max_slope(fu.flat, grid), max_slope(fv.flat, grid)) / problem.gamma + 1.0
            su = solve_stationary(problem, grid, delta, tol, slope_bound=P, stencil=stencil,
                                  source=fu.values)
            sv = solve_stationary(problem, grid, delta, tol, slope_bound=P, stencil=stencil,
                                  source=fv.values, u_init=su.u.flat)
            gap = float((su.u.flat - sv.u.flat).max())
            worst = max(worst, gap)
            if gap > thr:
                violations.append({"pair": i, "node": int(np.argmax(su.u.flat - sv.u.flat)),
                                   "excess": gap})
    return ComparisonReport(len(pairs), violations, worst, thr)
