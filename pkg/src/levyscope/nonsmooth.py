"""Regularization of grid functions: slope-shifted sup/inf-convolutions,
discrete half-relaxed limits and second-order jet probes."""

from dataclasses import dataclass, field
import math

import numpy as np

from levyscope.errors import GridTooCoarse, InconsistentGrids
from levyscope.functions import GridFunction, TestFunction


@dataclass(frozen=True)
class SemiJet:
    """A slope ``p`` and symmetric matrix ``X``; ``diagnostic`` marks fitted jets."""

    p: np.ndarray
    X: np.ndarray
    diagnostic: bool = False

    def __post_init__(self):
        p = np.atleast_1d(np.asarray(self.p, dtype=float))
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        if X.shape != (p.size, p.size):
            raise ValueError(f"X must be {p.size}x{p.size}, got {X.shape}")
        if not np.allclose(X, X.T, rtol=1e-10, atol=1e-12):
            raise ValueError("X must be symmetric")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "X", 0.5 * (X + X.T))


@dataclass(frozen=True)
class ConvolutionResult:
    """Output of a sup/inf-convolution.

    ``argmax_map`` holds, per node (flat C order), the offset ``Z - z`` of
    the maximizing (or minimizing) node.
    """

    values: GridFunction
    alpha: float
    slope: np.ndarray
    argmax_map: np.ndarray
    kind: str = "sup"

    def to_rows(self):
        """(node coordinates, value, offset) rows for CSV export."""
        pts = self.values.grid.nodes()
        return [(tuple(x), float(v), tuple(o))
                for x, v, o in zip(pts, self.values.flat, self.argmax_map)]


def _ball_offsets(grid):
    """Integer offsets k with |k h| <= 1, in lexicographic order."""
    m = int(math.floor(1.0 / grid.h + 1e-9))
    rng = np.arange(-m, m + 1)
    if grid.dim == 1:
        ks = rng[:, None]
    else:
        a, b = np.meshgrid(rng, rng, indexing="ij")
        ks = np.stack([a.ravel(), b.ravel()], axis=1)
    keep = np.linalg.norm(ks * grid.h, axis=1) <= 1.0 + 1e-12
    return ks[keep]


def _shifted(values, k, periodic, fill=None):
    """values[i + k] as an array over i.

    Indices leaving the box follow the grid's extension (wrap or clamp to
    the nearest face), or take ``fill`` when given.
    """
    n = values.shape[0]
    if periodic:
        core = values[(slice(0, -1),) * values.ndim]
        out = np.roll(core, shift=tuple(-int(c) for c in k), axis=tuple(range(values.ndim)))
        full = np.empty_like(values)
        full[(slice(0, -1),) * values.ndim] = out
        # last face duplicates the first
        if values.ndim == 1:
            full[-1] = full[0]
        else:
            full[-1, :] = full[0, :]
            full[:, -1] = full[:, 0]
        return full
    if fill is None:
        idx = np.ix_(*[np.clip(np.arange(n) + int(c), 0, n - 1) for c in k])
        return values[idx]
    out = np.full_like(values, fill)
    src, dst = [], []
    for c in k:
        c = int(c)
        if c >= 0:
            src.append(slice(c, n))
            dst.append(slice(0, n - c))
        else:
            src.append(slice(0, n + c))
            dst.append(slice(-c, n))
    out[tuple(dst)] = values[tuple(src)]
    return out


def sup_convolution(U, r, alpha):
    """R^alpha[U](z) = max over nodes |Z - z| <= 1 of U(Z) - r.(Z - z) - |Z - z|^2 / (2 alpha).

    Ties go to the first offset in lexicographic order. Nodes Z outside the
    box carry the grid's extension of U (clamped or wrapped).
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    g = U.grid
    if g.h > 0.25:
        raise GridTooCoarse(f"h={g.h} does not resolve the unit ball (need h <= 0.25)")
    r = np.atleast_1d(np.asarray(r, dtype=float)).reshape(g.dim)
    best = np.full(g.shape, -np.inf)
    arg = np.zeros(g.shape + (g.dim,))
    periodic = g.extension == "periodic"
    for k in _ball_offsets(g):
        w = k * g.h
        cand = _shifted(U.values, k, periodic) - float(r @ w) - float(w @ w) / (2.0 * alpha)
        better = cand > best
        best = np.where(better, cand, best)
        arg[better] = w
    bound = U.sup_bound + float(np.abs(r).sum())
    return ConvolutionResult(GridFunction(g, best, max(bound, np.abs(best).max())),
                             float(alpha), r, arg.reshape(-1, g.dim), "sup")


def inf_convolution(V, r, alpha):
    """R_alpha[V] = -R^alpha[-V] with slope -r."""
    r = np.atleast_1d(np.asarray(r, dtype=float))
    res = sup_convolution(V.with_values(-V.values, V.sup_bound), -r, alpha)
    vals = res.values
    return ConvolutionResult(vals.with_values(-vals.values, vals.sup_bound), res.alpha,
                             r.reshape(V.dim), res.argmax_map, "inf")


@dataclass(frozen=True)
class SemiconvexityReport:
    min_second_difference: float
    floor: float
    tol: float
    passed: bool
    worst_node: tuple = field(default=())

    @property
    def pass_(self):
        return self.passed


def second_differences(values, h):
    """Axis and diagonal second differences at interior nodes, one array per direction."""
    v = values
    if v.ndim == 1:
        return [(v[2:] - 2.0 * v[1:-1] + v[:-2]) / h ** 2]
    c = v[1:-1, 1:-1]
    out = [(v[2:, 1:-1] - 2.0 * c + v[:-2, 1:-1]) / h ** 2,
           (v[1:-1, 2:] - 2.0 * c + v[1:-1, :-2]) / h ** 2]
    # diagonals have step h*sqrt(2)
    out.append((v[2:, 2:] - 2.0 * c + v[:-2, :-2]) / (2.0 * h ** 2))
    out.append((v[2:, :-2] - 2.0 * c + v[:-2, 2:]) / (2.0 * h ** 2))
    return out


def check_semiconvexity(W, tol=None, margin=0.0):
    """Minimum interior second difference of a sup-convolution against -1/alpha - tol.

    ``margin`` drops nodes within that distance of the box boundary.
    """
    if W.kind != "sup":
        raise ValueError("semiconvexity is checked on sup-convolutions")
    g = W.values.grid
    if tol is None:
        tol = 10.0 * g.h / W.alpha ** 2
    diffs = second_differences(W.values.values, g.h)
    if margin > 0:
        inner = np.all(np.abs(g.nodes()) <= g.L - margin + 1e-12, axis=1).reshape(g.shape)
        inner = inner[(slice(1, -1),) * g.dim]
        diffs = [np.where(inner, d, np.inf) for d in diffs]
    mins = [float(d.min()) for d in diffs]
    j = int(np.argmin(mins))
    worst = np.unravel_index(int(np.argmin(diffs[j])), diffs[j].shape)
    lowest = mins[j]
    floor = -1.0 / W.alpha
    return SemiconvexityReport(lowest, floor, float(tol), lowest >= floor - tol,
                               tuple(int(i) + 1 for i in worst))


def relaxed_limit(family, sign="upper", full_output=False):
    """Discrete half-relaxed limit of ``[(eps, GridFunction), ...]``.

    Level m takes, at each node x, the sup (upper) or inf (lower) of all
    members with index >= m over nodes y with |y - x| <= sqrt(eps_m). The
    returned function is the last level; ``full_output`` adds a report with
    the eps/rho schedule and the number of trailing levels that agree.
    """
    if sign not in ("upper", "lower"):
        raise ValueError("sign must be 'upper' or 'lower'")
    if not family:
        raise ValueError("empty family")
    eps = [float(e) for e, _ in family]
    if any(a < b for a, b in zip(eps, eps[1:])):
        raise ValueError("family must be sorted by decreasing eps")
    g = family[0][1].grid
    for _, u in family:
        if u.grid != g:
            raise InconsistentGrids("all members must live on the same grid")
    bound = max(u.sup_bound for _, u in family)
    s = 1.0 if sign == "upper" else -1.0
    pts = g.nodes()
    vals = np.stack([s * u.flat for _, u in family])
    # running sup over members j >= m
    tail = np.maximum.accumulate(vals[::-1], axis=0)[::-1]
    levels = []
    for m, e in enumerate(eps):
        rho = math.sqrt(e)
        reach = int(math.floor(rho / g.h + 1e-9))
        out = np.full(g.size, -np.inf)
        grid_vals = tail[m].reshape(g.shape)
        rng = np.arange(-reach, reach + 1)
        offs = rng[:, None] if g.dim == 1 else np.stack(
            [a.ravel() for a in np.meshgrid(rng, rng, indexing="ij")], axis=1)
        offs = offs[np.linalg.norm(offs * g.h, axis=1) <= rho + 1e-12]
        for k in offs:
            out = np.maximum(out, _shifted(grid_vals, k, g.extension == "periodic",
                                           fill=-np.inf).ravel())
        levels.append(s * out)
    final = levels[-1]
    stable = 1
    for lev in reversed(levels[:-1]):
        if np.allclose(lev, final, rtol=0, atol=1e-12):
            stable += 1
        else:
            break
    result = GridFunction(g, final.reshape(g.shape), max(bound, float(np.abs(final).max())))
    if not full_output:
        return result
    report = {"sign": sign, "schedule": [{"eps": e, "rho": math.sqrt(e)} for e in eps],
              "stable_levels": stable, "nodes": int(len(pts))}
    return result, report


def _stencil_offsets(dim, ring=2):
    rng = np.arange(-ring, ring + 1)
    if dim == 1:
        return rng[:, None].astype(float)
    a, b = np.meshgrid(rng, rng, indexing="ij")
    return np.stack([a.ravel(), b.ravel()], axis=1).astype(float)


def jet_probe(u, x):
    """Second-order jet at ``x``.

    Exact for closed-form probes. For grid functions a least-squares
    quadratic is fitted on the 2-ring node stencil; the result is marked
    ``diagnostic`` because a fit cannot certify membership in a semijet.
    """
    if isinstance(u, TestFunction):
        x = np.asarray(x, dtype=float).reshape(u.dim)
        return SemiJet(u.gradient(x), u.hessian(x))
    g = u.grid
    x = np.asarray(x, dtype=float).reshape(g.dim)
    offs = _stencil_offsets(g.dim) * g.h
    z = offs
    f = u(x[None, :] + z)
    if g.dim == 1:
        A = np.stack([np.ones(len(z)), z[:, 0], 0.5 * z[:, 0] ** 2], axis=1)
        c = np.linalg.lstsq(A, f, rcond=None)[0]
        return SemiJet([c[1]], [[c[2]]], diagnostic=True)
    z0, z1 = z[:, 0], z[:, 1]
    A = np.stack([np.ones(len(z)), z0, z1, 0.5 * z0 ** 2, z0 * z1, 0.5 * z1 ** 2], axis=1)
    c = np.linalg.lstsq(A, f, rcond=None)[0]
    return SemiJet(c[1:3], [[c[3], c[4]], [c[4], c[5]]], diagnostic=True)
