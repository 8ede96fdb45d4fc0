"""Closed-form probes, sampled grid functions and jump maps.

Everything that the nonlocal operators integrate is "callable on points":
``f(points)`` with ``points`` of shape ``(n, d)`` returns ``n`` values, and
``f.far_field(x, dirs, r_max)`` returns the value the function settles to
far out along each unit direction together with an error bound. The
far-field pair lets the operators account for the measure beyond the last
quadrature radius.
"""

from dataclasses import dataclass, field
import math

import numpy as np

from levyscope.errors import OutsideBox

FORMS = ("cosine", "gaussian", "bump", "quadratic_clamped", "affine",
         "constant", "localizer")


def _points(points, dim):
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts.reshape(-1, dim) if dim > 1 else pts.reshape(-1, 1)
    return pts


def _smoothstep(t):
    """C^2 ramp from 0 (t <= 0) to 1 (t >= 1) and its first two derivatives."""
    t = np.clip(t, 0.0, 1.0)
    s = t ** 3 * (10.0 - 15.0 * t + 6.0 * t ** 2)
    ds = 30.0 * t ** 2 * (1.0 - t) ** 2
    dds = 60.0 * t * (1.0 - t) * (1.0 - 2.0 * t)
    return s, ds, dds


def _saturate(q, cap):
    """Odd C^2 saturation: identity on |q| <= cap/2, constant +-cap beyond 3cap/2."""
    sgn = np.sign(q)
    a = np.abs(q)
    t = np.clip((a - 0.5 * cap) / cap, 0.0, 1.0)
    # S(t) = t - t^3 + t^4/2 has S'(0)=1, S''(0)=0, S'(1)=S''(1)=0, S(1)=1/2
    s = np.where(a <= 0.5 * cap, a, 0.5 * cap + cap * (t - t ** 3 + 0.5 * t ** 4))
    ds = np.where(a <= 0.5 * cap, 1.0, 1.0 - 3.0 * t ** 2 + 2.0 * t ** 3)
    dds = np.where(a <= 0.5 * cap, 0.0, (-6.0 * t + 6.0 * t ** 2) / cap)
    return sgn * s, ds, sgn * dds


@dataclass(frozen=True)
class TestFunction:
    """A bounded closed-form probe with exact gradient and Hessian.

    ``params`` depends on ``form``:

    ``cosine``            k (wave vector)
    ``gaussian``          center, width, amplitude
    ``bump``              center, radius, amplitude (C-infinity, compact support)
    ``quadratic_clamped`` center, cap, hessian, slope, value:
                          value + sat(slope.(y-c) + (y-c).H(y-c)/2), with sat
                          the identity on [-cap/2, cap/2]
    ``affine``            p, c (only bounded on bounded sets)
    ``constant``          c
    ``localizer``         beta, level: psi(beta x) with psi = 0 on |y| <= 1 and
                          psi = level + 1 on |y| >= 2

    ``offset`` is added to every value.
    """

    __test__ = False  # not a pytest class

    form: str
    dim: int
    params: dict = field(default_factory=dict)
    offset: float = 0.0

    # -- constructors -------------------------------------------------
    @classmethod
    def cosine(cls, k, dim=None):
        k = np.atleast_1d(np.asarray(k, dtype=float))
        return cls("cosine", dim or k.size, {"k": k})

    @classmethod
    def gaussian(cls, center, width=1.0, amplitude=1.0):
        c = np.atleast_1d(np.asarray(center, dtype=float))
        return cls("gaussian", c.size, {"center": c, "width": float(width),
                                         "amplitude": float(amplitude)})

    @classmethod
    def bump(cls, center, radius=1.0, amplitude=1.0):
        c = np.atleast_1d(np.asarray(center, dtype=float))
        return cls("bump", c.size, {"center": c, "radius": float(radius),
                                     "amplitude": float(amplitude)})

    @classmethod
    def quadratic_clamped(cls, center, cap=10.0, hessian=1.0, slope=None, value=0.0):
        c = np.atleast_1d(np.asarray(center, dtype=float))
        d = c.size
        H = np.asarray(hessian, dtype=float)
        H = H * np.eye(d) if H.ndim == 0 else H.reshape(d, d)
        H = 0.5 * (H + H.T)
        s = np.zeros(d) if slope is None else np.atleast_1d(np.asarray(slope, dtype=float))
        if cap <= 0:
            raise ValueError("cap must be positive")
        return cls("quadratic_clamped", d, {"center": c, "cap": float(cap),
                                             "hessian": H, "slope": s,
                                             "value": float(value)})

    @classmethod
    def affine(cls, p, c=0.0):
        p = np.atleast_1d(np.asarray(p, dtype=float))
        return cls("affine", p.size, {"p": p, "c": float(c)})

    @classmethod
    def constant(cls, c, dim=1):
        return cls("constant", dim, {"c": float(c)})

    @classmethod
    def localizer(cls, beta, level=1.0, dim=1):
        if beta <= 0:
            raise ValueError("beta must be positive")
        return cls("localizer", dim, {"beta": float(beta), "level": float(level)})

    def shifted(self, a):
        """The same probe plus the constant ``a``."""
        return TestFunction(self.form, self.dim, self.params, self.offset + a)

    @property
    def label(self):
        def fmt(v):
            if isinstance(v, np.ndarray):
                return "[" + ",".join(f"{x:g}" for x in v.ravel()) + "]"
            return f"{v:g}"
        inner = ",".join(f"{k}={fmt(v)}" for k, v in self.params.items())
        off = f"{self.offset:+g}" if self.offset else ""
        return f"{self.form}({inner}){off}"

    # -- evaluation ---------------------------------------------------
    def derivatives(self, points):
        """Values (n,), gradients (n, d) and Hessians (n, d, d) at ``points``."""
        y = _points(points, self.dim)
        n, d = y.shape
        P = self.params
        f = self.form
        if f == "cosine":
            k = P["k"]
            ph = y @ k
            val = np.cos(ph)
            grad = -np.sin(ph)[:, None] * k[None, :]
            hess = -np.cos(ph)[:, None, None] * np.outer(k, k)[None]
        elif f == "gaussian":
            w, amp = P["width"], P["amplitude"]
            dy = y - P["center"]
            e = amp * np.exp(-np.sum(dy ** 2, axis=1) / (2 * w * w))
            val = e
            grad = -e[:, None] * dy / w ** 2
            hess = e[:, None, None] * (np.einsum("ni,nj->nij", dy, dy) / w ** 4
                                       - np.eye(d)[None] / w ** 2)
        elif f == "bump":
            rad, amp = P["radius"], P["amplitude"]
            dy = (y - P["center"]) / rad
            s2 = np.sum(dy ** 2, axis=1)
            inside = s2 < 1.0
            den = np.where(inside, 1.0 - s2, 1.0)
            e = np.where(inside, amp * np.exp(1.0 - 1.0 / den), 0.0)
            # f = amp exp(1 - 1/(1 - s2)); df/ds2 = -f/(1-s2)^2
            g1 = np.where(inside, -e / den ** 2, 0.0)
            g2 = np.where(inside, e / den ** 4 - 2.0 * e / den ** 3, 0.0)
            val = e
            grad = (2.0 * g1)[:, None] * dy / rad
            hess = (4.0 * g2[:, None, None] * np.einsum("ni,nj->nij", dy, dy)
                    + 2.0 * g1[:, None, None] * np.eye(d)[None]) / rad ** 2
        elif f == "quadratic_clamped":
            dy = y - P["center"]
            H, s = P["hessian"], P["slope"]
            gq = dy @ H + s
            q = dy @ s + 0.5 * np.einsum("ni,ij,nj->n", dy, H, dy)
            sv, ds, dds = _saturate(q, P["cap"])
            val = P["value"] + sv
            grad = ds[:, None] * gq
            hess = (ds[:, None, None] * H[None]
                    + dds[:, None, None] * np.einsum("ni,nj->nij", gq, gq))
        elif f == "affine":
            val = y @ P["p"] + P["c"]
            grad = np.broadcast_to(P["p"], (n, d)).copy()
            hess = np.zeros((n, d, d))
        elif f == "constant":
            val = np.full(n, P["c"])
            grad = np.zeros((n, d))
            hess = np.zeros((n, d, d))
        elif f == "localizer":
            beta, lev = P["beta"], P["level"]
            by = beta * y
            r = np.linalg.norm(by, axis=1)
            s, ds, dds = _smoothstep(r - 1.0)
            val = (lev + 1.0) * s
            safe = np.where(r > 0, r, 1.0)
            u = by / safe[:, None]
            grad = ((lev + 1.0) * ds)[:, None] * u * beta
            proj = np.eye(d)[None] - np.einsum("ni,nj->nij", u, u)
            hess = (lev + 1.0) * beta ** 2 * (
                dds[:, None, None] * np.einsum("ni,nj->nij", u, u)
                + (ds / safe)[:, None, None] * proj)
        else:
            raise ValueError(f"unknown probe form {f!r}")
        return val + self.offset, grad, hess

    def __call__(self, points):
        return self.derivatives(points)[0]

    def value(self, x):
        return float(self.derivatives(np.reshape(x, (1, self.dim)))[0][0])

    def gradient(self, x):
        return self.derivatives(np.reshape(x, (1, self.dim)))[1][0]

    def hessian(self, x):
        return self.derivatives(np.reshape(x, (1, self.dim)))[2][0]

    def sup_norm(self):
        P, f = self.params, self.form
        if f == "cosine":
            m = 1.0
        elif f in ("gaussian", "bump"):
            m = abs(P["amplitude"])
        elif f == "quadratic_clamped":
            m = abs(P["value"]) + P["cap"]
        elif f == "constant":
            m = abs(P["c"])
        elif f == "localizer":
            m = abs(P["level"]) + 1.0
        else:
            return math.inf
        return m + abs(self.offset)

    def hessian_bound(self, x, radius):
        """Largest Hessian spectral norm sampled on the ball B(x, radius)."""
        x = np.asarray(x, dtype=float).reshape(self.dim)
        t = np.linspace(-radius, radius, 9)
        if self.dim == 1:
            pts = x[None, :] + t[:, None]
        else:
            gx, gy = np.meshgrid(t, t, indexing="ij")
            off = np.stack([gx.ravel(), gy.ravel()], axis=1)
            pts = x[None, :] + off[np.linalg.norm(off, axis=1) <= radius + 1e-12]
        hess = self.derivatives(pts)[2]
        return float(1.25 * np.max(np.abs(np.linalg.eigvalsh(hess))))

    def far_field(self, x, dirs, r_max, alpha=None):
        """Value approached beyond ``r_max`` along each direction, with error.

        The error is a bound on the mean deviation from that value per unit
        of tail mass. ``alpha`` is the stable index when the radial law is a
        power; it sharpens the bound for oscillatory probes in d = 1.
        """
        x = np.asarray(x, dtype=float).reshape(self.dim)
        dirs = np.asarray(dirs, dtype=float).reshape(-1, self.dim)
        m = dirs.shape[0]
        P, f = self.params, self.form
        err = np.zeros(m)
        if f == "constant":
            vals = np.full(m, P["c"])
        elif f == "affine":
            # odd part cancels over symmetric tails; treat the tail as flat
            vals = np.full(m, self.value(x) - self.offset)
            err[:] = 0.0
        elif f in ("gaussian", "bump"):
            vals = np.zeros(m)
            reach = np.linalg.norm(x - P["center"])
            spread = 8.0 * P["width"] if f == "gaussian" else P["radius"]
            if r_max < reach + spread:
                err[:] = 2.0 * abs(P["amplitude"])
        elif f == "quadratic_clamped":
            dy = x - P["center"]
            H, s = P["hessian"], P["slope"]
            lam = np.einsum("mi,ij,mj->m", dirs, H, dirs)
            sgn = np.sign(lam)
            vals = P["value"] + P["cap"] * sgn
            # the quadratic has saturated once |q| >= 3cap/2 along the ray
            r = r_max
            q = (dy + r * dirs) @ s + 0.5 * np.einsum(
                "mi,ij,mj->m", dy[None] + r * dirs, H, dy[None] + r * dirs)
            err = np.where((np.abs(q) >= 1.5 * P["cap"]) & (np.abs(lam) > 1e-14),
                           0.0, 2.0 * P["cap"])
        elif f == "cosine":
            w = dirs @ P["k"]
            c = float(P["k"] @ x)
            vals = np.where(w == 0.0, math.cos(c), 0.0)
            err[:] = np.where(w == 0.0, 0.0, 1.0)
            if alpha is not None:
                # mean of cos(w r + c) against r^(-1-a) on (R, inf), integrated by
                # parts once; the next term bounds the error
                ok = w != 0.0
                aw = np.abs(w[ok])
                vals[ok] = -alpha * np.sin(aw * r_max + np.sign(w[ok]) * c) / (aw * r_max)
                err[ok] = np.minimum(1.0, 2.0 * alpha * (1.0 + alpha) / (aw * r_max) ** 2)
        elif f == "localizer":
            vals = np.full(m, P["level"] + 1.0)
            if r_max * P["beta"] < 2.0 + P["beta"] * np.linalg.norm(x):
                err[:] = 2.0 * (P["level"] + 1.0)
        else:
            raise ValueError(f"unknown probe form {f!r}")
        return vals + self.offset, err

    def describe(self):
        return {"form": self.form, "dim": self.dim, "offset": self.offset,
                "params": {k: (v.tolist() if isinstance(v, np.ndarray) else v)
                           for k, v in self.params.items()}}


@dataclass(frozen=True)
class Grid:
    """Uniform node grid on the box [-L, L]^d with an extension rule."""

    L: float
    h: float
    dim: int = 1
    extension: str = "constant_clamp"

    def __post_init__(self):
        if self.L <= 0 or self.h <= 0:
            raise ValueError("box half-width and mesh size must be positive")
        n = 2.0 * self.L / self.h
        if abs(n - round(n)) > 1e-9 * max(1.0, n):
            raise ValueError(f"h={self.h} does not divide the box width {2 * self.L}")
        if self.extension not in ("constant_clamp", "periodic"):
            raise ValueError(f"unknown extension {self.extension!r}")
        if self.dim not in (1, 2):
            raise ValueError("only d = 1, 2 are supported")

    @property
    def n(self):
        return int(round(2.0 * self.L / self.h)) + 1

    @property
    def shape(self):
        return (self.n,) * self.dim

    @property
    def size(self):
        return self.n ** self.dim

    @property
    def axis(self):
        return -self.L + self.h * np.arange(self.n)

    def nodes(self):
        """All node coordinates, shape (size, d), in C (row-major) order."""
        ax = self.axis
        if self.dim == 1:
            return ax[:, None]
        gx, gy = np.meshgrid(ax, ax, indexing="ij")
        return np.stack([gx.ravel(), gy.ravel()], axis=1)

    def index_of(self, x, tol=1e-9):
        """Flat node index of the node at ``x`` (raises if ``x`` is not a node)."""
        x = np.asarray(x, dtype=float).reshape(self.dim)
        idx = (x + self.L) / self.h
        ri = np.round(idx)
        if np.any(np.abs(idx - ri) > tol) or np.any(ri < 0) or np.any(ri > self.n - 1):
            raise OutsideBox(f"{x} is not a grid node")
        return int(np.ravel_multi_index(tuple(ri.astype(int)), self.shape))

    def contains(self, x):
        x = np.asarray(x, dtype=float).reshape(-1, self.dim)
        return np.all(np.abs(x) <= self.L + 1e-12, axis=1)

    def wrap(self, points):
        """Map arbitrary points into the box according to the extension rule."""
        pts = np.asarray(points, dtype=float)
        if self.extension == "constant_clamp":
            return np.clip(pts, -self.L, self.L)
        period = 2.0 * self.L
        return (pts + self.L) % period - self.L

    def interp_weights(self, points):
        """Multilinear interpolation stencil: (indices (n, 2^d), weights (n, 2^d)).

        Weights are nonnegative and sum to one; the extension rule is
        applied first, so any point of R^d is admissible.
        """
        pts = self.wrap(_points(points, self.dim))
        n, d = pts.shape
        s = (pts + self.L) / self.h
        # node coordinates land a few ulps off integers; snap them
        near = np.rint(s)
        s = np.where(np.abs(s - near) <= 1e-9, near, s)
        i0 = np.floor(s).astype(int)
        i0 = np.clip(i0, 0, self.n - 2)
        t = np.clip(s - i0, 0.0, 1.0)
        corners = np.array(np.meshgrid(*([[0, 1]] * d), indexing="ij")).reshape(d, -1).T
        idx = np.empty((n, corners.shape[0]), dtype=np.int64)
        wts = np.empty((n, corners.shape[0]))
        for c, corner in enumerate(corners):
            ii = i0 + corner[None, :]
            w = np.prod(np.where(corner[None, :] == 1, t, 1.0 - t), axis=1)
            if self.extension == "periodic":
                ii = ii % (self.n - 1)
            flat = ii[:, 0] if d == 1 else ii[:, 0] * self.n + ii[:, 1]
            idx[:, c] = flat
            wts[:, c] = w
        return idx, wts


class GridFunction:
    """Node values on a :class:`Grid`, extended to all of R^d by the grid's rule."""

    def __init__(self, grid, values, sup_bound=None):
        values = np.asarray(values, dtype=float).reshape(grid.shape)
        if grid.extension == "periodic":
            values = values.copy()
            # identify opposite faces: the last node duplicates the first
            if grid.dim == 1:
                values[-1] = values[0]
            else:
                values[-1, :] = values[0, :]
                values[:, -1] = values[:, 0]
        self.grid = grid
        self.values = values
        actual = float(np.max(np.abs(values))) if values.size else 0.0
        if sup_bound is None:
            sup_bound = actual
        if actual > sup_bound * (1 + 1e-12) + 1e-300:
            raise ValueError(f"values exceed the declared sup_bound {sup_bound}")
        self.sup_bound = float(sup_bound)

    @classmethod
    def sample(cls, grid, func, sup_bound=None):
        return cls(grid, func(grid.nodes()).reshape(grid.shape), sup_bound)

    @property
    def dim(self):
        return self.grid.dim

    @property
    def flat(self):
        return self.values.ravel()

    def __call__(self, points):
        idx, w = self.grid.interp_weights(points)
        vals = self.flat[idx]
        # differences from the heaviest corner keep constants and nodes exact
        base = vals[np.arange(len(vals)), np.argmax(w, axis=1)]
        return base + np.sum((vals - base[:, None]) * w, axis=1)

    def value(self, x):
        return float(self(np.reshape(x, (1, self.dim)))[0])

    def sup_norm(self):
        return self.sup_bound

    def far_field(self, x, dirs, r_max, alpha=None):
        x = np.asarray(x, dtype=float).reshape(self.dim)
        dirs = np.asarray(dirs, dtype=float).reshape(-1, self.dim)
        g = self.grid
        if g.extension == "periodic":
            distinct = self.values[(slice(0, -1),) * self.dim]
            vals = np.full(dirs.shape[0], float(distinct.mean()))
            return vals, np.full(dirs.shape[0], 2.0 * self.sup_bound)
        far = x[None, :] + 1e12 * dirs
        vals = self(far)
        # saturated: every nonzero component has left the box by r_max
        with np.errstate(divide="ignore"):
            need = np.where(np.abs(dirs) > 1e-15,
                            (g.L + np.abs(x)[None, :]) / np.abs(dirs), 0.0)
        saturated = np.max(need, axis=1) <= r_max
        err = np.where(saturated, 0.0, 2.0 * self.sup_bound)
        return vals, err

    def with_values(self, values, sup_bound=None):
        return GridFunction(self.grid, values, sup_bound)


@dataclass(frozen=True)
class JumpMap:
    """Jump size j(x, z) = J(x, z) z with J piecewise constant in |z|.

    ``identity``     J = I
    ``linear_in_z``  J = A0 (1 + amplitude sin(frequency x_0))
    ``shear``        J = (1 + b(x)) I on |z| <= 1 and I outside,
                     b(x) = amplitude sin(frequency x_0)

    ``lipschitz_x`` is the Lipschitz constant of x -> J; ``linear_bound`` the
    declared constant in |j(x, z)| <= c |z|.
    """

    kind: str = "identity"
    dim: int = 1
    matrix: np.ndarray = None
    amplitude: float = 0.0
    frequency: float = 1.0
    declared_bound: float = None

    @classmethod
    def identity(cls, dim=1):
        return cls("identity", dim)

    @classmethod
    def shear(cls, amplitude, frequency=1.0, dim=1, declared_bound=None):
        return cls("shear", dim, amplitude=float(amplitude), frequency=float(frequency),
                   declared_bound=declared_bound)

    @classmethod
    def linear(cls, matrix, amplitude=0.0, frequency=1.0, declared_bound=None):
        A = np.atleast_2d(np.asarray(matrix, dtype=float))
        return cls("linear_in_z", A.shape[0], matrix=A, amplitude=float(amplitude),
                   frequency=float(frequency), declared_bound=declared_bound)

    def _modulation(self, x):
        x = np.asarray(x, dtype=float).reshape(self.dim)
        return self.amplitude * math.sin(self.frequency * x[0])

    def inner_matrix(self, x):
        """J(x, z) for |z| <= 1."""
        if self.kind == "identity":
            return np.eye(self.dim)
        if self.kind == "shear":
            return (1.0 + self._modulation(x)) * np.eye(self.dim)
        return self.matrix * (1.0 + self._modulation(x))

    def outer_matrix(self, x):
        """J(x, z) for |z| > 1."""
        if self.kind == "shear":
            return np.eye(self.dim)
        return self.inner_matrix(x)

    def __call__(self, x, z):
        z = _points(z, self.dim)
        near = np.linalg.norm(z, axis=1) <= 1.0
        return np.where(near[:, None], z @ self.inner_matrix(x).T,
                        z @ self.outer_matrix(x).T)

    @property
    def lipschitz_x(self):
        if self.kind == "identity":
            return 0.0
        base = 1.0 if self.kind == "shear" else float(np.linalg.norm(self.matrix, 2))
        return abs(self.amplitude) * abs(self.frequency) * base

    @property
    def linear_bound(self):
        if self.declared_bound is not None:
            return float(self.declared_bound)
        if self.kind == "identity":
            return 1.0
        if self.kind == "shear":
            return 1.0 + abs(self.amplitude)
        return float(np.linalg.norm(self.matrix, 2)) * (1.0 + abs(self.amplitude))

    @property
    def varies_outside(self):
        """Whether J depends on x for |z| > 1."""
        return self.kind == "linear_in_z" and self.amplitude != 0.0

    def describe(self):
        out = {"kind": self.kind, "dim": self.dim, "amplitude": self.amplitude,
               "frequency": self.frequency, "lipschitz_x": self.lipschitz_x,
               "linear_bound": self.linear_bound}
        if self.matrix is not None:
            out["matrix"] = self.matrix.tolist()
        return out


def weight_map(kind="constant", c=1.0):
    """Bounded weight maps gamma(x, z) for the B operator.

    ``zero`` (gamma = 0), ``constant`` (gamma = c) and ``saturated``
    (gamma = c min(|z|, 1), which satisfies |gamma| <= K|z| near 0).
    """
    if kind not in ("zero", "constant", "saturated"):
        raise ValueError(f"unknown weight map {kind!r}")
    return WeightMap(kind, float(c))


@dataclass(frozen=True)
class WeightMap:
    kind: str
    c: float

    def __call__(self, x, z):
        z = np.asarray(z, dtype=float)
        r = np.linalg.norm(z.reshape(z.shape[0], -1), axis=1)
        if self.kind == "zero":
            return np.zeros_like(r)
        if self.kind == "constant":
            return np.full_like(r, self.c)
        return self.c * np.minimum(r, 1.0)
