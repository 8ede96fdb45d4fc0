"""Discrete contact points: nodes where u - phi attains a max (or min)."""

from dataclasses import dataclass
import math

import numpy as np

from levyscope.errors import NoContacts, NotContactPoint
from levyscope.functions import GridFunction, TestFunction


@dataclass(frozen=True)
class ContactCertificate:
    """Record that ``u - probe`` has a discrete extremum at ``x``.

    ``kind`` is ``"max"`` or ``"min"``; ``radius`` is the window over which
    the extremum was checked (inf for a global check over all nodes) and
    ``margin`` the smallest gap between the extremal value and the others.
    """

    kind: str
    x: np.ndarray
    probe: TestFunction
    gap: float
    margin: float
    radius: float

    @property
    def slope(self):
        return self.probe.gradient(self.x)


def _node_values(u, pts):
    if isinstance(u, GridFunction):
        return u.flat
    return u(pts)


def certify_contact(u, probe, x, kind="max", radius=math.inf, tol=1e-12):
    """Check that ``u - probe`` is extremal at the node ``x``; raise otherwise.

    For a :class:`GridFunction` the comparison runs over grid nodes within
    ``radius`` of ``x``. For a closed-form ``u`` the comparison runs over a
    fine sample of the window (radius capped at 4).
    """
    if kind not in ("max", "min"):
        raise ValueError("kind must be 'max' or 'min'")
    x = np.asarray(x, dtype=float).reshape(probe.dim)
    if isinstance(u, GridFunction):
        pts = u.grid.nodes()
        vals = u.flat - probe(pts)
        here = u.value(x) - probe.value(x)
    else:
        r = min(radius, 4.0)
        t = np.linspace(-r, r, 401 if probe.dim == 1 else 61)
        if probe.dim == 1:
            pts = x[None, :] + t[:, None]
        else:
            gx, gy = np.meshgrid(t, t, indexing="ij")
            pts = x[None, :] + np.stack([gx.ravel(), gy.ravel()], axis=1)
        vals = u(pts) - probe(pts)
        here = float(u(x[None, :])[0] - probe.value(x))
    near = np.linalg.norm(pts - x[None, :], axis=1) <= radius
    sign = 1.0 if kind == "max" else -1.0
    excess = sign * (vals[near] - here)
    if np.any(excess > tol):
        raise NotContactPoint(
            f"u - phi is not a discrete {kind} at {x.tolist()} "
            f"(exceeded by {float(excess.max()):.3g})")
    others = excess[excess < -tol]
    margin = float(-others.max()) if others.size else 0.0
    return ContactCertificate(kind, x, probe, float(here), margin, float(radius))


def find_contacts(u, probe, kind="max", radius=math.inf, tol=1e-12, interior=True):
    """All grid nodes where ``u - probe`` is extremal within ``radius``.

    Raises :class:`NoContacts` when there are none (only possible for a
    local window that excludes every extremum, or when ``interior`` drops
    boundary nodes).
    """
    grid = u.grid
    pts = grid.nodes()
    vals = u.flat - probe(pts)
    sign = 1.0 if kind == "max" else -1.0
    keep = np.all(np.abs(pts) < grid.L - 0.5 * grid.h, axis=1) if interior \
        else np.ones(len(pts), bool)
    if math.isinf(radius):
        best = np.max(sign * vals)
        idx = np.flatnonzero((sign * vals >= best - tol) & keep)
    else:
        idx = []
        for i in np.flatnonzero(keep):
            near = np.linalg.norm(pts - pts[i], axis=1) <= radius
            if np.all(sign * vals[near] <= sign * vals[i] + tol):
                idx.append(i)
    if len(idx) == 0:
        raise NoContacts(f"u - {probe.label} has no discrete {kind} on the grid")
    return [certify_contact(u, probe, pts[i], kind, radius, tol) for i in idx]
