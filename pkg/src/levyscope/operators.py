"""Nonlocal operators and their split at radius delta.

For a measure mu, a probe phi and a jump map j(x, z) = J z the operators are

    inner   sum over |z| <= delta of  phi(x + Jz) - phi(x) - grad phi(x).Jz
    outer   sum over |z| >  delta of  u(x + Jz) - u(x) - p.Jz 1{|z| <= 1}

computed with a :class:`~levyscope.measures.QuadratureRule`. The inner
part below the rule's floor radius is replaced by the exact second-order
term 1/2 tr(D^2 phi J M J^T), M the closed-form second moment of the core.
The outer part beyond ``r_max`` is the tail mass times the far-field value
of u. Error bounds are a relative ``tol`` on the absolute integrand plus
the far-field error.
"""

from dataclasses import dataclass
import math

import numpy as np

from levyscope.contacts import ContactCertificate
from levyscope.errors import NEG_INFINITY, NonConvergence, NotContactPoint, OutsideBox
from levyscope.functions import GridFunction
from levyscope.measures import annulus_rule, build_quadrature


@dataclass(frozen=True)
class SplitEvaluation:
    inner: float
    outer: object  # float or NEG_INFINITY
    delta: float
    error_bound: float

    @property
    def total(self):
        if self.outer is NEG_INFINITY:
            return NEG_INFINITY
        return self.inner + self.outer


def _x(x, dim):
    return np.asarray(x, dtype=float).reshape(dim)


def _matrices(jmap, x, dim):
    if jmap is None:
        eye = np.eye(dim)
        return eye, eye
    return jmap.inner_matrix(x), jmap.outer_matrix(x)


def _alpha(measure):
    return measure.alpha if measure.kind == "stable_anisotropic" else None


def _check_rule(measure, rule, delta=None):
    if rule.dim != measure.dim:
        raise ValueError("rule and measure dimensions differ")
    if delta is not None and abs(rule.delta - delta) > 1e-14:
        raise ValueError(f"rule is split at {rule.delta}, not at delta={delta}")


def _rule_sum(func, nodes, weights, check_nodes=None, check_weights=None, tol=0.0):
    """Weighted sum of ``func(nodes)`` and an error estimate.

    The estimate is ``tol`` times the absolute integral plus the gap to the
    lower-order companion rule when one is given.
    """
    if not weights.size:
        return 0.0, 0.0
    f = func(nodes)
    s = float(weights @ f)
    err = tol * float(weights @ np.abs(f))
    if check_weights is not None and check_weights.size:
        err += abs(s - float(check_weights @ func(check_nodes)))
    return s, err


def _inner_parts(phi, x, rule, J):
    """Quadrature sum, core term and error bound of the inner integral."""
    val, grad, hess = (a[0] for a in phi.derivatives(x[None, :]))

    def f(z):
        jz = z @ J.T
        return phi(x[None, :] + jz) - val - jz @ grad

    s, err = _rule_sum(f, rule.inner_nodes, rule.inner_weights,
                       rule.check_inner_nodes, rule.check_inner_weights, rule.tol)
    core = 0.5 * float(np.sum(hess * (J @ rule.core_m2 @ J.T)))
    err += rule.tol * abs(core) + _core_taylor_error(rule, J, hess)
    return s, core, err, grad, hess


def _core_taylor_error(rule, J, hess, extra=0):
    # higher Taylor terms on |z| <= delta_floor: odd ones cancel for symmetric rules
    q = 2 if rule.symmetric else 1
    jn = float(np.linalg.norm(J, 2))
    scale = (1.0 + float(np.abs(hess).max())) * jn ** (2 + q + extra)
    return scale * rule.delta_floor ** (q + extra) * float(np.trace(rule.core_m2))


def eval_inner(measure, phi, x, delta=None, rule=None, jmap=None, full_output=False):
    """Inner integral over ``|z| <= delta`` (Taylor remainder of ``phi``)."""
    if rule is None:
        rule = build_quadrature(measure, 1.0 if delta is None else delta)
    _check_rule(measure, rule, delta)
    x = _x(x, measure.dim)
    J, _ = _matrices(jmap, x, measure.dim)
    s, core, err, _, _ = _inner_parts(phi, x, rule, J)
    value = s + core
    return (value, err) if full_output else value


def _outer_parts(measure, u, x, p, rule, Jin, Jout, compensate_all=False):
    ux = float(u(x[None, :])[0])

    def f(z):
        near = np.linalg.norm(z, axis=1) <= 1.0
        jz = np.where(near[:, None], z @ Jin.T, z @ Jout.T)
        comp = jz @ p
        if not compensate_all:
            comp = np.where(near, comp, 0.0)
        return u(x[None, :] + jz) - ux - comp

    s, err = _rule_sum(f, rule.outer_nodes, rule.outer_weights,
                       rule.check_outer_nodes, rule.check_outer_weights, rule.tol)
    tail, tail_err = 0.0, 0.0
    tw = rule.tail_weights
    if tw.size and tw.sum() > 0:
        jd = rule.tail_dirs @ Jout.T
        lens = np.linalg.norm(jd, axis=1)
        moving = lens > 0
        far = np.full(tw.size, ux)
        ferr = np.zeros(tw.size)
        if moving.any():
            # beyond r_max in z is beyond r_max |J u| in the image
            for scale in np.unique(lens[moving]):
                sel = moving & (lens == scale)
                v, e = u.far_field(x, jd[sel] / scale, rule.r_max * scale, _alpha(measure))
                far[sel], ferr[sel] = v, e
        tail = float(tw @ (far - ux))
        tail_err = float(tw @ ferr)
        if compensate_all:
            tf = rule.tail_first
            drift = p @ (Jout @ tf) if np.all(np.isfinite(tf)) else math.inf
            if not math.isfinite(drift):
                if np.any(Jout.T @ p != 0):
                    raise ValueError("the measure has no first moment at infinity; "
                                     "the fully compensated integral is undefined")
                drift = 0.0
            tail -= drift
    return float(s + tail), float(err + tail_err)


def _require_inside(u, x):
    if isinstance(u, GridFunction) and not u.grid.contains(x)[0]:
        raise OutsideBox(f"{x.tolist()} lies outside the box [-{u.grid.L}, {u.grid.L}]^d")


def eval_outer(measure, u, x, p, delta=None, rule=None, jmap=None, full_output=False):
    """Outer integral over ``|z| > delta`` of a grid function or probe ``u``."""
    if rule is None:
        rule = build_quadrature(measure, 1.0 if delta is None else delta)
    _check_rule(measure, rule, delta)
    x = _x(x, measure.dim)
    _require_inside(u, x)
    p = np.asarray(p, dtype=float).reshape(measure.dim)
    Jin, Jout = _matrices(jmap, x, measure.dim)
    value, err = _outer_parts(measure, u, x, p, rule, Jin, Jout)
    return (value, err) if full_output else value


def eval_levy(measure, phi, x, rule=None, jmap=None, full_output=False):
    """The full operator on a probe: inner + outer with ``p = grad phi(x)``."""
    if rule is None:
        rule = build_quadrature(measure, 1.0)
    x = _x(x, measure.dim)
    Jin, Jout = _matrices(jmap, x, measure.dim)
    s, core, err_in, grad, _ = _inner_parts(phi, x, rule, Jin)
    outer, err_out = _outer_parts(measure, phi, x, grad, rule, Jin, Jout)
    value = s + core + outer
    return (value, err_in + err_out) if full_output else value


def eval_split(measure, phi, x, delta, rule=None):
    """Both pieces of the split on one probe, as a :class:`SplitEvaluation`."""
    return eval_levy_ito(measure, None, phi, x, delta=delta, rule=rule)


def eval_levy_ito(measure, jmap, phi, x, p=None, delta=None, rule=None, u=None):
    """Split evaluation with jump sizes ``j(x, z)`` from ``jmap``.

    ``phi`` drives the inner part; the outer part integrates ``u`` when
    given (a grid function, say) and ``phi`` otherwise. ``p`` defaults to
    ``grad phi(x)``.
    """
    if rule is None:
        rule = build_quadrature(measure, 1.0 if delta is None else delta)
    _check_rule(measure, rule, delta)
    x = _x(x, measure.dim)
    target = phi if u is None else u
    _require_inside(target, x)
    Jin, Jout = _matrices(jmap, x, measure.dim)
    s, core, err_in, grad, _ = _inner_parts(phi, x, rule, Jin)
    p = grad if p is None else np.asarray(p, dtype=float).reshape(measure.dim)
    outer, err_out = _outer_parts(measure, target, x, p, rule, Jin, Jout)
    return SplitEvaluation(s + core, outer, rule.delta, err_in + err_out)


def eval_K(measure, beta_map, phi, x, delta=None, rule=None):
    """Fully compensated operator: ``phi(x+b) - phi(x) - grad phi(x).b`` over all z."""
    if rule is None:
        rule = build_quadrature(measure, 1.0 if delta is None else delta)
    _check_rule(measure, rule, delta)
    x = _x(x, measure.dim)
    Jin, Jout = _matrices(beta_map, x, measure.dim)
    s, core, err_in, grad, _ = _inner_parts(phi, x, rule, Jin)
    outer, err_out = _outer_parts(measure, phi, x, grad, rule, Jin, Jout,
                                  compensate_all=True)
    return SplitEvaluation(s + core, outer, rule.delta, err_in + err_out)


def eval_B(measure, beta_map, gamma_weight, phi, x, delta=None, rule=None):
    """Weighted, uncompensated operator ``(phi(x+b) - phi(x)) gamma(x, z)``."""
    if rule is None:
        rule = build_quadrature(measure, 1.0 if delta is None else delta)
    _check_rule(measure, rule, delta)
    x = _x(x, measure.dim)
    d = measure.dim
    Jin, Jout = _matrices(beta_map, x, d)
    if gamma_weight.kind == "zero":
        return SplitEvaluation(0.0, 0.0, rule.delta, 0.0)
    c = gamma_weight.c
    val, grad, hess = (a[0] for a in phi.derivatives(x[None, :]))

    def f(z):
        near = np.linalg.norm(z, axis=1) <= 1.0
        jz = np.where(near[:, None], z @ Jin.T, z @ Jout.T)
        return (phi(x[None, :] + jz) - val) * gamma_weight(x, z)

    s_in, e_in = _rule_sum(f, rule.inner_nodes, rule.inner_weights,
                           rule.check_inner_nodes, rule.check_inner_weights, rule.tol)
    s_out, e_out = _rule_sum(f, rule.outer_nodes, rule.outer_weights,
                             rule.check_outer_nodes, rule.check_outer_weights, rule.tol)

    jn = float(np.linalg.norm(Jin, 2))
    slope = Jin.T @ grad
    if gamma_weight.kind == "constant":
        first = 0.0
        if np.any(slope != 0):
            first = float(slope @ rule.core_m1) if np.all(np.isfinite(rule.core_m1)) \
                else math.inf
            if not math.isfinite(first):
                raise ValueError("the core first moment diverges; a constant weight "
                                 "needs a measure with finite first moment near 0")
        core = c * (first + 0.5 * float(np.sum(hess * (Jin @ rule.core_m2 @ Jin.T))))
        core_err = abs(c) * _core_taylor_error(rule, Jin, hess)
    else:
        # gamma = c|z| near 0: leading term c grad.J int |z| z
        core = c * float(slope @ rule.core_abs1)
        core_err = abs(c) * _core_taylor_error(rule, Jin, hess, extra=-1) * jn

    tail, tail_err = 0.0, 0.0
    tw = rule.tail_weights
    if tw.size and tw.sum() > 0:
        far, ferr = phi.far_field(x, _unit(rule.tail_dirs @ Jout.T),
                                  rule.r_max * _min_len(rule.tail_dirs @ Jout.T),
                                  _alpha(measure))
        tail = c * float(tw @ (far - val))
        tail_err = abs(c) * float(tw @ ferr)
    inner = s_in + core
    outer = s_out + tail
    err = e_in + e_out + rule.tol * abs(core) + core_err + tail_err
    return SplitEvaluation(inner, outer, rule.delta, err)


def _unit(v):
    n = np.linalg.norm(v, axis=1, keepdims=True)
    return np.divide(v, n, out=np.zeros_like(v), where=n > 0)


def _min_len(v):
    n = np.linalg.norm(v, axis=1)
    return float(n[n > 0].min()) if np.any(n > 0) else 0.0


@dataclass(frozen=True)
class OuterLimit:
    """Outcome of the delta -> 0 limit of the outer integral.

    ``value`` is a float or ``NEG_INFINITY``; ``slope`` is the regression
    slope of log|increment| against log(delta) over the last levels
    (negative slopes mean growing increments).
    """

    value: object
    levels: int
    partial_sums: tuple
    slope: float
    certificate: ContactCertificate


def _still_growing(incs, span=8):
    """Trailing nonzero increments all negative and not shrinking."""
    tail = np.array([v for v in incs if v != 0.0][-span:])
    if tail.size < 4:
        return False
    return bool(np.all(tail < 0) and np.all(np.abs(tail[1:]) >= 0.7 * np.abs(tail[:-1])))


def eval_outer_limit(measure, u, x, p, certificate=None, *, tol=1e-6, n_radial=8,
                     n_theta=64, max_levels=200, floor=None, full_output=False):
    """Limit of the outer integral as delta -> 0 over delta = 2^-m.

    Requires a certificate that ``u - phi`` has a discrete maximum at ``x``
    with ``grad phi(x) = p``. The limit is declared ``NEG_INFINITY`` when
    partial values keep decreasing by more than 10% per level and fall
    below ``floor`` (default ``-1e6 (1 + sup|u|)``).
    """
    x = _x(x, measure.dim)
    p = np.asarray(p, dtype=float).reshape(measure.dim)
    if not isinstance(certificate, ContactCertificate):
        raise NotContactPoint("a contact certificate for (u, phi, x) is required")
    if certificate.kind != "max" or not np.allclose(certificate.x, x, atol=1e-12):
        raise NotContactPoint("certificate is not a maximum at this point")
    if not np.allclose(certificate.slope, p, atol=1e-9):
        raise NotContactPoint("p does not match the probe slope at the contact point")
    _require_inside(u, x)
    sup = u.sup_norm()
    if floor is None:
        floor = -1e6 * (1.0 + (sup if math.isfinite(sup) else 0.0))

    rule = build_quadrature(measure, 1.0, tol)
    total = eval_outer(measure, u, x, p, rule=rule)
    ux = float(u(x[None, :])[0])
    sums, incs = [total], []
    value = None
    for m in range(max_levels):
        a, b = 2.0 ** (-m - 1), 2.0 ** (-m)
        z, w = annulus_rule(measure, a, b, n_radial, n_theta)
        inc = float(w @ (u(x[None, :] + z) - ux - z @ p)) if w.size else 0.0
        total += inc
        incs.append(inc)
        sums.append(total)
        if len(incs) < 4:
            continue
        if (total < floor and inc < 0 and incs[-2] < 0
                and abs(inc) > 0.1 * abs(total - inc)):
            value = NEG_INFINITY
            break
        last = np.abs(incs[-3:])
        if last[-1] == 0.0 and last[-2] == 0.0:
            # either exact convergence or the integrand fell below rounding;
            # the trend of the last nonzero increments decides
            value = NEG_INFINITY if _still_growing(incs) else total
            break
        if last[-2] > 0:
            q = last[-1] / last[-2]
            if 0.0 < q < 0.9 and last[-2] / max(last[-3], 1e-300) < 0.9:
                rest = inc * q / (1.0 - q)
                if abs(rest) <= tol * max(1.0, abs(total)):
                    value = total + rest
                    break
    if value is None:
        if _still_growing(incs):
            value = NEG_INFINITY
        else:
            raise NonConvergence("outer integral did not settle as delta -> 0", sums)
    k = min(len(incs), 20)
    mags = np.abs(np.array(incs[-k:]))
    logd = -np.log(2.0) * np.arange(len(incs) - k, len(incs))
    ok = mags > 0
    slope = float(np.polyfit(logd[ok], np.log(mags[ok]), 1)[0]) if ok.sum() >= 2 else math.nan
    if not full_output:
        return value
    return OuterLimit(value, len(incs), tuple(sums), slope, certificate)
