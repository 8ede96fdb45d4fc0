"""Command-line entry point: ``levyscope <subcommand> --config path [--seed N] [--out dir]``.

Exit status: 0 success, 1 verification failure, 2 configuration error,
3 numerical non-convergence. Every artifact embeds the resolved config.
"""

import argparse
import json
import math
import os
import sys

import numpy as np

from levyscope.config import Config
from levyscope.errors import CFLViolation, ConfigError, LevyscopeError, NonConvergence
from levyscope.functions import Grid, GridFunction, JumpMap, TestFunction, weight_map
from levyscope.measures import (LevyMeasure, build_quadrature, load_angular_csv,
                                verify_levy_condition)
from levyscope.operators import eval_B, eval_K, eval_levy_ito
from levyscope import solvers, viscosity

SUBCOMMANDS = ("eval-op", "verify", "stability", "solve", "compare", "quadrature-report")
SCHEMA_ID = "levyscope-report/1"
EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NONCONV = 0, 1, 2, 3


# -- builders (all validation happens here, before any computation) ---------

def _guard(key, build):
    try:
        return build()
    except ConfigError:
        raise
    except (ValueError, OSError) as exc:
        raise ConfigError(key, str(exc)) from None


def build_measure(cfg):
    kind = cfg.get_str("measure.kind", required=True, choices=("stable", "tempered", "table"))
    if kind == "stable":
        alpha = cfg.get_float("measure.alpha", required=True,
                              check=lambda a: 0 < a < 2, why="alpha must lie in (0, 2)")
        dim = cfg.get_int("measure.dim", 1, check=lambda d: d in (1, 2), why="dim must be 1 or 2")
        angular = None
        if cfg.has("measure.angular_csv"):
            path = cfg.get_str("measure.angular_csv")
            angular = _guard("measure.angular_csv", lambda: load_angular_csv(path))
        elif cfg.has("measure.angular"):
            angular = cfg.get_floats("measure.angular")
        return _guard("measure.angular", lambda: LevyMeasure.stable(alpha, dim, angular))
    if kind == "tempered":
        gp = cfg.get_float("measure.gamma_plus", required=True, check=lambda g: g > 0,
                           why="tempering rates must be positive")
        gm = cfg.get_float("measure.gamma_minus", gp, check=lambda g: g > 0,
                           why="tempering rates must be positive")
        return LevyMeasure.tempered(gp, gm)
    raw = cfg.get_str("measure.atoms", required=True)
    atoms = []
    for chunk in raw.split(";"):
        if not chunk.strip():
            continue
        try:
            point, mass = chunk.split(":")
            atoms.append(([float(c) for c in point.split(",")], float(mass)))
        except ValueError:
            cfg.fail("measure.atoms", f"expected 'x[,y]:mass', got {chunk.strip()!r}")
    return _guard("measure.atoms", lambda: LevyMeasure.table(atoms))


def build_grid(cfg, dim):
    L = cfg.get_float("grid.L", 2.0, check=lambda v: v > 0, why="must be positive")
    h = cfg.get_float("grid.h", 0.05, check=lambda v: v > 0, why="must be positive")
    ext = cfg.get_str("grid.extension", "constant_clamp", choices=("constant_clamp", "periodic"))
    return _guard("grid.h", lambda: Grid(L, h, dim, ext))


def build_function(cfg, prefix, dim, default_form=None):
    """A closed-form function from ``<prefix>.form`` and its parameters."""
    forms = ("cosine", "gaussian", "bump", "quadratic_clamped", "affine", "constant", "localizer")
    form = cfg.get_str(f"{prefix}.form", default_form, choices=forms,
                       required=default_form is None)
    zero = ",".join(["0"] * dim)
    key = f"{prefix}.form"
    if form == "cosine":
        k = cfg.get_floats(f"{prefix}.k", ",".join(["1"] * dim), length=dim)
        return _guard(key, lambda: TestFunction.cosine(k))
    if form == "gaussian":
        c = cfg.get_floats(f"{prefix}.center", zero, length=dim)
        w = cfg.get_float(f"{prefix}.width", 1.0, check=lambda v: v > 0, why="must be positive")
        a = cfg.get_float(f"{prefix}.amplitude", 1.0)
        return TestFunction.gaussian(c, w, a)
    if form == "bump":
        c = cfg.get_floats(f"{prefix}.center", zero, length=dim)
        r = cfg.get_float(f"{prefix}.radius", 1.0, check=lambda v: v > 0, why="must be positive")
        a = cfg.get_float(f"{prefix}.amplitude", 1.0)
        return TestFunction.bump(c, r, a)
    if form == "quadratic_clamped":
        c = cfg.get_floats(f"{prefix}.center", zero, length=dim)
        cap = cfg.get_float(f"{prefix}.cap", 10.0, check=lambda v: v > 0, why="must be positive")
        hess = cfg.get_float(f"{prefix}.hessian", 1.0)
        return _guard(key, lambda: TestFunction.quadratic_clamped(c, cap, hess))
    if form == "affine":
        p = cfg.get_floats(f"{prefix}.p", zero, length=dim)
        return TestFunction.affine(p, cfg.get_float(f"{prefix}.c", 0.0))
    if form == "constant":
        return TestFunction.constant(cfg.get_float(f"{prefix}.c", 0.0), dim)
    beta = cfg.get_float(f"{prefix}.beta", 1.0, check=lambda v: v > 0, why="must be positive")
    return TestFunction.localizer(beta, cfg.get_float(f"{prefix}.level", 1.0), dim)


def build_source(cfg, prefix, dim):
    """Source term: ``<prefix>.value`` (constant) or a scaled closed-form function."""
    if cfg.has(f"{prefix}.value") or not cfg.has(f"{prefix}.form"):
        return cfg.get_float(f"{prefix}.value", 0.0)
    f = build_function(cfg, prefix, dim)
    scale = cfg.get_float(f"{prefix}.scale", 1.0)
    return lambda pts: scale * f(pts)


def build_jmap(cfg, prefix, dim):
    kind = cfg.get_str(f"{prefix}.kind", "identity", choices=("identity", "shear", "linear"))
    if kind == "identity":
        return JumpMap.identity(dim)
    amp = cfg.get_float(f"{prefix}.amplitude", 0.0)
    freq = cfg.get_float(f"{prefix}.frequency", 1.0)
    bound = cfg.get_float(f"{prefix}.declared_bound", None)
    if kind == "shear":
        return _guard(f"{prefix}.amplitude",
                      lambda: JumpMap.shear(amp, freq, dim, declared_bound=bound))
    m = cfg.get_floats(f"{prefix}.matrix", ",".join(str(v) for v in np.eye(dim).ravel()),
                       length=dim * dim)
    return _guard(f"{prefix}.matrix",
                  lambda: JumpMap.linear(np.reshape(m, (dim, dim)), amp, freq, bound))


def _delta(cfg, key, default):
    return cfg.get_float(key, default, check=lambda v: v > 0, why="delta must be positive")


def _tol(cfg, key, default):
    return cfg.get_float(key, default, check=lambda v: v > 0, why="tol must be positive")


# -- output helpers --------------------------------------------------------

def _num(v):
    return f"{float(v):.16e}"


def _jsonable(obj):
    return viscosity._jsonable(obj)


class Writer:
    def __init__(self, out_dir, provenance, subcommand):
        self.out_dir = out_dir
        self.provenance = provenance
        self.subcommand = subcommand
        self.files = []

    def _path(self, name):
        os.makedirs(self.out_dir, exist_ok=True)
        path = os.path.join(self.out_dir, name)
        self.files.append(path)
        return path

    def csv(self, name, header, rows):
        with open(self._path(name), "w", encoding="utf-8", newline="\n") as fh:
            fh.write(f"# levyscope {self.subcommand}\n")
            for k, v in self.provenance.items():
                fh.write(f"# {k} = {v}\n")
            fh.write(",".join(header) + "\n")
            for row in rows:
                fh.write(",".join(_num(v) if isinstance(v, (float, np.floating)) else str(v)
                                  for v in row) + "\n")

    def json(self, name, exit_code, result):
        doc = {"schema": SCHEMA_ID, "subcommand": self.subcommand, "config": self.provenance,
               "exit_code": exit_code, "status": _STATUS[exit_code], "result": _jsonable(result)}
        with open(self._path(name), "w", encoding="utf-8", newline="\n") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True, allow_nan=False)
            fh.write("\n")


_STATUS = {EXIT_OK: "ok", EXIT_FAIL: "verification_failed", EXIT_CONFIG: "config_error",
           EXIT_NONCONV: "non_convergence"}


# -- subcommands -------------------------------------------------------------
# Each ``prepare_*`` reads and validates the whole config and returns a
# closure that does the work; nothing is computed before validation ends.

def prepare_eval_op(cfg, seed):
    mu = build_measure(cfg)
    d = mu.dim
    op = cfg.get_str("operator.kind", "I_L", choices=("I_L", "I_LI", "K", "B"))
    delta = _delta(cfg, "operator.delta", 1.0)
    tol = _tol(cfg, "operator.tol", 1e-6)
    jmap = build_jmap(cfg, "jmap", d) if op != "I_L" else None
    wmap = None
    if op == "B":
        wkind = cfg.get_str("weight.kind", "constant", choices=("zero", "constant", "saturated"))
        wc = cfg.get_float("weight.c", 1.0)
        wmap = _guard("weight.kind", lambda: weight_map(wkind, wc))
    probe = build_function(cfg, "probe", d)
    points = cfg.get_points("points", d, ",".join(["0"] * d))

    def run(writer):
        rule = build_quadrature(mu, delta, tol)
        rows = []
        for x in points:
            if op == "K":
                r = eval_K(mu, jmap, probe, x, rule=rule)
            elif op == "B":
                r = eval_B(mu, jmap, wmap, probe, x, rule=rule)
            else:
                r = eval_levy_ito(mu, jmap, probe, x, rule=rule)
            rows.append([*map(float, x), float(r.inner), float(r.outer), float(r.total),
                         float(r.error_bound)])
        coords = ["x"] if d == 1 else ["x0", "x1"]
        writer.csv("eval_op.csv", coords + ["inner", "outer", "total", "error_bound"], rows)
        return EXIT_OK
    return run


def _bank_options(cfg):
    curv = tuple(cfg.get_floats("probes.curvatures", "0.5,1,2,4"))
    if any(c <= 0 for c in curv):
        cfg.fail("probes.curvatures", "curvatures must be positive")
    stride = cfg.get_int("probes.stride", 1, check=lambda s: s >= 1, why="must be >= 1")
    smooth = cfg.get_bool("probes.smooth", True)
    return curv, stride, smooth


def _equation(cfg, prefix="equation"):
    gamma = cfg.get_float(f"{prefix}.gamma", 1.0, check=lambda g: g > 0, why="gamma must be > 0")
    nu = cfg.get_float(f"{prefix}.nu", 0.0, check=lambda v: v >= 0, why="nu must be >= 0")
    c_h = cfg.get_float(f"{prefix}.hamiltonian", 1.0, check=lambda v: v >= 0,
                        why="must be >= 0")
    return gamma, nu, c_h


def prepare_verify(cfg, seed):
    mu = build_measure(cfg)
    d = mu.dim
    grid = build_grid(cfg, d)
    w = build_function(cfg, "solution", d)
    gamma, nu, c_h = _equation(cfg)
    slack = cfg.get_float("verify.slack", 0.0)
    kinds = cfg.get_str("verify.kind", "sub", choices=("sub", "super", "both"))
    delta = _delta(cfg, "verify.delta", 2.0 * grid.h)
    tol = _tol(cfg, "verify.tol", 1e-6)
    jmap = build_jmap(cfg, "jmap", d)
    curv, stride, smooth = _bank_options(cfg)

    def run(writer):
        F = viscosity.manufactured_nonlinearity(w, mu, gamma, nu, c_h, slack, jmap)
        u = GridFunction.sample(grid, w)
        reports = {}
        for kind in (("sub", "super") if kinds == "both" else (kinds,)):
            side = "max" if kind == "sub" else "min"
            bank = viscosity.build_probe_bank(u, side, curv, delta, smooth, stride)
            audit = viscosity.verify_subsolution if kind == "sub" else viscosity.verify_supersolution
            reports[kind] = audit(u, F, mu, jmap, delta, bank, tol)
        code = EXIT_OK if all(r.passed for r in reports.values()) else EXIT_FAIL
        writer.json("verify.json", code, {k: r.to_dict() for k, r in reports.items()})
        for k, r in reports.items():
            for c in r.failures[:5]:
                print(f"{k}solution check failed at node {c['node']} (probe {c['probe']}): "
                      f"F = {c['F_value']:.6g}, allowance {c['allowance']:.6g}", file=sys.stderr)
        return code
    return run


def _problem(cfg, mu, d, kind=None):
    kind = kind or cfg.get_str("problem.kind", required=True,
                               choices=("parabolic_interface", "stationary_semilinear", "bellman"))
    gamma, nu, c_h = _equation(cfg, "problem") if kind != "parabolic_interface" else (
        1.0, cfg.get_float("problem.nu", 0.0, check=lambda v: v >= 0, why="nu must be >= 0"),
        cfg.get_float("problem.hamiltonian", 1.0, check=lambda v: v >= 0, why="must be >= 0"))
    source = build_source(cfg, "source", d) if kind == "stationary_semilinear" else 0.0
    controls = []
    if kind == "bellman":
        ids = sorted({k.split(".")[1] for k in cfg.keys_with_prefix("control.")})
        if not ids:
            raise ConfigError("control.<n>.sigma", "bellman problems need at least one control")
        for i in ids:
            p = f"control.{i}"
            sigma = cfg.get_float(f"{p}.sigma", 0.0, check=lambda s: s >= 0, why="must be >= 0")
            drift = cfg.get_floats(f"{p}.drift", None, length=d) if cfg.has(f"{p}.drift") else None
            controls.append(solvers.Control(build_source(cfg, f"{p}.source", d), sigma, drift))
    horizon = cfg.get_float("problem.horizon", 0.0, check=lambda v: v >= 0, why="must be >= 0") \
        if kind == "parabolic_interface" else 0.0
    return _guard("problem.kind", lambda: solvers.ProblemSpec(
        kind, mu, nu, gamma, c_h, source, controls, horizon))


def prepare_solve(cfg, seed):
    mu = build_measure(cfg)
    d = mu.dim
    grid = build_grid(cfg, d)
    problem = _problem(cfg, mu, d)
    delta = _delta(cfg, "solver.delta", solvers.default_delta(grid))
    tol = _tol(cfg, "solver.tol", 1e-10)
    u0 = None
    if problem.kind == "parabolic_interface":
        u0 = build_function(cfg, "initial", d)
        steps = cfg.get_int("solver.steps", None, check=lambda s: s > 0, why="must be > 0")
        dt = cfg.get_float("solver.dt", None, check=lambda v: v > 0, why="must be > 0")
        every = cfg.get_int("solver.snapshot_every", 10, check=lambda s: s > 0, why="must be > 0")
        if steps is None and problem.horizon <= 0:
            raise ConfigError("problem.horizon", "set a positive horizon or solver.steps")
    max_policy = cfg.get_int("solver.max_policy", 50, check=lambda s: s > 0, why="must be > 0")
    max_iter = cfg.get_int("solver.max_iter", 200000, check=lambda s: s > 0, why="must be > 0")

    def run(writer):
        coords = ["x"] if d == 1 else ["x0", "x1"]
        pts = grid.nodes()
        if problem.kind == "parabolic_interface":
            g0 = GridFunction.sample(grid, u0)
            try:
                state = solvers.solve_parabolic(problem, g0, grid, delta, dt, steps,
                                                every=every)
            except CFLViolation as exc:
                raise ConfigError("solver.dt", str(exc)) from None
            rows = [[float(t), *map(float, x), float(v)] for t, s in state.snapshots
                    for x, v in zip(pts, s.flat)]
            writer.csv("snapshots.csv", ["t"] + coords + ["value"], rows)
            writer.json("solve.json", EXIT_OK, {"steps": state.iterations, "dt": state.step,
                                                "delta": delta, "certificate": state.certificate})
            return EXIT_OK
        if problem.kind == "bellman":
            state = solvers.solve_bellman(problem, grid, delta, tol, max_policy, max_iter)
            writer.csv("policy.csv", coords + ["control"],
                       [[*map(float, x), int(a)] for x, a in zip(pts, state.policy)])
        else:
            state = solvers.solve_stationary(problem, grid, delta, tol, max_iter=max_iter)
        writer.csv("solution.csv", coords + ["value"],
                   [[*map(float, x), float(v)] for x, v in zip(pts, state.u.flat)])
        writer.csv("residuals.csv", ["iteration", "residual"],
                   [[i, float(r)] for i, r in enumerate(state.residual_history)])
        writer.json("solve.json", EXIT_OK, {"iterations": state.iterations, "delta": delta,
                                            "step": state.step, "certificate": state.certificate,
                                            "final_residual": state.residual_history[-1]})
        return EXIT_OK
    return run


def prepare_compare(cfg, seed):
    mu = build_measure(cfg)
    d = mu.dim
    grid = build_grid(cfg, d)
    problem = _problem(cfg, mu, d)
    if problem.kind == "bellman":
        cfg.fail("problem.kind", "compare supports parabolic_interface and stationary_semilinear")
    delta = _delta(cfg, "solver.delta", solvers.default_delta(grid))
    tol = _tol(cfg, "solver.tol", 1e-10)
    steps = cfg.get_int("solver.steps", 50, check=lambda s: s > 0, why="must be > 0")
    identical = cfg.get_bool("compare.identical", False)
    count = cfg.get_int("compare.pairs", 10, check=lambda c: c > 0, why="must be > 0")
    noise = cfg.get_float("compare.noise", 0.2, check=lambda v: v >= 0, why="must be >= 0")
    amp = cfg.get_float("compare.amplitude", 1.0)
    if identical:
        base = build_function(cfg, "initial", d, default_form="cosine")
    elif seed is None:
        raise ConfigError("--seed", "random pair sweeps need an explicit seed")

    def run(writer):
        if identical:
            g = GridFunction.sample(grid, base)
            pairs = [(g, g)] * count
        else:
            pairs = solvers.random_ordered_pairs(grid, count, seed, amp, noise)
        rows, violations = [], []
        for i, pair in enumerate(pairs):
            rep = solvers.discrete_comparison_test(problem, [pair], grid, delta, steps, tol)
            rows.append([i, float(rep.max_violation), int(bool(rep.violations))])
            violations += [dict(v, pair=i) for v in rep.violations]
        code = EXIT_FAIL if violations else EXIT_OK
        writer.csv("compare.csv", ["pair", "max_gap", "violated"], rows)
        writer.json("compare.json", code, {"pairs": count, "violations": violations,
                                           "max_gap": max(r[1] for r in rows),
                                           "threshold": rep.threshold})
        return code
    return run


def prepare_stability(cfg, seed):
    mu = build_measure(cfg)
    d = mu.dim
    grid = build_grid(cfg, d)
    gamma, _, c_h = _equation(cfg, "problem")
    source = build_source(cfg, "source", d)
    eps = cfg.get_floats("stability.eps", "0.1,0.05,0.025,0.0125")
    if any(e <= 0 for e in eps):
        cfg.fail("stability.eps", "eps values must be positive")
    delta = _delta(cfg, "verify.delta", 2.0 * grid.h)
    tol = _tol(cfg, "verify.tol", 1e-6)
    solve_tol = _tol(cfg, "solver.tol", 1e-9)
    curv, stride, smooth = _bank_options(cfg)

    def run(writer):
        family = viscosity.vanishing_viscosity_family(mu, grid, eps, gamma, c_h, source, solve_tol)
        F = viscosity.Nonlinearity.stationary(gamma, 0.0, c_h, source)
        limit, relaxed = viscosity.relaxed_limit(family, "upper", full_output=True)
        bank = viscosity.build_probe_bank(limit, "max", curv, delta, smooth, stride)
        report = viscosity.verify_subsolution(limit, F, mu, None, delta, bank, tol)
        code = EXIT_OK if report.passed else EXIT_FAIL
        coords = ["x"] if d == 1 else ["x0", "x1"]
        writer.csv("relaxed_limit.csv", coords + ["value"],
                   [[*map(float, x), float(v)] for x, v in zip(grid.nodes(), limit.flat)])
        writer.json("stability.json", code, {"relaxed_limit": relaxed,
                                             "verification": report.to_dict()})
        return code
    return run


def prepare_quadrature_report(cfg, seed):
    mu = build_measure(cfg)
    delta = _delta(cfg, "operator.delta", 1.0)
    tol = _tol(cfg, "operator.tol", 1e-6)

    def run(writer):
        rule = build_quadrature(mu, delta, tol)
        result = {"rule": rule.summary()}
        if mu.kind != "bounded_table":
            rep = verify_levy_condition(mu)
            result["levy_condition"] = {k: getattr(rep, k) for k in rep.__dataclass_fields__}
        writer.json("quadrature_report.json", EXIT_OK, result)
        return EXIT_OK
    return run


PREPARE = {"eval-op": prepare_eval_op, "verify": prepare_verify, "stability": prepare_stability,
           "solve": prepare_solve, "compare": prepare_compare,
           "quadrature-report": prepare_quadrature_report}


def run(subcommand, cfg, seed=None, out_dir="."):
    """Validate ``cfg`` for ``subcommand``, execute it and return the exit status."""
    declared = cfg.get_str("subcommand", subcommand, choices=SUBCOMMANDS)
    if declared != subcommand:
        cfg.fail("subcommand", f"config is for {declared!r}, invoked as {subcommand!r}")
    if seed is not None:
        cfg.resolved["seed"] = seed
    job = PREPARE[subcommand](cfg, seed)
    cfg.check_consumed()
    writer = Writer(out_dir, cfg.provenance(), subcommand)
    try:
        return job(writer)
    except NonConvergence as exc:
        writer.json(f"{subcommand.replace('-', '_')}.json", EXIT_NONCONV,
                    {"error": str(exc), "history": exc.history[-20:]})
        print(f"levyscope: non-convergence: {exc}", file=sys.stderr)
        return EXIT_NONCONV


def main(argv=None):
    parser = argparse.ArgumentParser(prog="levyscope", description=__doc__.splitlines()[0])
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--config", required=True, help="flat key = value config file")
    parser.add_argument("--seed", type=int, default=None, help="seed for random sweeps")
    parser.add_argument("--out", default=".", help="output directory (default: .)")
    args = parser.parse_args(argv)
    try:
        cfg = Config.from_path(args.config)
        return run(args.subcommand, cfg, args.seed, args.out)
    except ConfigError as exc:
        print(f"levyscope: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except LevyscopeError as exc:
        print(f"levyscope: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
