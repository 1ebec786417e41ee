"""Batch front-end for the solvers.

Subcommands: ``spsa`` and ``saa`` run the drivers and leave a trace
CSV, a verdict report, and a final-point JSON in the output directory;
``feasibility-scan`` writes a grid CSV of smoothed row values for 1-D
and 2-D problems; ``verify-point`` classifies a supplied point;
``selftest`` runs the bundled quick checks.

Exit codes: 0 success, 2 configuration or problem-file error, 3 invalid
schedule, 4 solver failure, 5 selftest failure.  The default output
directory comes from ``ACCSP_OUT_DIR`` (falling back to the working
directory).  Identical configurations and seeds produce byte-identical
CSV artifacts.
"""

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .algorithms import (
    EmpiricalRows,
    check_stationarity,
    cone_constraints_from_rows,
    format_verdict,
    objective_mean_dd,
    saa_penalty_solve,
    spsa_run,
    write_trace,
)
from .approx import ThetaPair, phi_lb, phi_ub
from .model import AccProblem
from .oracles import (
    hinge1d_row_rlx,
    hinge1d_row_rst,
    sign_bernoulli_row,
)
from .problems import (
    ProblemFormatError,
    bundled,
    bundled_text,
    build,
    dumps_problem,
    load_problem,
    registry_names,
)
from .sampling import (
    Rule,
    SampleStore,
    Schedule,
    reference_schedule,
    validate_schedule,
)
from .subsolver import build_program

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SCHEDULE = 3
EXIT_SOLVER = 4
EXIT_SELFTEST = 5

OUT_DIR_ENV = "ACCSP_OUT_DIR"


@dataclass
class RunConfig:
    """One batch run; field names match the CLI flags."""

    mode: str
    problem: str = ""
    variant: str = "rst"
    theta: str = "identity"
    schedule: str = "reference"
    nu_max: int = 8
    n: int = 4000
    gamma: float = None
    lam: float = None
    rho: float = 1.0
    seed: int = 0
    start: str = None
    x: str = None
    check_mode: str = "B"
    policy: str = None
    grid: int = 401
    estimator: str = "auto"
    out_dir: str = None
    strict: bool = False
    workers: int = None


class _CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def _resolve_problem(config):
    spec = config.problem
    if not spec:
        raise _CliError("no problem given", EXIT_CONFIG)
    try:
        if os.path.exists(spec):
            return load_problem(spec, strict=config.strict)
        if spec in registry_names():
            return bundled(spec, strict=config.strict)
    except ProblemFormatError as exc:
        raise _CliError("{}: {}".format(spec, exc), EXIT_CONFIG) from None
    except OSError as exc:
        raise _CliError(str(exc), EXIT_CONFIG) from None
    raise _CliError(
        "unknown problem {!r}; bundled names: {}".format(
            spec, ", ".join(registry_names())), EXIT_CONFIG)


def _parse_theta(spec):
    if spec is None or spec == "identity":
        return ThetaPair()
    if spec.lstrip().startswith("{"):
        try:
            raw = json.loads(spec)
            kwargs = {}
            for side in ("cvx", "cve"):
                if side in raw:
                    val = raw[side]
                    kwargs[side] = (val if isinstance(val, str)
                                    else (val[0], dict(val[1])))
            return ThetaPair(**kwargs)
        except (ValueError, TypeError, IndexError, KeyError) as exc:
            raise _CliError("bad theta spec: {}".format(exc), EXIT_CONFIG)
    raise _CliError(
        "theta must be 'identity' or a JSON object", EXIT_CONFIG)


def _parse_point(text, what):
    try:
        vals = [float(tok) for tok in text.split(",") if tok.strip() != ""]
    except ValueError:
        raise _CliError("bad {} {!r}".format(what, text), EXIT_CONFIG)
    if not vals:
        raise _CliError("empty {}".format(what), EXIT_CONFIG)
    return np.array(vals)


def _rule_from_dict(raw, where):
    try:
        return Rule(raw["family"], dict(raw.get("params", {})),
                    ceil=bool(raw.get("ceil", False)))
    except (KeyError, TypeError, ValueError) as exc:
        raise _CliError("{}: {}".format(where, exc), EXIT_SCHEDULE)


def _schedule_from_file(path):
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise _CliError(str(exc), EXIT_SCHEDULE)
    except json.JSONDecodeError as exc:
        raise _CliError("{}: line {}: {}".format(path, exc.lineno, exc.msg),
                        EXIT_SCHEDULE)
    try:
        consts = dict(raw["constants"])
        return Schedule(
            _rule_from_dict(raw["n_rule"], "n_rule"),
            _rule_from_dict(raw["lambda_rule"], "lambda_rule"),
            _rule_from_dict(raw["rho_rule"], "rho_rule"),
            _rule_from_dict(raw["gamma_rule"], "gamma_rule"),
            beta=float(consts["beta"]), c1=float(consts["c1"]),
            c2=float(consts["c2"]), c3=float(consts["c3"]),
            c4=float(consts["c4"]), delta=float(consts["delta"]),
            alpha1=float(consts["alpha1"]), alpha2=float(consts["alpha2"]),
            nu_bar=int(consts["nu_bar"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise _CliError("{}: bad schedule: {}".format(path, exc),
                        EXIT_SCHEDULE)


def _with_fixed_gamma(s, gamma):
    return Schedule(
        s.n_rule, s.lambda_rule, s.rho_rule,
        Rule("constant", {"value": gamma}),
        beta=s.beta, c1=s.c1, c2=s.c2, c3=s.c3,
        c4=min(s.c4, gamma), delta=s.delta,
        alpha1=s.alpha1, alpha2=s.alpha2, nu_bar=s.nu_bar)


def _resolve_schedule(config):
    if config.schedule == "reference":
        schedule = reference_schedule()
    else:
        schedule = _schedule_from_file(config.schedule)
    if config.gamma is not None:
        if config.gamma <= 0:
            raise _CliError("fixed gamma must be positive", EXIT_SCHEDULE)
        schedule = _with_fixed_gamma(schedule, config.gamma)
    report = validate_schedule(
        schedule, nu_max=max(config.nu_max, schedule.nu_bar + 1))
    if not report["ok"]:
        lines = ["schedule invalid:"]
        for v in report["violations"]:
            lines.append("  [{}] nu={}: {}".format(
                v["tag"], v["nu"], v["detail"]))
        raise _CliError("\n".join(lines), EXIT_SCHEDULE)
    return schedule


def _out_dir(config):
    out = config.out_dir or os.environ.get(OUT_DIR_ENV) or "."
    os.makedirs(out, exist_ok=True)
    return out


def _prefix(config, problem):
    name = problem.name or "problem"
    return "{}-{}-seed{}".format(name, config.mode, config.seed)


def _write_text(path, text):
    with open(path, "w", newline="") as fh:
        fh.write(text)


def _final_json(path, payload):
    _write_text(path, json.dumps(payload, sort_keys=True, indent=2,
                                 allow_nan=False) + "\n")


def _fmt(val):
    return format(float(val), ".17g")


def _run_spsa(config):
    problem = _resolve_problem(config)
    theta = _parse_theta(config.theta)
    schedule = _resolve_schedule(config)
    start = None if config.start is None else _parse_point(config.start,
                                                           "start")
    out = _out_dir(config)
    prefix = _prefix(config, problem)
    trace = os.path.join(out, prefix + "-trace.csv")
    try:
        res = spsa_run(problem, schedule, config.nu_max,
                       variant=config.variant, theta=theta,
                       policy=config.policy or "auto", start=start,
                       seed=config.seed, trace_path=trace)
    except ValueError as exc:
        raise _CliError(str(exc), EXIT_CONFIG)
    except RuntimeError as exc:
        raise _CliError("solver failure: {}".format(exc), EXIT_SOLVER)
    head = [
        "problem: {}".format(problem.name),
        "mode: spsa ({} variant, {} policy)".format(res.variant, res.policy),
        "iterations: {} ({})".format(len(res.state.history), res.stop_reason),
        "final point: [{}]".format(", ".join(_fmt(v) for v in res.x)),
        "",
    ]
    _write_text(os.path.join(out, prefix + "-verdict.txt"),
                "\n".join(head) + format_verdict(res.verdicts) + "\n")
    _final_json(os.path.join(out, prefix + "-final.json"), {
        "mode": "spsa", "problem": problem.name, "seed": config.seed,
        "variant": config.variant, "iterations": len(res.state.history),
        "stop_reason": res.stop_reason, "x": [float(v) for v in res.x],
        "value": res.state.history[-1]["V"],
        "residual": res.verdicts["residual"]["total"],
        "stationarity": res.verdicts["stationarity"].kind})
    print("spsa: {} iterations ({}), final x = [{}]".format(
        len(res.state.history), res.stop_reason,
        ", ".join(_fmt(v) for v in res.x)))
    print("artifacts in {}: {}-trace.csv, -verdict.txt, -final.json".format(
        out, prefix))
    return EXIT_OK


def _run_saa(config):
    problem = _resolve_problem(config)
    theta = _parse_theta(config.theta)
    if config.gamma is None or config.lam is None:
        raise _CliError("saa needs --gamma and --lam", EXIT_CONFIG)
    start = None if config.start is None else _parse_point(config.start,
                                                           "start")
    out = _out_dir(config)
    prefix = _prefix(config, problem)
    try:
        res = saa_penalty_solve(problem, config.n, config.gamma, config.lam,
                                variant=config.variant, theta=theta,
                                start=start, seed=config.seed, rho=config.rho,
                                policy=config.policy or "subgradient")
    except ValueError as exc:
        raise _CliError(str(exc), EXIT_CONFIG)
    except RuntimeError as exc:
        raise _CliError("solver failure: {}".format(exc), EXIT_SOLVER)
    write_trace(res.history, os.path.join(out, prefix + "-trace.csv"))
    lines = [
        "problem: {}".format(problem.name),
        "mode: saa ({} variant, N={}, gamma={}, lam={})".format(
            config.variant, res.n_samples, _fmt(res.gamma), _fmt(res.lam)),
        "iterations: {} ({})".format(
            res.iterations, "converged" if res.converged else "max-outer"),
        "final point: [{}]".format(", ".join(_fmt(v) for v in res.x)),
        "penalized value: {}".format(_fmt(res.value)),
        "objective mean: {}".format(_fmt(res.objective_value)),
        "penalty residual: {}".format(_fmt(res.residual)),
        "",
        "stationarity: {} (mode {}, tol {})".format(
            res.verdict.kind, res.verdict.mode, res.verdict.tolerance),
        "  regime: {}".format(res.verdict.regime),
    ]
    _write_text(os.path.join(out, prefix + "-verdict.txt"),
                "\n".join(lines) + "\n")
    _final_json(os.path.join(out, prefix + "-final.json"), {
        "mode": "saa", "problem": problem.name, "seed": config.seed,
        "variant": config.variant, "n": res.n_samples,
        "gamma": res.gamma, "lam": res.lam,
        "iterations": res.iterations, "converged": res.converged,
        "x": [float(v) for v in res.x], "value": res.value,
        "residual": res.residual, "stationarity": res.verdict.kind})
    print("saa: {} iterations, final x = [{}], residual {}".format(
        res.iterations, ", ".join(_fmt(v) for v in res.x),
        _fmt(res.residual)))
    print("artifacts in {}: {}-trace.csv, -verdict.txt, -final.json".format(
        out, prefix))
    return EXIT_OK


_ORACLE_ROWS = {
    "hinge1d": lambda x, gamma, variant: (
        hinge1d_row_rst(x[0], gamma) if variant == "rst"
        else hinge1d_row_rlx(x[0], gamma)),
    "hinge1d-relaxed": lambda x, gamma, variant: (
        hinge1d_row_rst(x[0], gamma) if variant == "rst"
        else hinge1d_row_rlx(x[0], gamma)),
}


def _scan_grid(problem, grid):
    lo, hi = problem.domain.bounding_box()
    axes = [np.linspace(lo[d], hi[d], grid) for d in range(problem.domain.n)]
    if len(axes) == 1:
        return axes[0][:, None]
    g0, g1 = np.meshgrid(axes[0], axes[1], indexing="ij")
    return np.column_stack([g0.ravel(), g1.ravel()])


def _run_scan(config):
    problem = _resolve_problem(config)
    if problem.domain.n > 2:
        raise _CliError("feasibility-scan supports 1-D and 2-D problems",
                        EXIT_CONFIG)
    if config.gamma is None or config.gamma <= 0:
        raise _CliError("feasibility-scan needs --gamma > 0", EXIT_CONFIG)
    if config.grid < 2:
        raise _CliError("grid must have at least 2 points", EXIT_CONFIG)
    variants = (["rst", "rlx"] if config.variant == "both"
                else [config.variant])
    gamma = config.gamma
    oracle = _ORACLE_ROWS.get(problem.name)
    use_oracle = config.estimator == "oracle" or (
        config.estimator == "auto" and oracle is not None)
    if use_oracle and oracle is None:
        raise _CliError(
            "no exact oracle for problem {!r}".format(problem.name),
            EXIT_CONFIG)
    pts = _scan_grid(problem, config.grid)
    if use_oracle:
        def values_for(chunk):
            return [[oracle(x, gamma, var) for var in variants]
                    for x in chunk]
    else:
        Z = SampleStore(problem.source, config.seed).extend_to(config.n)
        rows_by = {var: EmpiricalRows(problem, Z, gamma, var)
                   for var in variants}

        def values_for(chunk):
            return [[rows_by[var].row_values(x).tolist() for var in variants]
                    for x in chunk]

    workers = config.workers or os.cpu_count() or 1
    chunks = np.array_split(pts, min(workers, len(pts)))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(values_for, chunks))
    out = _out_dir(config)
    name = problem.name or "problem"
    path = os.path.join(out, "{}-scan-gamma{}.csv".format(
        name, format(gamma, "g")))
    k_rows = problem.zeta.size if not use_oracle else 1
    header = ["x{}".format(d) for d in range(pts.shape[1])]
    for var in variants:
        header.extend("{}{}".format(var, k) for k in range(k_rows))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for chunk, vals in zip(chunks, results):
            for x, per_var in zip(chunk, vals):
                row = [_fmt(v) for v in x]
                for entry in per_var:
                    if use_oracle:
                        row.append(_fmt(entry))
                    else:
                        row.extend(_fmt(v) for v in entry)
                writer.writerow(row)
    print("scan: {} points x {} variants -> {}".format(
        len(pts), len(variants), path))
    return EXIT_OK


def _run_verify(config):
    problem = _resolve_problem(config)
    if config.x is None:
        raise _CliError("verify-point needs --x", EXIT_CONFIG)
    if config.gamma is None or config.gamma <= 0:
        raise _CliError("verify-point needs --gamma > 0", EXIT_CONFIG)
    x = _parse_point(config.x, "point")
    theta = _parse_theta(config.theta)
    Z = SampleStore(problem.source, config.seed).extend_to(config.n)
    rows = EmpiricalRows(problem, Z, config.gamma, config.variant, theta)

    def f0(v):
        return objective_mean_dd(problem, x, Z, v)

    try:
        verdict = check_stationarity(
            f0, problem.domain, x, mode=config.check_mode,
            constraints=cone_constraints_from_rows(rows, x),
            seed=config.seed)
    except ValueError as exc:
        raise _CliError(str(exc), EXIT_CONFIG)
    print("point: [{}]".format(", ".join(_fmt(v) for v in x)))
    print("verdict: {} (mode {}, tol {})".format(
        verdict.kind, verdict.mode, verdict.tolerance))
    print("regime: {}".format(verdict.regime))
    if verdict.witness is not None:
        print("worst direction: [{}] with derivative {}".format(
            ", ".join(_fmt(v) for v in verdict.witness),
            _fmt(verdict.witness_dd)))
    if verdict.conservative:
        print("note: conservative surrogate for the Clarke test")
    return EXIT_OK


# ---------------------------------------------------------------------------
# selftest


def _check_round_trip():
    from .problems import loads_problem, problems_equal
    for name in registry_names():
        text = bundled_text(name)
        prob = loads_problem(text)
        assert dumps_problem(prob) == text, name
        assert problems_equal(prob, build(name)), name


def _check_sandwich():
    rng = np.random.default_rng(0)
    for _ in range(400):
        t = rng.uniform(-3, 3, 64)
        g2 = float(rng.uniform(1e-3, 2.0))
        g1 = g2 + float(rng.uniform(0.0, 1.0))
        lb1, lb2 = phi_lb(t, g1), phi_lb(t, g2)
        ub1, ub2 = phi_ub(t, g1), phi_ub(t, g2)
        open_ind = (t > 0).astype(float)
        closed_ind = (t >= 0).astype(float)
        assert np.all(lb1 <= open_ind) and np.all(lb2 <= open_ind)
        assert np.all(closed_ind <= ub1) and np.all(closed_ind <= ub2)
        assert np.all(ub2 <= ub1) and np.all(lb1 <= lb2)


def _check_row_oracles():
    assert abs(hinge1d_row_rst(0.3, 0.2) - 0.25) < 1e-15
    assert abs(hinge1d_row_rst(0.1, 0.2) - 0.15) < 1e-15
    assert abs(hinge1d_row_rlx(0.1, 0.2) - 0.05) < 1e-15
    assert sign_bernoulli_row(0.0, 1.0, "rst") == 1.0
    assert sign_bernoulli_row(0.0, 1.0, "rlx") == 0.0


def _check_sampling():
    src = build("hinge1d").source
    one = SampleStore(src, 7)
    two = SampleStore(src, 7)
    for store in (one, two):
        store.extend_to(40)
        store.extend_to(100)
    assert np.array_equal(one.samples, two.samples)
    other = SampleStore(src, 8)
    other.extend_to(40)
    assert not np.array_equal(one.samples[:40], other.samples)


def _check_surrogate_touch():
    problem = build("hinge1d")
    Z = SampleStore(problem.source, 1).extend_to(25)
    for xbar in (np.array([0.55]), np.array([0.1])):
        prog = build_program(problem, xbar, Z, 0.2, 2.0, 1.0)
        assert abs(prog.value(xbar) - prog.true_value(xbar)) < 1e-10


def _check_penalty_fixed_point():
    problem = build("ramp-threshold")
    res = saa_penalty_solve(problem, 200, 0.2, 2.0, start=[0.8], seed=0)
    assert res.converged and res.residual <= 1e-3


_SELFTEST = [
    ("problem files round-trip", _check_round_trip),
    ("indicator sandwich and gamma monotonicity", _check_sandwich),
    ("closed-form row oracles", _check_row_oracles),
    ("sample store determinism and nesting", _check_sampling),
    ("surrogate touch at the reference", _check_surrogate_touch),
    ("penalty solve reaches feasibility", _check_penalty_fixed_point),
]


def _run_selftest(config):
    failures = 0
    for label, fn in _SELFTEST:
        try:
            fn()
        except Exception as exc:   # report every failure, keep going
            failures += 1
            print("FAIL - {}: {}".format(label, exc))
        else:
            print("ok - {}".format(label))
    if failures:
        print("{} of {} checks failed".format(failures, len(_SELFTEST)))
        return EXIT_SELFTEST
    print("all {} checks passed".format(len(_SELFTEST)))
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def _add_common(sub, problem=True):
    if problem:
        sub.add_argument("--problem", required=True,
                         help="bundled name or path to a problem JSON file")
    sub.add_argument("--variant", default="rst", choices=["rst", "rlx"])
    sub.add_argument("--theta", default="identity",
                     help="'identity' or a JSON object with cvx/cve entries")
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--out", dest="out_dir", default=None,
                     help="output directory (default ${} or .)".format(
                         OUT_DIR_ENV))
    sub.add_argument("--strict", action="store_true",
                     help="treat problem audit warnings as errors")
    sub.add_argument("--workers", type=int, default=None,
                     help="worker pool size (default: machine parallelism); "
                          "results do not depend on it")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="accsp",
        description="Batch solvers for affine chance constrained programs")
    subs = parser.add_subparsers(dest="mode", required=True)

    sp = subs.add_parser("spsa", help="sequential sampling run")
    _add_common(sp)
    sp.add_argument("--nu-max", type=int, default=8)
    sp.add_argument("--schedule", default="reference",
                    help="'reference' or a schedule JSON file")
    sp.add_argument("--gamma", type=float, default=None,
                    help="pin the smoothing level to this constant")
    sp.add_argument("--policy", default=None,
                    choices=["auto", "subgradient", "single", "eps-argmax",
                             "full"])
    sp.add_argument("--start", default=None, help="comma separated point")

    sa = subs.add_parser("saa", help="fixed-sample penalty solve")
    _add_common(sa)
    sa.add_argument("--n", type=int, default=4000)
    sa.add_argument("--gamma", type=float, default=None, required=True)
    sa.add_argument("--lam", type=float, default=None, required=True)
    sa.add_argument("--rho", type=float, default=1.0)
    sa.add_argument("--policy", default=None,
                    choices=["subgradient", "single", "eps-argmax", "full"])
    sa.add_argument("--start", default=None, help="comma separated point")

    sc = subs.add_parser("feasibility-scan",
                         help="grid CSV of smoothed row values")
    _add_common(sc)
    sc.add_argument("--gamma", type=float, default=None, required=True)
    sc.add_argument("--grid", type=int, default=401)
    sc.add_argument("--n", type=int, default=4000,
                    help="sample count for the empirical estimator")
    sc.add_argument("--estimator", default="auto",
                    choices=["auto", "oracle", "empirical"])
    sc.set_defaults(variant="both")
    sc.add_argument("--both", dest="variant", action="store_const",
                    const="both", help=argparse.SUPPRESS)

    vp = subs.add_parser("verify-point", help="classify a supplied point")
    _add_common(vp)
    vp.add_argument("--x", required=True, help="comma separated point")
    vp.add_argument("--gamma", type=float, default=None, required=True)
    vp.add_argument("--n", type=int, default=4000)
    vp.add_argument("--mode", dest="check_mode", default="B",
                    choices=["d", "B", "weak-C"])

    st = subs.add_parser("selftest", help="run the bundled quick checks")
    _add_common(st, problem=False)
    return parser


_RUNNERS = {
    "spsa": _run_spsa,
    "saa": _run_saa,
    "feasibility-scan": _run_scan,
    "verify-point": _run_verify,
    "selftest": _run_selftest,
}


def run(config):
    """Execute one RunConfig; returns the process exit code."""
    runner = _RUNNERS.get(config.mode)
    if runner is None:
        print("error: unknown mode {!r}".format(config.mode),
              file=sys.stderr)
        return EXIT_CONFIG
    try:
        return runner(config)
    except _CliError as exc:
        print("error: {}".format(exc), file=sys.stderr)
        return exc.code


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else 0
    fields = {f for f in RunConfig.__dataclass_fields__}
    config = RunConfig(**{k: v for k, v in vars(args).items()
                          if k in fields})
    # the scan subcommand overloads --variant with 'both'
    if config.mode == "feasibility-scan" and config.variant not in (
            "rst", "rlx", "both"):
        config.variant = "both"
    return run(config)


if __name__ == "__main__":
    sys.exit(main())
