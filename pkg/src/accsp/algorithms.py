"""Solution drivers and stationarity verification.

``saa_penalty_solve`` fixes one sample batch and drives the penalized
empirical objective to a directionally stationary point by repeated
convexification.  ``spsa_run`` interleaves sample growth, penalty tightening
and surrogate minimization along a validated schedule, asserting the exact
per-iteration descent inequality.  ``check_stationarity`` searches tangent
and linearization cones for descent directions, ``residual_dd``
differentiates the penalty hinge sum, and ``convexlike_localmin_test``
probes the local-minimum inequality around a candidate point.
"""

import csv
import itertools
import warnings
from collections import namedtuple
from dataclasses import dataclass, field, replace

import numpy as np

from .approx import IDENTITY_PAIR, as_gamma, c_row_rlx, c_row_rst
from .model import eval_dc
from .qp import solve_qp
from .sampling import SampleStore, empirical_mean, validate_schedule
from .subsolver import BRANCH_CAP, build_program, solve_surrogate_global
from .surrogate import _phi_dd, build_surrogate_objective, true_row_dd

_FEAS_TOL = 1e-7
_ACT_TOL = 1e-12


# ---------------------------------------------------------------------------
# vectorized directional derivatives


def _slope_batch(piece, x, Z, v):
    """grad(x, z) @ v for every sample row; affine or table map in z."""
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    if piece.a_table is not None:
        idx = np.rint(Z[:, 0]).astype(int)
        out = piece.a_table[idx] @ v
    else:
        out = np.full(Z.shape[0], float(piece.a @ v))
        if piece.a_z is not None:
            out = out + Z[:, : piece.a_z.shape[1]] @ (piece.a_z.T @ v)
    if piece.Q is not None:
        out = out + float((piece.Q @ np.asarray(x, dtype=float)) @ v)
    return out


def _side_dd_batch(pieces, x, Z, v):
    vals = np.stack([p.value_batch(x, Z) for p in pieces])
    m = vals.max(axis=0)
    # same absolute activity tolerance as the scalar evaluation path
    act = vals >= m - _ACT_TOL
    slopes = np.stack([_slope_batch(p, x, Z, v) for p in pieces])
    return np.where(act, slopes, -np.inf).max(axis=0)


def dc_dd_batch(f, x, Z, v):
    """Per-sample one-sided directional derivatives of a DcMaxFunction.

    Returns a length-N vector of Z'((x, z_s); v), the max of active-piece
    slopes on the g side minus the same max on the h side.
    """
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    return _side_dd_batch(f.g_pieces, x, Z, v) - _side_dd_batch(f.h_pieces, x, Z, v)


def objective_mean_dd(problem, x, Z, v):
    """Directional derivative of the empirical objective mean."""
    return float(empirical_mean(dc_dd_batch(problem.objective, x, Z, v)))


def _ramp_dd_identity(t0, w, gamma, which):
    """Vectorized one-sided ramp derivative for identity generators."""
    u = 1.0 + t0 / gamma if which == "ub" else t0 / gamma
    du = w / gamma
    out = np.where((u > 0.0) & (u < 1.0), du, 0.0)
    out = np.where(u == 0.0, np.maximum(du, 0.0), out)
    out = np.where(u == 1.0, np.minimum(du, 0.0), out)
    return out


# ---------------------------------------------------------------------------
# empirical rows


class EmpiricalRows:
    """Empirical means of the smoothed probability rows over one batch.

    Wraps a problem, a fixed sample block and a smoothing level; evaluates
    row means, the penalty residual and exact or Clarke-upper directional
    derivatives of the row means.

    Parameters
    ----------
    problem : AccProblem
    samples : array_like, shape (N, nz)
    gamma : float
        Smoothing level; 0 gives Heaviside rows (values only, no dd).
    variant : {"rst", "rlx"}
    theta : ThetaPair, optional
    """

    def __init__(self, problem, samples, gamma, variant="rst", theta=None):
        if variant not in ("rst", "rlx"):
            raise ValueError("variant must be 'rst' or 'rlx', got {!r}".format(variant))
        self.problem = problem
        self.samples = np.atleast_2d(np.asarray(samples, dtype=float))
        if self.samples.shape[0] == 0:
            raise ValueError("empty sample block")
        self.gamma = as_gamma(gamma)
        self.variant = variant
        self.theta = IDENTITY_PAIR if theta is None else theta

    @property
    def thresholds(self):
        return self.problem.zeta

    @property
    def n_samples(self):
        return self.samples.shape[0]

    def functional_values(self, x):
        """(N, L) block of dc functional values at x."""
        cols = [f.value_batch(x, self.samples) for f in self.problem.functionals]
        return np.column_stack(cols)

    def row_values(self, x):
        """Length-K vector of empirical row means."""
        T = self.functional_values(x)
        rower = c_row_rst if self.variant == "rst" else c_row_rlx
        return np.array([
            float(empirical_mean(rower(T, self.problem.E[k], self.gamma, self.theta)))
            for k in range(self.problem.K)])

    def objective_mean(self, x):
        return float(empirical_mean(self.problem.objective.value_batch(x, self.samples)))

    def residual_parts(self, x):
        return np.maximum(self.row_values(x) - self.problem.zeta, 0.0)

    def residual(self, x):
        """Hinge penalty sum over rows."""
        return float(np.sum(self.residual_parts(x)))

    def penalized_value(self, x, lam):
        """Empirical objective mean plus lam times the hinge residual."""
        return self.objective_mean(x) + float(lam) * self.residual(x)

    def _identity_theta(self):
        return self.theta.cvx.kind == "identity" and self.theta.cve.kind == "identity"

    def row_dd(self, k, x, v):
        """Exact directional derivative of the mean of row k."""
        if self.gamma == 0.0:
            raise ValueError("directional derivative needs gamma > 0")
        if not self._identity_theta():
            vals = [true_row_dd(self.problem, k, x, z, self.gamma, self.variant,
                                v, self.theta) for z in self.samples]
            return float(empirical_mean(np.array(vals)))
        ep = self.problem.E_pos[k]
        em = self.problem.E_neg[k]
        total = np.zeros(self.n_samples)
        for l, f in enumerate(self.problem.functionals):
            if ep[l] == 0.0 and em[l] == 0.0:
                continue
            t0 = f.value_batch(x, self.samples)
            w = dc_dd_batch(f, x, self.samples, v)
            up = _ramp_dd_identity(t0, w, self.gamma, "ub")
            lo = _ramp_dd_identity(t0, w, self.gamma, "lb")
            if self.variant == "rst":
                total += ep[l] * up - em[l] * lo
            else:
                total += ep[l] * lo - em[l] * up
        return float(empirical_mean(total))

    def row_clarke_upper(self, k, x, v):
        """Upper bound on the Clarke derivative of the mean of row k.

        Per sample, the ramp slope interval is multiplied against the
        interval of dc derivative bounds [-(g'(x;-v)+h'(x;v)), g'(x;v)+h'(x;-v)]
        and the worst corner is taken; exact when the concave part is smooth.
        """
        if self.gamma == 0.0:
            raise ValueError("Clarke bound needs gamma > 0")
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        ep = self.problem.E_pos[k]
        em = self.problem.E_neg[k]
        total = 0.0
        for z in self.samples:
            for l, f in enumerate(self.problem.functionals):
                if ep[l] == 0.0 and em[l] == 0.0:
                    continue
                rec = eval_dc(f, x, z)
                dgp = max(float(f.g_pieces[i].grad(x, z) @ v) for i in rec.g_argmax)
                dgm = max(float(f.g_pieces[i].grad(x, z) @ -v) for i in rec.g_argmax)
                dhp = max(float(f.h_pieces[j].grad(x, z) @ v) for j in rec.h_argmax)
                dhm = max(float(f.h_pieces[j].grad(x, z) @ -v) for j in rec.h_argmax)
                du = dgp + dhm
                dl = -(dgm + dhp)
                t0 = rec.value
                if self.variant == "rst":
                    pos_gen, pos_which = self.theta.cvx, "ub"
                    neg_gen, neg_which = self.theta.cve, "lb"
                else:
                    pos_gen, pos_which = self.theta.cve, "lb"
                    neg_gen, neg_which = self.theta.cvx, "ub"
                if ep[l] > 0.0:
                    total += ep[l] * _corner_max(t0, self.gamma, pos_gen,
                                                 pos_which, dl, du)
                if em[l] > 0.0:
                    # Clarke dd of a negated term flips the direction
                    total += em[l] * _corner_max(t0, self.gamma, neg_gen,
                                                 neg_which, -du, -dl)
        return total / self.n_samples


def _corner_max(t0, gamma, gen, which, dlo, dhi):
    s_plus = _phi_dd(t0, 1.0, gamma, gen, which)
    s_minus = -_phi_dd(t0, -1.0, gamma, gen, which)
    return max(s * d for s in (s_minus, s_plus) for d in (dlo, dhi))


def residual_dd(rows, x, v, act_tol=1e-9):
    """Directional derivative of the penalty hinge sum at x along v.

    ``rows`` needs row_values, row_dd, row_clarke_upper and thresholds.
    Rows strictly above threshold contribute their dd, rows on the
    threshold (within ``act_tol``, absolute) contribute the positive part,
    slack rows contribute nothing.  Returns the exact value and the
    Clarke-upper aggregation.
    """
    vals = np.asarray(rows.row_values(x), dtype=float)
    zeta = np.asarray(rows.thresholds, dtype=float)
    resid = vals - zeta
    exact = 0.0
    upper = 0.0
    for k in range(resid.size):
        if resid[k] > act_tol:
            exact += rows.row_dd(k, x, v)
            upper += rows.row_clarke_upper(k, x, v)
        elif resid[k] >= -act_tol:
            exact += max(rows.row_dd(k, x, v), 0.0)
            upper += max(rows.row_clarke_upper(k, x, v), 0.0)
    return {"exact": float(exact), "clarke_upper": float(upper)}


# ---------------------------------------------------------------------------
# stationarity checks


ConeConstraint = namedtuple("ConeConstraint", ["resid", "dd"])
ConeConstraint.__doc__ = """Active-set entry for B-mode cone tests.

resid is c_k(x) - zeta_k at the tested point; dd maps a direction to the
exact one-sided derivative c_k'(x; v)."""


@dataclass
class StationarityVerdict:
    """Outcome of a cone search for descent directions.

    ``witness`` is the worst direction examined (unit sup-norm, inside the
    tested cone) and ``witness_dd`` its objective derivative; ``regime``
    records how the cone was explored, so a stationary verdict can be read
    as "no violation found under this search".  ``conservative`` marks
    weak-C verdicts, whose derivatives are upper bounds.
    """

    kind: str
    witness: np.ndarray
    witness_dd: float
    tolerance: float
    regime: str
    mode: str
    conservative: bool = False


def cone_constraints_from_rows(rows, x):
    """ConeConstraint tuple for every empirical row at x."""
    vals = np.asarray(rows.row_values(x), dtype=float)
    zeta = np.asarray(rows.thresholds, dtype=float)
    out = []
    for k in range(vals.size):
        def dd(v, _k=k):
            return rows.row_dd(_k, x, v)
        out.append(ConeConstraint(float(vals[k] - zeta[k]), dd))
    return tuple(out)


def _nullspace_rays(A, n):
    rays = []
    m = A.shape[0]
    for subset in itertools.combinations(range(m), n - 1):
        M = A[list(subset)]
        _, s, Vt = np.linalg.svd(M)
        top = s[0] if s.size else 0.0
        rank = int(np.sum(s > 1e-10 * max(1.0, top)))
        for b in Vt[rank:]:
            rays.append(b)
            rays.append(-b)
    return rays


def _fibonacci_sphere(count):
    i = np.arange(count)
    phi = np.pi * (3.0 - np.sqrt(5.0)) * i
    y = 1.0 - 2.0 * (i + 0.5) / count
    r = np.sqrt(np.maximum(1.0 - y * y, 0.0))
    return np.column_stack([r * np.cos(phi), y, r * np.sin(phi)])


def _cone_directions(A, n, budget, seed):
    """Candidate directions in {v : A v <= 0}, unit sup-norm, deduplicated."""
    cand = []
    eye = np.eye(n)
    for d in range(n):
        cand.append(eye[d])
        cand.append(-eye[d])
    if n == 2:
        ang = np.linspace(0.0, 2.0 * np.pi, 360, endpoint=False)
        cand.extend(np.column_stack([np.cos(ang), np.sin(ang)]))
    elif n == 3:
        cand.extend(_fibonacci_sphere(600))
    if 2 <= n <= 3 and A.shape[0]:
        cand.extend(_nullspace_rays(A, n))
    rng = np.random.default_rng(seed)
    raw = rng.standard_normal((budget, n))
    if A.shape[0] == 0:
        cand.extend(raw)
    else:
        G = np.ascontiguousarray(A)
        h = np.zeros(A.shape[0])
        for v in raw:
            res = solve_qp(eye, -v, G, h)
            if res.status == "optimal" and np.max(np.abs(res.x)) > 1e-9:
                cand.append(res.x)
    out = []
    seen = set()
    for v in cand:
        v = np.asarray(v, dtype=float)
        m = np.max(np.abs(v))
        if m < 1e-12:
            continue
        v = v / m
        if A.shape[0] and np.any(A @ v > 1e-10):
            continue
        key = tuple(np.round(v, 9))
        if key in seen:
            continue
        seen.add(key)
        out.append(v)
    return out


_KIND_BY_MODE = {"d": "d-stationary", "B": "B-stationary", "weak-C": "weak-C"}


def check_stationarity(f0_dd, domain, x, mode="d", constraints=(),
                       direction_budget=200, tol=1e-7, act_tol=1e-9, seed=0):
    """Search the tested cone at x for a descent direction of f0_dd.

    Parameters
    ----------
    f0_dd : callable
        Direction -> one-sided derivative of the objective at x.  In
        weak-C mode pass a Clarke-upper evaluator; verdicts are then
        conservative.
    domain : Polytope
    x : array_like
        Must satisfy the domain and constraint residuals within 1e-7.
    mode : {"d", "B", "weak-C"}
        d and weak-C test the tangent cone of the domain; B additionally
        requires nonpositive derivatives of the constraints active at x
        (``constraints`` entries with \\|resid\\| <= act_tol).
    constraints : sequence of ConeConstraint
    direction_budget : int
        Random directions projected into the cone on top of coordinate
        rays and, for n <= 3, the cone edge rays and a dense angular
        covering.

    Returns
    -------
    StationarityVerdict
        kind "not-stationary" with the witness when some direction has
        derivative below -tol; otherwise the mode's stationary kind, which
        certifies only "no violation found" under the recorded regime.
    """
    if mode not in _KIND_BY_MODE:
        raise ValueError("unknown mode {!r}".format(mode))
    x = np.asarray(x, dtype=float)
    n = x.size
    if not domain.contains(x, _FEAS_TOL):
        raise ValueError("point is outside the domain beyond tolerance 1e-7")
    for c in constraints:
        if c.resid > _FEAS_TOL:
            raise ValueError(
                "constraint residual {:.3e} exceeds the feasibility "
                "tolerance".format(c.resid))
    A = domain.tangent_rows(x, act_tol)
    dirs = _cone_directions(A, n, direction_budget, seed)
    if mode == "B":
        active = [c for c in constraints if abs(c.resid) <= act_tol]
        if active:
            dirs = [v for v in dirs
                    if all(c.dd(v) <= act_tol for c in active)]
    base = "cone-enumeration" if n <= 3 else "direction-search"
    regime = "{}({} directions)".format(base, len(dirs))
    if not dirs:
        return StationarityVerdict(_KIND_BY_MODE[mode], None, 0.0, tol,
                                   regime + "; empty cone", mode,
                                   mode == "weak-C")
    worst = None
    worst_val = np.inf
    for v in dirs:
        val = float(f0_dd(v))
        if val < worst_val:
            worst_val = val
            worst = v
    kind = "not-stationary" if worst_val < -tol else _KIND_BY_MODE[mode]
    return StationarityVerdict(kind, worst, worst_val, tol, regime, mode,
                               mode == "weak-C")


def convexlike_localmin_test(f_value, f_dd, xbar, radii, n_probe=48, seed=0,
                             domain=None, tol=1e-10):
    """Probe f(x) >= f(xbar) + f'(xbar; x - xbar) on shrinking balls.

    Returns a report with the worst violation per radius; all violations
    below ``tol`` supports a local-minimum certificate at a point already
    known to be stationary.
    """
    xbar = np.atleast_1d(np.asarray(xbar, dtype=float))
    n = xbar.size
    rng = np.random.default_rng(seed)
    fx = float(f_value(xbar))
    radii = [float(r) for r in radii]
    if any(r <= 0 for r in radii):
        raise ValueError("radii must be positive")
    viol = []
    counts = []
    for r in radii:
        dirs = rng.standard_normal((n_probe, n))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        scale = rng.uniform(0.1, 1.0, size=n_probe) ** (1.0 / n)
        probes = [xbar + r * s * u for s, u in zip(scale, dirs)]
        for d in range(n):
            e = np.zeros(n)
            e[d] = r
            probes.append(xbar + e)
            probes.append(xbar - e)
        worst = 0.0
        used = 0
        for p in probes:
            if domain is not None and not domain.contains(p, 1e-12):
                continue
            used += 1
            gap = fx + float(f_dd(p - xbar)) - float(f_value(p))
            worst = max(worst, gap)
        viol.append(worst)
        counts.append(used)
    return {"xbar": xbar, "radii": radii, "max_violation": viol,
            "n_probes": counts, "ok": all(v <= tol for v in viol)}


def composite_structure_certified(problem, theta=IDENTITY_PAIR):
    """True when rows factor as PA outer, convex middle, PA inner maps.

    Holds when every max piece of every functional (and the objective) is
    affine and both ramp generators are piecewise affine; rows are then
    convex-like near every point.
    """
    pa_kinds = ("identity", "pa")
    pa = theta.cvx.kind in pa_kinds and theta.cve.kind in pa_kinds
    aff = problem.objective.all_affine and all(
        f.all_affine for f in problem.functionals)
    return bool(pa and aff)


# ---------------------------------------------------------------------------
# shared driver plumbing


def _default_start(domain):
    lo, hi = domain.bounding_box()
    mid = 0.5 * (lo + hi)
    if domain.contains(mid, 1e-12):
        return mid
    G, h = domain.as_inequalities()
    res = solve_qp(np.eye(domain.n), -mid, G, h)
    return res.x


def _start_point(domain, start):
    if start is None:
        return _default_start(domain)
    x = np.atleast_1d(np.asarray(start, dtype=float))
    if not domain.contains(x, 1e-9):
        raise ValueError("start point lies outside the domain")
    return x


def _resolve_strategy(strategy, prog, cap, dense_limit=4096):
    if strategy != "auto":
        return strategy
    return ("enumerate" if prog.total_branches() <= min(cap, dense_limit)
            else "single-branch")


def _solve_iteration(prog, strategy, cap):
    res = solve_surrogate_global(prog, strategy=strategy, cap=cap)
    if res.status != "optimal":
        res = solve_surrogate_global(prog, strategy=strategy, cap=cap)
        if res.status != "optimal":
            raise RuntimeError(
                "surrogate subproblem failed after retry: status {!r}, "
                "kkt residual {:.3e}".format(res.status, res.kkt_residual))
    return res


# ---------------------------------------------------------------------------
# fixed-sample penalty driver


@dataclass
class SaaResult:
    x: np.ndarray
    value: float
    objective_value: float
    residual: float
    row_values: np.ndarray
    iterations: int
    converged: bool
    steps: list
    verdict: StationarityVerdict
    lam: float
    gamma: float
    n_samples: int
    history: list = field(default_factory=list)


def saa_penalty_solve(problem, n_samples, gamma, lam, variant="rst",
                      theta=None, start=None, seed=0, rho=1.0,
                      policy="subgradient", strategy="auto", max_outer=200,
                      step_tol=1e-7, cap=BRANCH_CAP, direction_budget=200,
                      verdict=True):
    """Exact-penalty solve on one fixed sample batch.

    Draws ``n_samples`` realizations once, then repeats surrogate
    minimization with proximal weight ``rho`` from the current point until
    the step norm falls below ``step_tol``.  The returned verdict tests
    directional stationarity of the penalized empirical objective
    c0-mean + lam * hinge over the domain.

    A ``lam`` below the objective's Lipschitz modulus may return an
    infeasible point; the residual field reports the hinge value.
    """
    if lam <= 0:
        raise ValueError("penalty weight must be positive")
    if n_samples < 1:
        raise ValueError("need at least one sample")
    gamma = as_gamma(gamma)
    if gamma == 0.0:
        raise ValueError("surrogation needs gamma > 0")
    theta_p = IDENTITY_PAIR if theta is None else theta
    store = SampleStore(problem.source, seed)
    Z = store.extend_to(n_samples)
    x = _start_point(problem.domain, start)
    rows = EmpiricalRows(problem, Z, gamma, variant, theta_p)
    steps = []
    history = []
    converged = False
    iterations = 0
    for _ in range(max_outer):
        prog = build_program(problem, x, Z, gamma, lam, rho, variant=variant,
                             policy=policy, theta=theta_p, objective=True)
        res = _solve_iteration(prog, _resolve_strategy(strategy, prog, cap), cap)
        step = float(np.linalg.norm(res.x - x))
        steps.append(step)
        x = res.x
        iterations += 1
        history.append({
            "nu": iterations, "N": n_samples, "lam": lam, "rho": rho,
            "gamma": gamma, "x": x.copy(),
            "V": rows.penalized_value(x, lam),
            "resid": np.maximum(rows.row_values(x) - problem.zeta, 0.0),
            "step": step})
        if step <= step_tol:
            converged = True
            break
    verdict_obj = None
    if verdict:
        def f0(v):
            return (objective_mean_dd(problem, x, Z, v)
                    + lam * residual_dd(rows, x, v)["exact"])
        verdict_obj = check_stationarity(f0, problem.domain, x, mode="d",
                                         direction_budget=direction_budget,
                                         seed=seed)
    return SaaResult(x=x, value=rows.penalized_value(x, lam),
                     objective_value=rows.objective_mean(x),
                     residual=rows.residual(x), row_values=rows.row_values(x),
                     iterations=iterations, converged=converged, steps=steps,
                     verdict=verdict_obj, lam=lam, gamma=gamma,
                     n_samples=n_samples, history=history)


# ---------------------------------------------------------------------------
# sequential driver


@dataclass(eq=False)
class SpsaState:
    """Mutable loop state: iteration counter, iterate, samples, records."""

    nu: int
    x: np.ndarray
    store: SampleStore
    schedule: object
    history: list = field(default_factory=list)


@dataclass(eq=False)
class SpsaResult:
    x: np.ndarray
    state: SpsaState
    verdicts: dict
    stop_reason: str
    weighted_step_sums: list
    window_min_decreasing: object
    policy: str
    variant: str


def _window_min_flag(steps, width=10):
    """True when per-window step minima are nonincreasing; None if short."""
    if len(steps) < 2 * width:
        return None
    mins = [min(steps[i:i + width])
            for i in range(0, len(steps) - width + 1, width)]
    return all(b <= a for a, b in zip(mins, mins[1:]))


def spsa_run(problem, schedule, nu_max, variant="rst", theta=None,
             policy="auto", start=None, seed=0, strategy="auto",
             cap=BRANCH_CAP, step_tol=1e-7, small_step_stop=3,
             expectation_oracle=None, comparison_point=None, validate=True,
             direction_budget=200, trace_path=None):
    """Sequential sampling, penalization and surrogation loop.

    Each iteration nu grows the sample store to N_nu, rebuilds the
    surrogate rows at the current iterate with smoothing gamma_nu and
    solves the penalized proximal subproblem with weights (lambda_nu,
    rho_nu).  The descent inequality

        V(x_new) + rho/2 * step^2 <= V(x_old)

    is asserted exactly on the empirical penalized objective every
    iteration, and the weighted partial sums sum (rho/lambda) * step^2 are
    recorded as a summability diagnostic.

    Parameters
    ----------
    policy : {"auto", "subgradient", "eps-argmax", "full", "single"}
        Candidate-index policy for the surrogate rows.  "auto" picks
        "subgradient" for constant smoothing and "full" when gamma
        decreases over the horizon; a decreasing gamma with any other
        explicit policy is overridden to "full" with a warning, since the
        small-smoothing limit is only meaningful for full candidate sets.
    expectation_oracle : callable, optional
        (x, gamma) -> length-K exact row means, used for a feasibility
        report at the final iterate.
    comparison_point : array_like, optional
        Candidate better point; the final report checks its surrogate
        feasibility and surrogate objective against the final iterate.
    validate : bool
        Check the schedule inequalities up to the horizon first; disable
        only for deliberately nonstandard runs such as a zero penalty.

    Returns
    -------
    SpsaResult
        Final iterate, loop state with per-iteration history, verdict
        report, stop reason and diagnostics.
    """
    if nu_max < 1:
        raise ValueError("horizon must be at least 1")
    theta_p = IDENTITY_PAIR if theta is None else theta
    if validate:
        report = validate_schedule(schedule,
                                   nu_max=max(nu_max, schedule.nu_bar + 1))
        if not report["ok"]:
            tags = sorted({v["tag"] for v in report["violations"]})
            raise ValueError(
                "schedule fails validation: {}".format(", ".join(tags)))
    gammas = [schedule.gamma(nu) for nu in range(1, nu_max + 1)]
    diminishing = gammas[-1] < gammas[0] - 1e-12
    if policy == "auto":
        policy = "full" if diminishing else "subgradient"
    elif diminishing and policy != "full":
        warnings.warn("decreasing smoothing requires the full candidate "
                      "policy; overriding {!r}".format(policy))
        policy = "full"
    x = _start_point(problem.domain, start)
    store = SampleStore(problem.source, seed)
    state = SpsaState(nu=0, x=x.copy(), store=store, schedule=schedule)
    weighted = 0.0
    partial_sums = []
    consec = 0
    stop_reason = "horizon"
    for nu in range(1, nu_max + 1):
        N = int(schedule.N(nu))
        lam = float(schedule.lam(nu))
        rho = float(schedule.rho(nu))
        gamma = float(schedule.gamma(nu))
        if N > store.n:
            Z = store.extend_to(N)
        elif N == store.n:
            Z = store.samples
        else:
            raise RuntimeError(
                "sample rule decreased from {} to {} at nu={}".format(
                    store.n, N, nu))
        prog = build_program(problem, x, Z, gamma, lam, rho, variant=variant,
                             policy=policy, theta=theta_p, objective=True)
        res = _solve_iteration(prog, _resolve_strategy(strategy, prog, cap),
                               cap)
        if not problem.domain.contains(res.x, _FEAS_TOL):
            raise RuntimeError("subsolver left the domain at nu={}".format(nu))
        step = float(np.linalg.norm(res.x - x))
        rows = EmpiricalRows(problem, Z, gamma, variant, theta_p)
        v_old = rows.penalized_value(x, lam)
        v_new = rows.penalized_value(res.x, lam)
        ledger_gap = v_new + 0.5 * rho * step * step - v_old
        if ledger_gap > 1e-7 * (1.0 + abs(v_old)):
            raise RuntimeError(
                "descent inequality violated at nu={}: excess {:.3e}".format(
                    nu, ledger_gap))
        if lam > 0:
            weighted += (rho / lam) * step * step
        partial_sums.append(weighted)
        x = res.x
        state.nu = nu
        state.x = x.copy()
        state.history.append({
            "nu": nu, "N": N, "lam": lam, "rho": rho, "gamma": gamma,
            "x": x.copy(), "V": v_new,
            "resid": np.maximum(rows.row_values(x) - problem.zeta, 0.0),
            "step": step, "ledger_gap": ledger_gap,
            "branches": res.branches_solved})
        consec = consec + 1 if step <= step_tol else 0
        if consec >= small_step_stop:
            stop_reason = "small-steps"
            break
    steps = [h["step"] for h in state.history]
    verdicts = _final_verdicts(problem, state, variant, theta_p, diminishing,
                               expectation_oracle, comparison_point, policy,
                               direction_budget, seed)
    result = SpsaResult(x=x, state=state, verdicts=verdicts,
                        stop_reason=stop_reason,
                        weighted_step_sums=partial_sums,
                        window_min_decreasing=_window_min_flag(steps),
                        policy=policy, variant=variant)
    if trace_path is not None:
        write_trace(state.history, trace_path)
    return result


def _final_verdicts(problem, state, variant, theta_p, diminishing,
                    expectation_oracle, comparison_point, policy,
                    direction_budget, seed):
    x = state.x
    last = state.history[-1]
    gamma_check = last["gamma"]
    if gamma_check == 0.0:
        positives = [h["gamma"] for h in state.history if h["gamma"] > 0.0]
        gamma_check = positives[-1] if positives else 0.0
    verdicts = {"residual": {"per_row": last["resid"],
                             "total": float(np.sum(last["resid"]))},
                "untested": ("constraint-closure condition",
                             "directional Slater condition")}
    if expectation_oracle is not None:
        vals = np.atleast_1d(np.asarray(
            expectation_oracle(x, gamma_check), dtype=float))
        verdicts["oracle_rows"] = vals
        verdicts["oracle_violation"] = float(
            np.max(np.maximum(vals - problem.zeta, 0.0)))
    if gamma_check > 0.0:
        Z = state.store.samples
        rows = EmpiricalRows(problem, Z, gamma_check, variant, theta_p)

        def f0(v):
            return objective_mean_dd(problem, x, Z, v)

        # a finite run pins the kink of the surrogate row, not of the
        # empirical row, so the final iterate sits a little inside the
        # feasible side; classify activity at the sampling resolution of
        # the last batch rather than at solver precision
        act = max(1e-6, 1.0 / np.sqrt(rows.n_samples))
        try:
            verdict = check_stationarity(
                f0, problem.domain, x, mode="B",
                constraints=cone_constraints_from_rows(rows, x),
                direction_budget=direction_budget, seed=seed, act_tol=act)
            verdict = replace(verdict, regime=verdict.regime +
                              "; row activity within {:.2g}".format(act))
        except ValueError as exc:
            verdict = StationarityVerdict("indeterminate", None, float("nan"),
                                          _FEAS_TOL, str(exc), "B")
        if diminishing:
            verdict = replace(verdict, regime=verdict.regime +
                              "; proxy at gamma={:.3g} for the decreasing-"
                              "smoothing limit".format(gamma_check))
        verdicts["stationarity"] = verdict
    else:
        verdicts["stationarity"] = StationarityVerdict(
            "indeterminate", None, float("nan"), _FEAS_TOL,
            "no positive smoothing level available", "B")
    if comparison_point is not None:
        verdicts["comparison_point"] = _comparison_report(
            problem, state, comparison_point, variant, theta_p, gamma_check,
            policy)
    return verdicts


def _comparison_report(problem, state, xhat, variant, theta_p, gamma_check,
                       policy):
    """Feasibility and objective comparison for a candidate better point."""
    xhat = np.atleast_1d(np.asarray(xhat, dtype=float))
    x = state.x
    Z = state.store.samples
    rows = EmpiricalRows(problem, Z, gamma_check, variant, theta_p)
    margin = float(np.max(rows.row_values(xhat) - problem.zeta))
    feasible = problem.domain.contains(xhat, _FEAS_TOL) and margin <= _FEAS_TOL
    obj_rows = [build_surrogate_objective(problem, z, x, policy=policy)
                for z in Z]
    surr_hat = float(np.mean([r.value(xhat) for r in obj_rows]))
    surr_x = float(np.mean([r.value(x) for r in obj_rows]))
    gap = surr_hat - surr_x
    return {"feasible": bool(feasible), "margin": margin,
            "objective_gap": gap, "ok": bool(feasible and gap <= _FEAS_TOL)}


# ---------------------------------------------------------------------------
# reporting


def write_trace(history, path):
    """One CSV row per iteration, floats at full precision."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if not history:
            writer.writerow(["nu", "N", "lambda", "rho", "gamma"])
            return
        n = history[0]["x"].size
        K = len(history[0]["resid"])
        header = (["nu", "N", "lambda", "rho", "gamma"]
                  + ["x{}".format(i) for i in range(n)] + ["V"]
                  + ["resid{}".format(k) for k in range(K)] + ["step"])
        writer.writerow(header)
        for h in history:
            row = [str(h["nu"]), str(h["N"])]
            row += [format(h[key], ".17g") for key in ("lam", "rho", "gamma")]
            row += [format(val, ".17g") for val in h["x"]]
            row.append(format(h["V"], ".17g"))
            row += [format(val, ".17g") for val in h["resid"]]
            row.append(format(h["step"], ".17g"))
            writer.writerow(row)


def format_verdict(verdicts):
    """Structured text report of the end-of-run diagnostics."""
    lines = []
    sv = verdicts.get("stationarity")
    if sv is not None:
        lines.append("stationarity: {} (mode {}, tolerance {:g})".format(
            sv.kind, sv.mode, sv.tolerance))
        lines.append("  regime: {}".format(sv.regime))
        if sv.witness is not None:
            lines.append("  worst direction: [{}]  dd {:.6g}".format(
                ", ".join(format(v, ".6g") for v in np.atleast_1d(sv.witness)),
                sv.witness_dd))
        if sv.conservative:
            lines.append("  note: derivatives are Clarke upper bounds; "
                         "verdict is conservative")
    res = verdicts.get("residual")
    if res is not None:
        lines.append("penalty residual: total {:.6g} (per row: {})".format(
            res["total"],
            ", ".join(format(v, ".6g") for v in np.atleast_1d(res["per_row"]))))
    if "oracle_violation" in verdicts:
        lines.append("exact-expectation feasibility: max violation {:.6g}"
                     .format(verdicts["oracle_violation"]))
    cp = verdicts.get("comparison_point")
    if cp is not None:
        lines.append("comparison point: feasible={} margin {:.3g} "
                     "surrogate objective gap {:.3g}".format(
                         cp["feasible"], cp["margin"], cp["objective_gap"]))
    if verdicts.get("untested"):
        lines.append("untested hypotheses: " + "; ".join(verdicts["untested"]))
    return "\n".join(lines)
