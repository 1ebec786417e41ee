"""Global minimization of one proximal surrogate program.

A :class:`SurrogateProgram` holds, for a fixed reference point and sample
block, the per-sample objective surrogates and the per-row per-sample
penalty surrogates together with the penalty weight, proximal weight and
thresholds.  Its overall function is

    (1/N) sum_s c0_s(x) + lambda * sum_k max((1/N) sum_s c_k,s(x) - zeta_k, 0)
        + (rho/2) ||x - xbar||^2

where every c is a sum over groups of pointwise atom minima.  Fixing one
atom per multi-atom group turns the program into a convex branch; the
global minimum is the best branch.  Branches become quadratic programs by
introducing one epigraph variable per hinge and per weighted max node, and
are solved by the interior point engine; one-dimensional branches with many
samples instead use bounded scalar minimization of the compiled convex
function, which is exact for convex piecewise-quadratic curves.

Enumeration is capped: programs whose multi-atom groups multiply out beyond
the cap must be built with a single-candidate policy or solved with the
``single-branch`` strategy.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .approx import IDENTITY_PAIR
from .qp import QuadCon, solve_qcqp
from .surrogate import build_surrogate_objective, build_surrogate_rlx, \
    build_surrogate_rst

__all__ = [
    "SurrogateProgram",
    "BranchSelection",
    "BranchResult",
    "GlobalResult",
    "build_program",
    "solve_branch",
    "solve_surrogate_global",
    "convex_engine",
    "dump_qp",
]

BRANCH_CAP = 100_000
_TIE_TOL = 1e-10
_DENSE_VAR_LIMIT = 500


class SurrogateProgram:
    """Surrogate objective, penalty rows and proximal data at one reference.

    Parameters
    ----------
    objective_rows : sequence
        Per-sample objection surrogates (SurrogateRow), or None for a zero
        objective.
    penalty_rows : sequence of sequences
        K lists of per-sample SurrogateRow.
    lam, rho : float
        Penalty and proximal weights; rho must be positive so that every
        branch is strongly convex in x.
    xbar : array
    zeta : array, shape (K,)
    domain : Polytope
    """

    def __init__(self, objective_rows, penalty_rows, lam, rho, xbar, zeta,
                 domain):
        self.objective_rows = list(objective_rows or [])
        self.penalty_rows = [list(rows) for rows in penalty_rows]
        self.lam = float(lam)
        self.rho = float(rho)
        if self.rho <= 0:
            raise ValueError("proximal weight must be positive")
        if self.lam < 0:
            raise ValueError("penalty weight must be nonnegative")
        self.xbar = np.asarray(xbar, dtype=float).copy()
        self.zeta = np.atleast_1d(np.asarray(zeta, dtype=float))
        self.domain = domain
        if len(self.penalty_rows) != self.zeta.size:
            raise ValueError("one threshold per penalty row block required")
        counts = {len(rows) for rows in self.penalty_rows}
        if self.objective_rows:
            counts.add(len(self.objective_rows))
        counts.discard(0)
        if len(counts) > 1:
            raise ValueError("sample counts differ between row blocks")
        self.n_samples = counts.pop() if counts else 0
        self.n = self.xbar.size
        self._compiled = None
        self._box = None

    def bounding_box(self):
        if self._box is None:
            self._box = self.domain.bounding_box()
        return self._box

    @property
    def K(self):
        return self.zeta.size

    # -- group bookkeeping --------------------------------------------------

    def _all_groups(self):
        """Deterministic flat order: penalty blocks by k then sample, then
        objective rows by sample; groups in row order."""
        out = []
        for k, rows in enumerate(self.penalty_rows):
            for s, row in enumerate(rows):
                for gi, g in enumerate(row.groups):
                    out.append((("pen", k, s, gi), g))
        for s, row in enumerate(self.objective_rows):
            for gi, g in enumerate(row.groups):
                out.append((("obj", s, gi), g))
        return out

    def branch_slots(self):
        """Tags and sizes of the groups that actually branch."""
        return [(tag, len(g.atoms)) for tag, g in self._all_groups()
                if len(g.atoms) > 1]

    def total_branches(self):
        total = 1
        for _, size in self.branch_slots():
            total *= size
            if total > 10 * BRANCH_CAP:
                break
        return total

    # -- direct evaluation --------------------------------------------------

    def compiled(self):
        if self._compiled is None:
            self._compiled = _Compiled(self)
        return self._compiled

    def value(self, x):
        """V of the surrogate program (min-of-atoms rows) at x."""
        return self.compiled().value(np.asarray(x, dtype=float))

    def true_value(self, x):
        """The sampled exact penalty function the surrogates majorize."""
        x = np.asarray(x, dtype=float)
        total = 0.0
        if self.objective_rows:
            total += sum(r.true_value(x) for r in self.objective_rows) \
                / self.n_samples
        for k, rows in enumerate(self.penalty_rows):
            if not rows:
                continue
            mean = sum(r.true_value(x) for r in rows) / len(rows)
            total += self.lam * max(mean - self.zeta[k], 0.0)
        d = x - self.xbar
        return total + 0.5 * self.rho * float(d @ d)


@dataclass
class BranchSelection:
    """One atom index per branching group, in slot order."""

    indices: tuple
    slots: tuple
    total_branches: int

    def __post_init__(self):
        if len(self.indices) != len(self.slots):
            raise ValueError("selection length does not match slot count")
        for idx, (_, size) in zip(self.indices, self.slots):
            if not 0 <= idx < size:
                raise ValueError("atom index {} out of range".format(idx))


@dataclass
class BranchResult:
    x: np.ndarray
    value: float
    kkt_residual: float
    status: str
    n_variables: int
    method: str


@dataclass
class GlobalResult:
    x: np.ndarray
    value: float
    branches_solved: int
    total_branches: int
    selection: BranchSelection
    kkt_residual: float
    value_at_xbar: float
    decomposition_gap: float
    status: str


# ---------------------------------------------------------------------------
# compiled flat arrays for fast evaluation


class _Compiled:
    """Flattened atoms of a program: piece/node/atom/group index arrays."""

    def __init__(self, prog):
        self.prog = prog
        n = prog.n
        piece_A, piece_B, piece_Q = [], [], []
        node_start, node_weight, node_atom = [], [], []
        atom_A, atom_b, atom_owner = [], [], []
        group_start, group_kind, group_k = [], [], []
        for tag, g in prog._all_groups():
            group_start.append(len(atom_A))
            group_kind.append(tag[0])
            group_k.append(tag[1] if tag[0] == "pen" else -1)
            for atom in g.atoms:
                base_a, base_b, max_terms = atom.flatten()
                aidx = len(atom_A)
                atom_A.append(np.asarray(base_a, dtype=float))
                atom_b.append(float(base_b))
                atom_owner.append(len(group_start) - 1)
                for w, pieces in max_terms:
                    if w == 0.0:
                        continue
                    node_start.append(len(piece_A))
                    node_weight.append(float(w))
                    node_atom.append(aidx)
                    for p in pieces:
                        piece_A.append(np.asarray(p.a, dtype=float))
                        piece_B.append(float(p.b))
                        if p.Q is not None:
                            piece_Q.append((len(piece_A) - 1, p.Q))
        self.piece_A = (np.vstack(piece_A) if piece_A
                        else np.zeros((0, n)))
        self.piece_B = np.asarray(piece_B, dtype=float)
        self.piece_Q = piece_Q
        self.node_start = np.asarray(node_start, dtype=np.intp)
        self.node_weight = np.asarray(node_weight, dtype=float)
        self.node_atom = np.asarray(node_atom, dtype=np.intp)
        self.node_size = np.diff(np.append(self.node_start,
                                           len(self.piece_B)))
        self.atom_A = (np.vstack(atom_A) if atom_A else np.zeros((0, n)))
        self.atom_b = np.asarray(atom_b, dtype=float)
        self.atom_owner = np.asarray(atom_owner, dtype=np.intp)
        self.group_start = np.asarray(group_start, dtype=np.intp)
        self.group_kind = group_kind
        self.group_k = np.asarray(group_k, dtype=np.intp)
        self.group_size = np.diff(np.append(self.group_start,
                                            len(self.atom_b)))
        self.n_atoms = len(self.atom_b)
        self.n_groups = len(group_start)

    def _piece_values(self, x):
        vals = self.piece_A @ x + self.piece_B
        for i, Q in self.piece_Q:
            vals[i] += 0.5 * float(x @ Q @ x)
        return vals

    def _atom_values(self, x):
        vals = self.atom_A @ x + self.atom_b
        if self.node_start.size:
            pv = self._piece_values(x)
            node_max = np.maximum.reduceat(pv, self.node_start)
            vals = vals + np.bincount(self.node_atom,
                                      weights=self.node_weight * node_max,
                                      minlength=self.n_atoms)
        return vals

    def _combine(self, group_vals):
        """Program value from per-group scalars."""
        prog = self.prog
        total = 0.0
        N = max(prog.n_samples, 1)
        k_sums = np.zeros(prog.K)
        for kind, k, v in zip(self.group_kind, self.group_k, group_vals):
            if kind == "pen":
                k_sums[k] += v
            else:
                total += v / N
        for k in range(prog.K):
            total += prog.lam * max(k_sums[k] / N - prog.zeta[k], 0.0)
        return total

    def value(self, x):
        if self.n_groups == 0:
            d = x - self.prog.xbar
            return 0.5 * self.prog.rho * float(d @ d)
        atom_vals = self._atom_values(x)
        group_vals = np.minimum.reduceat(atom_vals, self.group_start)
        d = x - self.prog.xbar
        return self._combine(group_vals) + 0.5 * self.prog.rho * float(d @ d)

    def branch_value(self, x, atom_idx):
        atom_vals = self._atom_values(x)
        group_vals = atom_vals[atom_idx]
        d = x - self.prog.xbar
        return self._combine(group_vals) + 0.5 * self.prog.rho * float(d @ d)

    def branch_dd(self, x, v, atom_idx, tol=1e-12):
        """One-sided derivative of the branch-fixed program along v.

        tol widens the kink classification; the scalar path certifies
        optimality with a loose tol because its minimizer sits within
        solver precision of hinge corners and max-node ties.
        """
        prog = self.prog
        atom_dd = self.atom_A @ v
        if self.node_start.size:
            pv = self._piece_values(x)
            pd = self.piece_A @ v
            for i, Q in self.piece_Q:
                pd[i] += float(x @ Q @ v)
            node_max = np.maximum.reduceat(pv, self.node_start)
            rep = np.repeat(node_max, self.node_size)
            active = pv >= rep - tol * np.maximum(1.0, np.abs(rep))
            masked = np.where(active, pd, -np.inf)
            node_dd = np.maximum.reduceat(masked, self.node_start)
            atom_dd = atom_dd + np.bincount(
                self.node_atom, weights=self.node_weight * node_dd,
                minlength=self.n_atoms)
        atom_vals = self._atom_values(x)
        g_val = atom_vals[atom_idx]
        g_dd = atom_dd[atom_idx]
        N = max(prog.n_samples, 1)
        total = 0.0
        k_val = np.zeros(prog.K)
        k_dd = np.zeros(prog.K)
        for kind, k, val, dd in zip(self.group_kind, self.group_k, g_val,
                                    g_dd):
            if kind == "pen":
                k_val[k] += val
                k_dd[k] += dd
            else:
                total += dd / N
        for k in range(prog.K):
            resid = k_val[k] / N - prog.zeta[k]
            if resid > tol:
                total += prog.lam * k_dd[k] / N
            elif resid > -tol:
                total += prog.lam * max(k_dd[k] / N, 0.0)
        d = x - prog.xbar
        return total + prog.rho * float(d @ v)

    def selected_atoms(self, sel):
        """Global atom index per group under a BranchSelection."""
        chosen = self.group_start.copy()
        pos = 0
        for gi in range(self.n_groups):
            if self.group_size[gi] > 1:
                chosen[gi] = self.group_start[gi] + sel.indices[pos]
                pos += 1
        return chosen


# ---------------------------------------------------------------------------
# program assembly from surrogate builders


def build_program(problem, xbar, samples, gamma, lam, rho, variant="rst",
                  policy="eps-argmax", theta=None, objective=True):
    """Surrogate program for one iteration: rows for every sample and row.

    ``samples`` is an (N, nz) array; ``variant`` picks the restricted or
    relaxed penalty rows.
    """
    theta = IDENTITY_PAIR if theta is None else theta
    builder = build_surrogate_rst if variant == "rst" else build_surrogate_rlx
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    penalty = []
    for k in range(problem.K):
        penalty.append([builder(problem, k, z, gamma, xbar, policy=policy,
                                theta=theta) for z in samples])
    obj_rows = None
    if objective:
        obj_rows = [build_surrogate_objective(problem, z, xbar, policy=policy)
                    for z in samples]
    return SurrogateProgram(obj_rows, penalty, lam, rho, xbar,
                            problem.zeta, problem.domain)


# ---------------------------------------------------------------------------
# branch QP assembly


def _domain_rows(domain, nvar, n):
    rows, rhs = [], []
    if domain.A is not None:
        for a, b in zip(domain.A, domain.b):
            r = np.zeros(nvar)
            r[:n] = a
            rows.append(r)
            rhs.append(float(b))
    for d in range(n):
        if domain.lo is not None and np.isfinite(domain.lo[d]):
            r = np.zeros(nvar)
            r[d] = -1.0
            rows.append(r)
            rhs.append(-float(domain.lo[d]))
        if domain.hi is not None and np.isfinite(domain.hi[d]):
            r = np.zeros(nvar)
            r[d] = 1.0
            rows.append(r)
            rhs.append(float(domain.hi[d]))
    return rows, rhs


def _assemble_branch_qp(prog, chosen):
    """QP data for the branch with the given atom per group.

    Variables are [x, u_1..u_K, t_nodes] with one epigraph variable per
    weighted max node of a selected atom.  Returns (P, q, const, G, h,
    quad_cons, nvar).
    """
    comp = prog.compiled()
    n, K = prog.n, prog.K
    N = max(prog.n_samples, 1)
    chosen_set = set(int(c) for c in chosen)
    sel_nodes = [j for j in range(comp.node_weight.size)
                 if int(comp.node_atom[j]) in chosen_set]
    node_var = {j: n + K + i for i, j in enumerate(sel_nodes)}
    nvar = n + K + len(sel_nodes)

    P = np.zeros((nvar, nvar))
    P[:n, :n] = prog.rho * np.eye(n)
    q = np.zeros(nvar)
    q[:n] = -prog.rho * prog.xbar
    const = 0.5 * prog.rho * float(prog.xbar @ prog.xbar)

    rows, rhs = _domain_rows(prog.domain, nvar, n)
    quad_cons = []

    # epigraph rows for every selected node: piece(x) - t <= 0
    for j in sel_nodes:
        t = node_var[j]
        start = comp.node_start[j]
        for p in range(start, start + comp.node_size[j]):
            a = comp.piece_A[p]
            b = comp.piece_B[p]
            Q = None
            for qi, Qm in comp.piece_Q:
                if qi == p:
                    Q = Qm
                    break
            if Q is None:
                r = np.zeros(nvar)
                r[:n] = a
                r[t] = -1.0
                rows.append(r)
                rhs.append(-b)
            else:
                Qf = np.zeros((nvar, nvar))
                Qf[:n, :n] = Q
                af = np.zeros(nvar)
                af[:n] = a
                af[t] = -1.0
                quad_cons.append(QuadCon(Qf, af, b))

    # accumulate per-group linear forms over the selected atoms
    k_rows = [np.zeros(nvar) for _ in range(K)]
    k_consts = np.zeros(K)
    k_used = [False] * K
    for gi in range(comp.n_groups):
        aidx = int(chosen[gi])
        lin = np.zeros(nvar)
        lin[:n] = comp.atom_A[aidx]
        cst = comp.atom_b[aidx]
        for j in sel_nodes:
            if int(comp.node_atom[j]) == aidx:
                lin[node_var[j]] += comp.node_weight[j]
        if comp.group_kind[gi] == "pen":
            k = int(comp.group_k[gi])
            k_rows[k] += lin
            k_consts[k] += cst
            k_used[k] = True
        else:
            q += lin / N
            const += cst / N

    # hinge: u_k >= mean_k - zeta_k and u_k >= 0; objective lam * u_k
    for k in range(K):
        q[n + k] = prog.lam
        r = np.zeros(nvar)
        r[n + k] = -1.0
        rows.append(r)
        rhs.append(0.0)
        if k_used[k]:
            r = k_rows[k] / N
            r[n + k] -= 1.0
            rows.append(r)
            rhs.append(prog.zeta[k] - k_consts[k] / N)
    G = np.vstack(rows) if rows else np.zeros((0, nvar))
    h = np.asarray(rhs, dtype=float)
    return P, q, const, G, h, quad_cons, nvar


def convex_engine(P, q, G, h, quad_cons=(), tol=1e-9):
    """Strongly convex QP with optional convex quadratic constraints.

    Thin deterministic wrapper over the interior point engine; raises when
    the constraint system admits no point (which cannot happen for epigraph
    systems over a certified nonempty polytope).
    """
    res = solve_qcqp(P, q, G, h, quad_cons, tol=tol)
    if res.status != "optimal" and res.res_primal > 1e-6:
        raise RuntimeError("convex engine failed on an infeasible or "
                           "ill-posed system (primal residual {:.2e})"
                           .format(res.res_primal))
    return res


def _normalize_selection(prog, sel):
    slots = tuple(prog.branch_slots())
    if sel is None:
        indices = tuple(0 for _ in slots)
        return BranchSelection(indices, slots, prog.total_branches())
    if isinstance(sel, BranchSelection):
        return sel
    return BranchSelection(tuple(int(i) for i in sel), slots,
                           prog.total_branches())


def solve_branch(prog, sel=None):
    """Exact minimizer of one convex branch of the surrogate program."""
    sel = _normalize_selection(prog, sel)
    comp = prog.compiled()
    chosen = comp.selected_atoms(sel)
    chosen_mask = np.zeros(comp.n_atoms, dtype=bool)
    chosen_mask[chosen] = True
    nvar_est = prog.n + prog.K + int(chosen_mask[comp.node_atom].sum())
    if prog.n == 1 and nvar_est > _DENSE_VAR_LIMIT:
        return _solve_branch_1d(prog, comp, chosen, nvar_est)
    P, q, const, G, h, quad_cons, nvar = _assemble_branch_qp(prog, chosen)
    res = convex_engine(P, q, G, h, quad_cons)
    if res.status != "optimal":
        res = convex_engine(P + 1e-10 * np.eye(nvar), q, G, h, quad_cons,
                            tol=1e-10)
    x = res.x[:prog.n]
    value = comp.branch_value(x, chosen)
    return BranchResult(x, value, res.kkt_residual, res.status, nvar, "qp")


def _solve_branch_1d(prog, comp, chosen, nvar):
    """Exact minimization of the compiled convex branch curve.

    The right derivative of a 1-D convex function is nondecreasing, so
    bisection on its sign pins the minimizer (kink or smooth) to machine
    precision, which value-based scalar searches cannot do at corners.
    """
    lo, hi = prog.bounding_box()
    lo, hi = float(lo[0]), float(hi[0])
    up = np.array([1.0])
    dn = np.array([-1.0])

    def rdd(t):
        return comp.branch_dd(np.array([t]), up, chosen)

    if rdd(lo) >= 0.0:
        x = np.array([lo])
    elif comp.branch_dd(np.array([hi]), dn, chosen) >= 0.0:
        x = np.array([hi])
    else:
        a, b = lo, hi
        for _ in range(200):
            m = 0.5 * (a + b)
            if m <= a or m >= b:
                break
            if rdd(m) < 0.0:
                a = m
            else:
                b = m
        x = np.array([b])
    # certificate from exact one-sided derivatives, kinks classified loosely
    resid = 0.0
    if x[0] < hi - 1e-12:
        resid = max(resid, -comp.branch_dd(x, up, chosen, tol=1e-8))
    if x[0] > lo + 1e-12:
        resid = max(resid, -comp.branch_dd(x, dn, chosen, tol=1e-8))
    value = comp.branch_value(x, chosen)
    status = "optimal" if resid <= 1e-6 else "max-iter"
    return BranchResult(x, value, max(resid, 0.0), status, nvar, "scalar")


def _active_selection(prog, slots, total):
    """Per-group atom attaining the minimum at the reference (ties: lowest).

    The selected branch touches the program value at xbar, so minimizing it
    preserves the proximal descent inequality no matter how many atoms the
    groups carry.
    """
    comp = prog.compiled()
    vals = comp._atom_values(prog.xbar)
    indices = []
    for gi in range(comp.n_groups):
        size = int(comp.group_size[gi])
        if size <= 1:
            continue
        start = int(comp.group_start[gi])
        indices.append(int(np.argmin(vals[start:start + size])))
    return BranchSelection(tuple(indices), slots, total)


def solve_surrogate_global(prog, strategy="enumerate", cap=BRANCH_CAP):
    """Best branch of the surrogate program.

    ``enumerate`` solves every branch (error above the cap) and breaks
    value ties by the lexicographically smallest selection; ``single-branch``
    solves only the branch active at the reference point, which is globally
    optimal when every group is a singleton (subgradient-policy surrogates)
    and otherwise still a valid majorization step.
    """
    slots = tuple(prog.branch_slots())
    total = prog.total_branches()
    if strategy == "single-branch":
        sel = _active_selection(prog, slots, total)
        br = solve_branch(prog, sel)
        return _finish_global(prog, br, sel, 1, total)
    if strategy != "enumerate":
        raise ValueError("unknown strategy {!r}".format(strategy))
    if total > cap:
        raise ValueError(
            "branch count {} exceeds the cap {}; rebuild the surrogate "
            "with a single-candidate policy or use the single-branch "
            "strategy".format(total, cap))
    best = None
    best_sel = None
    solved = 0
    for combo in itertools.product(*(range(size) for _, size in slots)):
        sel = BranchSelection(combo, slots, total)
        br = solve_branch(prog, sel)
        solved += 1
        if best is None or br.value < best.value - _TIE_TOL:
            best, best_sel = br, sel
    return _finish_global(prog, best, best_sel, solved, total)


def _finish_global(prog, br, sel, solved, total):
    val_xbar = prog.value(prog.xbar)
    gap = abs(prog.value(br.x) - br.value)
    return GlobalResult(br.x, br.value, solved, total, sel,
                        br.kkt_residual, val_xbar, gap, br.status)


def dump_qp(P, q, G, h, path):
    """Write one QP in a sparse coordinate text form for external checks."""
    with open(path, "w") as fh:
        fh.write("QP n={} m={}\n".format(q.size, h.size))
        fh.write("P coo\n")
        for i, j in zip(*np.nonzero(P)):
            if j >= i:
                fh.write("{} {} {:.17g}\n".format(i, j, P[i, j]))
        fh.write("q\n")
        for i, v in enumerate(q):
            if v != 0.0:
                fh.write("{} {:.17g}\n".format(i, v))
        fh.write("G coo\n")
        for i, j in zip(*np.nonzero(G)):
            fh.write("{} {} {:.17g}\n".format(i, j, G[i, j]))
        fh.write("h\n")
        for i, v in enumerate(h):
            fh.write("{} {:.17g}\n".format(i, v))
