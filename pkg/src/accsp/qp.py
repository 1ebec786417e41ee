"""Dense convex quadratic programming with a tight KKT polish.

``solve_qp`` minimizes 0.5 x'Px + q'x subject to Gx <= h for PSD P using a
primal-dual predictor-corrector interior point method, then reconstructs the
active set and re-solves the equality KKT system so the reported point meets
the stationarity, feasibility and complementarity residuals to 1e-8 in the
max norm whenever the polish succeeds.  ``solve_qcqp`` handles additional
convex quadratic inequality constraints through supportingplane cuts added
to the linear block until the worst violation is below tolerance.

The solver is deterministic: identical inputs produce identical iterates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["QpResult", "QuadCon", "solve_qp", "solve_qcqp", "kkt_residuals"]

_REG = 1e-11


@dataclass
class QpResult:
    x: np.ndarray
    lam: np.ndarray
    status: str
    iterations: int
    res_dual: float
    res_primal: float
    res_comp: float
    polished: bool = False
    cuts: int = 0

    @property
    def kkt_residual(self):
        return max(self.res_dual, self.res_primal, self.res_comp)


@dataclass
class QuadCon:
    """Convex constraint 0.5 x'Qx + a'x + b <= 0 over the full variable."""

    Q: np.ndarray
    a: np.ndarray
    b: float

    def value(self, x):
        return 0.5 * float(x @ self.Q @ x) + float(self.a @ x) + self.b

    def grad(self, x):
        return self.Q @ x + self.a


def kkt_residuals(P, q, G, h, x, lam):
    """Max-norm stationarity, primal feasibility and complementarity."""
    r_d = float(np.abs(P @ x + q + (G.T @ lam if G.size else 0.0)).max())
    if G.size:
        slack = h - G @ x
        r_p = float(max(0.0, -slack.min()))
        r_c = float(np.abs(lam * slack).max()) if lam.size else 0.0
        r_d = max(r_d, float(max(0.0, -lam.min())))
    else:
        r_p = r_c = 0.0
    return r_d, r_p, r_c


def _polish(P, q, G, h, x, lam, s, rounds=12):
    """Re-solve the equality KKT system on the guessed active set."""
    m = h.size
    active = np.where(lam > s)[0]
    n = q.size
    for _ in range(rounds):
        GA = G[active]
        K = np.zeros((n + active.size, n + active.size))
        K[:n, :n] = P + _REG * np.eye(n)
        K[:n, n:] = GA.T
        K[n:, :n] = GA
        rhs = np.concatenate([-q, h[active]])
        sol, *_ = np.linalg.lstsq(K, rhs, rcond=None)
        xp, lam_a = sol[:n], sol[n:]
        if lam_a.size and lam_a.min() < -1e-9:
            active = active[lam_a > -1e-9]
            continue
        slack = h - G @ xp
        worst = int(np.argmin(slack)) if m else -1
        if m and slack[worst] < -1e-9 and worst not in active:
            active = np.sort(np.append(active, worst))
            continue
        lam_p = np.zeros(m)
        lam_p[active] = np.maximum(lam_a, 0.0)
        return xp, lam_p
    return None


def solve_qp(P, q, G=None, h=None, tol=1e-9, max_iter=100):
    """Minimize 0.5 x'Px + q'x subject to Gx <= h (P symmetric PSD).

    Returns a :class:`QpResult`; ``status`` is "optimal" when the polished
    or final iterate satisfies every KKT residual to at most ``tol`` in the
    max norm, otherwise "max-iter".
    """
    P = np.asarray(P, dtype=float)
    q = np.asarray(q, dtype=float)
    n = q.size
    if G is None or (hasattr(G, "__len__") and len(G) == 0):
        G = np.zeros((0, n))
        h = np.zeros(0)
    G = np.atleast_2d(np.asarray(G, dtype=float))
    h = np.atleast_1d(np.asarray(h, dtype=float))
    m = h.size
    if m == 0:
        x = np.linalg.solve(P + _REG * np.eye(n), -q)
        r_d = float(np.abs(P @ x + q).max()) if n else 0.0
        return QpResult(x, np.zeros(0), "optimal" if r_d <= tol else
                        "max-iter", 0, r_d, 0.0, 0.0)

    x = np.linalg.solve(P + np.eye(n), -q)
    s = np.maximum(h - G @ x, 1.0)
    lam = np.ones(m)
    best = None
    it = 0
    for it in range(1, max_iter + 1):
        if not (np.isfinite(x).all() and np.isfinite(lam).all()
                and np.isfinite(s).all()) or lam.max() > 1e12 \
                or s.min() < 1e-14:
            x, lam, s = best[1], best[2], best[3]
            break
        r_d = P @ x + q + G.T @ lam
        r_p = G @ x + s - h
        mu = float(s @ lam) / m
        res = (float(np.abs(r_d).max()), float(np.abs(r_p).max()), mu)
        if best is None or max(res) < max(best[0]):
            best = (res, x.copy(), lam.copy(), s.copy())
        if max(res) <= 1e-12 or (max(res[:2]) <= tol and mu <= tol):
            break
        D = lam / s
        M = P + (G.T * D) @ G + _REG * np.eye(n)
        # near complementarity D spans many orders of magnitude and
        # cancellation can push M indefinite; escalate the jitter at the
        # scale of the diagonal, and fall back on the incumbent if even
        # that fails
        Lc = None
        jitter = 1e-12 * max(1.0, float(np.abs(np.diag(M)).max()))
        for _ in range(6):
            try:
                Lc = np.linalg.cholesky(M)
                break
            except np.linalg.LinAlgError:
                M = M + jitter * np.eye(n)
                jitter *= 100.0
        if Lc is None:
            x, lam, s = best[1], best[2], best[3]
            break

        def solve_dir(rd, rp, rc):
            # rc is the target for the complementarity product s*lam
            tmp = s - rc / lam - rp
            rhs = -rd + G.T @ (D * tmp)
            dx = np.linalg.solve(Lc.T, np.linalg.solve(Lc, rhs))
            ds = -rp - G @ dx
            dlam = (rc - lam * ds) / s - lam
            return dx, ds, dlam

        dx_a, ds_a, dlam_a = solve_dir(r_d, r_p, np.zeros(m))
        alpha_p = _step(s, ds_a)
        alpha_d = _step(lam, dlam_a)
        mu_aff = float((s + alpha_p * ds_a) @ (lam + alpha_d * dlam_a)) / m
        sigma = (max(mu_aff, 0.0) / mu) ** 3 if mu > 0 else 0.0
        rc = sigma * mu - ds_a * dlam_a
        dx, ds, dlam = solve_dir(r_d, r_p, rc)
        alpha_p = 0.99 * _step(s, ds)
        alpha_d = 0.99 * _step(lam, dlam)
        alpha = min(alpha_p, alpha_d, 1.0)
        x = x + alpha * dx
        s = s + alpha * ds
        lam = lam + alpha * dlam
        if not np.isfinite(x).all() or float(np.abs(x).max()) > 1e10:
            x, lam, s = best[1], best[2], best[3]
            break

    polished = False
    out = _polish(P, q, G, h, x, lam, s)
    if out is not None:
        xp, lamp = out
        r_d, r_p, r_c = kkt_residuals(P, q, G, h, xp, lamp)
        if max(r_d, r_p, r_c) <= max(tol, 1e-8):
            x, lam = xp, lamp
            polished = True
    r_d, r_p, r_c = kkt_residuals(P, q, G, h, x, lam)
    status = "optimal" if max(r_d, r_p, r_c) <= max(tol, 1e-8) else "max-iter"
    return QpResult(x, lam, status, it, r_d, r_p, r_c, polished=polished)


def _step(v, dv):
    """Largest alpha in (0, 1] keeping v + alpha*dv >= 0."""
    neg = dv < 0
    if not neg.any():
        return 1.0
    return min(1.0, float(np.min(-v[neg] / dv[neg])))


def solve_qcqp(P, q, G=None, h=None, quad_cons=(), tol=1e-9, cut_tol=1e-10,
               max_rounds=60):
    """Convex QP with extra quadratic inequality constraints via cuts.

    Each round solves the QP over the linear rows plus all accumulated
    supporting planes, then adds a tangent cut for every quadratic
    constraint violated at the solution.  When the worst violation drops
    below tolerance a Newton step on the true KKT system of the active
    constraints removes the first-order error the planes leave behind.
    """
    P = np.asarray(P, dtype=float)
    q = np.asarray(q, dtype=float)
    n = q.size
    if G is None or (hasattr(G, "__len__") and len(G) == 0):
        G = np.zeros((0, n))
        h = np.zeros(0)
    G0 = np.atleast_2d(np.asarray(G, dtype=float))
    if G0.size == 0:
        G0 = G0.reshape(0, n)
    h0 = np.atleast_1d(np.asarray(h, dtype=float))
    m0 = h0.size
    G_work, h_work = G0.copy(), h0.copy()
    owners = []            # quad constraint index behind each added cut
    quad_cons = list(quad_cons)
    res = solve_qp(P, q, G_work, h_work, tol=tol)
    for _ in range(max_rounds):
        if not quad_cons:
            break
        values = [qc.value(res.x) for qc in quad_cons]
        if max(values) <= cut_tol:
            break
        for j, (v, qc) in enumerate(zip(values, quad_cons)):
            if v > cut_tol:
                grad = qc.grad(res.x)
                G_work = np.vstack([G_work, grad])
                h_work = np.append(h_work, float(grad @ res.x) - v)
                owners.append(j)
        res = solve_qp(P, q, G_work, h_work, tol=tol)
    res.cuts = len(owners)
    if quad_cons:
        _qcqp_polish(P, q, G0, h0, quad_cons, owners, res, m0)
        worst = max(qc.value(res.x) for qc in quad_cons)
        if worst > 1e-8:
            res.status = "max-iter"
        res.res_primal = max(res.res_primal, max(worst, 0.0))
    return res


def _qcqp_polish(P, q, G0, h0, quad_cons, owners, res, m0):
    """Newton correction on the active-set KKT system of the true problem.

    The cut loop leaves a point whose distance to a smooth constraint
    boundary scales like the square root of the violation tolerance; a few
    Newton steps on stationarity plus the active constraints restore full
    accuracy.  The result is accepted only if it passes a complete KKT
    check, otherwise the cut solution stands.
    """
    x = res.x.copy()
    lam_lin = res.lam[:m0].copy()
    slack = h0 - G0 @ x if m0 else np.zeros(0)
    act_lin = np.where((slack < 1e-7) | (lam_lin > 1e-7))[0]
    lam_q = np.zeros(len(quad_cons))
    for row, j in enumerate(owners):
        lam_q[j] += res.lam[m0 + row]
    act_q = [j for j, qc in enumerate(quad_cons)
             if qc.value(x) > -1e-7 or lam_q[j] > 1e-7]
    if not act_q:
        return
    n = q.size
    GA = G0[act_lin]
    lamA = lam_lin[act_lin]
    lq = lam_q[list(act_q)]
    for _ in range(10):
        grads = np.array([quad_cons[j].grad(x) for j in act_q])
        H = P.copy()
        for w, j in zip(lq, act_q):
            H += w * quad_cons[j].Q
        F = np.concatenate([
            P @ x + q + (GA.T @ lamA if lamA.size else 0.0) + grads.T @ lq,
            GA @ x - h0[act_lin],
            [quad_cons[j].value(x) for j in act_q],
        ])
        if np.abs(F).max() <= 1e-13:
            break
        na, nq = lamA.size, len(act_q)
        J = np.zeros((n + na + nq, n + na + nq))
        J[:n, :n] = H
        J[:n, n:n + na] = GA.T
        J[:n, n + na:] = grads.T
        J[n:n + na, :n] = GA
        J[n + na:, :n] = grads
        step, *_ = np.linalg.lstsq(J, -F, rcond=None)
        x = x + step[:n]
        lamA = lamA + step[n:n + na]
        lq = lq + step[n + na:]
    lam_full = np.zeros(m0)
    lam_full[act_lin] = lamA
    if (lamA.size and lamA.min() < -1e-9) or (lq.size and lq.min() < -1e-9):
        return
    lam_full = np.maximum(lam_full, 0.0)
    lq = np.maximum(lq, 0.0)
    r_d = P @ x + q + (G0.T @ lam_full if m0 else 0.0)
    for w, j in zip(lq, act_q):
        r_d = r_d + w * quad_cons[j].grad(x)
    stat = float(np.abs(r_d).max())
    feas = 0.0
    if m0:
        feas = float(max(0.0, -(h0 - G0 @ x).min()))
    feas = max(feas, max(max(qc.value(x), 0.0) for qc in quad_cons))
    comp = 0.0
    if m0:
        comp = float(np.abs(lam_full * (h0 - G0 @ x)).max())
    for w, j in zip(lq, act_q):
        comp = max(comp, abs(w * quad_cons[j].value(x)))
    if max(stat, feas, comp) <= 1e-8:
        res.x = x
        res.lam = np.concatenate([lam_full, np.zeros(res.lam.size - m0)])
        res.res_dual, res.res_primal, res.res_comp = stat, feas, comp
        res.polished = True
