"""Convex majorization builders for penalty rows and objectives.

Each penalty row c_k(x, z; gamma) is a sum over functionals of ramp
composites applied to a difference of maxima.  At a reference point xbar
the negatively-occurring maxima are replaced by linearizations, which turns
every row into a pointwise minimum of finitely many convex "atoms" that
(i) majorizes the row everywhere, (ii) touches it at xbar, and (iii) under
the eps-argmax candidate policy reproduces its one-sided directional
derivatives at xbar.  The builders return :class:`SurrogateRow` objects
holding the atoms grouped by independent minimization slots; the row value
is the sum over groups of the group minima.

Candidate policies:

- ``eps-argmax`` (default, eps = 1e-9): candidates are the pieces within
  eps of the relevant maximum at xbar.
- ``single``: one argmax piece per side, lowest index at ties.
- ``subgradient``: one linearization of the whole maximum (taken from the
  piece selected by the lowest-index rule on the achieving side), giving a
  single-atom row.
- ``full``: every piece participates, and the construction switches to the
  fully-linearized difference bounds LZ (used when the smoothing parameter
  is driven to zero); this path requires affine pieces.

The relaxed rows additionally linearize the outer ramp generators at the
reference composite values, so those atoms are plain max-plus-affine forms
for any generator pair; the restricted and full paths compose the
generators directly and stay exactly flattenable only for identity and
piecewise-affine generators.
"""

from __future__ import annotations

from collections import namedtuple

import numpy as np

from .approx import IDENTITY_PAIR, phi_lb, phi_ub
from .model import dir_deriv_dc, eval_dc

__all__ = [
    "ConvexAtom",
    "MinGroup",
    "SurrogateRow",
    "build_surrogate_rst",
    "build_surrogate_rlx",
    "build_surrogate_objective",
    "check_surrogate_conditions",
    "true_row_value",
    "true_row_dd",
]


FrozenPiece = namedtuple("FrozenPiece", ["Q", "a", "b"])


def _freeze(piece, z):
    """Fix the sample argument of a smooth piece, keeping the quadratic."""
    x0 = np.zeros(piece.n)
    a = piece.grad(x0, z)
    b = piece.value(x0, z)
    return FrozenPiece(piece.Q.copy() if piece.Q is not None else None,
                       np.asarray(a, dtype=float), float(b))


def _fp_value(fp, x):
    v = float(fp.a @ x) + fp.b
    if fp.Q is not None:
        v += 0.5 * float(x @ fp.Q @ x)
    return v


def _fp_grad(fp, x):
    if fp.Q is None:
        return fp.a
    return fp.a + fp.Q @ x


def _fp_scale(fp, c, shift=0.0):
    """c * piece + shift for c >= 0 (keeps convexity)."""
    Q = None if fp.Q is None else c * fp.Q
    return FrozenPiece(Q, c * fp.a, c * fp.b + shift)


def _fp_minus_affine(fp, a, b):
    return FrozenPiece(fp.Q, fp.a - a, fp.b - b)


def _fp_linearize(fp, xbar):
    """Tangent (a, b) of the piece at xbar; exact for affine pieces."""
    g = np.asarray(_fp_grad(fp, xbar), dtype=float)
    return g, _fp_value(fp, xbar) - float(g @ xbar)


_ACT_TOL = 1e-12


class _MaxTerm:
    """weight * max over convex pieces, weight >= 0."""

    __slots__ = ("weight", "pieces")

    def __init__(self, weight, pieces):
        if weight < 0:
            raise ValueError("max term weight must be nonnegative")
        self.weight = float(weight)
        self.pieces = list(pieces)

    def _inner(self, x):
        return [_fp_value(p, x) for p in self.pieces]

    def value(self, x):
        return self.weight * max(self._inner(x))

    def dd(self, x, v):
        vals = self._inner(x)
        m = max(vals)
        tol = _ACT_TOL * max(1.0, abs(m))
        d = max(float(_fp_grad(p, x) @ v)
                for p, val in zip(self.pieces, vals) if val >= m - tol)
        return self.weight * d


class _CompTerm:
    """Generator composed with a max node.

    orientation "cvx": coeff * gen(max_p p(x)) for a convex generator.
    orientation "cve": -coeff * gen(-max_p p(x)) for a concave generator;
    both are convex for coeff >= 0.
    """

    __slots__ = ("orientation", "coeff", "gen", "pieces")

    def __init__(self, orientation, coeff, gen, pieces):
        if coeff < 0:
            raise ValueError("composition coefficient must be nonnegative")
        self.orientation = orientation
        self.coeff = float(coeff)
        self.gen = gen
        self.pieces = list(pieces)

    def _max(self, x):
        vals = [_fp_value(p, x) for p in self.pieces]
        return vals, max(vals)

    def value(self, x):
        _, m = self._max(x)
        if self.orientation == "cvx":
            return self.coeff * self.gen(m)
        return -self.coeff * self.gen(-m)

    def dd(self, x, v):
        vals, m = self._max(x)
        tol = _ACT_TOL * max(1.0, abs(m))
        dm = max(float(_fp_grad(p, x) @ v)
                 for p, val in zip(self.pieces, vals) if val >= m - tol)
        if self.orientation == "cvx":
            return self.coeff * self.gen.slope(m, 1.0 if dm > 0 else -1.0) * dm
        return self.coeff * self.gen.slope(-m, -1.0 if dm > 0 else 1.0) * dm

    def as_max_term(self):
        """Flatten through an identity or piecewise-affine generator."""
        lines = _gen_lines(self.gen)
        if self.orientation == "cvx":
            pieces = [_fp_scale(p, s, t) for s, t in lines for p in self.pieces]
        else:
            pieces = [_fp_scale(p, s, -t) for s, t in lines for p in self.pieces]
        return _MaxTerm(self.coeff, pieces)


def _gen_lines(gen):
    """Supporting lines (slope, intercept) of an identity or pa generator."""
    if gen.kind == "identity":
        return [(1.0, 0.0)]
    if gen.kind == "pa":
        return [(float(s), float(y - s * t))
                for s, t, y in zip(gen.slopes, gen.ts[:-1], gen.ys[:-1])]
    raise ValueError(
        "exact flattening needs an identity or piecewise-affine generator, "
        "got {!r}".format(gen.kind))


class ConvexAtom:
    """One convex candidate: affine base plus nonnegative max/composite terms."""

    def __init__(self, n, terms=(), base_a=None, base_b=0.0, tag=None):
        self.n = int(n)
        self.terms = list(terms)
        self.base_a = (np.zeros(self.n) if base_a is None
                       else np.asarray(base_a, dtype=float).copy())
        self.base_b = float(base_b)
        self.tag = tag

    def add_affine(self, a, b):
        self.base_a += a
        self.base_b += b

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return float(self.base_a @ x) + self.base_b + sum(
            t.value(x) for t in self.terms)

    def dd(self, x, v):
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        return float(self.base_a @ v) + sum(t.dd(x, v) for t in self.terms)

    def flatten(self):
        """(base_a, base_b, [(weight, pieces)]) with all generators expanded."""
        max_terms = []
        for t in self.terms:
            if isinstance(t, _CompTerm):
                t = t.as_max_term()
            max_terms.append((t.weight, t.pieces))
        return self.base_a, self.base_b, max_terms


class MinGroup:
    """Independent minimization slot: the group value is the atom minimum."""

    def __init__(self, atoms, tag=None):
        if not atoms:
            raise ValueError("empty candidate set in surrogate group")
        self.atoms = list(atoms)
        self.tag = tag

    def value(self, x):
        return min(a.value(x) for a in self.atoms)

    def dd(self, x, v):
        vals = [a.value(x) for a in self.atoms]
        m = min(vals)
        tol = 1e-10 * max(1.0, abs(m))
        return min(a.dd(x, v) for a, val in zip(self.atoms, vals)
                   if val <= m + tol)


class SurrogateRow:
    """Sum over groups of pointwise atom minima, built at (xbar, z)."""

    def __init__(self, groups, xbar, z, gamma, variant, policy,
                 true_value=None, true_dd=None):
        self.groups = list(groups)
        self.xbar = np.asarray(xbar, dtype=float).copy()
        self.z = np.asarray(z, dtype=float).copy()
        self.gamma = gamma
        self.variant = variant
        self.policy = policy
        self.form = ("single-atom"
                     if all(len(g.atoms) == 1 for g in self.groups)
                     else "min-of-atoms")
        self._true_value = true_value
        self._true_dd = true_dd

    def value(self, x):
        return sum(g.value(x) for g in self.groups)

    def dd(self, x, v):
        return sum(g.dd(x, v) for g in self.groups)

    def true_value(self, x):
        return self._true_value(x)

    def true_dd(self, x, v):
        return self._true_dd(x, v)

    @property
    def branch_counts(self):
        return [len(g.atoms) for g in self.groups]


class _Policy:
    def __init__(self, spec):
        if isinstance(spec, _Policy):
            self.kind, self.eps = spec.kind, spec.eps
            return
        if isinstance(spec, str):
            kind, eps = spec, 1e-9
        else:
            kind, eps = spec
        if kind not in ("eps-argmax", "single", "subgradient", "full"):
            raise ValueError("unknown index policy {!r}".format(kind))
        if kind == "eps-argmax" and eps < 0:
            raise ValueError("eps must be nonnegative")
        self.kind = kind
        self.eps = float(eps)


def _selected_indices(values, policy):
    """Candidate piece indices for one max, under the index policy."""
    m = max(values)
    if policy.kind == "full":
        return list(range(len(values)))
    if policy.kind in ("single", "subgradient"):
        return [min(i for i, v in enumerate(values) if v >= m - _ACT_TOL)]
    eps = max(policy.eps, _ACT_TOL)
    return [i for i, v in enumerate(values) if v >= m - eps]


def _subgradient_line(g_vals, h_vals, g_fps, h_fps, xbar, extra_g=0.0,
                      extra_h=0.0):
    """Lowest-index tangent of max(extra_g + g, extra_h + h) at xbar.

    Ties go to the g side.  Returns the tangent as an (a, b) pair together
    with the attained maximum value.
    """
    gm = max(g_vals) + extra_g
    hm = max(h_vals) + extra_h
    if gm >= hm:
        i = min(i for i, v in enumerate(g_vals) if v >= max(g_vals) - _ACT_TOL)
        a, b = _fp_linearize(g_fps[i], xbar)
        return a, b + extra_g, gm
    j = min(j for j, v in enumerate(h_vals) if v >= max(h_vals) - _ACT_TOL)
    a, b = _fp_linearize(h_fps[j], xbar)
    return a, b + extra_h, hm


def _phi_dd(t0, w, gamma, gen, which):
    """One-sided derivative of a ramp composite along Z-derivative w."""
    if gamma <= 0:
        raise ValueError("directional derivative needs gamma > 0")
    u = 1.0 + t0 / gamma if which == "ub" else t0 / gamma
    du = w / gamma
    if u < 0.0 or u > 1.0:
        dT = 0.0
    elif u == 0.0:
        dT = max(du, 0.0)
    elif u == 1.0:
        dT = min(du, 0.0)
    else:
        dT = du
    if dT == 0.0:
        return 0.0
    Tval = min(max(u, 0.0), 1.0)
    return gen.slope(Tval, 1.0 if dT > 0 else -1.0) * dT


def true_row_value(problem, k, x, z, gamma, variant, theta=IDENTITY_PAIR):
    """Row value from direct evaluation of the ramp composites."""
    total = 0.0
    for ell, f in enumerate(problem.functionals):
        ep = problem.E_pos[k, ell]
        em = problem.E_neg[k, ell]
        if ep == 0.0 and em == 0.0:
            continue
        t = f.value(x, z)
        ub = phi_ub(t, gamma, theta)
        lb = phi_lb(t, gamma, theta)
        if variant == "rst":
            total += ep * ub - em * lb
        else:
            total += ep * lb - em * ub
    return total


def true_row_dd(problem, k, x, z, gamma, variant, v, theta=IDENTITY_PAIR):
    """One-sided directional derivative of the exact row."""
    total = 0.0
    for ell, f in enumerate(problem.functionals):
        ep = problem.E_pos[k, ell]
        em = problem.E_neg[k, ell]
        if ep == 0.0 and em == 0.0:
            continue
        t0 = f.value(x, z)
        w = dir_deriv_dc(f, x, z, v)
        d_ub = _phi_dd(t0, w, gamma, theta.cvx, "ub")
        d_lb = _phi_dd(t0, w, gamma, theta.cve, "lb")
        if variant == "rst":
            total += ep * d_ub - em * d_lb
        else:
            total += ep * d_lb - em * d_ub
    return total


def _functional_data(f, z, xbar, gamma):
    """Frozen pieces, reference values and scaled copies for one functional."""
    g_fps = [_freeze(p, z) for p in f.g_pieces]
    h_fps = [_freeze(p, z) for p in f.h_pieces]
    g_vals = [_fp_value(p, xbar) for p in g_fps]
    h_vals = [_fp_value(p, xbar) for p in h_fps]
    inv = 1.0 / gamma
    g_sc = [_fp_scale(p, inv) for p in g_fps]
    h_sc = [_fp_scale(p, inv) for p in h_fps]
    return g_fps, h_fps, g_vals, h_vals, g_sc, h_sc


def _gh_candidates(g_fps, h_fps, g_vals, h_vals, policy, xbar, gamma):
    """Affine candidates replacing max(g, h)/gamma, as (a, b) pairs.

    Selection is per side: each side contributes the linearizations of its
    own (eps-)argmax pieces, so the joint argmax is always covered and the
    candidate family varies upper semicontinuously in the reference point.
    """
    cands = []
    if policy.kind == "subgradient":
        a, b, _ = _subgradient_line(g_vals, h_vals, g_fps, h_fps, xbar)
        return [(a / gamma, b / gamma)]
    sel_g = _selected_indices(g_vals, policy)
    sel_h = _selected_indices(h_vals, policy)
    for i in sel_g:
        a, b = _fp_linearize(g_fps[i], xbar)
        cands.append((a / gamma, b / gamma))
    for j in sel_h:
        a, b = _fp_linearize(h_fps[j], xbar)
        cands.append((a / gamma, b / gamma))
    if not cands:
        raise ValueError("empty candidate set for a max replacement")
    return cands


def _require_affine(f):
    if not f.all_affine:
        raise ValueError(
            "the full index policy linearizes whole maxima and needs "
            "affine pieces")


def build_surrogate_rst(problem, k, z, gamma, xbar, policy="eps-argmax",
                        theta=IDENTITY_PAIR):
    """Majorizing min-of-convex form of restricted row k at (xbar, z)."""
    if gamma <= 0:
        raise ValueError("surrogate construction needs gamma > 0")
    policy = _Policy(policy)
    xbar = np.asarray(xbar, dtype=float)
    z = np.asarray(z, dtype=float)
    n = problem.n
    groups = []
    for ell, f in enumerate(problem.functionals):
        ep = problem.E_pos[k, ell]
        em = problem.E_neg[k, ell]
        if ep == 0.0 and em == 0.0:
            continue
        if policy.kind == "full":
            groups.extend(_full_rst_groups(f, z, xbar, gamma, ep, em, theta,
                                           n, ell))
            continue
        data = _functional_data(f, z, xbar, gamma)
        g_fps, h_fps, g_vals, h_vals, g_sc, h_sc = data
        # pieces of max(1 + g/gamma, h/gamma) and max(g/gamma - 1, h/gamma)
        g1 = [_fp_scale(p, 1.0, 1.0) for p in g_sc] + h_sc
        h1 = [_fp_scale(p, 1.0, -1.0) for p in g_sc] + h_sc
        cands = _gh_candidates(g_fps, h_fps, g_vals, h_vals, policy, xbar,
                               gamma)
        up_atoms, low_atoms = [], []
        for a_c, b_c in cands:
            if ep > 0.0:
                pieces = [_fp_minus_affine(p, a_c, b_c) for p in g1]
                atom = ConvexAtom(n, [_CompTerm("cvx", ep, theta.cvx, pieces)],
                                  tag=(k, ell))
                up_atoms.append(atom)
            if em > 0.0:
                pieces = [_fp_minus_affine(p, a_c, b_c) for p in h1]
                atom = ConvexAtom(n, [_CompTerm("cve", em, theta.cve, pieces)],
                                  tag=(k, ell))
                low_atoms.append(atom)
        if policy.kind == "subgradient" and up_atoms and low_atoms:
            merged = ConvexAtom(n, up_atoms[0].terms + low_atoms[0].terms,
                                tag=(k, ell))
            groups.append(MinGroup([merged], tag=(k, ell)))
        else:
            if up_atoms:
                groups.append(MinGroup(up_atoms, tag=(k, ell)))
            if low_atoms:
                groups.append(MinGroup(low_atoms, tag=(k, ell)))
    return _finish_row(problem, k, z, gamma, "rst", policy, xbar, groups,
                       theta, n)


def build_surrogate_rlx(problem, k, z, gamma, xbar, policy="eps-argmax",
                        theta=IDENTITY_PAIR):
    """Majorizing min-of-convex form of relaxed row k at (xbar, z).

    The outer generators are linearized at the reference composite values
    (both one-sided slopes enter as separate candidates at generator kinks),
    after which each atom is a weighted max node plus an affine part.
    """
    if gamma <= 0:
        raise ValueError("surrogate construction needs gamma > 0")
    policy = _Policy(policy)
    xbar = np.asarray(xbar, dtype=float)
    z = np.asarray(z, dtype=float)
    n = problem.n
    groups = []
    for ell, f in enumerate(problem.functionals):
        ep = problem.E_pos[k, ell]
        em = problem.E_neg[k, ell]
        if ep == 0.0 and em == 0.0:
            continue
        if policy.kind == "full":
            groups.extend(_full_rlx_groups(f, z, xbar, gamma, ep, em, theta,
                                           n, ell))
            continue
        data = _functional_data(f, z, xbar, gamma)
        g_fps, h_fps, g_vals, h_vals, g_sc, h_sc = data
        gm, hm = max(g_vals), max(h_vals)
        g1_bar = max(1.0 + gm / gamma, hm / gamma)
        gh_bar = max(gm, hm) / gamma
        h1_bar = max(gm / gamma - 1.0, hm / gamma)
        u1 = g1_bar - gh_bar
        u2 = gh_bar - h1_bar
        gh_pieces = g_sc + h_sc
        if em > 0.0:
            groups.append(MinGroup(
                _slope_atoms(theta.cvx, u1, em, gh_pieces,
                             _g1_candidates(f, data, policy, xbar, gamma),
                             base=-em * float(theta.cvx(u1)), n=n,
                             tag=(k, ell)),
                tag=(k, ell)))
        if ep > 0.0:
            groups.append(MinGroup(
                _slope_atoms(theta.cve, u2, ep, gh_pieces,
                             _h1_candidates(f, data, policy, xbar, gamma),
                             base=ep * float(theta.cve(u2)), n=n,
                             tag=(k, ell), concave=True),
                tag=(k, ell)))
    if _Policy(policy).kind == "subgradient":
        groups = _merge_singletons(groups, n)
    return _finish_row(problem, k, z, gamma, "rlx", policy, xbar, groups,
                       theta, n)


def _one_sided_slopes(gen, u):
    left = gen.slope(u, -1.0)
    right = gen.slope(u, 1.0)
    if abs(left - right) <= 1e-14:
        return [right]
    return [left, right]


def _slope_atoms(gen, ubar, coeff, gh_pieces, candidates, base, n, tag,
                 concave=False):
    """Atoms coeff*s*(gh - candidate) + const over slope and candidate picks.

    For the convex generator the term is -coeff*theta(u) linearized from
    above, for the concave one +coeff*theta(u); either way the supporting
    slope s is nonnegative and multiplies (gh - candidate) + reference
    constants, leaving a max node with weight coeff*s plus an affine part.
    """
    atoms = []
    for s in _one_sided_slopes(gen, ubar):
        for a_c, b_c in candidates:
            atom = ConvexAtom(n, [_MaxTerm(coeff * s, gh_pieces)], tag=tag)
            if concave:
                # +coeff*[theta(ubar) + s*((gh - cand) - ubar)]
                atom.add_affine(-coeff * s * a_c,
                                base - coeff * s * (b_c + ubar))
            else:
                # -coeff*[theta(ubar) + s*((cand - gh) - ubar)]
                atom.add_affine(-coeff * s * a_c,
                                base - coeff * s * (b_c - ubar))
            atoms.append(atom)
    return atoms


def _g1_candidates(f, data, policy, xbar, gamma):
    """Affine minorants of max(1 + g/gamma, h/gamma) selected at xbar."""
    g_fps, h_fps, g_vals, h_vals, _, _ = data
    if policy.kind == "subgradient":
        a, b, _ = _subgradient_line(
            [v / gamma for v in g_vals], [v / gamma for v in h_vals],
            [_fp_scale(p, 1.0 / gamma) for p in g_fps],
            [_fp_scale(p, 1.0 / gamma) for p in h_fps], xbar, extra_g=1.0)
        return [(a, b)]
    cands = []
    for i in _selected_indices(g_vals, policy):
        a, b = _fp_linearize(g_fps[i], xbar)
        cands.append((a / gamma, b / gamma + 1.0))
    for j in _selected_indices(h_vals, policy):
        a, b = _fp_linearize(h_fps[j], xbar)
        cands.append((a / gamma, b / gamma))
    return cands


def _h1_candidates(f, data, policy, xbar, gamma):
    """Affine minorants of max(g/gamma - 1, h/gamma) selected at xbar."""
    g_fps, h_fps, g_vals, h_vals, _, _ = data
    if policy.kind == "subgradient":
        a, b, _ = _subgradient_line(
            [v / gamma for v in g_vals], [v / gamma for v in h_vals],
            [_fp_scale(p, 1.0 / gamma) for p in g_fps],
            [_fp_scale(p, 1.0 / gamma) for p in h_fps], xbar, extra_g=-1.0)
        return [(a, b)]
    cands = []
    for i in _selected_indices(g_vals, policy):
        a, b = _fp_linearize(g_fps[i], xbar)
        cands.append((a / gamma, b / gamma - 1.0))
    for j in _selected_indices(h_vals, policy):
        a, b = _fp_linearize(h_fps[j], xbar)
        cands.append((a / gamma, b / gamma))
    return cands


def _merge_singletons(groups, n):
    """Collapse one-atom groups into a single-atom row (subgradient form)."""
    if not groups or any(len(g.atoms) != 1 for g in groups):
        return groups
    merged = ConvexAtom(n)
    for g in groups:
        a = g.atoms[0]
        merged.terms.extend(a.terms)
        merged.add_affine(a.base_a, a.base_b)
    return [MinGroup([merged])]


def _full_rst_groups(f, z, xbar, gamma, ep, em, theta, n, ell):
    """Fully-linearized restricted groups from the LZ difference bounds."""
    _require_affine(f)
    data = _functional_data(f, z, xbar, gamma)
    g_fps, h_fps, _, _, g_sc, h_sc = data
    Lh_sc = [FrozenPiece(None, *_fp_linearize(p, xbar)) for p in h_sc]
    Lg_sc = [FrozenPiece(None, *_fp_linearize(p, xbar)) for p in g_sc]
    groups = []
    if ep > 0.0:
        # phi_ub of (g - linearized h): candidates run over the pieces of
        # max(g/gamma, Lh/gamma)
        g1 = [_fp_scale(p, 1.0, 1.0) for p in g_sc] + Lh_sc
        atoms = []
        for c in g_sc + Lh_sc:
            a_c, b_c = c.a, c.b
            pieces = [_fp_minus_affine(p, a_c, b_c) for p in g1]
            atoms.append(ConvexAtom(
                n, [_CompTerm("cvx", ep, theta.cvx, pieces)], tag=(None, ell)))
        groups.append(MinGroup(atoms, tag=(None, ell)))
    if em > 0.0:
        # phi_lb of (linearized g - h): expand the positive max over the
        # pieces of max(Lg/gamma, h/gamma); the remaining node is concave
        # inside the flipped generator
        h1 = [_fp_scale(p, 1.0, -1.0) for p in Lg_sc] + h_sc
        atoms = []
        for c in Lg_sc + h_sc:
            a_c, b_c = c.a, c.b
            pieces = [_fp_minus_affine(p, a_c, b_c) for p in h1]
            atoms.append(ConvexAtom(
                n, [_CompTerm("cve", em, theta.cve, pieces)], tag=(None, ell)))
        groups.append(MinGroup(atoms, tag=(None, ell)))
    return groups


def _full_rlx_groups(f, z, xbar, gamma, ep, em, theta, n, ell):
    """Fully-linearized relaxed groups; generators must be identity or pa."""
    _require_affine(f)
    lines_cvx = _gen_lines(theta.cvx)
    lines_cve = _gen_lines(theta.cve)
    data = _functional_data(f, z, xbar, gamma)
    g_fps, h_fps, _, _, g_sc, h_sc = data
    Lh_sc = [FrozenPiece(None, *_fp_linearize(p, xbar)) for p in h_sc]
    Lg_sc = [FrozenPiece(None, *_fp_linearize(p, xbar)) for p in g_sc]
    groups = []
    if ep > 0.0:
        # theta_cve(max(g, Lh)/gamma - max(g/gamma - 1, Lh/gamma)) expanded
        # over generator lines and pieces of the subtracted max
        gh = g_sc + Lh_sc
        subtracted = [_fp_scale(p, 1.0, -1.0) for p in g_sc] + Lh_sc
        atoms = []
        for s, t in lines_cve:
            for c in subtracted:
                atom = ConvexAtom(n, [_MaxTerm(ep * s, gh)], tag=(None, ell))
                atom.add_affine(-ep * s * c.a, ep * (t - s * c.b))
                atoms.append(atom)
        groups.append(MinGroup(atoms, tag=(None, ell)))
    if em > 0.0:
        # -theta_cvx(max(1 + Lg/gamma, h/gamma) - max(Lg, h)/gamma) expanded
        # over generator lines and pieces of the leading max
        gh = Lg_sc + h_sc
        leading = [_fp_scale(p, 1.0, 1.0) for p in Lg_sc] + h_sc
        atoms = []
        for s, t in lines_cvx:
            for c in leading:
                atom = ConvexAtom(n, [_MaxTerm(em * s, gh)], tag=(None, ell))
                atom.add_affine(-em * s * c.a, -em * (t + s * c.b))
                atoms.append(atom)
        groups.append(MinGroup(atoms, tag=(None, ell)))
    return groups


def _finish_row(problem, k, z, gamma, variant, policy, xbar, groups, theta,
                n):
    if not groups:
        groups = [MinGroup([ConvexAtom(n)], tag=(k, None))]
    return SurrogateRow(
        groups, xbar, z, gamma, variant, (policy.kind, policy.eps),
        true_value=lambda x: true_row_value(problem, k, x, z, gamma, variant,
                                            theta),
        true_dd=lambda x, v: true_row_dd(problem, k, x, z, gamma, variant, v,
                                         theta))


def build_surrogate_objective(problem, z, xbar, policy="eps-argmax"):
    """Majorizing form of the objective term at (xbar, z).

    A convex objective (single affine lower piece) is returned unchanged as
    one exact atom; otherwise the subtracted maximum is replaced by
    linearizations of the selected pieces.
    """
    policy = _Policy(policy)
    xbar = np.asarray(xbar, dtype=float)
    z = np.asarray(z, dtype=float)
    f = problem.objective
    n = problem.n
    g_fps = [_freeze(p, z) for p in f.g_pieces]
    h_fps = [_freeze(p, z) for p in f.h_pieces]
    atoms = []
    if len(h_fps) == 1 and h_fps[0].Q is None:
        atom = ConvexAtom(n, [_MaxTerm(1.0, g_fps)])
        atom.add_affine(-h_fps[0].a, -h_fps[0].b)
        atoms.append(atom)
    else:
        h_vals = [_fp_value(p, xbar) for p in h_fps]
        if policy.kind == "subgradient":
            sel = [min(j for j, v in enumerate(h_vals)
                       if v >= max(h_vals) - _ACT_TOL)]
        else:
            sel = _selected_indices(h_vals, policy)
        for j in sel:
            a, b = _fp_linearize(h_fps[j], xbar)
            atom = ConvexAtom(n, [_MaxTerm(1.0, g_fps)])
            atom.add_affine(-a, -b)
            atoms.append(atom)
    groups = [MinGroup(atoms)]
    return SurrogateRow(
        groups, xbar, z, 1.0, "objective", (policy.kind, policy.eps),
        true_value=lambda x: f.value(x, z),
        true_dd=lambda x, v: dir_deriv_dc(f, x, z, v))


def check_surrogate_conditions(row, probe_grid, directions, tol_touch=1e-10,
                               tol_major=1e-10, tol_dd=1e-8):
    """Report on the touching, majorization, and derivative conditions.

    Returns a dict with the touching gap at the reference point, the worst
    (most negative) majorization slack over the probe grid, the count of
    grid points violating majorization beyond tolerance, and the largest
    directional derivative mismatch at the reference point.
    """
    xbar = row.xbar
    touch = abs(row.value(xbar) - row.true_value(xbar))
    worst = np.inf
    violations = 0
    for p in probe_grid:
        p = np.atleast_1d(np.asarray(p, dtype=float))
        slack = row.value(p) - row.true_value(p)
        worst = min(worst, slack)
        if slack < -tol_major * max(1.0, abs(row.true_value(p))):
            violations += 1
    dd_gap = 0.0
    for v in directions:
        v = np.atleast_1d(np.asarray(v, dtype=float))
        dd_gap = max(dd_gap, abs(row.dd(xbar, v) - row.true_dd(xbar, v)))
    return {
        "touching_gap": touch,
        "majorization_min_slack": worst,
        "majorization_violations": violations,
        "dd_max_gap": dd_gap,
        "touching_ok": touch <= tol_touch,
        "majorization_ok": violations == 0,
        "dd_ok": dd_gap <= tol_dd,
    }
