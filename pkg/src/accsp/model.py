"""Problem data model: convex pieces, difference-of-max functionals, domains.

A random functional is represented as a pointwise maximum of smooth convex
pieces minus another such maximum.  Pieces are affine or convex-quadratic in
the decision vector, with coefficients that may depend on the random vector
through one of three sample maps (constant, linear in z, or a lookup table
indexed by z).  Maxima are kept as explicit piece lists and never smoothed;
all downstream machinery (directional derivatives, surrogates, composition)
works off the piece structure.
"""

from __future__ import annotations

import warnings

import numpy as np
from scipy.optimize import linprog

__all__ = [
    "SmoothConvexPiece",
    "DcMaxFunction",
    "Polytope",
    "RandomSource",
    "AccProblem",
    "eval_dc",
    "dir_deriv_dc",
    "dc_compose",
    "build_logical_event",
    "audit_gradient_bound",
]

# hard ceiling on piece lists produced by composition, to keep the cross-sum
# expansion from blowing up silently
_MAX_PIECES = 20000


class SmoothConvexPiece:
    """One smooth convex piece 0.5 x'Qx + a(z)'x + b(z).

    Parameters
    ----------
    a : array_like, shape (n,)
        Base gradient coefficient.
    b : float
        Base offset.
    Q : array_like, shape (n, n), optional
        Symmetric PSD quadratic term; omit for an affine piece.
    a_z : array_like, shape (n, nz), optional
        Linear dependence of the gradient coefficient on z.
    b_z : array_like, shape (nz,), optional
        Linear dependence of the offset on z.
    a_table, b_table : array_like, optional
        Lookup rows for table-indexed pieces; z[0] is cast to an integer row
        index.  Mutually exclusive with a_z / b_z.
    """

    def __init__(self, a, b=0.0, Q=None, a_z=None, b_z=None,
                 a_table=None, b_table=None):
        self.a = np.atleast_1d(np.asarray(a, dtype=float))
        if self.a.ndim != 1:
            raise ValueError("a must be a vector")
        self.n = self.a.size
        self.b = float(b)
        if Q is not None:
            Q = np.asarray(Q, dtype=float)
            if Q.shape != (self.n, self.n):
                raise ValueError("Q shape {} does not match n={}".format(Q.shape, self.n))
            if not np.allclose(Q, Q.T, atol=1e-12):
                raise ValueError("Q must be symmetric")
            w = np.linalg.eigvalsh(Q)
            if w.min() < -1e-10 * max(1.0, abs(w.max())):
                raise ValueError("Q must be positive semidefinite, min eig {}".format(w.min()))
        self.Q = Q
        if (a_table is not None or b_table is not None) and \
                (a_z is not None or b_z is not None):
            raise ValueError("table-indexed and linear-in-z maps are mutually exclusive")
        self.a_z = None if a_z is None else np.asarray(a_z, dtype=float)
        if self.a_z is not None and (self.a_z.ndim != 2 or self.a_z.shape[0] != self.n):
            raise ValueError("a_z must have shape (n, nz)")
        self.b_z = None if b_z is None else np.atleast_1d(np.asarray(b_z, dtype=float))
        self.a_table = None if a_table is None else np.asarray(a_table, dtype=float)
        self.b_table = None if b_table is None else np.asarray(b_table, dtype=float)
        if self.a_table is not None and self.a_table.shape[1] != self.n:
            raise ValueError("a_table rows must have length n")

    @property
    def kind(self):
        return "affine" if self.Q is None else "convex-quadratic"

    @property
    def is_affine(self):
        return self.Q is None

    def _coeffs(self, z):
        """Gradient coefficient and offset at one sample z."""
        z = np.atleast_1d(np.asarray(z, dtype=float))
        a, b = self.a, self.b
        if self.a_table is not None or self.b_table is not None:
            idx = int(round(z[0]))
            if self.a_table is not None:
                a = self.a_table[idx]
            if self.b_table is not None:
                b = float(self.b_table[idx])
            return a, b
        if self.a_z is not None:
            a = a + self.a_z @ z[: self.a_z.shape[1]]
        if self.b_z is not None:
            b = b + float(self.b_z @ z[: self.b_z.size])
        return a, b

    def value(self, x, z):
        x = np.asarray(x, dtype=float)
        a, b = self._coeffs(z)
        v = float(a @ x) + b
        if self.Q is not None:
            v += 0.5 * float(x @ self.Q @ x)
        return v

    def grad(self, x, z):
        x = np.asarray(x, dtype=float)
        a, _ = self._coeffs(z)
        if self.Q is None:
            return a.copy()
        return a + self.Q @ x

    def value_batch(self, x, Z):
        """Values over a sample block Z of shape (N, nz)."""
        x = np.asarray(x, dtype=float)
        Z = np.asarray(Z, dtype=float)
        if Z.ndim == 1:
            Z = Z[:, None]
        if self.a_table is not None or self.b_table is not None:
            idx = np.rint(Z[:, 0]).astype(int)
            a = self.a_table[idx] if self.a_table is not None \
                else np.broadcast_to(self.a, (len(idx), self.n))
            b = self.b_table[idx] if self.b_table is not None \
                else np.full(len(idx), self.b)
            out = a @ x + b
        else:
            out = np.full(Z.shape[0], self.b + float(self.a @ x))
            if self.a_z is not None:
                out = out + Z[:, : self.a_z.shape[1]] @ (self.a_z.T @ x)
            if self.b_z is not None:
                out = out + Z[:, : self.b_z.size] @ self.b_z
        if self.Q is not None:
            out = out + 0.5 * float(x @ self.Q @ x)
        return out

    def affine_data(self, z):
        """(gradient, offset) of an affine piece at sample z."""
        if self.Q is not None:
            raise ValueError("affine_data called on a quadratic piece")
        return self._coeffs(z)

    def shifted(self, delta):
        """Copy with the base offset shifted by delta."""
        p = SmoothConvexPiece.__new__(SmoothConvexPiece)
        p.__dict__.update(self.__dict__)
        p.a = self.a.copy()
        p.b = self.b + float(delta)
        return p


def zero_piece(n):
    return SmoothConvexPiece(np.zeros(n), 0.0)


def affine_piece(a, b=0.0, **kw):
    return SmoothConvexPiece(a, b, **kw)


class DcMaxFunction:
    """max over g pieces minus max over h pieces, each piece smooth convex."""

    def __init__(self, g_pieces, h_pieces=None):
        g_pieces = list(g_pieces)
        if not g_pieces:
            raise ValueError("need at least one g piece")
        n = g_pieces[0].n
        if h_pieces is None:
            h_pieces = [zero_piece(n)]
        h_pieces = list(h_pieces)
        if not h_pieces:
            raise ValueError("need at least one h piece")
        for p in g_pieces + h_pieces:
            if p.n != n:
                raise ValueError("inconsistent piece dimensions")
        self.g_pieces = g_pieces
        self.h_pieces = h_pieces
        self.n = n

    @property
    def I(self):
        return len(self.g_pieces)

    @property
    def J(self):
        return len(self.h_pieces)

    @property
    def all_affine(self):
        return all(p.is_affine for p in self.g_pieces + self.h_pieces)

    def g_values(self, x, z):
        return np.array([p.value(x, z) for p in self.g_pieces])

    def h_values(self, x, z):
        return np.array([p.value(x, z) for p in self.h_pieces])

    def value(self, x, z):
        return float(self.g_values(x, z).max() - self.h_values(x, z).max())

    def value_batch(self, x, Z):
        g = np.stack([p.value_batch(x, Z) for p in self.g_pieces])
        h = np.stack([p.value_batch(x, Z) for p in self.h_pieces])
        return g.max(axis=0) - h.max(axis=0)

    def g_h_batch(self, x, Z):
        """Componentwise (max g, max h) over a sample block."""
        g = np.stack([p.value_batch(x, Z) for p in self.g_pieces])
        h = np.stack([p.value_batch(x, Z) for p in self.h_pieces])
        return g.max(axis=0), h.max(axis=0)


class DcEval:
    """Evaluation record of a DcMaxFunction at a point."""

    __slots__ = ("value", "g_max", "h_max", "g_argmax", "h_argmax",
                 "g_eps", "h_eps")

    def __init__(self, value, g_max, h_max, g_argmax, h_argmax, g_eps, h_eps):
        self.value = value
        self.g_max = g_max
        self.h_max = h_max
        self.g_argmax = g_argmax
        self.h_argmax = h_argmax
        self.g_eps = g_eps
        self.h_eps = h_eps


def eval_dc(f, x, z, eps=1e-9):
    """Evaluate a DcMaxFunction with exact and eps-active index sets.

    The active sets use an absolute tolerance of 1e-12 on piece values; the
    eps sets collect pieces within ``eps`` of the max.
    """
    gv = f.g_values(x, z)
    hv = f.h_values(x, z)
    g_max, h_max = float(gv.max()), float(hv.max())
    g_arg = [i for i, v in enumerate(gv) if v >= g_max - 1e-12]
    h_arg = [j for j, v in enumerate(hv) if v >= h_max - 1e-12]
    g_eps = [i for i, v in enumerate(gv) if v >= g_max - eps]
    h_eps = [j for j, v in enumerate(hv) if v >= h_max - eps]
    return DcEval(g_max - h_max, g_max, h_max, g_arg, h_arg, g_eps, h_eps)


def dir_deriv_dc(f, x, z, v):
    """One-sided directional derivative of a DcMaxFunction.

    Equals the max of piece-gradient inner products over the active g set
    minus the same max over the active h set.
    """
    rec = eval_dc(f, x, z)
    v = np.asarray(v, dtype=float)
    dg = max(float(f.g_pieces[i].grad(x, z) @ v) for i in rec.g_argmax)
    dh = max(float(f.h_pieces[j].grad(x, z) @ v) for j in rec.h_argmax)
    return dg - dh


def _sum_pieces(p, q):
    """Sum of two pieces as a new piece (closed under affine/quadratic)."""
    Q = None
    if p.Q is not None or q.Q is not None:
        Q = np.zeros((p.n, p.n))
        if p.Q is not None:
            Q += p.Q
        if q.Q is not None:
            Q += q.Q
    out = SmoothConvexPiece(p.a + q.a, p.b + q.b, Q=Q)
    # combine the z maps; mixing a table with a linear map is rejected
    for attr in ("a_z", "b_z", "a_table", "b_table"):
        pa, qa = getattr(p, attr), getattr(q, attr)
        if pa is not None and qa is not None:
            if attr.endswith("table"):
                raise ValueError("cannot add two table-indexed pieces")
            if pa.shape != qa.shape:
                raise ValueError("incompatible z maps in piece sum")
            setattr(out, attr, pa + qa)
        elif pa is not None:
            setattr(out, attr, pa.copy())
        elif qa is not None:
            setattr(out, attr, qa.copy())
    if (out.a_table is not None or out.b_table is not None) and \
            (out.a_z is not None or out.b_z is not None):
        raise ValueError("piece sum mixes table and linear z maps")
    return out


def _scale_piece(p, c):
    """c * piece for c >= 0 (keeps convexity)."""
    if c < 0:
        raise ValueError("piece scaling must be nonnegative")
    out = SmoothConvexPiece(c * p.a, c * p.b, Q=None if p.Q is None else c * p.Q)
    for attr in ("a_z", "b_z", "a_table", "b_table"):
        v = getattr(p, attr)
        if v is not None:
            setattr(out, attr, c * v)
    return out


def _max_sum(terms):
    """Cross-sum expansion of a sum of max-of-piece-lists into one list.

    ``terms`` is a list of piece lists; the result represents
    sum_t max(terms[t]) as max over all piece-index tuples of the summed
    pieces.  Guarded by the global piece cap.
    """
    total = 1
    for t in terms:
        total *= len(t)
        if total > _MAX_PIECES:
            raise ValueError(
                "composition would create {}+ pieces (cap {})".format(total, _MAX_PIECES))
    out = [t for t in terms[0]]
    for t in terms[1:]:
        out = [_sum_pieces(p, q) for p in out for q in t]
    return out


def dc_compose(a_rows, a_offsets, b_rows, b_offsets, inner):
    """Compose a piecewise-affine outer map with difference-of-max inners.

    The outer map is phi(y) = max_i (a_rows[i] . y + a_offsets[i])
    - max_j (b_rows[j] . y + b_offsets[j]); ``inner`` is a sequence of
    DcMaxFunctions y_l = G_l - H_l in the decision vector.  The result is a
    single DcMaxFunction equal to phi(inner(x)) pointwise, built by signed
    splitting of the outer coefficients and cross-sum expansion.
    """
    a_rows = np.atleast_2d(np.asarray(a_rows, dtype=float))
    b_rows = np.atleast_2d(np.asarray(b_rows, dtype=float))
    a_offsets = np.atleast_1d(np.asarray(a_offsets, dtype=float))
    b_offsets = np.atleast_1d(np.asarray(b_offsets, dtype=float))
    inner = list(inner)
    L = len(inner)
    if a_rows.shape[1] != L or b_rows.shape[1] != L:
        raise ValueError("outer row length must match number of inner functions")
    if a_rows.shape[0] != a_offsets.size or b_rows.shape[0] != b_offsets.size:
        raise ValueError("offsets must match row counts")
    n = inner[0].n

    def pos_part(row):
        # max-term lists for sum_l (row_l+ G_l + row_l- H_l)
        terms = []
        for l, fn in enumerate(inner):
            cp, cm = max(row[l], 0.0), max(-row[l], 0.0)
            if cp > 0.0:
                terms.append([_scale_piece(p, cp) for p in fn.g_pieces])
            if cm > 0.0:
                terms.append([_scale_piece(p, cm) for p in fn.h_pieces])
        if not terms:
            terms = [[zero_piece(n)]]
        return terms

    def neg_part(row):
        terms = []
        for l, fn in enumerate(inner):
            cp, cm = max(row[l], 0.0), max(-row[l], 0.0)
            if cp > 0.0:
                terms.append([_scale_piece(p, cp) for p in fn.h_pieces])
            if cm > 0.0:
                terms.append([_scale_piece(p, cm) for p in fn.g_pieces])
        if not terms:
            terms = [[zero_piece(n)]]
        return terms

    a_pos = [pos_part(r) for r in a_rows]
    a_neg = [_max_sum(neg_part(r)) for r in a_rows]
    b_pos = [pos_part(r) for r in b_rows]
    b_neg = [_max_sum(neg_part(r)) for r in b_rows]

    # g side: for each i, (P_ai + alpha_i) + sum_{i' != i} N_ai' + sum_j N_bj
    g_terms = []
    for i in range(a_rows.shape[0]):
        terms = list(a_pos[i])
        for i2 in range(a_rows.shape[0]):
            if i2 != i:
                terms.append(a_neg[i2])
        for j in range(b_rows.shape[0]):
            terms.append(b_neg[j])
        branch = _max_sum(terms)
        branch = [p.shifted(a_offsets[i]) for p in branch]
        g_terms.extend(branch)
    # h side: for each j, (P_bj + beta_j) + sum_{j' != j} N_bj' + sum_i N_ai
    h_terms = []
    for j in range(b_rows.shape[0]):
        terms = list(b_pos[j])
        for j2 in range(b_rows.shape[0]):
            if j2 != j:
                terms.append(b_neg[j2])
        for i in range(a_rows.shape[0]):
            terms.append(a_neg[i])
        branch = _max_sum(terms)
        branch = [p.shifted(b_offsets[j]) for p in branch]
        h_terms.extend(branch)
    if len(g_terms) > _MAX_PIECES or len(h_terms) > _MAX_PIECES:
        raise ValueError("composition exceeded the piece cap")
    return DcMaxFunction(g_terms, h_terms)


def _compose_pair(op, f1, f2):
    if op == "or":       # max(y1, y2)
        return dc_compose([[1.0, 0.0], [0.0, 1.0]], [0.0, 0.0],
                          [[0.0, 0.0]], [0.0], [f1, f2])
    if op == "and":      # min(y1, y2) = (y1 + y2) - max(y1, y2)
        return dc_compose([[1.0, 1.0]], [0.0],
                          [[1.0, 0.0], [0.0, 1.0]], [0.0, 0.0], [f1, f2])
    raise ValueError("unknown logical op {!r}".format(op))


def build_logical_event(tree, functionals=None):
    """Fold an and/or tree of functionals into one DcMaxFunction.

    ``tree`` is either a DcMaxFunction, an integer index into
    ``functionals``, or a dict {"op": "and"|"or", "children": [...]} with two
    or more children.  "and" maps to the pointwise min (all events hold),
    "or" to the max.  The returned functional is nonnegative exactly where
    the composite event holds, so a single probability row over it expresses
    the conjunction or disjunction.
    """
    if isinstance(tree, DcMaxFunction):
        return tree
    if isinstance(tree, (int, np.integer)):
        if functionals is None:
            raise ValueError("integer leaf requires the functionals list")
        return functionals[int(tree)]
    if not isinstance(tree, dict) or "op" not in tree or "children" not in tree:
        raise ValueError("tree nodes must be dicts with 'op' and 'children'")
    children = [build_logical_event(c, functionals) for c in tree["children"]]
    if len(children) < 2:
        raise ValueError("logical nodes need at least two children")
    out = children[0]
    for c in children[1:]:
        out = _compose_pair(tree["op"], out, c)
    return out


class Polytope:
    """Feasible region {x : A x <= b, lo <= x <= hi}, checked at load.

    Nonemptiness and boundedness are certified with 2n + 1 linear programs;
    an unbounded or empty region raises ValueError.  Either part (rows or
    bounds) may be absent as long as the intersection stays bounded.
    """

    def __init__(self, A=None, b=None, lo=None, hi=None, check=True):
        if (A is None) != (b is None):
            raise ValueError("A and b must be given together")
        if A is not None:
            A = np.atleast_2d(np.asarray(A, dtype=float))
            b = np.atleast_1d(np.asarray(b, dtype=float))
            if A.shape[0] != b.size:
                raise ValueError("row mismatch between A and b")
            n = A.shape[1]
        else:
            if lo is None and hi is None:
                raise ValueError("need rows or bounds")
            n = np.atleast_1d(np.asarray(lo if lo is not None else hi)).size
        self.A = A
        self.b = b
        self.lo = None if lo is None else np.broadcast_to(
            np.asarray(lo, dtype=float), (n,)).copy()
        self.hi = None if hi is None else np.broadcast_to(
            np.asarray(hi, dtype=float), (n,)).copy()
        self.n = n
        if self.lo is not None and self.hi is not None and np.any(self.lo > self.hi):
            raise ValueError("lo exceeds hi")
        self.box = [(None if self.lo is None else self.lo[d],
                     None if self.hi is None else self.hi[d]) for d in range(n)]
        if check:
            self._certify()

    def _lp(self, c):
        return linprog(c, A_ub=self.A, b_ub=self.b, bounds=self.box,
                       method="highs")

    def _certify(self):
        res = self._lp(np.zeros(self.n))
        if res.status == 2:
            raise ValueError("polytope is empty")
        if res.status != 0 and res.status != 3:
            raise ValueError("feasibility LP failed: {}".format(res.message))
        for d in range(self.n):
            for sign in (1.0, -1.0):
                c = np.zeros(self.n)
                c[d] = sign
                res = self._lp(c)
                if res.status == 3:
                    raise ValueError(
                        "polytope unbounded in coordinate {}".format(d))
                if res.status != 0:
                    raise ValueError("bound LP failed: {}".format(res.message))

    def contains(self, x, tol=1e-9):
        x = np.asarray(x, dtype=float)
        if self.A is not None and np.any(self.A @ x > self.b + tol):
            return False
        if self.lo is not None and np.any(x < self.lo - tol):
            return False
        if self.hi is not None and np.any(x > self.hi + tol):
            return False
        return True

    def bounding_box(self):
        """Tight coordinate bounds via 2n LPs."""
        lo = np.empty(self.n)
        hi = np.empty(self.n)
        for d in range(self.n):
            c = np.zeros(self.n)
            c[d] = 1.0
            lo[d] = self._lp(c).fun
            c[d] = -1.0
            hi[d] = -self._lp(c).fun
        return lo, hi

    def tangent_rows(self, x, tol=1e-9):
        """Rows M with tangent cone {v : M v <= 0} at a feasible point."""
        x = np.asarray(x, dtype=float)
        rows = []
        if self.A is not None:
            slack = self.b - self.A @ x
            for i in np.nonzero(slack <= tol)[0]:
                rows.append(self.A[i])
        if self.lo is not None:
            for d in np.nonzero(x <= self.lo + tol)[0]:
                e = np.zeros(self.n)
                e[d] = -1.0
                rows.append(e)
        if self.hi is not None:
            for d in np.nonzero(x >= self.hi - tol)[0]:
                e = np.zeros(self.n)
                e[d] = 1.0
                rows.append(e)
        if rows:
            return np.vstack(rows)
        return np.zeros((0, self.n))

    def as_inequalities(self):
        """All constraints as one (G, h) pair with G x <= h."""
        Gs, hs = [], []
        if self.A is not None:
            Gs.append(self.A)
            hs.append(self.b)
        if self.lo is not None:
            for d in np.nonzero(np.isfinite(self.lo))[0]:
                e = np.zeros(self.n)
                e[d] = -1.0
                Gs.append(e[None, :])
                hs.append(np.array([-self.lo[d]]))
        if self.hi is not None:
            for d in np.nonzero(np.isfinite(self.hi))[0]:
                e = np.zeros(self.n)
                e[d] = 1.0
                Gs.append(e[None, :])
                hs.append(np.array([self.hi[d]]))
        if not Gs:
            return np.zeros((0, self.n)), np.zeros(0)
        return np.vstack(Gs), np.concatenate(hs)


class RandomSource:
    """Law of the random vector: uniform box, finite table, or external file.

    kind "uniform" takes lo/hi vectors; "finite" takes a values table of
    shape (S, nz) and matching probabilities; "external" takes a plain text
    file of whitespace- or comma-separated sample rows, consumed in order.
    """

    def __init__(self, kind, lo=None, hi=None, values=None, probs=None,
                 path=None, data=None):
        self.kind = kind
        if kind == "uniform":
            self.lo = np.atleast_1d(np.asarray(lo, dtype=float))
            self.hi = np.atleast_1d(np.asarray(hi, dtype=float))
            if self.lo.shape != self.hi.shape or np.any(self.lo >= self.hi):
                raise ValueError("uniform source needs lo < hi componentwise")
            self.dim = self.lo.size
        elif kind == "finite":
            self.values = np.atleast_2d(np.asarray(values, dtype=float))
            if probs is None:
                probs = np.full(self.values.shape[0], 1.0 / self.values.shape[0])
            self.probs = np.atleast_1d(np.asarray(probs, dtype=float))
            if self.probs.size != self.values.shape[0]:
                raise ValueError("probability count must match atom count")
            if np.any(self.probs < 0) or abs(self.probs.sum() - 1.0) > 1e-10:
                raise ValueError("probabilities must be nonnegative and sum to 1")
            self.dim = self.values.shape[1]
        elif kind == "external":
            if data is not None:
                arr = np.atleast_2d(np.asarray(data, dtype=float))
            else:
                if path is None:
                    raise ValueError("external source needs a path or data")
                arr = np.atleast_2d(np.loadtxt(path, delimiter=None, ndmin=2))
            self.data = arr
            self.path = path
            self.dim = arr.shape[1]
        else:
            raise ValueError("unknown random source kind {!r}".format(kind))

    def draw(self, rng, size):
        """Draw ``size`` samples with the supplied generator (not external)."""
        if self.kind == "uniform":
            return rng.uniform(self.lo, self.hi, size=(size, self.dim))
        if self.kind == "finite":
            idx = rng.choice(self.values.shape[0], size=size, p=self.probs)
            return self.values[idx]
        raise ValueError("external sources are sliced, not drawn")

    def slice(self, start, stop):
        if self.kind != "external":
            raise ValueError("slice applies to external sources only")
        if stop > self.data.shape[0]:
            raise ValueError(
                "external sample file exhausted: need {} rows, have {}".format(
                    stop, self.data.shape[0]))
        return self.data[start:stop]


class AccProblem:
    """A chance-constrained program over difference-of-max functionals.

    minimize E[c0(x, z)] over the polytope subject to, for each row k,
    sum_l e[k, l] * P(Z_l(x, z) >= 0) <= zeta[k].

    Parameters
    ----------
    domain : Polytope
    objective : DcMaxFunction or SmoothConvexPiece
    functionals : sequence of DcMaxFunction, length L
    row_coeffs : array_like, shape (K, L)
    thresholds : array_like, shape (K,)
    source : RandomSource
    name : str, optional
    strict : bool
        When True a detected negative objective sample raises instead of
        warning.
    """

    def __init__(self, domain, objective, functionals, row_coeffs, thresholds,
                 source, name="", strict=False):
        self.domain = domain
        if isinstance(objective, SmoothConvexPiece):
            objective = DcMaxFunction([objective])
        self.objective = objective
        self.functionals = list(functionals)
        self.E = np.atleast_2d(np.asarray(row_coeffs, dtype=float))
        self.zeta = np.atleast_1d(np.asarray(thresholds, dtype=float))
        self.source = source
        self.name = name
        if self.E.shape[0] != self.zeta.size:
            raise ValueError("one threshold per row required")
        if self.E.shape[1] != len(self.functionals):
            raise ValueError("row width must match number of functionals")
        n = domain.n
        for f in [self.objective] + self.functionals:
            if f.n != n:
                raise ValueError("functional dimension does not match domain")
        self.E_pos = np.maximum(self.E, 0.0)
        self.E_neg = np.maximum(-self.E, 0.0)
        self._audit_objective(strict)

    @property
    def n(self):
        return self.domain.n

    @property
    def K(self):
        return self.E.shape[0]

    @property
    def L(self):
        return self.E.shape[1]

    def _audit_samples(self):
        rng = np.random.default_rng(12345)
        lo, hi = self.domain.bounding_box()
        xs = rng.uniform(lo, hi, size=(24, self.domain.n))
        xs = np.vstack([xs, lo[None, :], hi[None, :]])
        if self.source.kind == "finite":
            Z = self.source.values
        elif self.source.kind == "external":
            Z = self.source.data[: min(64, self.source.data.shape[0])]
        else:
            Z = self.source.draw(rng, 64)
        return xs, Z

    def _audit_objective(self, strict):
        xs, Z = self._audit_samples()
        worst = np.inf
        for x in xs:
            if not self.domain.contains(x, tol=np.inf):
                continue
            worst = min(worst, float(self.objective.value_batch(x, Z).min()))
        if worst < -1e-10:
            msg = ("objective appears to take negative values on the domain"
                   " (sampled minimum {:.6g}); convergence guarantees assume"
                   " a nonnegative objective".format(worst))
            if strict:
                raise ValueError(msg)
            warnings.warn(msg, stacklevel=3)


def audit_gradient_bound(fn, polytope, Z, bound, n_points=32, seed=2024):
    """Estimate the largest piece-gradient norm of ``fn`` over sampled points.

    Draws ``n_points`` domain points, evaluates every piece gradient at
    every (x, z) pair and returns the max sup-norm found.  If ``bound`` is
    not None and the estimate exceeds it, raises ValueError.
    """
    rng = np.random.default_rng(seed)
    lo, hi = polytope.bounding_box()
    xs = rng.uniform(lo, hi, size=(n_points, polytope.n))
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    worst = 0.0
    for x in xs:
        for z in Z:
            for p in fn.g_pieces + fn.h_pieces:
                worst = max(worst, float(np.abs(p.grad(x, z)).max()))
    if bound is not None and worst > bound:
        raise ValueError(
            "gradient bound exceeded: estimated {:.6g} > {:.6g}".format(worst, bound))
    return worst
