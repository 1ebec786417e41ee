"""One-sided indicator approximations and their calibration machinery.

The probability P(Z >= 0) is bracketed by expectations of two clamped
compositions built from a convex/concave generator pair: an upper ramp
``phi_ub(t, gamma) = min(max(theta_cvx(1 + t/gamma), 0), 1)`` and a lower
ramp ``phi_lb(t, gamma) = max(min(theta_cve(t/gamma), 1), 0)``.  At
``gamma == 0`` the ramps degenerate to the closed and open Heaviside steps.
Row values combine the ramps through the signed row coefficients, once with
the conservative orientation (restricted) and once with the permissive one
(relaxed).

The quality of the bracket at nearby smoothing levels is controlled by
averages of the distribution function over the windows [0, gamma] and
[-gamma, 0]; ``h_window_*`` computes those averages exactly for empirical
samples and to quadrature accuracy for analytic laws, and
``check_gamma_error_bound`` evaluates both sides of the resulting error
estimate.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "ThetaPair",
    "as_gamma",
    "phi_ub",
    "phi_lb",
    "c_row_rst",
    "c_row_rlx",
    "h_window_empirical",
    "h_window_cdf",
    "simpson_adaptive",
    "UniformLaw",
    "FiniteLaw",
    "make_law",
    "check_gamma_error_bound",
]

_GRID = np.linspace(0.0, 1.0, 1001)


def _knots_ok(knots):
    knots = [(float(t), float(y)) for t, y in knots]
    if knots[0] != (0.0, 0.0) or knots[-1][0] != 1.0:
        raise ValueError("knots must start at (0,0) and end at t=1")
    if abs(knots[-1][1] - 1.0) > 1e-12:
        raise ValueError("generator must map 1 to 1")
    ts = np.array([t for t, _ in knots])
    if np.any(np.diff(ts) <= 0):
        raise ValueError("knot abscissae must be strictly increasing")
    return knots


class _Generator:
    """One side of a theta pair: a scalar map on R with known curvature."""

    def __init__(self, kind, params, curvature):
        self.kind = kind
        self.curvature = curvature   # "convex" or "concave"
        if kind == "identity":
            self.lip = 1.0
        elif kind == "pa":
            knots = _knots_ok(params["knots"])
            self.ts = np.array([t for t, _ in knots])
            self.ys = np.array([y for _, y in knots])
            self.slopes = np.diff(self.ys) / np.diff(self.ts)
            if np.any(self.slopes <= 0):
                raise ValueError("piecewise generator must be increasing on [0,1]")
            d = np.diff(self.slopes)
            if curvature == "convex" and np.any(d < -1e-12):
                raise ValueError("slopes must be nondecreasing for the convex side")
            if curvature == "concave" and np.any(d > 1e-12):
                raise ValueError("slopes must be nonincreasing for the concave side")
            self.lip = float(np.abs(self.slopes).max())
        elif kind == "smooth-power":
            p = float(params["p"])
            if p < 1.0:
                raise ValueError("power exponent must be >= 1")
            if curvature != "convex":
                raise ValueError("smooth-power is a convex-side kind")
            self.p = p
            self.lip = p
        elif kind == "smooth-root":
            p = float(params["p"])
            if p < 1.0:
                raise ValueError("root exponent must be >= 1")
            if curvature != "concave":
                raise ValueError("smooth-root is a concave-side kind")
            self.p = p
            # shifted root keeps the slope at 0 finite so the map stays
            # Lipschitz on [0,1] and admits a concave extension to t < 0
            self.shift = float(params.get("shift", 1e-3))
            if self.shift <= 0:
                raise ValueError("root shift must be positive")
            self.scale = (1.0 + self.shift) ** (1.0 / p) - self.shift ** (1.0 / p)
            self.lip = (1.0 / p) * self.shift ** (1.0 / p - 1.0) / self.scale
        else:
            raise ValueError("unknown generator kind {!r}".format(kind))
        self._selfcheck()

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "identity":
            out = t
        elif self.kind == "pa":
            # interior interpolation, end-slope extension outside [0,1]
            out = np.interp(t, self.ts, self.ys)
            out = np.where(t < 0.0, self.slopes[0] * t, out)
            out = np.where(t > 1.0, 1.0 + self.slopes[-1] * (t - 1.0), out)
        elif self.kind == "smooth-power":
            out = np.where(t > 0.0, np.maximum(t, 0.0) ** self.p, 0.0)
        else:   # smooth-root
            # shifted root on t >= 0, tangent continuation below; the shift
            # keeps the slope at 0 finite so the whole map is concave and
            # Lipschitz with modulus self.lip
            p, c = self.p, self.shift
            core = ((np.maximum(t, 0.0) + c) ** (1.0 / p) - c ** (1.0 / p)) / self.scale
            slope0 = (1.0 / p) * c ** (1.0 / p - 1.0) / self.scale
            out = np.where(t < 0.0, slope0 * t, core)
        if out.ndim == 0:
            return float(out)
        return out

    def slope(self, t, side=1.0):
        """One-sided derivative at t (side > 0 right, side < 0 left)."""
        t = float(t)
        if self.kind == "identity":
            return 1.0
        eps = 1e-12
        if self.kind == "pa":
            if t < 0.0 or (t == 0.0 and side < 0):
                return float(self.slopes[0])
            if t > 1.0 or (t == 1.0 and side > 0):
                return float(self.slopes[-1])
            idx = np.searchsorted(self.ts, t, side="right" if side > 0 else "left") - 1
            idx = min(max(idx, 0), len(self.slopes) - 1)
            return float(self.slopes[idx])
        if self.kind == "smooth-power":
            if t < 0.0 or (t == 0.0 and side < 0):
                return 0.0
            if t == 0.0:
                return 1.0 if self.p == 1.0 else 0.0
            return self.p * t ** (self.p - 1.0)
        p, c = self.p, self.shift
        if t <= 0.0:
            return (1.0 / p) * c ** (1.0 / p - 1.0) / self.scale
        return (1.0 / p) * (t + c) ** (1.0 / p - 1.0) / self.scale

    def _selfcheck(self):
        v0, v1 = self(0.0), self(1.0)
        if abs(v0) > 1e-12 or abs(v1 - 1.0) > 1e-12:
            raise ValueError(
                "generator must satisfy theta(0)=0, theta(1)=1, got {}, {}".format(v0, v1))
        vals = self(_GRID)
        sec = np.diff(vals) / np.diff(_GRID)
        if np.any(sec <= 0):
            raise ValueError("generator must be increasing on [0,1]")
        d = np.diff(sec)
        if self.curvature == "convex" and np.any(d < -1e-9):
            raise ValueError("secant slopes decrease; convex side violated")
        if self.curvature == "concave" and np.any(d > 1e-9):
            raise ValueError("secant slopes increase; concave side violated")
        wide = np.linspace(-0.5, 1.5, 401)
        if np.any(np.diff(self(wide)) < -1e-12):
            raise ValueError("generator must be nondecreasing on the real line")


class ThetaPair:
    """Convex/concave generator pair for the upper and lower ramps.

    Each side is specified by a kind string or a (kind, params) tuple:
    convex side kinds are "identity", "pa" (params: knots) and
    "smooth-power" (params: p); concave side kinds are "identity", "pa" and
    "smooth-root" (params: p, optional shift).  Both maps must fix 0 and 1,
    increase on [0, 1] and be nondecreasing elsewhere; curvature and the
    fixed points are validated on construction.  ``lip`` is the larger of
    the two Lipschitz moduli on [0, 1].
    """

    def __init__(self, cvx="identity", cve="identity"):
        self.cvx = _Generator(*_parse(cvx), curvature="convex")
        self.cve = _Generator(*_parse(cve), curvature="concave")

    @property
    def lip(self):
        return max(self.cvx.lip, self.cve.lip)

    def __repr__(self):
        return "ThetaPair(cvx={}, cve={})".format(self.cvx.kind, self.cve.kind)


def _parse(spec):
    if isinstance(spec, str):
        return spec, {}
    kind, params = spec
    return kind, dict(params)


IDENTITY_PAIR = ThetaPair()


def as_gamma(value):
    g = float(value)
    if g < 0.0 or not np.isfinite(g):
        raise ValueError("smoothing level must be finite and >= 0, got {}".format(value))
    return g


def phi_ub(t, gamma, theta=IDENTITY_PAIR):
    """Upper ramp; at gamma == 0 the closed Heaviside 1{t >= 0}."""
    gamma = as_gamma(gamma)
    t = np.asarray(t, dtype=float)
    if gamma == 0.0:
        out = (t >= 0.0).astype(float)
    else:
        out = np.clip(theta.cvx(1.0 + t / gamma), 0.0, 1.0)
    if out.ndim == 0:
        return float(out)
    return out


def phi_lb(t, gamma, theta=IDENTITY_PAIR):
    """Lower ramp; at gamma == 0 the open Heaviside 1{t > 0}."""
    gamma = as_gamma(gamma)
    t = np.asarray(t, dtype=float)
    if gamma == 0.0:
        out = (t > 0.0).astype(float)
    else:
        out = np.clip(theta.cve(t / gamma), 0.0, 1.0)
    if out.ndim == 0:
        return float(out)
    return out


def _row(t_values, e_row, gamma, theta, upper_on_pos):
    t = np.asarray(t_values, dtype=float)
    e = np.atleast_1d(np.asarray(e_row, dtype=float))
    if t.shape[-1] != e.size:
        raise ValueError("functional value count must match row width")
    ep = np.maximum(e, 0.0)
    em = np.maximum(-e, 0.0)
    up = phi_ub(t, gamma, theta)
    lo = phi_lb(t, gamma, theta)
    if upper_on_pos:
        out = up @ ep - lo @ em if t.ndim > 1 else float(ep @ up - em @ lo)
    else:
        out = lo @ ep - up @ em if t.ndim > 1 else float(ep @ lo - em @ up)
    return out


def c_row_rst(t_values, e_row, gamma, theta=IDENTITY_PAIR):
    """Conservative row value: upper ramp on positive coefficients.

    ``t_values`` holds the L functional values at one (x, z), or a block of
    shape (N, L); the result is a scalar or a length-N vector.
    """
    return _row(t_values, e_row, gamma, theta, upper_on_pos=True)


def c_row_rlx(t_values, e_row, gamma, theta=IDENTITY_PAIR):
    """Permissive row value: lower ramp on positive coefficients."""
    return _row(t_values, e_row, gamma, theta, upper_on_pos=False)


def h_window_empirical(values, gamma, side):
    """Average of the empirical CDF over [0, gamma] ("lb") or [-gamma, 0] ("ub").

    Computed in closed form from the sample, no binning involved: each
    observation contributes the exact length of the window segment it covers.
    """
    gamma = as_gamma(gamma)
    if gamma == 0.0:
        raise ValueError("window average needs gamma > 0")
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise ValueError("empty sample")
    if side == "lb":
        return float(np.mean(np.clip(gamma - v, 0.0, gamma)) / gamma)
    if side == "ub":
        return float(np.mean(np.clip(-v, 0.0, gamma)) / gamma)
    raise ValueError("side must be 'lb' or 'ub'")


def simpson_adaptive(f, a, b, tol=1e-10, breakpoints=None, max_depth=50):
    """Adaptive Simpson quadrature with forced splits at given breakpoints."""
    a, b = float(a), float(b)
    if b < a:
        raise ValueError("reversed interval")
    if b == a:
        return 0.0
    pts = [a, b]
    if breakpoints is not None:
        pts.extend(p for p in breakpoints if a < p < b)
    pts = sorted(set(pts))

    def simpson(lo, hi, flo, fmid, fhi):
        return (hi - lo) / 6.0 * (flo + 4.0 * fmid + fhi)

    def recurse(lo, hi, flo, fmid, fhi, whole, tol_seg, depth):
        mid = 0.5 * (lo + hi)
        lmid = 0.5 * (lo + mid)
        rmid = 0.5 * (mid + hi)
        fl = f(lmid)
        fr = f(rmid)
        left = simpson(lo, mid, flo, fl, fmid)
        right = simpson(mid, hi, fmid, fr, fhi)
        err = left + right - whole
        if depth >= max_depth or abs(err) <= 15.0 * tol_seg:
            return left + right + err / 15.0
        return (recurse(lo, mid, flo, fl, fmid, left, tol_seg / 2.0, depth + 1)
                + recurse(mid, hi, fmid, fr, fhi, right, tol_seg / 2.0, depth + 1))

    total = 0.0
    for lo, hi in zip(pts[:-1], pts[1:]):
        mid = 0.5 * (lo + hi)
        flo, fmid, fhi = f(lo), f(mid), f(hi)
        whole = simpson(lo, hi, flo, fmid, fhi)
        total += recurse(lo, hi, flo, fmid, fhi, whole,
                         tol / max(len(pts) - 1, 1), 0)
    return total


def h_window_cdf(cdf, gamma, side, breakpoints=None, tol=1e-10):
    """Window average of an analytic CDF by adaptive quadrature."""
    gamma = as_gamma(gamma)
    if gamma == 0.0:
        raise ValueError("window average needs gamma > 0")
    if side == "lb":
        lo, hi = 0.0, gamma
    elif side == "ub":
        lo, hi = -gamma, 0.0
    else:
        raise ValueError("side must be 'lb' or 'ub'")
    return simpson_adaptive(cdf, lo, hi, tol=tol, breakpoints=breakpoints) / gamma


class UniformLaw:
    """Uniform law on (a, b) for a scalar functional value."""

    def __init__(self, a, b):
        self.a, self.b = float(a), float(b)
        if not self.a < self.b:
            raise ValueError("need a < b")

    def cdf(self, t):
        return float(np.clip((t - self.a) / (self.b - self.a), 0.0, 1.0))

    def breakpoints(self):
        return [self.a, self.b]

    def expect_phi(self, gamma, theta, which):
        gamma = as_gamma(gamma)
        fn = phi_ub if which == "ub" else phi_lb
        if gamma == 0.0:
            # expectation of the step against the uniform density
            return 1.0 - self.cdf(0.0)
        dens = 1.0 / (self.b - self.a)
        if which == "ub":
            kinks = [-gamma, 0.0]
        else:
            kinks = [0.0, gamma]
        if theta.cvx.kind == "pa" and which == "ub":
            kinks.extend(gamma * (s - 1.0) for s in theta.cvx.ts)
        if theta.cve.kind == "pa" and which == "lb":
            kinks.extend(gamma * s for s in theta.cve.ts)
        return simpson_adaptive(lambda t: fn(t, gamma, theta) * dens,
                                self.a, self.b, breakpoints=kinks)

    def h(self, gamma, side):
        return h_window_cdf(self.cdf, gamma, side, breakpoints=self.breakpoints())


class FiniteLaw:
    """Discrete scalar law given by atoms and probabilities."""

    def __init__(self, values, probs=None):
        self.values = np.atleast_1d(np.asarray(values, dtype=float))
        if probs is None:
            probs = np.full(self.values.size, 1.0 / self.values.size)
        self.probs = np.atleast_1d(np.asarray(probs, dtype=float))
        if self.probs.size != self.values.size:
            raise ValueError("atom/probability count mismatch")
        if np.any(self.probs < 0) or abs(self.probs.sum() - 1.0) > 1e-10:
            raise ValueError("probabilities must be nonnegative and sum to 1")

    def cdf(self, t):
        return float(self.probs[self.values <= t].sum())

    def breakpoints(self):
        return sorted(self.values.tolist())

    def expect_phi(self, gamma, theta, which):
        fn = phi_ub if which == "ub" else phi_lb
        return float(self.probs @ fn(self.values, gamma, theta))

    def h(self, gamma, side):
        gamma = as_gamma(gamma)
        if gamma == 0.0:
            raise ValueError("window average needs gamma > 0")
        if side == "lb":
            seg = np.clip(gamma - self.values, 0.0, gamma)
        elif side == "ub":
            seg = np.clip(-self.values, 0.0, gamma)
        else:
            raise ValueError("side must be 'lb' or 'ub'")
        return float(self.probs @ seg / gamma)


def make_law(law_id, **params):
    """Scalar law registry: "uniform"(a, b), "bernoulli"(p, values), "finite"."""
    if law_id == "uniform":
        return UniformLaw(params["a"], params["b"])
    if law_id == "bernoulli":
        p = float(params.get("p", 0.5))
        v1, v0 = params.get("values", (1.0, -1.0))
        return FiniteLaw([v1, v0], [p, 1.0 - p])
    if law_id == "finite":
        return FiniteLaw(params["values"], params.get("probs"))
    raise ValueError("unknown law id {!r}".format(law_id))


def check_gamma_error_bound(law, gamma1, gamma2, theta=IDENTITY_PAIR):
    """Both sides of the smoothing error estimate for gamma1 > gamma2 > 0.

    Upper side: 0 <= E[phi_ub(Z, g1)] - E[phi_ub(Z, g2)]
                  <= lip * (h_ub(g2) - h_ub(g1)).
    Lower side: 0 <= E[phi_lb(Z, g2)] - E[phi_lb(Z, g1)]
                  <= lip * (h_lb(g1) - h_lb(g2)).

    Returns a dict with lhs/rhs per side and overall ``holds`` (with a
    1e-12 floating slack).
    """
    g1, g2 = as_gamma(gamma1), as_gamma(gamma2)
    if not g1 > g2 > 0.0:
        raise ValueError("need gamma1 > gamma2 > 0")
    lip = theta.lip
    lhs_ub = law.expect_phi(g1, theta, "ub") - law.expect_phi(g2, theta, "ub")
    rhs_ub = lip * (law.h(g2, "ub") - law.h(g1, "ub"))
    lhs_lb = law.expect_phi(g2, theta, "lb") - law.expect_phi(g1, theta, "lb")
    rhs_lb = lip * (law.h(g1, "lb") - law.h(g2, "lb"))
    slack = 1e-12
    holds = (lhs_ub >= -slack and lhs_ub <= rhs_ub + slack
             and lhs_lb >= -slack and lhs_lb <= rhs_lb + slack)
    return {
        "lhs_ub": lhs_ub, "rhs_ub": rhs_ub,
        "lhs_lb": lhs_lb, "rhs_lb": rhs_lb,
        "holds": bool(holds),
    }
