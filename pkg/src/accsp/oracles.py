"""Closed-form reference values for the bundled one-dimensional problems.

Everything in this module is derived by hand from the defining integrals and
implemented independently of the library code paths (no imports from the
solver modules, deliberately).  The test suite uses these functions to
cross-check the sampling, approximation and solver machinery, so keeping them
self-contained matters more than avoiding the small amount of duplication.

The two model problems:

* ``hinge1d``: minimize x over [-1, 1] subject to
  P(Z - max(2x, 1-2x) >= 0) <= 1/4 with Z uniform on (-1, 1).
* ``hinge1d-relaxed``: same functional, threshold 1/8, concave objective
  2 - |x - 3/8|, paired with the relaxed (lower) probability approximation.

``sign_bernoulli``: the scalar family e * P(x*Z >= 0) <= zeta with Z a fair
sign coin, whose restricted/relaxed feasible sets at gamma = 0 are computable
by enumeration.

``scaled_min_h_bounds``: averaged-CDF windows for Z = min(f*z, z+1) with z
uniform on (-2, 2), used to exercise the schedule validator's summability
hook.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "hinge1d_prob",
    "hinge1d_row_rst",
    "hinge1d_row_rlx",
    "hinge1d_row_rst_dd",
    "hinge1d_row_rlx_dd",
    "hinge1d_feasible_rst",
    "hinge1d_feasible_rlx",
    "sign_bernoulli_row",
    "scaled_min_h_bounds",
    "brute_force_min",
]


def hinge1d_prob(x):
    """Exact P(Z >= max(2x, 1-2x)) for Z ~ U(-1, 1)."""
    m = np.maximum(2.0 * np.asarray(x, dtype=float), 1.0 - 2.0 * np.asarray(x, dtype=float))
    return np.clip((1.0 - m) / 2.0, 0.0, 1.0)


def _check_gamma(gamma):
    if gamma < 0.0:
        raise ValueError("gamma must be nonnegative, got {}".format(gamma))
    if gamma >= 0.5:
        raise ValueError(
            "closed forms only valid for gamma < 1/2, got {}".format(gamma))


def hinge1d_row_rst(x, gamma):
    """Upper (restricted) smoothed row E[phi_ub(Z - max(2x,1-2x), gamma)].

    Identity theta pair.  ``gamma == 0`` returns the exact probability.
    Scalar in, scalar out.
    """
    _check_gamma(gamma)
    x = float(x)
    if gamma == 0.0:
        return float(hinge1d_prob(x))
    g = gamma
    if x < -g / 2.0:
        return 0.0
    if x < 0.0:
        return (g + 2.0 * x) ** 2 / (4.0 * g)
    if x < 0.25:
        return x + g / 4.0
    if x < 0.5:
        return (1.0 - 2.0 * x) / 2.0 + g / 4.0
    if x < (1.0 + g) / 2.0:
        return (g + 1.0 - 2.0 * x) ** 2 / (4.0 * g)
    return 0.0


def hinge1d_row_rlx(x, gamma):
    """Lower (relaxed) smoothed row E[phi_lb(Z - max(2x,1-2x), gamma)].

    Identity theta pair; gamma == 0 gives P(Z - max(2x,1-2x) > 0), which for
    the continuous uniform law equals the closed probability.
    """
    _check_gamma(gamma)
    x = float(x)
    if gamma == 0.0:
        return float(hinge1d_prob(x))
    g = gamma
    if x < 0.0:
        return 0.0
    if x < g / 2.0:
        return x * x / g
    if x < 0.25:
        return x - g / 4.0
    if x < (1.0 - g) / 2.0:
        return (2.0 - g) / 4.0 - x
    if x < 0.5:
        return (1.0 - 2.0 * x) ** 2 / (4.0 * g)
    return 0.0


# Interval tables for the one-sided derivatives.  Each entry is
# (left endpoint, right endpoint, slope function).  The only nonsmooth join
# for gamma in (0, 1/2) is x = 1/4; every other breakpoint matches slopes.

def _rst_slope(x, gamma):
    g = gamma
    table = [
        (-np.inf, -g / 2.0, lambda t: 0.0),
        (-g / 2.0, 0.0, lambda t: (g + 2.0 * t) / g),
        (0.0, 0.25, lambda t: 1.0),
        (0.25, 0.5, lambda t: -1.0),
        (0.5, (1.0 + g) / 2.0, lambda t: -(g + 1.0 - 2.0 * t) / g),
        ((1.0 + g) / 2.0, np.inf, lambda t: 0.0),
    ]
    return table


def _rlx_slope(x, gamma):
    g = gamma
    table = [
        (-np.inf, 0.0, lambda t: 0.0),
        (0.0, g / 2.0, lambda t: 2.0 * t / g),
        (g / 2.0, 0.25, lambda t: 1.0),
        (0.25, (1.0 - g) / 2.0, lambda t: -1.0),
        ((1.0 - g) / 2.0, 0.5, lambda t: -(1.0 - 2.0 * t) / g),
        (0.5, np.inf, lambda t: 0.0),
    ]
    return table


def _one_sided(table, x, v):
    # v > 0 reads the piece on [x, .), v < 0 the piece on (., x].
    if v == 0.0:
        return 0.0
    for lo, hi, slope in table:
        if (v > 0.0 and lo <= x < hi) or (v < 0.0 and lo < x <= hi):
            return v * slope(x)
    raise AssertionError("interval table does not cover x={}".format(x))


def _scalar(u):
    return float(np.asarray(u, dtype=float).reshape(()))


def hinge1d_row_rst_dd(x, v, gamma):
    """One-sided directional derivative of :func:`hinge1d_row_rst` at x along v."""
    _check_gamma(gamma)
    if gamma == 0.0:
        raise ValueError("directional derivative oracle needs gamma > 0")
    return _one_sided(_rst_slope(x, gamma), _scalar(x), _scalar(v))


def hinge1d_row_rlx_dd(x, v, gamma):
    """One-sided directional derivative of :func:`hinge1d_row_rlx` at x along v."""
    _check_gamma(gamma)
    if gamma == 0.0:
        raise ValueError("directional derivative oracle needs gamma > 0")
    return _one_sided(_rlx_slope(x, gamma), _scalar(x), _scalar(v))


def hinge1d_feasible_rst(gamma):
    """Feasible set of the restricted row at threshold 1/4.

    Returns the two closed intervals as ((a1, b1), (a2, b2)).  Valid for
    gamma in (0, 1/2).
    """
    _check_gamma(gamma)
    if gamma == 0.0:
        raise ValueError("gamma must be positive")
    return ((-1.0, (1.0 - gamma) / 4.0), ((1.0 + gamma) / 4.0, 1.0))


def hinge1d_feasible_rlx(gamma):
    """Feasible set of the relaxed row at threshold 1/8, gamma in (0, 1/2)."""
    _check_gamma(gamma)
    if gamma == 0.0:
        raise ValueError("gamma must be positive")
    return ((-1.0, (1.0 + 2.0 * gamma) / 8.0), ((3.0 - 2.0 * gamma) / 8.0, 1.0))


def sign_bernoulli_row(x, e, variant, gamma=0.0):
    """Row value e+ * P-upper - e- * P-lower for Z(x,z) = x*z, fair sign coin.

    variant "rst" uses the upper Heaviside on the positive part, variant
    "rlx" the lower one.  For gamma > 0 the identity-theta ramps replace the
    Heavisides, i.e. phi_ub(t) = clip(1 + t/gamma, 0, 1) and
    phi_lb(t) = clip(t/gamma, 0, 1), averaged over z in {+1, -1}.
    """
    x = float(x)
    e = float(e)
    ep, em = max(e, 0.0), max(-e, 0.0)
    if gamma == 0.0:
        p_ge = 1.0 if x == 0.0 else 0.5   # P(x z >= 0)
        p_gt = 0.0 if x == 0.0 else 0.5   # P(x z > 0)
        if variant == "rst":
            return ep * p_ge - em * p_gt
        if variant == "rlx":
            return ep * p_gt - em * p_ge
        raise ValueError("variant must be 'rst' or 'rlx'")

    def phi_ub(t):
        return min(max(1.0 + t / gamma, 0.0), 1.0)

    def phi_lb(t):
        return min(max(t / gamma, 0.0), 1.0)

    e_ub = 0.5 * (phi_ub(x) + phi_ub(-x))
    e_lb = 0.5 * (phi_lb(x) + phi_lb(-x))
    if variant == "rst":
        return ep * e_ub - em * e_lb
    if variant == "rlx":
        return ep * e_lb - em * e_ub
    raise ValueError("variant must be 'rst' or 'rlx'")


def scaled_min_h_bounds(f, gamma, side):
    """Averaged-CDF window for Z = min(f*z, z+1), z ~ U(-2, 2).

    side "lb" gives the average of the CDF over [0, gamma], side "ub" over
    [-gamma, 0].  Closed forms require f >= 2 and 0 < gamma <= 1; the two
    sides always sum to 1 in that regime.
    """
    f = float(f)
    gamma = float(gamma)
    if f < 2.0:
        raise ValueError("closed form needs f >= 2, got {}".format(f))
    if not 0.0 < gamma <= 1.0:
        raise ValueError("closed form needs 0 < gamma <= 1, got {}".format(gamma))
    if side == "lb":
        return 0.5 + gamma / (8.0 * f)
    if side == "ub":
        return 0.5 - gamma / (8.0 * f)
    raise ValueError("side must be 'lb' or 'ub'")


def brute_force_min(fun, lo, hi, resolution, constraint=None):
    """Grid minimization on a box in one or two dimensions.

    Scans a uniform grid of spacing at most ``resolution``, then refines once
    with a 3x finer grid on the one-cell neighborhood of the incumbent.
    ``constraint``, if given, maps a point to a vector of values that must
    all be <= 0 for the point to count.  Returns a dict with keys ``x``,
    ``value`` and ``resolution`` (the refined spacing).

    Exhaustive, so only sensible for n <= 2; larger boxes are rejected.
    """
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    if lo.shape != hi.shape or lo.ndim != 1:
        raise ValueError("lo and hi must be 1-d arrays of equal length")
    n = lo.size
    if n > 2:
        raise ValueError("brute force scan limited to n <= 2, got n={}".format(n))
    if np.any(hi < lo):
        raise ValueError("empty box")
    if resolution <= 0.0:
        raise ValueError("resolution must be positive")

    def scan(lo_s, hi_s, step):
        axes = []
        for d in range(n):
            count = max(int(np.ceil((hi_s[d] - lo_s[d]) / step)), 1) + 1
            axes.append(np.linspace(lo_s[d], hi_s[d], count))
        best_x, best_v = None, np.inf
        if n == 1:
            points = axes[0][:, None]
        else:
            g0, g1 = np.meshgrid(axes[0], axes[1], indexing="ij")
            points = np.column_stack([g0.ravel(), g1.ravel()])
        for p in points:
            if constraint is not None:
                if np.any(np.asarray(constraint(p)) > 0.0):
                    continue
            v = float(fun(p))
            if v < best_v:
                best_v, best_x = v, p.copy()
        return best_x, best_v

    x0, v0 = scan(lo, hi, resolution)
    if x0 is None:
        raise ValueError("no feasible grid point found")
    # one refinement pass around the incumbent cell
    fine = resolution / 3.0
    lo_r = np.maximum(lo, x0 - resolution)
    hi_r = np.minimum(hi, x0 + resolution)
    x1, v1 = scan(lo_r, hi_r, fine)
    if v1 < v0:
        x0, v0 = x1, v1
    return {"x": x0, "value": v0, "resolution": fine}
