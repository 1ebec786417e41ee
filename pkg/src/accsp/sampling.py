"""Sample management, iteration schedules, and complexity diagnostics.

Samples are drawn in append-only batches from a counter-based generator
(Philox) keyed by (seed, batch index); the position within a batch supplies
the counter.  Replaying the same seed and batch boundaries reproduces the
stream bit for bit, which the trace-determinism guarantees of the drivers
rely on.  Extending by a different sequence of increments is a different
stream by design.

Schedules are closed-form rule families (power / log / constant) for the
sample size, penalty, proximal weight and smoothing sequences, together with
the growth-window constants under which the summability series S1..S6 used
in the convergence analysis are finite.  ``validate_schedule`` checks every
structural constraint over a horizon and reports tagged violations plus the
partial sums as diagnostics.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = [
    "SampleStore",
    "Rule",
    "Schedule",
    "reference_schedule",
    "validate_schedule",
    "empirical_mean",
    "rademacher_estimate",
]


class SampleStore:
    """Append-only sample block tied to a random source and a 64-bit seed."""

    def __init__(self, source, seed):
        self.source = source
        self.seed = int(seed) & (2 ** 64 - 1)
        self._blocks = []
        self.batch_sizes = []

    @property
    def n(self):
        return sum(self.batch_sizes)

    @property
    def samples(self):
        if not self._blocks:
            return np.zeros((0, self.source.dim))
        return np.concatenate(self._blocks, axis=0)

    def extend_to(self, n_target):
        """Grow the store to ``n_target`` samples as one new batch.

        The batch index keys the generator, so a given sequence of targets
        is reproducible regardless of when the calls happen.
        """
        n_target = int(n_target)
        if n_target <= self.n:
            raise ValueError(
                "sample counts must strictly increase: have {}, asked {}".format(
                    self.n, n_target))
        delta = n_target - self.n
        batch_index = len(self.batch_sizes)
        if self.source.kind == "external":
            block = self.source.slice(self.n, n_target)
        else:
            bitgen = np.random.Philox(key=[self.seed, batch_index])
            rng = np.random.Generator(bitgen)
            block = self.source.draw(rng, delta)
        self._blocks.append(np.asarray(block, dtype=float))
        self.batch_sizes.append(delta)
        return self.samples


class Rule:
    """One closed-form sequence rule nu -> value.

    Families: ("power", c, p) is c * nu**p, ("power-floor", c, p, floor) is
    max(c * nu**-p, floor) with p stored positive, ("log", a) is
    1 + a*ln(nu), ("constant", v), ("lambda-over-nu", s) is s * lambda(nu)/nu
    and only valid for the proximal rule.  ``ceil`` rounds up to an integer
    (used by the sample rule).
    """

    def __init__(self, family, params, ceil=False):
        self.family = family
        self.params = dict(params)
        self.ceil = bool(ceil)
        if family == "power":
            if self.params["c"] <= 0:
                raise ValueError("power rule needs c > 0")
        elif family == "power-floor":
            if self.params["c"] <= 0 or self.params["floor"] < 0:
                raise ValueError("power-floor rule needs c > 0 and floor >= 0")
            if self.params["p"] < 0:
                raise ValueError("power-floor exponent is the decay rate, >= 0")
        elif family == "log":
            if self.params["a"] < 0:
                raise ValueError("log rule needs a >= 0")
        elif family == "constant":
            pass
        elif family == "lambda-over-nu":
            if self.params.get("scale", 1.0) <= 0:
                raise ValueError("scale must be positive")
        else:
            raise ValueError("unknown rule family {!r}".format(family))

    def __call__(self, nu, lam=None):
        nu = int(nu)
        if nu < 1:
            raise ValueError("iteration index starts at 1")
        if self.family == "power":
            v = self.params["c"] * nu ** self.params["p"]
        elif self.family == "power-floor":
            v = max(self.params["c"] * nu ** (-self.params["p"]),
                    self.params["floor"])
        elif self.family == "log":
            v = 1.0 + self.params["a"] * math.log(nu)
        elif self.family == "constant":
            v = self.params["value"]
        else:   # lambda-over-nu
            if lam is None:
                raise ValueError("lambda-over-nu rule needs the penalty value")
            v = self.params.get("scale", 1.0) * lam / nu
        if self.ceil:
            return int(math.ceil(v - 1e-12))
        return float(v)

    def to_spec(self):
        return [self.family, dict(self.params)]


class Schedule:
    """Rule bundle plus growth-window constants.

    Constants: beta in (0, 1/2) is the concentration exponent, (c1, c2)
    bound the sample growth from below via c2 * nu**(1+c1) <= N_nu, c3 the
    upper window N_nu * (1 - c3/nu) <= N_{nu-1} from nu_bar on, c4/delta the
    smoothing floor gamma_nu >= c4 * nu**-delta, and (alpha1, alpha2) the
    proximal-to-penalty ratio band alpha1/nu <= rho/lambda <= alpha2/nu.
    """

    def __init__(self, n_rule, lambda_rule, rho_rule, gamma_rule, *,
                 beta, c1, c2, c3, c4, delta, alpha1, alpha2, nu_bar):
        self.n_rule = n_rule
        self.lambda_rule = lambda_rule
        self.rho_rule = rho_rule
        self.gamma_rule = gamma_rule
        self.beta = float(beta)
        self.c1 = float(c1)
        self.c2 = float(c2)
        self.c3 = float(c3)
        self.c4 = float(c4)
        self.delta = float(delta)
        self.alpha1 = float(alpha1)
        self.alpha2 = float(alpha2)
        self.nu_bar = int(nu_bar)

    def N(self, nu):
        return self.n_rule(nu)

    def lam(self, nu):
        return self.lambda_rule(nu)

    def rho(self, nu):
        return self.rho_rule(nu, lam=self.lam(nu))

    def gamma(self, nu):
        return self.gamma_rule(nu)

    def to_dict(self):
        return {
            "N": self.n_rule.to_spec(),
            "lambda": self.lambda_rule.to_spec(),
            "rho": self.rho_rule.to_spec(),
            "gamma": self.gamma_rule.to_spec(),
            "constants": {k: getattr(self, k) for k in
                          ("beta", "c1", "c2", "c3", "c4", "delta",
                           "alpha1", "alpha2", "nu_bar")},
        }

    @classmethod
    def from_dict(cls, d):
        def mk(spec, ceil=False):
            family, params = spec
            return Rule(family, params, ceil=ceil)
        return cls(mk(d["N"], ceil=True), mk(d["lambda"]), mk(d["rho"]),
                   mk(d["gamma"]), **d["constants"])


def reference_schedule(gamma_rule=None):
    """The bundled valid schedule; optionally override the smoothing rule."""
    if gamma_rule is None:
        gamma_rule = Rule("power-floor", {"c": 1.0, "p": 0.3, "floor": 0.0})
    return Schedule(
        Rule("power", {"c": 5.0, "p": 3.0}, ceil=True),
        Rule("log", {"a": 1.0}),
        Rule("lambda-over-nu", {"scale": 1.0}),
        gamma_rule,
        beta=0.45, c1=2.0, c2=5.0, c3=3.0, c4=1.0, delta=0.3,
        alpha1=0.5, alpha2=2.0, nu_bar=8)


def validate_schedule(schedule, nu_max=40, h_oracle=None):
    """Check every schedule constraint over nu = 1..nu_max.

    Returns a dict with ``ok``, a list of tagged ``violations`` (tag, nu,
    detail) and ``diagnostics`` holding the partial sums S1..S6 plus, when
    ``h_oracle(gamma, side)`` is supplied, the accumulated smoothing drift.
    """
    s = schedule
    violations = []

    def flag(tag, nu, detail):
        violations.append({"tag": tag, "nu": nu, "detail": detail})

    if not 0.0 < s.beta < 0.5:
        flag("beta_range", None, "beta={} outside (0, 1/2)".format(s.beta))
    if s.beta * (1.0 + s.c1) <= 1.0 + s.delta:
        flag("exponent_margin", None,
             "beta*(1+c1)={} <= 1+delta={}".format(s.beta * (1 + s.c1), 1 + s.delta))
    if not s.c3 < s.nu_bar:
        flag("c3_vs_nubar", None, "c3={} must be < nu_bar={}".format(s.c3, s.nu_bar))
    if not 0.0 < s.alpha1 < s.alpha2:
        flag("ratio_constants", None,
             "need 0 < alpha1 < alpha2, got {}, {}".format(s.alpha1, s.alpha2))

    Ns = [s.N(nu) for nu in range(1, nu_max + 1)]
    lams = [s.lam(nu) for nu in range(1, nu_max + 1)]
    rhos = [s.rho(nu) for nu in range(1, nu_max + 1)]
    gams = [s.gamma(nu) for nu in range(1, nu_max + 1)]

    if abs(lams[0] - 1.0) > 1e-12:
        flag("lambda_initial", 1, "lambda_1={} != 1".format(lams[0]))
    for i in range(1, nu_max):
        nu = i + 1
        if Ns[i] <= Ns[i - 1]:
            flag("sample_monotone", nu,
                 "N_{}={} not above N_{}={}".format(nu, Ns[i], nu - 1, Ns[i - 1]))
        if lams[i] < lams[i - 1] - 1e-12:
            flag("lambda_monotone", nu,
                 "lambda decreases at nu={}".format(nu))
        if gams[i] > gams[i - 1] + 1e-12:
            flag("gamma_monotone", nu, "gamma increases at nu={}".format(nu))
    for i in range(nu_max):
        nu = i + 1
        ratio = rhos[i] / lams[i]
        if not (s.alpha1 / nu - 1e-12 <= ratio <= s.alpha2 / nu + 1e-12):
            flag("ratio_band", nu,
                 "rho/lambda={} outside [{}, {}]/nu".format(ratio, s.alpha1, s.alpha2))
        if gams[i] < 0.0:
            flag("gamma_negative", nu, "gamma={}".format(gams[i]))
        if nu >= s.nu_bar:
            if Ns[i] < s.c2 * nu ** (1.0 + s.c1) - 1e-9:
                flag("sample_growth_lower", nu,
                     "N_nu={} below c2*nu^(1+c1)={}".format(
                         Ns[i], s.c2 * nu ** (1.0 + s.c1)))
            if i >= 1 and Ns[i] * (1.0 - s.c3 / nu) > Ns[i - 1] + 1e-9:
                flag("sample_growth_upper", nu,
                     "N_nu*(1-c3/nu)={} above N_(nu-1)={}".format(
                         Ns[i] * (1 - s.c3 / nu), Ns[i - 1]))
            if gams[i] < s.c4 * nu ** (-s.delta) - 1e-12:
                flag("gamma_floor", nu,
                     "gamma_nu={} below c4*nu^-delta={}".format(
                         gams[i], s.c4 * nu ** (-s.delta)))

    b = s.beta
    S = {k: 0.0 for k in ("S1", "S2", "S3", "S4", "S5", "S6")}
    for i in range(1, nu_max):
        dN = Ns[i] - Ns[i - 1]
        if dN <= 0 or Ns[i - 1] <= 0:
            continue
        t1 = (dN / Ns[i]) / Ns[i - 1] ** b
        t3 = dN ** (1.0 - b) / Ns[i]
        S["S1"] += t1
        S["S2"] += 1.0 / Ns[i] ** b
        S["S3"] += t3
        if gams[i - 1] > 0:
            S["S4"] += t1 / gams[i - 1]
            S["S6"] += t3 / gams[i - 1]
        if gams[i] > 0:
            S["S5"] += 1.0 / (Ns[i] ** b * gams[i])
    diagnostics = dict(S)
    if h_oracle is not None:
        drift = 0.0
        terms = []
        for i in range(1, nu_max):
            d = 0.0
            for side in ("lb", "ub"):
                if gams[i] > 0 and gams[i - 1] > 0:
                    d += abs(h_oracle(gams[i], side) - h_oracle(gams[i - 1], side))
            terms.append(d)
            drift += d
        diagnostics["gamma_drift_sum"] = drift
        tail = terms[max(len(terms) - 10, 0):]
        diagnostics["gamma_drift_tail_decreasing"] = all(
            a >= b_ - 1e-15 for a, b_ in zip(tail[:-1], tail[1:]))
    return {"ok": not violations, "violations": violations,
            "diagnostics": diagnostics}


def empirical_mean(values, axis=0):
    """Mean with a fixed summation order.

    Uses numpy's pairwise reduction over the given axis, which has a fixed
    blocking for a given shape, so repeated calls on equal inputs return
    bit-identical results.
    """
    values = np.asarray(values, dtype=float)
    if values.shape[axis] == 0:
        raise ValueError("mean of empty sample block")
    return np.sum(values, axis=axis) / values.shape[axis]


def rademacher_estimate(values, n_rep=200, seed=0, exact_limit=12):
    """Symmetrized complexity of a function class from a value matrix.

    ``values[i, j]`` holds f(x_j, xi_i) for sample i and grid point j.  The
    estimate is the average over sign vectors sigma of
    sup_j |mean_i sigma_i values[i, j]|.  With N <= ``exact_limit`` all 2^N
    sign patterns are enumerated and the standard error is 0; otherwise
    ``n_rep`` Monte Carlo draws from a (seed, rep)-keyed generator are used.

    Returns (estimate, standard_error).
    """
    V = np.atleast_2d(np.asarray(values, dtype=float))
    N = V.shape[0]
    if N == 0:
        raise ValueError("empty value matrix")
    if N <= exact_limit:
        total = 0.0
        for mask in range(2 ** N):
            sigma = np.array([1.0 if mask >> i & 1 else -1.0 for i in range(N)])
            total += np.abs(sigma @ V / N).max()
        return total / 2 ** N, 0.0
    sups = np.empty(n_rep)
    for rep in range(n_rep):
        rng = np.random.Generator(np.random.Philox(key=[int(seed), rep]))
        sigma = rng.integers(0, 2, size=N) * 2.0 - 1.0
        sups[rep] = np.abs(sigma @ V / N).max()
    est = float(sups.mean())
    se = float(sups.std(ddof=1) / math.sqrt(n_rep)) if n_rep > 1 else 0.0
    return est, se
