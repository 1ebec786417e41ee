import numpy as np
import pytest
from scipy.integrate import quad

from accsp import oracles


def phi_ub_ref(t, gamma):
    return min(max(1.0 + t / gamma, 0.0), 1.0)


def phi_lb_ref(t, gamma):
    return min(max(t / gamma, 0.0), 1.0)


class TestHinge1dRows:
    def test_frozen_values_rst(self):
        assert oracles.hinge1d_row_rst(0.1, 0.2) == pytest.approx(0.15, abs=1e-12)
        assert oracles.hinge1d_row_rst(-0.5, 0.2) == 0.0
        assert oracles.hinge1d_row_rst(0.3, 0.2) == pytest.approx(0.25, abs=1e-12)

    def test_frozen_values_rlx(self):
        assert oracles.hinge1d_row_rlx(0.1, 0.2) == pytest.approx(0.05, abs=1e-12)
        assert oracles.hinge1d_row_rlx(-0.2, 0.3) == 0.0
        assert oracles.hinge1d_row_rlx(0.7, 0.3) == 0.0

    @pytest.mark.parametrize("gamma", [0.1, 0.2, 0.4])
    def test_rst_matches_quadrature(self, gamma):
        xs = np.linspace(-0.9, 0.95, 41)
        for x in xs:
            m = max(2 * x, 1 - 2 * x)
            val, _ = quad(lambda z: 0.5 * phi_ub_ref(z - m, gamma), -1.0, 1.0,
                          points=[max(-1.0, min(1.0, m - gamma)),
                                  max(-1.0, min(1.0, m))],
                          limit=200)
            assert oracles.hinge1d_row_rst(x, gamma) == pytest.approx(val, abs=1e-10)

    @pytest.mark.parametrize("gamma", [0.1, 0.2, 0.4])
    def test_rlx_matches_quadrature(self, gamma):
        xs = np.linspace(-0.9, 0.95, 41)
        for x in xs:
            m = max(2 * x, 1 - 2 * x)
            val, _ = quad(lambda z: 0.5 * phi_lb_ref(z - m, gamma), -1.0, 1.0,
                          points=[max(-1.0, min(1.0, m)),
                                  max(-1.0, min(1.0, m + gamma))],
                          limit=200)
            assert oracles.hinge1d_row_rlx(x, gamma) == pytest.approx(val, abs=1e-10)

    def test_sandwich_and_limit(self):
        xs = np.linspace(-1, 1, 201)
        for g in [0.05, 0.2, 0.45]:
            for x in xs:
                lo = oracles.hinge1d_row_rlx(x, g)
                hi = oracles.hinge1d_row_rst(x, g)
                p = oracles.hinge1d_prob(x)
                assert lo <= p + 1e-12
                assert p <= hi + 1e-12
        assert oracles.hinge1d_row_rst(0.1, 0.0) == pytest.approx(0.1)
        assert oracles.hinge1d_row_rlx(0.1, 0.0) == pytest.approx(0.1)

    def test_feasible_interval_endpoints(self):
        (a1, b1), (a2, b2) = oracles.hinge1d_feasible_rst(0.2)
        assert (a1, b1) == (-1.0, 0.2)
        assert (a2, b2) == (0.3, 1.0)
        # the row meets the threshold exactly at the inner endpoints
        assert oracles.hinge1d_row_rst(b1, 0.2) == pytest.approx(0.25, abs=1e-12)
        assert oracles.hinge1d_row_rst(a2, 0.2) == pytest.approx(0.25, abs=1e-12)
        (a1, b1), (a2, b2) = oracles.hinge1d_feasible_rlx(0.2)
        assert b1 == pytest.approx(0.175)
        assert a2 == pytest.approx(0.325)
        assert oracles.hinge1d_row_rlx(b1, 0.2) == pytest.approx(0.125, abs=1e-12)
        assert oracles.hinge1d_row_rlx(a2, 0.2) == pytest.approx(0.125, abs=1e-12)

    @pytest.mark.parametrize("gamma", [0.1, 0.2, 0.35])
    @pytest.mark.parametrize("variant", ["rst", "rlx"])
    def test_dd_finite_difference(self, gamma, variant):
        row = getattr(oracles, "hinge1d_row_" + variant)
        dd = getattr(oracles, "hinge1d_row_" + variant + "_dd")
        rng = np.random.default_rng(7)
        xs = np.concatenate([rng.uniform(-0.9, 0.95, 25),
                             [0.25, 0.0, 0.5, gamma / 2, -gamma / 2]])
        for x in xs:
            for v in (1.0, -1.0, 0.5):
                h = 1e-7
                fd = (row(x + h * v, gamma) - row(x, gamma)) / h
                assert dd(x, v, gamma) == pytest.approx(fd, abs=5e-6)

    def test_dd_at_kink(self):
        # downward kink at x = 1/4: both one-sided derivatives equal -1
        assert oracles.hinge1d_row_rst_dd(0.25, 1.0, 0.2) == -1.0
        assert oracles.hinge1d_row_rst_dd(0.25, -1.0, 0.2) == -1.0
        assert oracles.hinge1d_row_rlx_dd(0.25, 1.0, 0.2) == -1.0
        assert oracles.hinge1d_row_rlx_dd(0.25, -1.0, 0.2) == -1.0


class TestSignBernoulli:
    def test_limit_sets_positive_sign(self):
        # e = 1, zeta = 0.1: restricted set empty, relaxed set {0}
        zeta = 0.1
        xs = np.linspace(-1, 1, 41)  # includes 0
        rst_feasible = [x for x in xs if oracles.sign_bernoulli_row(x, 1.0, "rst") <= zeta]
        rlx_feasible = [x for x in xs if oracles.sign_bernoulli_row(x, 1.0, "rlx") <= zeta]
        assert rst_feasible == []
        assert rlx_feasible == [0.0]

    def test_limit_sets_negative_sign(self):
        # e = -1, zeta = -0.6: relaxed set {0}, restricted set empty
        zeta = -0.6
        xs = np.linspace(-1, 1, 41)
        rst_feasible = [x for x in xs if oracles.sign_bernoulli_row(x, -1.0, "rst") <= zeta]
        rlx_feasible = [x for x in xs if oracles.sign_bernoulli_row(x, -1.0, "rlx") <= zeta]
        assert rst_feasible == []
        assert rlx_feasible == [0.0]

    def test_finite_gamma_sandwich(self):
        for x in np.linspace(-1, 1, 21):
            for g in [0.05, 0.3, 0.49]:
                lo = oracles.sign_bernoulli_row(x, 1.0, "rlx", g)
                hi = oracles.sign_bernoulli_row(x, 1.0, "rst", g)
                p_ge = 1.0 if x == 0 else 0.5
                p_gt = 0.0 if x == 0 else 0.5
                assert lo <= p_gt + 1e-12
                assert p_ge <= hi + 1e-12


class TestScaledMinH:
    def test_frozen_value(self):
        assert oracles.scaled_min_h_bounds(2.0, 0.5, "lb") == pytest.approx(0.53125, abs=1e-15)

    def test_sides_sum_to_one(self):
        for f in [2.0, 3.5, 10.0]:
            for g in [0.1, 0.5, 1.0]:
                s = (oracles.scaled_min_h_bounds(f, g, "lb")
                     + oracles.scaled_min_h_bounds(f, g, "ub"))
                assert s == pytest.approx(1.0, abs=1e-15)

    def test_matches_quadrature(self):
        # F_Z(t) = (t/f + 2)/4 near 0; integrate it directly as a check
        for f in [2.0, 4.0]:
            for g in [0.25, 0.8]:
                lb, _ = quad(lambda t: (t / f + 2.0) / 4.0, 0.0, g)
                ub, _ = quad(lambda t: (t / f + 2.0) / 4.0, -g, 0.0)
                assert oracles.scaled_min_h_bounds(f, g, "lb") == pytest.approx(lb / g, abs=1e-12)
                assert oracles.scaled_min_h_bounds(f, g, "ub") == pytest.approx(ub / g, abs=1e-12)

    def test_domain_checks(self):
        with pytest.raises(ValueError):
            oracles.scaled_min_h_bounds(1.5, 0.5, "lb")
        with pytest.raises(ValueError):
            oracles.scaled_min_h_bounds(2.0, 1.5, "lb")


class TestBruteForce:
    def test_1d_quadratic(self):
        out = oracles.brute_force_min(lambda p: (p[0] - 0.3) ** 2, [-1.0], [1.0], 0.01)
        assert abs(out["x"][0] - 0.3) <= out["resolution"]

    def test_2d_with_constraint(self):
        # minimize x + y on the unit box intersected with x + y >= 0.5
        out = oracles.brute_force_min(
            lambda p: p[0] + p[1], [0.0, 0.0], [1.0, 1.0], 0.05,
            constraint=lambda p: np.array([0.5 - p[0] - p[1]]))
        assert out["value"] == pytest.approx(0.5, abs=2 * 0.05)

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            oracles.brute_force_min(lambda p: 0.0, [0.0] * 3, [1.0] * 3, 0.1)
        with pytest.raises(ValueError):
            oracles.brute_force_min(lambda p: 0.0, [0.0], [1.0], -1.0)
