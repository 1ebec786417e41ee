"""Sample store replay, schedule validation, and complexity estimates."""

import math

import numpy as np
import pytest

from accsp.approx import UniformLaw
from accsp.model import RandomSource
from accsp.sampling import (
    Rule,
    SampleStore,
    Schedule,
    empirical_mean,
    rademacher_estimate,
    reference_schedule,
    validate_schedule,
)


def uniform_source():
    return RandomSource("uniform", lo=[-1.0], hi=[1.0])


class TestSampleStore:
    def test_replay_bit_for_bit(self):
        s1 = SampleStore(uniform_source(), seed=99)
        s1.extend_to(5)
        s1.extend_to(12)
        s2 = SampleStore(uniform_source(), seed=99)
        s2.extend_to(5)
        s2.extend_to(12)
        assert np.array_equal(s1.samples, s2.samples)
        assert s1.batch_sizes == [5, 7]

    def test_batch_boundaries_key_the_stream(self):
        one = SampleStore(uniform_source(), seed=7)
        one.extend_to(12)
        two = SampleStore(uniform_source(), seed=7)
        two.extend_to(5)
        two.extend_to(12)
        assert one.samples.shape == two.samples.shape == (12, 1)
        assert not np.array_equal(one.samples, two.samples)

    def test_seed_changes_stream(self):
        a = SampleStore(uniform_source(), seed=1)
        b = SampleStore(uniform_source(), seed=2)
        assert not np.array_equal(a.extend_to(64), b.extend_to(64))

    def test_counts_strictly_increase(self):
        s = SampleStore(uniform_source(), seed=0)
        s.extend_to(4)
        with pytest.raises(ValueError, match="strictly increase"):
            s.extend_to(4)
        with pytest.raises(ValueError, match="strictly increase"):
            s.extend_to(2)

    def test_external_source_slices_in_order(self, tmp_path):
        rows = np.arange(12.0).reshape(6, 2)
        path = tmp_path / "draws.txt"
        np.savetxt(path, rows)
        s = SampleStore(RandomSource("external", path=str(path)), seed=0)
        s.extend_to(2)
        s.extend_to(6)
        assert np.allclose(s.samples, rows)
        with pytest.raises(ValueError, match="exhausted"):
            s.extend_to(7)

    def test_finite_source_draws_rows(self):
        src = RandomSource("finite", values=[[0.0, 1.0], [2.0, 3.0]],
                           probs=[0.5, 0.5])
        s = SampleStore(src, seed=5)
        block = s.extend_to(40)
        assert block.shape == (40, 2)
        assert all(tuple(r) in {(0.0, 1.0), (2.0, 3.0)} for r in block)


class TestRules:
    def test_families(self):
        assert Rule("power", {"c": 5.0, "p": 3.0}, ceil=True)(2) == 40
        assert Rule("log", {"a": 1.0})(1) == pytest.approx(1.0)
        assert Rule("constant", {"value": 0.25})(17) == 0.25
        r = Rule("power-floor", {"c": 0.5, "p": 0.3, "floor": 0.02})
        assert r(1) == pytest.approx(0.5)
        assert r(10 ** 9) == pytest.approx(0.02)
        assert Rule("lambda-over-nu", {"scale": 2.0})(4, lam=3.0) == pytest.approx(1.5)

    def test_rejects_bad_params(self):
        with pytest.raises(ValueError):
            Rule("power", {"c": -1.0, "p": 2.0})
        with pytest.raises(ValueError):
            Rule("no-such-family", {})
        with pytest.raises(ValueError, match="penalty value"):
            Rule("lambda-over-nu", {})(3)
        with pytest.raises(ValueError, match="starts at 1"):
            Rule("constant", {"value": 1.0})(0)

    def test_round_trip_through_dict(self):
        sched = reference_schedule()
        again = Schedule.from_dict(sched.to_dict())
        for nu in (1, 2, 9, 33):
            assert again.N(nu) == sched.N(nu)
            assert again.lam(nu) == sched.lam(nu)
            assert again.rho(nu) == sched.rho(nu)
            assert again.gamma(nu) == sched.gamma(nu)


class TestValidateSchedule:
    def test_reference_schedule_passes(self):
        report = validate_schedule(reference_schedule(), nu_max=60)
        assert report["ok"], report["violations"]
        diag = report["diagnostics"]
        assert set(diag) >= {"S1", "S2", "S3", "S4", "S5", "S6"}
        assert all(np.isfinite(v) for v in diag.values())

    def test_reference_values(self):
        sched = reference_schedule()
        assert [sched.N(nu) for nu in (1, 2, 3)] == [5, 40, 135]
        assert sched.lam(1) == pytest.approx(1.0)
        assert sched.lam(3) == pytest.approx(1.0 + math.log(3.0))
        assert sched.rho(4) == pytest.approx(sched.lam(4) / 4.0)
        assert sched.gamma(8) == pytest.approx(8.0 ** -0.3)

    @pytest.mark.parametrize("mutate, tag", [
        (dict(delta=0.4), "exponent_margin"),
        (dict(rho_rule=Rule("lambda-over-nu", {"scale": 3.0})), "ratio_band"),
        (dict(n_rule=Rule("power", {"c": 5.0, "p": 1.5}, ceil=True)),
         "sample_growth_lower"),
        (dict(n_rule=Rule("power", {"c": 5.0, "p": 6.0}, ceil=True)),
         "sample_growth_upper"),
        (dict(gamma_rule=Rule("power-floor", {"c": 0.5, "p": 0.3, "floor": 0.0})),
         "gamma_floor"),
        (dict(lambda_rule=Rule("power", {"c": 1.0, "p": -0.5})),
         "lambda_monotone"),
    ])
    def test_single_mutations_get_tagged(self, mutate, tag):
        base = reference_schedule().to_dict()
        sched = Schedule.from_dict(base)
        for key, value in mutate.items():
            setattr(sched, key, value)
        report = validate_schedule(sched, nu_max=40)
        assert not report["ok"]
        tags = {v["tag"] for v in report["violations"]}
        assert tag in tags

    def test_beta_and_initial_lambda(self):
        sched = reference_schedule()
        sched.beta = 0.6
        tags = {v["tag"] for v in validate_schedule(sched)["violations"]}
        assert "beta_range" in tags
        sched = reference_schedule()
        sched.lambda_rule = Rule("constant", {"value": 2.0})
        tags = {v["tag"] for v in validate_schedule(sched)["violations"]}
        assert "lambda_initial" in tags

    def test_gamma_drift_diagnostic(self):
        law = UniformLaw(-1.0, 1.0)
        report = validate_schedule(reference_schedule(), nu_max=30,
                                   h_oracle=law.h)
        diag = report["diagnostics"]
        # both windows move by gamma/4, so the drift telescopes
        want = (reference_schedule().gamma(1) - reference_schedule().gamma(30)) / 2.0
        assert diag["gamma_drift_sum"] == pytest.approx(want, abs=1e-12)
        assert diag["gamma_drift_tail_decreasing"]

    def test_constant_gamma_has_zero_drift(self):
        sched = reference_schedule(Rule("constant", {"value": 0.2}))
        sched.c4 = 0.0
        report = validate_schedule(sched, nu_max=20,
                                   h_oracle=UniformLaw(-1.0, 1.0).h)
        assert report["ok"]
        assert report["diagnostics"]["gamma_drift_sum"] == 0.0


class TestEmpiricalMean:
    def test_matches_numpy_and_is_deterministic(self):
        rng = np.random.default_rng(3)
        a = rng.normal(size=(1000, 4))
        m1 = empirical_mean(a)
        m2 = empirical_mean(a.copy())
        assert np.array_equal(m1, m2)
        assert m1 == pytest.approx(a.mean(axis=0))

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            empirical_mean(np.zeros((0, 2)))


class TestRademacher:
    def test_single_sample_sign_grid_is_exact(self):
        # f(x, xi) = x*xi on the grid {-1, 1} with one sample xi = 1
        est, se = rademacher_estimate(np.array([[(-1.0), 1.0]]))
        assert est == 1.0
        assert se == 0.0

    def test_constant_class_two_samples(self):
        c = 0.7
        est, se = rademacher_estimate(np.array([[c], [c]]))
        assert est == pytest.approx(c / 2.0)
        assert se == 0.0

    def test_monte_carlo_reproducible(self):
        rng = np.random.default_rng(11)
        V = rng.normal(size=(64, 3))
        a = rademacher_estimate(V, n_rep=50, seed=4)
        b = rademacher_estimate(V, n_rep=50, seed=4)
        assert a == b
        c = rademacher_estimate(V, n_rep=50, seed=5)
        assert a != c

    def test_root_n_decay(self):
        rng = np.random.default_rng(17)
        sizes = [16, 64, 256, 1024]
        ests = []
        for N in sizes:
            xi = rng.uniform(-1.0, 1.0, size=N)
            V = np.column_stack([-xi, xi])    # f(x, xi) = x*xi on {-1, 1}
            est, _ = rademacher_estimate(V, n_rep=400, seed=N)
            ests.append(est)
        slope = np.polyfit(np.log(sizes), np.log(ests), 1)[0]
        assert slope == pytest.approx(-0.5, abs=0.15)
