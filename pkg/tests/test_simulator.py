import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from cohortshift.simulator import CohortSpec, SpecError, simulate_cohort, stream, true_density_ratio

from conftest import simple_spec


class TestSpec:
    def test_round_trip(self):
        spec = simple_spec(hidden_factor=(0.2, 3.0), curvature=[0.1, 0.0], concept_shift=[0.2, 0.0])
        back = CohortSpec.from_dict(spec.to_dict())
        assert back.to_dict() == spec.to_dict()

    @pytest.mark.parametrize(
        "change",
        [
            {"covariate_cov": [[1.0, 2.0], [2.0, 1.0]]},
            {"n": 10},
            {"censoring": [50.0, 20.0]},
            {"hidden_factor": [1.5, 2.0]},
            {"weibull_shape": 0.0},
        ],
    )
    def test_invalid(self, change):
        with pytest.raises(SpecError):
            simple_spec().replace(**change)

    def test_unknown_field(self):
        with pytest.raises(SpecError, match="unknown"):
            CohortSpec.from_dict({**simple_spec().to_dict(), "bogus": 1})


class TestSimulate:
    def test_bit_identical(self):
        a, ta = simulate_cohort(simple_spec(), seed=4)
        b, tb = simulate_cohort(simple_spec(), seed=4)
        for f in ("X", "time", "event", "treatment"):
            np.testing.assert_array_equal(getattr(a, f), getattr(b, f))
        np.testing.assert_array_equal(ta.risk, tb.risk)

    def test_seed_and_name_matter(self):
        a, _ = simulate_cohort(simple_spec(), seed=4)
        b, _ = simulate_cohort(simple_spec(), seed=5)
        c, _ = simulate_cohort(simple_spec(name="other"), seed=4)
        assert not np.array_equal(a.X, b.X)
        assert not np.array_equal(a.X, c.X)

    def test_prefix_stable_in_n(self):
        # patient i keeps its draws when the cohort grows
        small, _ = simulate_cohort(simple_spec(n=100), seed=1)
        big, _ = simulate_cohort(simple_spec(n=300), seed=1)
        np.testing.assert_array_equal(small.X, big.X[:100])
        np.testing.assert_array_equal(small.time, big.time[:100])

    def test_replicates_independent(self):
        a, _ = simulate_cohort(simple_spec(), seed=1, replicate=0)
        b, _ = simulate_cohort(simple_spec(), seed=1, replicate=1)
        assert not np.array_equal(a.time, b.time)

    def test_covariate_moments(self):
        cov = np.array([[2.0, 0.6], [0.6, 1.0]])
        spec = CohortSpec("m", 20000, np.array([1.0, -2.0]), cov, np.zeros(2))
        c, _ = simulate_cohort(spec, seed=0)
        np.testing.assert_allclose(c.X.mean(0), [1.0, -2.0], atol=0.04)
        np.testing.assert_allclose(np.cov(c.X, rowvar=False), cov, atol=0.06)

    def test_weibull_event_times(self):
        spec = CohortSpec("w", 5000, np.zeros(1), np.eye(1), np.zeros(1), weibull_shape=1.5, weibull_scale=80.0)
        _, truth = simulate_cohort(spec, seed=2)
        ks = stats.kstest(truth.event_time, stats.weibull_min(1.5, scale=80.0).cdf)
        assert ks.pvalue > 0.01

    def test_censoring_window(self):
        spec = simple_spec(censoring=(30.0, 90.0))
        c, truth = simulate_cohort(spec, seed=3)
        censored = ~c.event
        assert np.all((c.time[censored] >= 30) & (c.time[censored] <= 90))
        np.testing.assert_array_equal(c.time[c.event], truth.event_time[c.event])

    def test_risk_matches_event_frequency(self):
        spec = simple_spec(n=20000, curvature=[0.3, 0.0], weibull_shape=1.2)
        _, truth = simulate_cohort(spec, seed=6)
        assert np.mean(truth.event_time <= 60) == pytest.approx(truth.risk.mean(), abs=0.012)

    def test_hidden_factor_mixture(self):
        spec = simple_spec(n=20000, hidden_factor=(0.3, 4.0))
        c, truth = simulate_cohort(spec, seed=7)
        assert truth.hidden.mean() == pytest.approx(0.3, abs=0.015)
        assert np.mean(truth.event_time <= 60) == pytest.approx(truth.risk.mean(), abs=0.012)
        carrier = spec.risk(c.X, 60, hidden=np.ones(c.n, bool))
        base = spec.risk(c.X, 60, hidden=np.zeros(c.n, bool))
        np.testing.assert_allclose(truth.risk, 0.3 * carrier + 0.7 * base)

    def test_density_matches_scipy(self):
        spec = simple_spec()
        c, truth = simulate_cohort(spec, seed=1)
        ref = stats.multivariate_normal(spec.covariate_mean, spec.covariate_cov).pdf(c.X)
        np.testing.assert_allclose(truth.density, ref, rtol=1e-12)

    def test_stream_independent_of_hash_seed(self):
        a = stream(1, "alpha", 0).random(3)
        b = stream(1, "alpha", 0).random(3)
        np.testing.assert_array_equal(a, b)


class TestDensityRatio:
    def test_identity(self, rng):
        s = simple_spec()
        np.testing.assert_allclose(true_density_ratio(s, s, rng.normal(size=(10, 2))), 1.0)

    def test_univariate_closed_form(self):
        a = CohortSpec("a", 100, np.zeros(1), np.eye(1), np.zeros(1))
        b = a.replace(name="b", covariate_mean=[1.0])
        for x in (-2.0, 0.0, 0.7, 3.0):
            assert true_density_ratio(a, b, np.array([x])) == pytest.approx(math.exp(x - 0.5), rel=1e-12)

    @given(st.floats(-3, 3), st.floats(-3, 3))
    def test_reciprocal(self, x1, x2):
        a = simple_spec(mean=(0.0, 0.5))
        b = simple_spec(name="b", mean=(1.0, -0.5), concept_shift=(0.3, 0.1))
        x = np.array([x1, x2])
        for y in (None, 0, 1):
            assert true_density_ratio(a, b, x, y) * true_density_ratio(b, a, x, y) == pytest.approx(1.0, rel=1e-10)

    def test_outcome_factor(self):
        a = simple_spec()
        b = simple_spec(name="b", concept_shift=(0.5, 0.0))
        x = np.array([0.3, -0.2])
        ra, rb = a.risk(x)[0], b.risk(x)[0]
        assert true_density_ratio(a, b, x, 1) == pytest.approx(rb / ra)
        assert true_density_ratio(a, b, x, 0) == pytest.approx((1 - rb) / (1 - ra))
