import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cohortshift.cohort import CohortError
from cohortshift.selection import ModelCard, cohort_distance, load_registry, rank_models
from cohortshift.survival import CoxModel, fit_cox

from conftest import make_cohort


def card(name, km, n, kind="none", beta=0.0):
    model = CoxModel(("x1",), np.array([beta]), np.array([0.0]), np.array([5.0, 50.0]), np.array([0.1, 0.6]))
    return ModelCard(model, name, km, n, kind, 60.0)


def target_cohort():
    # KM at 60 months: (3/4)(2/3)(1/2) = 0.25
    return make_cohort([10.0, 20.0, 30.0, 70.0], [1, 1, 1, 0], [[0.0], [1.0], [2.0], [3.0]], name="tgt")


class TestDistance:
    def test_published_pairs(self):
        # five-year RFS of the untreated JHH, UOR and CCF cohorts
        assert cohort_distance(0.247, 0.253) == pytest.approx(0.006, abs=1e-12)
        assert cohort_distance(0.247, 0.618) == pytest.approx(0.371, abs=1e-12)

    def test_identical(self):
        assert cohort_distance(0.4, 0.4) == 0.0

    def test_vector(self):
        assert cohort_distance([0.1, 0.5], [0.4, 0.9]) == pytest.approx(0.5)

    @pytest.mark.parametrize("a, b", [(1.2, 0.3), (-0.1, 0.3), (np.nan, 0.3)])
    def test_out_of_range(self, a, b):
        with pytest.raises(ValueError):
            cohort_distance(a, b)

    @given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))
    def test_metric(self, a, b, c):
        assert cohort_distance(a, b) == cohort_distance(b, a)
        assert cohort_distance(a, c) <= cohort_distance(a, b) + cohort_distance(b, c) + 1e-15


class TestRanking:
    def test_single_card(self):
        r = rank_models([card("a", 0.6, 100)], target_cohort())
        assert len(r.entries) == 1
        assert r.target_km == pytest.approx(0.25)
        assert r.entries[0].distance == pytest.approx(0.35)

    def test_tie_broken_by_size(self):
        cards = [card("small", 0.25, 80), card("mid", 0.62, 500), card("large", 0.25, 300)]
        r = rank_models(cards, target_cohort())
        assert [e.card.training_cohort_name for e in r.entries] == ["large", "small", "mid"]

    def test_tie_broken_by_name(self):
        cards = [card("zulu", 0.25, 80), card("alpha", 0.25, 80)]
        assert rank_models(cards, target_cohort()).entries[0].card.training_cohort_name == "alpha"

    def test_horizon_beyond_follow_up(self):
        with pytest.raises(CohortError, match="beyond"):
            rank_models([card("a", 0.5, 10)], target_cohort(), horizon=100)

    def test_audit_attaches_ici(self, rng):
        n = 300
        X = rng.normal(size=(n, 1))
        t = rng.exponential(60, n) * np.exp(-0.5 * X[:, 0])
        c = make_cohort(np.maximum(t, 0.1), np.ones(n, bool), X, name="big")
        m = fit_cox(c)
        r = rank_models([ModelCard(m, "big", 0.4, n)], c, audit=True)
        assert r.entries[0].ici is not None and 0 <= r.entries[0].ici < 0.2
        assert r.rows()[0]["rank"] == 1


class TestModelCard:
    def test_round_trip(self, tmp_path, rng):
        X = rng.normal(size=(60, 2))
        c = make_cohort(rng.uniform(1, 90, 60), rng.random(60) < 0.6, X)
        original = ModelCard(fit_cox(c), "rt", 0.5, 60, "concept", 60.0)
        original.save(tmp_path / "rt__concept.json")
        (tmp_path / "manifest.json").write_text("{}")
        (loaded,) = load_registry(tmp_path)
        np.testing.assert_array_equal(loaded.model.coefficients, original.model.coefficients)
        np.testing.assert_array_equal(loaded.model.baseline_cum_hazard, original.model.baseline_cum_hazard)
        np.testing.assert_array_equal(loaded.predict(X), original.predict(X))
        assert loaded.weighting_kind == "concept"
        assert loaded.model.fit_report == original.model.fit_report

    def test_malformed(self, tmp_path):
        (tmp_path / "bad.json").write_text(json.dumps({"coefficients": {"a": 1.0}}))
        with pytest.raises(ValueError, match="malformed"):
            ModelCard.load(tmp_path / "bad.json")

    def test_empty_registry(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_registry(tmp_path)
