import numpy as np
import pandas as pd
import pytest
from scipy.stats import ks_2samp, spearmanr

from app.core.config import Settings, activate_settings
from app.core.errors import InsufficientHistoryError, NoRootError
from app.schemas.risk import CdsTermSpec, DistressThresholds, RiskReport, ScenarioSet
from app.services.marginal_service import marginal_service
from app.services.risk_service import RiskService, risk_service
from tests.helpers import gaussian, independence_model, one_factor, white_noise_marginal


@pytest.fixture
def risk():
    return RiskService(min_conditioning_paths=1)


def thresholds(values, banks=None):
    banks = banks or [f"b{i}" for i in range(len(values))]
    return DistressThresholds(banks=banks, thresholds=values)


def scenarios(spreads, banks=None):
    spreads = np.asarray(spreads, dtype=np.float64)
    banks = banks or [f"b{i}" for i in range(spreads.shape[1])]
    return ScenarioSet(banks=banks, spreads=spreads)


class TestImpliedDefaultProbability:
    def test_single_period_zero_rate_is_spread_over_lgd(self, risk):
        term = CdsTermSpec(rate=0.0, lgd=0.75, periods=1)
        assert risk.implied_default_probability(0.0075, term) == pytest.approx(0.01, abs=1e-14)

    def test_residual_vanishes_on_grid(self, risk):
        term = CdsTermSpec(rate=0.0, lgd=0.75, periods=5)
        worst = 0.0
        for s in np.linspace(0.0005, 0.05, 40):
            for r in np.linspace(0.0, 0.05, 25):
                t = term.model_copy(update={"rate": float(r)})
                p = risk.implied_default_probability(float(s), t)
                assert 0.0 < p < 1.0
                worst = max(worst, abs(risk._leg_residual(p, float(s), t)))
        assert worst < 1e-12

    def test_small_spread_regime(self, risk):
        term = CdsTermSpec(rate=0.005, lgd=0.75, periods=5)
        p = risk.implied_default_probability(0.002, term)
        assert p == pytest.approx(0.002 / 0.75, rel=0.02)

    def test_probability_increases_with_spread(self, risk):
        ps = [risk.implied_default_probability(s) for s in (0.001, 0.01, 0.05)]
        assert ps == sorted(ps)

    def test_spread_too_large(self, risk):
        with pytest.raises(NoRootError):
            risk.implied_default_probability(1.0, CdsTermSpec(rate=0.0, lgd=0.75, periods=5))

    def test_nonpositive_spread(self, risk):
        with pytest.raises(ValueError):
            risk.implied_default_probability(0.0)

    def test_series_marks_missing_roots(self, risk):
        spreads = pd.DataFrame(
            {"a": [75.0, 150.0], "b": [20000.0, 50.0]},
            index=pd.to_datetime(["2020-01-01", "2020-01-02"]),
        )
        out = risk.implied_pd_series(spreads, term=CdsTermSpec(rate=0.0, lgd=0.75, periods=1))
        assert out.loc["2020-01-01", "a"] == pytest.approx(0.01)
        assert np.isnan(out.loc["2020-01-01", "b"])
        assert out.loc["2020-01-02", "b"] == pytest.approx(0.005 / 0.75)


class TestThresholds:
    def test_linear_percentile(self, risk):
        history = pd.DataFrame({"a": np.arange(1.0, 1001.0), "b": np.full(1000, 100.0)})
        th = risk.distress_thresholds(history, window=1000, percentile=95.0)
        assert th.thresholds == pytest.approx([950.05, 100.0])
        assert th.banks == ["a", "b"]

    def test_only_trailing_window_counts(self, risk):
        history = pd.DataFrame({"a": np.concatenate([np.full(500, 1e4), np.arange(1.0, 101.0)])})
        th = risk.distress_thresholds(history, window=100, percentile=50.0)
        assert th.thresholds == pytest.approx([50.5])

    def test_short_history(self, risk):
        with pytest.raises(InsufficientHistoryError):
            risk.distress_thresholds(pd.DataFrame({"a": np.ones(10)}), window=20)


class TestRiskReport:
    def test_four_path_enumeration(self, risk):
        scen = scenarios([[150.0, 250.0], [150.0, 100.0], [50.0, 300.0], [50.0, 100.0]])
        report = risk.risk_report(scen, thresholds([100.0, 200.0]))
        assert report.pd == [0.5, 0.5]
        assert report.jpd == [0.75, 0.25]
        assert report.epd == [0.75, 0.75]
        assert report.es == [150.0, 250.0]
        assert report.n_paths == 4

    def test_es_needs_enough_systemic_paths(self):
        scen = scenarios([[150.0, 250.0], [150.0, 100.0], [50.0, 300.0], [50.0, 100.0]])
        report = RiskService(min_conditioning_paths=2).risk_report(scen, thresholds([100.0, 200.0]))
        assert report.es == [None, None]

    def test_shared_service_follows_activated_settings(self, restore_settings):
        scen = scenarios([[150.0, 250.0], [150.0, 100.0], [50.0, 300.0], [50.0, 100.0]])
        activate_settings(Settings(ES_MIN_PATHS=5))
        assert risk_service.risk_report(scen, thresholds([100.0, 200.0])).es == [None, None]
        activate_settings(Settings(ES_MIN_PATHS=1))
        assert risk_service.risk_report(scen, thresholds([100.0, 200.0])).es == [150.0, 250.0]

    def test_hundred_path_enumeration(self, risk):
        rng = np.random.default_rng(31)
        spreads = rng.lognormal(mean=np.log(100.0), sigma=0.4, size=(100, 4))
        th = np.array([110.0, 120.0, 130.0, 140.0])
        report = risk.risk_report(scenarios(spreads), thresholds(list(th)))
        for i in range(4):
            hits = [path for path in spreads if path[i] > th[i]]
            assert report.pd[i] == len(hits) / 100
            counts = [sum(path[j] > th[j] for j in range(4)) for path in hits]
            assert report.epd[i] == pytest.approx(sum(c / 4 for c in counts) / len(counts))
        for k in range(1, 5):
            assert report.jpd[k - 1] == sum(sum(p > th) >= k for p in spreads) / 100
        systemic = [p for p in spreads if sum(p > th) >= 2]
        assert report.es == pytest.approx(list(np.mean(systemic, axis=0)))

    def test_nobody_in_distress(self, risk):
        report = risk.risk_report(scenarios(np.full((10, 3), 50.0)), thresholds([100.0] * 3))
        assert report.pd == [0.0] * 3
        assert report.jpd == [0.0] * 3
        assert report.epd == [None] * 3
        assert report.es == [None] * 3

    def test_everybody_in_distress(self, risk):
        report = risk.risk_report(scenarios(np.full((10, 3), 500.0)), thresholds([100.0] * 3))
        assert report.pd == [1.0] * 3
        assert report.jpd == [1.0] * 3
        assert report.epd == [1.0] * 3
        assert report.es == [500.0] * 3

    def test_bank_lists_must_match(self, risk):
        with pytest.raises(ValueError):
            risk.risk_report(scenarios(np.full((2, 2), 50.0)), thresholds([1.0, 1.0], banks=["x", "y"]))

    def test_report_rejects_increasing_jpd(self):
        with pytest.raises(ValueError):
            RiskReport(banks=["a", "b"], pd=[0.1, 0.1], jpd=[0.1, 0.2], epd=[None, None], es=[None, None], n_paths=10)

    def test_scenarios_must_be_positive(self):
        with pytest.raises(ValueError):
            scenarios([[1.0, -2.0]])


class TestScenarios:
    def test_shape_and_metadata(self, risk, rng):
        fits = {b: white_noise_marginal() for b in ("a", "b", "c")}
        scen = risk.forecast_scenarios(
            fits, independence_model(3), [100.0, 200.0, 300.0], rng, n_paths=500, horizon=5, seed=7
        )
        assert scen.spreads.shape == (500, 3)
        assert scen.banks == ["a", "b", "c"]
        assert scen.horizon == 5
        assert scen.seed == 7
        assert scen.model_id == independence_model(3).fingerprint()

    def test_strong_dependence_moves_banks_together(self, risk, rng):
        fits = {b: white_noise_marginal() for b in ("a", "b", "c")}
        spec = one_factor([gaussian(0.987)] * 3)
        scen = risk.forecast_scenarios(fits, spec, [100.0] * 3, rng, n_paths=2000, horizon=5)
        rank_corr = spearmanr(scen.spreads).correlation
        assert rank_corr[np.triu_indices(3, 1)].min() > 0.95

    def test_single_bank_reduces_to_marginal_simulation(self, risk):
        fit = white_noise_marginal(nu=6.0, xi=1.2)
        scen = risk.forecast_scenarios(
            {"a": fit}, one_factor([gaussian(0.5)]), [100.0], np.random.default_rng(41), n_paths=10000, horizon=1
        )
        steps, _ = marginal_service.forecast_paths(fit, np.random.default_rng(42).random((10000, 1)))
        direct = 100.0 * np.exp(steps[:, 0] / 100.0)
        assert ks_2samp(scen.spreads[:, 0], direct).pvalue > 1e-3

    def test_dimension_mismatch(self, risk, rng):
        with pytest.raises(ValueError):
            risk.forecast_scenarios({"a": white_noise_marginal()}, independence_model(2), [100.0], rng, 10, 2)
