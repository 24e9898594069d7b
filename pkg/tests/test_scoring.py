import math

import numpy as np
import pytest
from scipy.stats import multivariate_normal, norm

from app.models import skew_t
from app.schemas.scoring import PredictiveEnsemble, PredictiveModel
from app.services.scoring_service import ScoringService
from tests.helpers import copula, gaussian, independence_model, one_factor, simulate_uniforms, white_noise_marginal


@pytest.fixture
def service():
    return ScoringService()


def predictive(spec, nu=8.0, xi=1.0):
    banks = [f"b{i}" for i in range(spec.n_vars)]
    return PredictiveModel(banks=banks, marginals={b: white_noise_marginal(nu=nu, xi=xi) for b in banks}, copula=spec)


class TestLogPredictiveScore:
    def test_independence_at_medians_is_marginal_sum(self, service):
        xi, nu = 1.3, 6.0
        model = predictive(independence_model(3), nu=nu, xi=xi)
        med = skew_t.median(xi, nu)
        lps = service.log_predictive_score(model, [med] * 3)
        assert lps == pytest.approx(-3.0 * float(skew_t.logpdf(med, xi, nu)), abs=1e-10)

    def test_two_bank_gaussian_closed_form(self, service):
        model = predictive(one_factor([gaussian(0.8), gaussian(0.6)]))
        y = np.array([0.4, -1.1])
        u = skew_t.cdf(y, 1.0, 8.0)
        z = norm.ppf(u)
        corr = np.array([[1.0, 0.48], [0.48, 1.0]])
        copula_term = multivariate_normal(cov=corr).logpdf(z) - norm.logpdf(z).sum()
        expected = -(copula_term + skew_t.logpdf(y, 1.0, 8.0).sum())
        assert service.log_predictive_score(model, y) == pytest.approx(expected, abs=1e-6)

    def test_bank_order_does_not_matter(self, service):
        links = [copula("gum", 0.5), copula("cla", 0.3), copula("fra", 0.4)]
        y = [0.3, -0.8, 1.4]
        forward = service.log_predictive_score(predictive(one_factor(links)), y)
        backward = service.log_predictive_score(predictive(one_factor(links[::-1])), y[::-1])
        assert forward == pytest.approx(backward, abs=1e-10)

    def test_dependent_model_beats_independence(self, service):
        truth = one_factor([copula("gum", 0.5)] * 3)
        rows = skew_t.ppf(simulate_uniforms(truth, 500, seed=11), 1.0, 8.0)
        dependent = predictive(truth)
        independent = predictive(independence_model(3))
        true_sum = sum(service.log_predictive_score(dependent, y) for y in rows)
        ind_sum = sum(service.log_predictive_score(independent, y) for y in rows)
        assert true_sum < ind_sum

    def test_nonfinite_row_rejected(self, service):
        with pytest.raises(ValueError):
            service.log_predictive_score(predictive(independence_model(2)), [0.1, np.nan])

    def test_model_banks_must_match_copula(self):
        with pytest.raises(ValueError):
            PredictiveModel(banks=["a"], marginals={"a": white_noise_marginal()}, copula=independence_model(2))


class TestConditionalLikelihood:
    def test_independence_region_mass(self, service):
        mass, se = service.region_mass(independence_model(3), [0.5] * 3, np.random.default_rng(1), n_draws=100_000)
        assert mass == pytest.approx(0.125, abs=0.005)
        assert se == pytest.approx(math.sqrt(0.125 * 0.875 / 100_000), rel=0.05)

    def test_strong_dependence_region_mass(self, service):
        rho = 0.987 * 0.987
        mass, _ = service.region_mass(
            one_factor([gaussian(0.987)] * 2), [0.5, 0.5], np.random.default_rng(2), n_draws=100_000
        )
        assert mass == pytest.approx(0.25 + math.asin(rho) / (2.0 * math.pi), abs=0.005)

    def test_in_region_row_is_renormalized(self, service):
        model = predictive(independence_model(3))
        y = [0.5, 1.0, 0.2]
        result = service.conditional_likelihood_score(model, y, [0.0] * 3, np.random.default_rng(3), n_draws=100_000)
        assert result.in_region
        assert not result.flagged
        assert result.region_mass == pytest.approx(0.125, abs=0.005)
        assert result.score == pytest.approx(
            service.log_predictive_score(model, y) + math.log(result.region_mass), abs=1e-12
        )

    def test_row_outside_region_has_no_score(self, service):
        model = predictive(independence_model(3))
        rng = np.random.default_rng(4)
        before = rng.bit_generator.state
        result = service.conditional_likelihood_score(model, [-0.5, 1.0, 1.0], [0.0] * 3, rng, n_draws=10_000)
        assert not result.in_region
        assert result.score is None
        assert result.region_mass is None
        assert not result.flagged
        assert rng.bit_generator.state == before

    def test_shared_draws_match_fresh_draws(self, service):
        model = predictive(one_factor([gaussian(0.6)] * 3))
        y, med = [0.5, 1.0, 0.2], [0.0] * 3
        fresh = service.conditional_likelihood_score(model, y, med, np.random.default_rng(12), n_draws=20_000)
        draws = service.region_draws(model.copula, np.random.default_rng(12), n_draws=20_000)
        shared = service.conditional_likelihood_score(model, y, med, draws=draws)
        assert shared == fresh
        again = service.conditional_likelihood_score(model, [0.3, 0.4, 0.9], med, draws=draws)
        assert again.region_mass == shared.region_mass

    def test_shared_draws_follow_daily_threshold(self, service):
        model = predictive(independence_model(2))
        draws = service.region_draws(model.copula, np.random.default_rng(13), n_draws=50_000)
        low = service.conditional_likelihood_score(model, [2.0, 2.0], [-1.0, -1.0], draws=draws)
        high = service.conditional_likelihood_score(model, [2.0, 2.0], [1.0, 1.0], draws=draws)
        assert low.region_mass > high.region_mass
        u_star = float(service.marginal_terms(model, [1.0, 1.0])[0][0])
        assert high.region_mass == pytest.approx((1.0 - u_star) ** 2, abs=0.01)

    def test_mass_needs_draws_or_generator(self, service):
        with pytest.raises(ValueError):
            service.region_mass(independence_model(2), [0.5, 0.5])
        with pytest.raises(ValueError):
            service.region_mass(independence_model(2), [0.5, 0.5], draws=np.full((10, 3), 0.5))

    def test_noisy_region_mass_is_flagged(self, service):
        model = predictive(independence_model(3))
        result = service.conditional_likelihood_score(
            model, [1.0, 1.0, 1.0], [0.0] * 3, np.random.default_rng(5), n_draws=100
        )
        assert result.in_region
        assert result.flagged
        assert result.relative_error > 0.10


class TestVariogram:
    def test_hand_example(self):
        paths = np.array([[0.0, 0.0], [2.0, 4.0]])
        assert ScoringService.variogram_score(paths, [1.0, 3.0], p=0.5) == pytest.approx(0.5, abs=1e-15)

    def test_perfect_ensemble_scores_zero(self):
        y = np.array([0.3, -1.2, 0.8])
        assert ScoringService.variogram_score(np.tile(y, (5, 1)), y) == 0.0

    def test_translation_and_permutation_invariance(self):
        rng = np.random.default_rng(6)
        paths = rng.standard_normal((200, 4))
        y = rng.standard_normal(4)
        base = ScoringService.variogram_score(paths, y)
        assert base >= 0.0
        assert ScoringService.variogram_score(paths + 3.7, y + 3.7) == pytest.approx(base, rel=1e-10)
        perm = [2, 0, 3, 1]
        assert ScoringService.variogram_score(paths[:, perm], y[perm]) == pytest.approx(base, rel=1e-10)

    def test_order_must_be_positive(self):
        with pytest.raises(ValueError):
            ScoringService.variogram_score(np.zeros((3, 2)), [0.0, 0.0], p=0.0)

    def test_ensemble_needs_enough_paths(self):
        with pytest.raises(ValueError):
            PredictiveEnsemble(paths=np.zeros((10, 2)), realized=np.zeros(2))

    def test_predictive_ensemble(self, service):
        model = predictive(one_factor([gaussian(0.6)] * 3))
        ens = service.predictive_ensemble(model, [0.1, 0.2, 0.3], np.random.default_rng(7), n_paths=300)
        assert ens.paths.shape == (300, 3)
        assert service.score_ensemble(ens) >= 0.0


@pytest.mark.slow
def test_true_model_wins_log_score_most_of_the_time(service):
    truth = one_factor([copula("gum", 0.5)] * 3)
    dependent = predictive(truth)
    independent = predictive(independence_model(3))
    wins = 0
    for rep in range(50):
        rows = skew_t.ppf(simulate_uniforms(truth, 100, seed=500 + rep), 1.0, 8.0)
        true_sum = sum(service.log_predictive_score(dependent, y) for y in rows)
        ind_sum = sum(service.log_predictive_score(independent, y) for y in rows)
        wins += true_sum < ind_sum
    assert wins >= 45
