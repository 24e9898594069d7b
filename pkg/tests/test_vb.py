import math

import numpy as np
import pytest
import torch
from scipy import integrate
from scipy.stats import logistic

from app.models import bivariate as biv
from app.schemas.copula import DF_MAX, DF_MIN, TAU_LIMIT, CopulaFamily
from app.schemas.factor import FactorKind, FactorModelSpec
from app.schemas.selection import SelectionConfig
from app.schemas.vb import ELBOTrace, PriorSpec, VariationalPosterior, VBConfig
from app.services.vb_service import VBProblem, VBService
from tests.helpers import copula, gaussian, independence_model, one_factor, simulate_uniforms


@pytest.fixture
def small_fit():
    data = simulate_uniforms(one_factor([gaussian(0.7), gaussian(0.6), gaussian(0.5)]), 100, seed=4)
    skeleton = FactorModelSpec.skeleton(FactorKind.ONE_FACTOR, 3)
    cfg = VBConfig(n_samples=5, learning_rate=0.05, max_iter=200, window=20, trace_every=50, seed=1)
    return skeleton, data, VBService().fit(skeleton, data, cfg)


class TestPrior:
    def test_parameter_prior_is_a_density(self):
        def density(x):
            return math.exp(float(PriorSpec.param_log_density(torch.tensor(x))))

        total = integrate.quad(density, -50, 50)[0]
        assert total == pytest.approx(1.0, abs=1e-8)

    @pytest.mark.parametrize(
        "family,coord,lo,hi",
        [
            (CopulaFamily.GAUSSIAN, 0, -TAU_LIMIT, TAU_LIMIT),
            (CopulaFamily.GUMBEL, 0, 0.0, TAU_LIMIT),
            (CopulaFamily.STUDENT_T, 1, DF_MIN, DF_MAX),
        ],
    )
    def test_parameter_prior_is_uniform_on_bounded_scale(self, family, coord, lo, hi):
        x = torch.linspace(-4.0, 4.0, 17, dtype=torch.float64).unsqueeze(-1).repeat(1, family.n_params)
        x.requires_grad_(True)
        if coord:
            bounded = biv.unconstrained_to_theta(family, x)[..., coord]
        else:
            bounded = biv.unconstrained_to_tau(family, x)
        (jacobian,) = torch.autograd.grad(bounded.sum(), x)
        pushed = torch.log(jacobian[:, coord]) - math.log(hi - lo)
        np.testing.assert_allclose(
            PriorSpec.param_log_density(x.detach()[:, coord]).numpy(), pushed.numpy(), atol=1e-10
        )

    def test_prior_bounds_are_not_configurable(self):
        assert PriorSpec.model_fields == {}
        assert "bic_sample" not in SelectionConfig.model_fields

    def test_latent_prior_is_standard_logistic(self):
        x = np.linspace(-6.0, 6.0, 13)
        got = PriorSpec.latent_log_density(torch.as_tensor(x)).numpy()
        np.testing.assert_allclose(got, logistic.logpdf(x), atol=1e-12)


class TestElbo:
    def test_independence_elbo_is_prior_plus_entropy(self):
        spec = independence_model(2)
        data = np.array([[0.2, 0.7], [0.5, 0.5], [0.9, 0.1]])
        mean = [0.3, -1.2, 2.0]
        log_sd = [-12.0] * 3
        q = VariationalPosterior(spec=spec, n_time=3, mean=mean, log_sd=log_sd)
        elbo = VBService().elbo_estimate(spec, data, q, n_samples=20, rng=np.random.default_rng(0))
        entropy = sum(log_sd) + 1.5 * (math.log(2.0 * math.pi) + 1.0)
        assert elbo == pytest.approx(logistic.logpdf(mean).sum() + entropy, abs=1e-6)

    def test_dimension_mismatch_raises(self):
        spec = independence_model(2)
        q = VariationalPosterior(spec=spec, n_time=2, mean=[0.0, 0.0], log_sd=[0.0, 0.0])
        with pytest.raises(ValueError):
            VBService().elbo_estimate(spec, np.full((3, 2), 0.5), q, 5, np.random.default_rng(0))

    def test_column_count_checked(self):
        with pytest.raises(ValueError):
            VBProblem(FactorModelSpec.skeleton(FactorKind.ONE_FACTOR, 3), np.full((4, 2), 0.5))

    def test_initial_mean_respects_sign_restrictions(self):
        spec = one_factor([gaussian(0.3), copula("cla_90", -0.3)])
        problem = VBProblem(spec, np.full((5, 2), 0.4))
        z = problem.initial_mean()
        assert z.shape == (problem.dim,)
        params = problem.thetas([z[None, 5:6].reshape(1, 1, 1), z[None, 6:7].reshape(1, 1, 1)])
        assert float(params[0]) > 0.0
        assert float(params[1]) > 0.0  # rotated Clayton theta is positive, tau negative


class TestFit:
    def test_small_fit_shapes(self, small_fit):
        skeleton, data, result = small_fit
        q = result.posterior
        assert len(q.mean) == 100 * 1 + 3
        assert math.isfinite(result.final_elbo)
        assert 1 <= result.iterations <= 200
        assert result.trace.iterations == list(range(50, result.iterations + 1, 50))

    def test_summaries(self, small_fit):
        skeleton, data, result = small_fit
        service = VBService()
        summary = service.posterior_summaries(result.posterior, n_draws=500)
        assert [link.label for link in summary.links] == ["global[0]", "global[1]", "global[2]"]
        assert summary.links[0].median_tau >= 0.0
        latent = summary.latent_array()
        assert latent.shape == (100, 1)
        assert np.all((latent > 0.0) & (latent < 1.0))
        median = service.median_spec(result.posterior, summary)
        assert [c.family for c in median.links()] == [CopulaFamily.GAUSSIAN] * 3
        report = service.fit_report(result, summary)
        assert report.startswith("model = one_factor\n")
        assert "global[2] = gau tau=" in report

    def test_same_seed_is_reproducible(self, small_fit):
        skeleton, data, result = small_fit
        cfg = VBConfig(n_samples=5, learning_rate=0.05, max_iter=200, window=20, trace_every=50, seed=1)
        again = VBService().fit(skeleton, data, cfg)
        assert again.final_elbo == result.final_elbo
        assert again.posterior.mean == result.posterior.mean

    def test_trace_csv(self, small_fit):
        _, _, result = small_fit
        lines = result.trace.to_csv().splitlines()
        assert lines[0] == "iteration,elbo,step"
        assert len(lines) == 1 + len(result.trace.iterations)

    def test_trace_csv_text(self):
        trace = ELBOTrace()
        assert trace.to_csv() == "iteration,elbo,step\n"
        trace.append(1, -1234.5, 0.01)
        trace.append(51, -1200.25, 0.0012345678912)
        assert trace.to_csv() == "iteration,elbo,step\n1,-1234.5,0.01\n51,-1200.25,0.001234567891\n"

    @pytest.mark.slow
    def test_recovers_student_t_links(self):
        truth = one_factor([copula("t", 0.5, df=5.0)] * 10)
        skeleton = FactorModelSpec.skeleton(
            FactorKind.ONE_FACTOR, 10, link=copula("t", 0.3, df=10.0)
        )
        service = VBService()
        hits = 0
        for seed in range(10):
            data = simulate_uniforms(truth, 2000, seed=100 + seed)
            result = service.fit(skeleton, data, VBConfig(seed=seed, max_iter=5000))
            summary = service.posterior_summaries(result.posterior)
            taus = [2.0 / math.pi * math.asin(link.mean_theta[0]) for link in summary.links]
            dfs = [link.mean_theta[1] for link in summary.links]
            hits += all(abs(t - 0.5) <= 0.1 for t in taus) and all(abs(nu - 5.0) <= 2.0 for nu in dfs)
        assert hits >= 8

    @pytest.mark.slow
    def test_independent_data_gives_small_taus(self):
        data = np.random.default_rng(3).uniform(size=(1000, 4))
        skeleton = FactorModelSpec.skeleton(FactorKind.ONE_FACTOR, 4)
        service = VBService()
        result = service.fit(skeleton, data, VBConfig(seed=0, max_iter=5000))
        summary = service.posterior_summaries(result.posterior)
        assert all(abs(link.median_tau) <= 0.07 for link in summary.links)
