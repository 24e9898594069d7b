import math

import numpy as np
import pytest
from scipy.stats import multivariate_normal, norm

from app.models import bivariate as biv
from app.models.factor import FactorCopula
from app.schemas.copula import CopulaFamily
from app.schemas.factor import FactorKind, FactorModelSpec, VineEdge
from app.schemas.selection import ModelScore, SelectionConfig
from app.schemas.vb import VBConfig
from app.services.selection_service import SelectionService
from tests.helpers import copula, gaussian, independence_model, one_factor, partition, simulate_uniforms

ALL_FAMILIES = [CopulaFamily(c) for c in (
    "ind", "gau", "t", "cla", "gum", "fra", "cla_90", "cla_180", "cla_270", "gum_90", "gum_180", "gum_270",
)]


@pytest.fixture
def service():
    return SelectionService()


class TestPairSelection:
    def test_fit_pair_recovers_tau(self, service):
        u, v = biv.sample_pair(copula("cla", 0.5), np.random.default_rng(1), n=2000)
        fit = service.fit_pair(CopulaFamily.CLAYTON, u, v)
        assert biv.kendall_tau(fit.copula) == pytest.approx(0.5, abs=0.04)
        assert fit.bic == pytest.approx(-2.0 * fit.log_likelihood + math.log(2000))

    def test_clayton_data_selects_clayton(self, service):
        u, v = biv.sample_pair(copula("cla", 0.5), np.random.default_rng(2), n=2000)
        best, fits = service.select_pair_family(u, v, ALL_FAMILIES)
        assert best.family is CopulaFamily.CLAYTON
        assert len(fits) == len(ALL_FAMILIES)

    def test_rotated_data_selects_rotation(self, service):
        u, v = biv.sample_pair(copula("gum_90", -0.5), np.random.default_rng(3), n=2000)
        best, _ = service.select_pair_family(u, v, ALL_FAMILIES)
        assert best.family is CopulaFamily.GUMBEL_90

    def test_independent_data_selects_independence(self, service):
        rng = np.random.default_rng(4)
        best, _ = service.select_pair_family(rng.random(2000), rng.random(2000), ALL_FAMILIES)
        assert best.family is CopulaFamily.INDEPENDENCE

    def test_tie_goes_to_fewer_parameters(self, service):
        u, v = biv.sample_pair(gaussian(0.5), np.random.default_rng(5), n=1500)
        best, fits = service.select_pair_family(u, v, [CopulaFamily.GAUSSIAN, CopulaFamily.STUDENT_T])
        assert {f.family for f in fits} == {CopulaFamily.GAUSSIAN, CopulaFamily.STUDENT_T}
        assert best.family is CopulaFamily.GAUSSIAN

    def test_nonnegative_slot_skips_negative_families(self, service):
        u, v = biv.sample_pair(copula("cla_90", -0.4), np.random.default_rng(6), n=500)
        best, fits = service.select_pair_family(u, v, ALL_FAMILIES, nonnegative=True)
        assert all(f.family.tau_sign >= 0 for f in fits)
        assert biv.kendall_tau(best.copula) >= 0.0

    def test_candidates_must_include_gaussian(self):
        with pytest.raises(ValueError):
            SelectionConfig(candidates=[CopulaFamily.CLAYTON, CopulaFamily.GUMBEL])


class TestReselection:
    def test_known_latents_recover_families(self, service):
        truth = one_factor([copula("cla", 0.5), copula("gum", 0.5), copula("fra", 0.5)])
        u, latent = FactorCopula(truth).simulate(1500, np.random.default_rng(7), return_latent=True)
        skeleton = FactorModelSpec.skeleton(FactorKind.ONE_FACTOR, 3)
        cfg = SelectionConfig(candidates=ALL_FAMILIES)
        chosen, audit = service.reselect_links(skeleton, u, latent, cfg)
        assert [c.family for c in chosen] == [CopulaFamily.CLAYTON, CopulaFamily.GUMBEL, CopulaFamily.FRANK]
        assert sum(row.selected for row in audit) == 3
        assert {row.link for row in audit} == {"global[0]", "global[1]", "global[2]"}

    def test_small_selection_loop(self, service):
        data = simulate_uniforms(one_factor([copula("gum", 0.5)] * 3), 150, seed=8)
        cfg = SelectionConfig(
            candidates=[CopulaFamily.GAUSSIAN, CopulaFamily.GUMBEL, CopulaFamily.CLAYTON],
            max_iterations=2,
            vb=VBConfig(n_samples=3, learning_rate=0.05, max_iter=100, window=20, seed=0),
        )
        result = service.select_link_families(data, FactorModelSpec.skeleton(FactorKind.ONE_FACTOR, 3), cfg)
        assert 1 <= result.iterations <= 2
        assert result.spec.kind is FactorKind.ONE_FACTOR
        assert len(result.audit) >= 3
        assert result.audit[0].iteration == 1
        assert 1 <= len(result.bic_path) <= result.iterations + 1
        assert all(later <= earlier for earlier, later in zip(result.bic_path, result.bic_path[1:]))
        assert result.bic_path[-1] == pytest.approx(service.compute_bic(result.spec, data).bic, rel=1e-9)
        for it in {row.iteration for row in result.audit}:
            for link in {row.link for row in result.audit}:
                rows = [r for r in result.audit if r.iteration == it and r.link == link]
                (picked,) = [r for r in rows if r.selected]
                assert picked.bic <= min(r.bic for r in rows) + cfg.tie_margin

    def test_loop_stops_when_refit_raises_bic(self, service, monkeypatch):
        data = simulate_uniforms(one_factor([copula("gum", 0.5)] * 3), 150, seed=8)
        cfg = SelectionConfig(
            candidates=[CopulaFamily.GAUSSIAN, CopulaFamily.GUMBEL, CopulaFamily.CLAYTON],
            max_iterations=3,
            vb=VBConfig(n_samples=3, learning_rate=0.05, max_iter=100, window=20, seed=0),
        )
        scores = iter([100.0, 150.0])
        monkeypatch.setattr(
            service, "compute_bic", lambda spec, u: ModelScore(log_likelihood=-next(scores) / 2.0, n_params=0, n_obs=1)
        )
        result = service.select_link_families(data, FactorModelSpec.skeleton(FactorKind.ONE_FACTOR, 3), cfg)
        assert result.iterations == 1
        assert result.bic_path == [100.0]
        assert all(c.family is CopulaFamily.GAUSSIAN for c in result.spec.links())


class TestLevel2Vine:
    def test_maximum_spanning_tree(self, service):
        w = np.array(
            [
                [0.0, 0.9, 0.1, 0.2],
                [0.9, 0.0, 0.8, 0.3],
                [0.1, 0.8, 0.0, 0.7],
                [0.2, 0.3, 0.7, 0.0],
            ]
        )
        assert sorted(service.maximum_spanning_tree(w)) == [(0, 1), (1, 2), (2, 3)]

    def test_spanning_tree_ignores_column_order(self, service):
        rng = np.random.default_rng(21)
        a = rng.random((6, 6))
        w = np.triu(a, 1) + np.triu(a, 1).T
        base = {frozenset(e) for e in service.maximum_spanning_tree(w)}
        for seed in range(5):
            perm = np.random.default_rng(seed).permutation(6)
            shuffled = service.maximum_spanning_tree(w[np.ix_(perm, perm)])
            assert {frozenset((int(perm[i]), int(perm[j]))) for i, j in shuffled} == base
            assert all(i < j for i, j in shuffled)

    def test_tree_recovered_with_true_latents(self, service):
        edges = [VineEdge(j=0, k=1, copula=gaussian(0.8)), VineEdge(j=1, k=2, copula=gaussian(0.8)),
                 VineEdge(j=2, k=3, copula=gaussian(0.8))]
        truth = FactorModelSpec(
            kind=FactorKind.FACTOR_VINE, n_vars=4, global_links=[gaussian(0.5)] * 4, edges=edges
        )
        u, latent = FactorCopula(truth).simulate(1000, np.random.default_rng(9), return_latent=True)
        cfg = SelectionConfig(candidates=ALL_FAMILIES)
        found = service.build_level2_vine(u, truth, latent[:, 0], cfg)
        assert sorted(e.nodes for e in found) == [(0, 1), (1, 2), (2, 3)]
        assert all(e.level == 1 for e in found)


class TestBic:
    def test_gaussian_closed_form(self, service):
        rho = np.array([0.8, 0.6])
        spec = one_factor([gaussian(r) for r in rho])
        u = simulate_uniforms(spec, 300, seed=10)
        z = norm.ppf(u)
        corr = np.array([[1.0, rho[0] * rho[1]], [rho[0] * rho[1], 1.0]])
        loglik = float(np.sum(multivariate_normal(cov=corr).logpdf(z) - norm.logpdf(z).sum(axis=1)))
        score = service.compute_bic(spec, u)
        assert score.n_params == 2
        assert score.bic == pytest.approx(-2.0 * loglik + 2.0 * math.log(300), abs=1e-4)

    def test_model_score_rejects_inconsistent_bic(self):
        with pytest.raises(ValueError):
            ModelScore(log_likelihood=-10.0, n_params=2, n_obs=100, bic=0.0)

    def test_independence_scores_zero(self, service):
        spec = independence_model(3)
        score = service.compute_bic(spec, np.full((10, 3), 0.5))
        assert score.log_likelihood == 0.0
        assert score.bic == 0.0


def _random_one_factor(rng: np.random.Generator, d: int):
    pool = ["gau", "t", "cla", "gum", "fra", "cla_180", "gum_180"]
    return one_factor([copula(str(rng.choice(pool)), float(rng.uniform(0.4, 0.7)), df=5.0) for _ in range(d)])


@pytest.mark.slow
def test_link_selection_accuracy(service):
    correct = total = 0
    for rep in range(20):
        rng = np.random.default_rng(1000 + rep)
        truth = _random_one_factor(rng, 15)
        data = simulate_uniforms(truth, 1000, seed=2000 + rep)
        cfg = SelectionConfig.from_settings(vb=VBConfig.from_settings(seed=rep))
        result = service.fit_model(FactorKind.ONE_FACTOR, data, cfg=cfg)
        chosen = [c.family for c in result.spec.links()]
        correct += sum(a is b.family for a, b in zip(chosen, truth.links()))
        total += truth.n_vars
    assert correct / total >= 0.70


@pytest.mark.slow
def test_bi_factor_wins_bic_on_bi_factor_data(service):
    groups = partition(8, 7)
    wins = 0
    for rep in range(10):
        rng = np.random.default_rng(3000 + rep)
        truth = FactorModelSpec(
            kind=FactorKind.BI_FACTOR,
            n_vars=15,
            groups=groups,
            global_links=[copula("gum", float(t)) for t in rng.uniform(0.3, 0.5, 15)],
            group_links=[gaussian(float(r)) for r in rng.uniform(0.4, 0.6, 15)],
        )
        data = simulate_uniforms(truth, 1000, seed=4000 + rep)
        cfg = SelectionConfig.from_settings(vb=VBConfig.from_settings(seed=rep))
        scores = {}
        for kind in (FactorKind.ONE_FACTOR, FactorKind.TWO_FACTOR, FactorKind.BI_FACTOR, FactorKind.NESTED_FACTOR):
            spec = service.fit_model(kind, data, groups, cfg).spec
            scores[kind] = service.compute_bic(spec, data).bic
        wins += min(scores, key=scores.get) is FactorKind.BI_FACTOR
    assert wins >= 8

