import numpy as np
import pytest
import torch
from scipy.stats import kendalltau, kstest, multivariate_normal, norm

from app.core.errors import CopulaDomainError, StructureError
from app.models import bivariate as biv
from app.models import factor
from app.models.factor import FactorCopula
from app.schemas.factor import FactorKind, FactorModelSpec, GroupPartition, VineEdge
from tests.helpers import copula, gaussian, independence, independence_model, one_factor, partition


def gaussian_copula_log_density(u: np.ndarray, corr: np.ndarray) -> np.ndarray:
    z = norm.ppf(u)
    mvn = multivariate_normal(mean=np.zeros(corr.shape[0]), cov=corr)
    return mvn.logpdf(z) - norm.logpdf(z).sum(axis=-1)


def with_unit_diagonal(corr: np.ndarray) -> np.ndarray:
    np.fill_diagonal(corr, 1.0)
    return corr


class TestGaussianOracle:
    @pytest.mark.parametrize("d", [2, 5, 10])
    def test_one_factor_matches_closed_form(self, d):
        rho = np.linspace(0.3, 0.85, d)
        spec = one_factor([gaussian(r) for r in rho])
        u = np.random.default_rng(d).uniform(0.02, 0.98, size=(20, d))
        got = FactorCopula(spec).integrated_log_density(torch.as_tensor(u)).numpy()
        expected = gaussian_copula_log_density(u, with_unit_diagonal(np.outer(rho, rho)))
        np.testing.assert_allclose(got, expected, atol=1e-6)

    def test_two_factor_matches_closed_form(self):
        rho = np.array([0.7, 0.5, 0.6, 0.4])
        second = np.array([0.5, 0.3, 0.6, 0.2])
        spec = FactorModelSpec(
            kind=FactorKind.TWO_FACTOR,
            n_vars=4,
            global_links=[gaussian(r) for r in rho],
            group_links=[gaussian(r) for r in second],
        )
        resid = np.sqrt(1.0 - rho**2)
        corr = with_unit_diagonal(np.outer(rho, rho) + np.outer(resid * second, resid * second))
        u = np.random.default_rng(9).uniform(0.05, 0.95, size=(10, 4))
        got = FactorCopula(spec).integrated_log_density(torch.as_tensor(u)).numpy()
        np.testing.assert_allclose(got, gaussian_copula_log_density(u, corr), atol=1e-6)

    def test_factor_vine_matches_closed_form(self):
        rho = np.array([0.6, 0.5, 0.7, 0.4])
        path = [0.4, -0.3, 0.5]
        edges = [VineEdge(j=i, k=i + 1, copula=gaussian(r)) for i, r in enumerate(path)]
        spec = FactorModelSpec(
            kind=FactorKind.FACTOR_VINE, n_vars=4, global_links=[gaussian(r) for r in rho], edges=edges
        )
        # residual correlation along the path 0-1-2-3 is the product of edge correlations
        resid_corr = np.eye(4)
        for a in range(4):
            for b in range(a + 1, 4):
                resid_corr[a, b] = resid_corr[b, a] = np.prod(path[a:b])
        resid = np.sqrt(1.0 - rho**2)
        corr = with_unit_diagonal(np.outer(rho, rho) + np.outer(resid, resid) * resid_corr)
        u = np.random.default_rng(12).uniform(0.05, 0.95, size=(10, 4))
        got = FactorCopula(spec).integrated_log_density(torch.as_tensor(u)).numpy()
        np.testing.assert_allclose(got, gaussian_copula_log_density(u, corr), atol=1e-6)


class TestNesting:
    def test_independence_model_has_zero_log_density(self):
        u = torch.as_tensor(np.random.default_rng(1).uniform(0.01, 0.99, size=(5, 3)))
        out = FactorCopula(independence_model(3)).integrated_log_density(u)
        assert torch.equal(out, torch.zeros(5, dtype=torch.float64))

    def test_bi_factor_with_independent_groups_is_one_factor(self):
        links = [copula("gum", 0.4), copula("cla", 0.3), copula("t", 0.5), copula("fra", 0.2)]
        bi = FactorModelSpec(
            kind=FactorKind.BI_FACTOR,
            n_vars=4,
            groups=partition(2, 2),
            global_links=links,
            group_links=[independence()] * 4,
        )
        u = torch.as_tensor(np.random.default_rng(2).uniform(0.05, 0.95, size=(8, 4)))
        np.testing.assert_allclose(
            FactorCopula(bi).integrated_log_density(u).numpy(),
            FactorCopula(one_factor(links)).integrated_log_density(u).numpy(),
            atol=1e-12,
        )

    def test_bi_factor_with_one_group_is_two_factor(self):
        links = [copula("gum", 0.4), copula("cla", 0.3), copula("gau", 0.5)]
        second = [copula("fra", 0.3), copula("gau", 0.2), copula("cla", 0.4)]
        two = FactorModelSpec(kind=FactorKind.TWO_FACTOR, n_vars=3, global_links=links, group_links=second)
        bi = FactorModelSpec(
            kind=FactorKind.BI_FACTOR, n_vars=3, groups=partition(3), global_links=links, group_links=second
        )
        u = torch.as_tensor(np.random.default_rng(4).uniform(0.05, 0.95, size=(8, 3)))
        np.testing.assert_allclose(
            FactorCopula(two).integrated_log_density(u).numpy(),
            FactorCopula(bi).integrated_log_density(u).numpy(),
            atol=1e-12,
        )

    @pytest.mark.parametrize("kind", [FactorKind.TWO_FACTOR, FactorKind.FACTOR_VINE])
    def test_independent_second_level_is_one_factor(self, kind):
        links = [copula("gum", 0.4), copula("t", 0.3), copula("cla", 0.5)]
        if kind is FactorKind.TWO_FACTOR:
            spec = FactorModelSpec(kind=kind, n_vars=3, global_links=links, group_links=[independence()] * 3)
        else:
            edges = [VineEdge(j=0, k=1, copula=independence()), VineEdge(j=1, k=2, copula=independence())]
            spec = FactorModelSpec(kind=kind, n_vars=3, global_links=links, edges=edges)
        u = torch.as_tensor(np.random.default_rng(5).uniform(0.05, 0.95, size=(8, 3)))
        np.testing.assert_allclose(
            FactorCopula(spec).integrated_log_density(u).numpy(),
            FactorCopula(one_factor(links)).integrated_log_density(u).numpy(),
            atol=1e-12,
        )

    def test_nested_with_independent_roots_matches_bi_factor_without_global(self):
        groups = partition(2, 3)
        group_links = [
            copula("gum", 0.5),
            copula("gau", 0.3),
            copula("cla", 0.4),
            copula("t", 0.3),
            copula("fra", 0.5),
        ]
        nested = FactorModelSpec(
            kind=FactorKind.NESTED_FACTOR,
            n_vars=5,
            groups=groups,
            group_links=group_links,
            root_links=[independence()] * 2,
        )
        bi = FactorModelSpec(
            kind=FactorKind.BI_FACTOR,
            n_vars=5,
            groups=groups,
            global_links=[independence()] * 5,
            group_links=group_links,
        )
        u = torch.as_tensor(np.random.default_rng(3).uniform(0.05, 0.95, size=(6, 5)))
        np.testing.assert_allclose(
            FactorCopula(nested).integrated_log_density(u).numpy(),
            FactorCopula(bi).integrated_log_density(u).numpy(),
            atol=1e-12,
        )

    def test_conditional_density_is_sum_of_links(self):
        links = [copula("gum", 0.4), copula("cla_90", -0.3), copula("gau", 0.2)]
        u, v = [0.2, 0.6, 0.9], 0.35
        expected = sum(float(biv.log_density(c, x, v)) for c, x in zip(links, u))
        assert factor.conditional_log_density(one_factor(links), u, [v]) == pytest.approx(expected, abs=1e-12)


class TestSimulation:
    def test_margins_are_uniform(self):
        spec = FactorModelSpec(
            kind=FactorKind.BI_FACTOR,
            n_vars=4,
            groups=partition(2, 2),
            global_links=[copula("gum", 0.4)] * 4,
            group_links=[copula("cla", 0.3)] * 4,
        )
        u = factor.simulate(spec, 3000, np.random.default_rng(21))
        assert u.shape == (3000, 4)
        for i in range(4):
            assert kstest(u[:, i], "uniform").pvalue > 1e-3

    def test_one_factor_gaussian_dependence(self):
        spec = one_factor([gaussian(0.8), gaussian(0.7)])
        u = factor.simulate(spec, 5000, np.random.default_rng(22))
        expected = 2.0 / np.pi * np.arcsin(0.8 * 0.7)
        assert kendalltau(u[:, 0], u[:, 1])[0] == pytest.approx(expected, abs=0.03)

    def test_nested_latents_follow_root_links(self):
        spec = FactorModelSpec(
            kind=FactorKind.NESTED_FACTOR,
            n_vars=3,
            groups=partition(1, 2),
            group_links=[gaussian(0.5)] * 3,
            root_links=[copula("gum", 0.6), copula("gum", 0.6)],
        )
        _, latent = FactorCopula(spec).simulate(4000, np.random.default_rng(23), return_latent=True)
        assert kendalltau(latent[:, 0], latent[:, 1])[0] == pytest.approx(0.6, abs=0.03)

    def test_same_seed_same_draws(self):
        spec = one_factor([copula("cla", 0.4)] * 3)
        a = factor.simulate(spec, 50, np.random.default_rng(5))
        b = factor.simulate(spec, 50, np.random.default_rng(5))
        np.testing.assert_array_equal(a, b)


class TestStructure:
    def test_wrong_link_count(self):
        with pytest.raises(ValueError):
            FactorModelSpec(kind=FactorKind.ONE_FACTOR, n_vars=3, global_links=[gaussian(0.5)] * 2)

    def test_group_models_need_partition(self):
        with pytest.raises(ValueError):
            FactorModelSpec.skeleton(FactorKind.BI_FACTOR, 4)

    def test_partition_must_cover(self):
        with pytest.raises(ValueError):
            GroupPartition(groups=[[0, 1], [3]])
        with pytest.raises(ValueError):
            GroupPartition(groups=[[0, 1], [1, 2]])

    def test_vine_cycle_rejected(self):
        edges = [
            VineEdge(j=0, k=1, copula=gaussian(0.3)),
            VineEdge(j=1, k=2, copula=gaussian(0.3)),
            VineEdge(j=2, k=0, copula=gaussian(0.3)),
        ]
        with pytest.raises(ValueError):
            FactorModelSpec.skeleton(FactorKind.FACTOR_VINE, 4, edges=edges)

    def test_vine_proximity_checked(self):
        with pytest.raises(StructureError):
            factor.validate_vine_edges(
                [
                    VineEdge(j=0, k=1, copula=gaussian(0.3)),
                    VineEdge(j=1, k=2, copula=gaussian(0.3)),
                    VineEdge(j=0, k=1, conditioning=[2], copula=gaussian(0.2)),
                ],
                n_vars=3,
                truncation=2,
            )

    def test_second_level_needs_two_latents(self):
        with pytest.raises(StructureError):
            factor.pseudo_observations(one_factor([gaussian(0.5)] * 2), [0.3, 0.4], [0.5], level=2)

    def test_boundary_values_raise(self):
        with pytest.raises(CopulaDomainError):
            factor.conditional_log_density(one_factor([gaussian(0.5)] * 2), [0.0, 0.5], [0.5])

    def test_slot_order_and_sign_restriction(self):
        spec = FactorModelSpec.skeleton(FactorKind.NESTED_FACTOR, 5, groups=partition(2, 3))
        labels = [s.label for s in spec.slots()]
        assert labels == [f"group[{i}]" for i in range(5)] + ["root[0]", "root[1]"]
        assert [s.nonnegative for s in spec.slots()] == [True, False, True, False, False, True, False]

    def test_document_round_trip(self):
        spec = FactorModelSpec.skeleton(FactorKind.BI_FACTOR, 4, groups=partition(2, 2), link=copula("gum", 0.4))
        again = FactorModelSpec.from_document(spec.to_document())
        assert again == spec
        assert again.fingerprint() == spec.fingerprint()
        assert spec.n_params == 8
