"""
Shared builders for tests.
"""

from typing import List, Optional

import numpy as np

from app.models import bivariate as biv
from app.schemas.copula import BivariateCopula, CopulaFamily
from app.schemas.factor import FactorKind, FactorModelSpec, GroupPartition
from app.schemas.marginal import MarginalFit, MarginalState


def copula(family: str, tau: float, df: float = 10.0) -> BivariateCopula:
    fam = CopulaFamily(family)
    return BivariateCopula(family=fam, theta=biv.tau_to_theta(fam, tau, df=df))


def independence() -> BivariateCopula:
    return BivariateCopula(family=CopulaFamily.INDEPENDENCE)


def gaussian(rho: float) -> BivariateCopula:
    return BivariateCopula(family=CopulaFamily.GAUSSIAN, theta=(rho,))


def one_factor(links: List[BivariateCopula]) -> FactorModelSpec:
    return FactorModelSpec(kind=FactorKind.ONE_FACTOR, n_vars=len(links), global_links=links)


def independence_model(d: int) -> FactorModelSpec:
    return one_factor([independence()] * d)


def partition(*sizes: int) -> GroupPartition:
    groups, start = [], 0
    for size in sizes:
        groups.append(list(range(start, start + size)))
        start += size
    return GroupPartition(groups=groups)


def white_noise_marginal(nu: float = 8.0, xi: float = 1.0, variance: float = 1.0) -> MarginalFit:
    """Zero-mean marginal with a negligible ARCH term; the one-step variance is exactly ``variance``."""
    return MarginalFit(
        mu=0.0,
        phi=[],
        omega=variance,
        alpha=1e-8,
        beta=0.0,
        gamma=0.0,
        xi=xi,
        nu=nu,
        initial_variance=variance,
        last_state=MarginalState(recent=[], last_residual=0.0, last_variance=variance),
    )


def garch_marginal(p: int = 1, xi: float = 1.1, nu: float = 6.0) -> MarginalFit:
    return MarginalFit(
        mu=0.02,
        phi=[0.1] + [0.0] * (p - 1) if p else [],
        omega=0.05,
        alpha=0.08,
        beta=0.85,
        gamma=0.05,
        xi=xi,
        nu=nu,
        initial_variance=1.0,
        last_state=MarginalState(recent=[0.0] * p, last_residual=0.0, last_variance=1.0),
    )


def simulate_uniforms(spec: FactorModelSpec, n: int, seed: Optional[int] = 0) -> np.ndarray:
    from app.models.factor import simulate

    return simulate(spec, n, np.random.default_rng(seed))
