"""
Scoring service.
Negative log predictive score, upper-region conditional likelihood score and
the variogram score for one-step-ahead multivariate forecasts.
"""

import logging
import math
from typing import Optional, Sequence, Tuple

import numpy as np
import torch

from app.core.config import settings
from app.core.errors import DensityUnderflowError
from app.models.factor import FactorCopula
from app.schemas.factor import FactorModelSpec
from app.schemas.scoring import CdlResult, PredictiveEnsemble, PredictiveModel
from app.services.marginal_service import marginal_service

logger = logging.getLogger(__name__)

MAX_RELATIVE_ERROR = 0.10


class ScoringService:
    """Service for proper scoring rules."""

    def marginal_terms(self, model: PredictiveModel, realized: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
        """PIT values and marginal log densities of a realized row."""
        y = np.asarray(realized, dtype=np.float64)
        if y.shape != (len(model.banks),) or not np.all(np.isfinite(y)):
            raise ValueError("realized row must be finite with one value per bank")
        u = np.empty_like(y)
        logf = np.empty_like(y)
        for i, bank in enumerate(model.banks):
            fit = model.marginals[bank]
            state = marginal_service.next_state(fit)
            u[i] = marginal_service.cdf_at_state(fit, y[i], state)
            logf[i] = marginal_service.log_density_at_state(fit, y[i], state)
        return u, logf

    def log_predictive_score(self, model: PredictiveModel, realized: Sequence[float]) -> float:
        """
        Negative log predictive density of a realized row.

        Raises:
            DensityUnderflowError: if the joint density is zero or not finite
        """
        u, logf = self.marginal_terms(model, realized)
        with torch.no_grad():
            copula = float(FactorCopula(model.copula).integrated_log_density(torch.as_tensor(u[None, :]))[0])
        total = copula + float(logf.sum())
        if not math.isfinite(total):
            raise DensityUnderflowError(f"predictive log density is {total}")
        return -total

    def region_draws(
        self, spec: FactorModelSpec, rng: np.random.Generator, n_draws: Optional[int] = None
    ) -> np.ndarray:
        """Copula draws under one fitted spec, shared by every region-mass estimate in a window."""
        return FactorCopula(spec).simulate(n_draws or settings.REGION_DRAWS, rng)

    def region_mass(
        self,
        spec: FactorModelSpec,
        u_star: Sequence[float],
        rng: Optional[np.random.Generator] = None,
        n_draws: Optional[int] = None,
        draws: Optional[np.ndarray] = None,
    ) -> Tuple[float, float]:
        """
        Monte Carlo probability that every coordinate exceeds its threshold.

        Args:
            spec: Copula the draws come from
            u_star: Per-coordinate thresholds on the uniform scale
            rng: Generator for fresh draws when ``draws`` is not given
            n_draws: Number of fresh draws
            draws: Precomputed draws from ``region_draws``

        Returns:
            Tuple of (mass, standard error)
        """
        if draws is None:
            if rng is None:
                raise ValueError("region mass needs either precomputed draws or a generator")
            draws = self.region_draws(spec, rng, n_draws)
        if draws.shape[1] != spec.n_vars:
            raise ValueError(f"draws have {draws.shape[1]} columns, copula has {spec.n_vars}")
        inside = np.all(draws > np.asarray(u_star)[None, :], axis=1)
        mass = float(inside.mean())
        return mass, math.sqrt(mass * (1.0 - mass) / draws.shape[0])

    def conditional_likelihood_score(
        self,
        model: PredictiveModel,
        realized: Sequence[float],
        medians: Sequence[float],
        rng: Optional[np.random.Generator] = None,
        n_draws: Optional[int] = None,
        draws: Optional[np.ndarray] = None,
    ) -> CdlResult:
        """
        Score a row against the predictive density renormalized to the region
        where every bank lies above its training median.

        Args:
            model: Predictive model at the scoring date
            realized: Realized log-differences
            medians: Per-bank training-window medians of the log-differences
            rng: Generator for fresh region-mass draws
            n_draws: Fresh copula draws for the region mass
            draws: Precomputed copula draws, reused across the days of a window

        Returns:
            CdlResult; rows outside the region carry no score and make no draws
        """
        y = np.asarray(realized, dtype=np.float64)
        med = np.asarray(medians, dtype=np.float64)
        if not np.all(y > med):
            return CdlResult(in_region=False)
        u_star = np.array(
            [
                marginal_service.cdf_at_state(
                    model.marginals[b], med[i], marginal_service.next_state(model.marginals[b])
                )
                for i, b in enumerate(model.banks)
            ]
        )
        mass, se = self.region_mass(model.copula, u_star, rng, n_draws, draws=draws)
        if mass <= 0.0:
            raise DensityUnderflowError("region mass estimate is zero")
        rel = se / mass
        flagged = rel > MAX_RELATIVE_ERROR
        if flagged:
            logger.warning(f"Region mass {mass:.4g} has relative Monte Carlo error {rel:.2%}")
        score = self.log_predictive_score(model, y) + math.log(mass)
        return CdlResult(in_region=True, score=score, region_mass=mass, relative_error=rel, flagged=flagged)

    @staticmethod
    def variogram_score(paths: np.ndarray, realized: Sequence[float], p: Optional[float] = None) -> float:
        """Unit-weight variogram score of order p over all bank pairs."""
        p = settings.VARIOGRAM_ORDER if p is None else p
        if not p > 0:
            raise ValueError("variogram order must be positive")
        x = np.asarray(paths, dtype=np.float64)
        y = np.asarray(realized, dtype=np.float64)
        i, j = np.triu_indices(y.shape[0], k=1)
        observed = np.abs(y[i] - y[j]) ** p
        expected = np.mean(np.abs(x[:, i] - x[:, j]) ** p, axis=0)
        return float(np.sum((observed - expected) ** 2))

    def score_ensemble(self, ens: PredictiveEnsemble, p: Optional[float] = None) -> float:
        return self.variogram_score(ens.paths, ens.realized, p)

    def predictive_ensemble(
        self,
        model: PredictiveModel,
        realized: Sequence[float],
        rng: np.random.Generator,
        n_paths: Optional[int] = None,
    ) -> PredictiveEnsemble:
        """One-step-ahead log-difference draws from the joint predictive."""
        n_paths = n_paths or settings.SCORE_PATHS
        u = FactorCopula(model.copula).simulate(n_paths, rng)
        paths = np.column_stack(
            [
                marginal_service.quantile_transform(
                    model.marginals[b], u[:, i], marginal_service.next_state(model.marginals[b])
                )
                for i, b in enumerate(model.banks)
            ]
        )
        return PredictiveEnsemble(paths=paths, realized=np.asarray(realized, dtype=np.float64))


scoring_service = ScoringService()
