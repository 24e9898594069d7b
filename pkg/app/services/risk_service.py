"""
Risk service.
CDS-implied default probabilities, distress thresholds, joint spread scenarios
and the PD / JPD / EPD / ES systemic risk measures.
"""

import logging
from datetime import date
from typing import Dict, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.optimize import brentq

from app.core.config import settings
from app.core.errors import InsufficientHistoryError, NoRootError
from app.models.factor import FactorCopula
from app.schemas.factor import FactorModelSpec
from app.schemas.marginal import MarginalFit
from app.schemas.risk import CdsTermSpec, DistressThresholds, RiskReport, ScenarioSet
from app.services.marginal_service import marginal_service

logger = logging.getLogger(__name__)

BPS = 1e4


class RiskService:
    """Service for default probabilities and simulation-based systemic risk."""

    def __init__(self, min_conditioning_paths: Optional[int] = None):
        self._min_conditioning_paths = min_conditioning_paths

    @property
    def min_conditioning_paths(self) -> int:
        # resolved per call so activate_settings reaches the module singleton
        if self._min_conditioning_paths is None:
            return settings.ES_MIN_PATHS
        return self._min_conditioning_paths

    @staticmethod
    def _leg_residual(p: float, spread: float, term: CdsTermSpec) -> float:
        k = np.arange(1, term.periods + 1)
        discount = (1.0 + term.rate) ** -k
        premium = spread * discount.sum()
        protection = p * term.lgd * np.sum((1.0 - p) ** (k - 1) * discount)
        return float(protection - premium)

    def implied_default_probability(self, spread: float, term: Optional[CdsTermSpec] = None) -> float:
        """
        Per-period default probability equating premium and protection legs.

        Args:
            spread: CDS spread as a decimal (100 bps = 0.01)
            term: Rate, loss given default and number of payment periods

        Returns:
            Probability in (0, 1)

        Raises:
            NoRootError: if the spread is too large for any probability below one
        """
        term = term or CdsTermSpec.from_settings()
        if not spread > 0:
            raise ValueError(f"spread must be positive, got {spread}")
        upper = self._leg_residual(1.0, spread, term)
        if upper <= 0.0:
            raise NoRootError(
                f"no default probability reproduces spread {spread:.6g} with LGD {term.lgd}"
            )
        return float(
            brentq(self._leg_residual, 0.0, 1.0, args=(spread, term), xtol=1e-15, rtol=4e-16, maxiter=200)
        )

    def implied_pd_series(
        self,
        spreads: pd.DataFrame,
        rates: Optional[pd.Series] = None,
        term: Optional[CdsTermSpec] = None,
    ) -> pd.DataFrame:
        """Implied PD for every cell of a spread panel in basis points; NaN where no root exists."""
        term = term or CdsTermSpec.from_settings()
        out = pd.DataFrame(index=spreads.index, columns=spreads.columns, dtype=float)
        for t in spreads.index:
            row_term = term if rates is None else term.model_copy(update={"rate": float(rates.loc[t])})
            for bank in spreads.columns:
                try:
                    out.loc[t, bank] = self.implied_default_probability(spreads.loc[t, bank] / BPS, row_term)
                except NoRootError:
                    out.loc[t, bank] = np.nan
        return out

    def distress_thresholds(
        self,
        history: pd.DataFrame,
        window: Optional[int] = None,
        percentile: Optional[float] = None,
    ) -> DistressThresholds:
        """Upper percentile of each bank's trailing spread window, linear interpolation."""
        window = window or settings.THRESHOLD_WINDOW
        percentile = settings.THRESHOLD_PERCENTILE if percentile is None else percentile
        if len(history) < window:
            raise InsufficientHistoryError(
                f"thresholds need {window} observations, panel has {len(history)}"
            )
        tail = history.iloc[-window:]
        values = np.percentile(tail.to_numpy(dtype=np.float64), percentile, axis=0, method="linear")
        as_of = tail.index[-1]
        return DistressThresholds(
            banks=[str(b) for b in history.columns],
            thresholds=values.tolist(),
            window=window,
            percentile=percentile,
            as_of=as_of.date() if hasattr(as_of, "date") else None,
        )

    def forecast_scenarios(
        self,
        fits: Dict[str, MarginalFit],
        spec: FactorModelSpec,
        last_spreads: Sequence[float],
        rng: np.random.Generator,
        n_paths: Optional[int] = None,
        horizon: Optional[int] = None,
        banks: Optional[Sequence[str]] = None,
        window_end: Optional[date] = None,
        seed: Optional[int] = None,
    ) -> ScenarioSet:
        """
        Simulate end-of-horizon spreads.

        Each day draws a cross-sectionally dependent uniform row from the copula,
        independently across days. Uniforms go through each bank's marginal
        recursion and the summed log-differences compound onto the last spread.
        """
        n_paths = n_paths or settings.N_PATHS
        horizon = horizon or settings.HORIZON
        banks = list(banks or fits.keys())
        if len(banks) != spec.n_vars or len(last_spreads) != spec.n_vars:
            raise ValueError("marginal fits, last spreads and copula dimension disagree")
        u = FactorCopula(spec).simulate(n_paths * horizon, rng).reshape(n_paths, horizon, spec.n_vars)
        spreads = np.empty((n_paths, spec.n_vars))
        for i, bank in enumerate(banks):
            steps, _ = marginal_service.forecast_paths(fits[bank], u[:, :, i])
            spreads[:, i] = last_spreads[i] * np.exp(steps.sum(axis=1) / settings.RETURN_SCALE)
        logger.info(f"Simulated {n_paths} paths of {horizon} days for {len(banks)} banks")
        return ScenarioSet(
            banks=banks,
            spreads=spreads,
            horizon=horizon,
            model_id=spec.fingerprint(),
            window_end=window_end,
            seed=seed,
        )

    def risk_report(
        self,
        scen: ScenarioSet,
        th: DistressThresholds,
        report_date: Optional[date] = None,
    ) -> RiskReport:
        """
        Distress probabilities from a scenario set.

        EPD for a bank is unavailable when no path puts it in distress; ES is
        unavailable when fewer than the minimum number of paths have two or
        more banks in distress.
        """
        if list(scen.banks) != list(th.banks):
            raise ValueError("scenario and threshold bank lists differ")
        distress = scen.spreads > th.as_array()[None, :]
        d = distress.shape[1]
        count = distress.sum(axis=1)
        pd_ = distress.mean(axis=0)
        jpd = [float(np.mean(count >= k)) for k in range(1, d + 1)]

        epd = []
        for i in range(d):
            hit = distress[:, i]
            epd.append(float(np.mean(count[hit] / d)) if hit.any() else None)

        systemic = count >= 2
        if systemic.sum() >= max(self.min_conditioning_paths, 1):
            es = [float(x) for x in scen.spreads[systemic].mean(axis=0)]
        else:
            es = [None] * d
        return RiskReport(
            banks=list(scen.banks),
            report_date=report_date or scen.window_end,
            pd=[float(x) for x in pd_],
            jpd=jpd,
            epd=epd,
            es=es,
            n_paths=scen.n_paths,
        )


risk_service = RiskService()
