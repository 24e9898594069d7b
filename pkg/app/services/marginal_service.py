"""
Marginal service for per-bank AR-GJR-GARCH skew-t models.
Handles fitting, probability integral transforms and forecast simulation.
"""

import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.optimize import minimize

from app.core.config import settings
from app.core.errors import InsufficientHistoryError, MarginalFitError
from app.models import marginal as rec
from app.models import skew_t
from app.schemas.marginal import HorizonState, MarginalFit, MarginalSpec, PITPanel

logger = logging.getLogger(__name__)

# (alpha, gamma, beta, xi, nu); the first start is the near-Gaussian one
_START_GRID = [
    (0.05, 0.01, 0.85, 1.0, 150.0),
    (0.05, 0.02, 0.90, 1.1, 8.0),
    (0.10, 0.05, 0.80, 0.9, 5.0),
    (0.03, 0.01, 0.95, 1.0, 20.0),
    (0.08, -0.02, 0.85, 1.2, 6.0),
]


class MarginalService:
    """Service for fitting and applying the per-bank marginal models."""

    def __init__(self, n_starts: Optional[int] = None, min_length: Optional[int] = None):
        self._n_starts = n_starts
        self._min_length = min_length

    @property
    def n_starts(self) -> int:
        return self._n_starts or settings.MARGINAL_STARTS

    @property
    def min_length(self) -> int:
        return self._min_length or settings.MIN_SERIES_LENGTH

    def fit_marginal(self, spec: MarginalSpec, series: Sequence[float]) -> MarginalFit:
        """
        Fit an AR(p)-GJR-GARCH(1,1)-skew-t model by multi-start quasi-Newton.

        Args:
            spec: Marginal specification (AR order)
            series: Log-differences, oldest first

        Returns:
            Fitted marginal with its end-of-sample forecast state
        """
        s = np.asarray(series, dtype=np.float64)
        p = spec.ar_order
        if len(s) < self.min_length:
            raise InsufficientHistoryError(
                f"series has {len(s)} observations, need at least {self.min_length}"
            )
        if not np.all(np.isfinite(s)):
            raise MarginalFitError("series contains non-finite values")
        sample_var = float(np.var(s))
        if sample_var <= 1e-12:
            raise MarginalFitError("series has zero variance; model is not identified")

        mu0, phi0 = self._ols_ar(s, p)
        best_x, best_ll = None, -np.inf
        for k, (alpha, gamma, beta, xi, nu) in enumerate(_START_GRID[: self.n_starts]):
            persistence = alpha + beta + 0.5 * gamma
            x0 = rec.pack(mu0, phi0, sample_var * (1.0 - persistence), alpha, gamma, beta, xi, nu)
            try:
                result = minimize(
                    self._objective,
                    x0,
                    args=(s, p, sample_var),
                    method="BFGS",
                    options={"gtol": 1e-6, "maxiter": 2000},
                )
            except (FloatingPointError, ValueError) as e:
                logger.warning(f"Marginal start {k} raised {e}")
                continue
            ll = -result.fun * len(s)
            if not result.success:
                logger.debug(f"Marginal start {k} stopped early: {result.message}")
            if np.isfinite(ll) and ll > best_ll:
                best_x, best_ll = result.x, ll

        if best_x is None:
            raise MarginalFitError(f"all {self.n_starts} marginal optimizations failed")

        params = rec.unpack(best_x, p)
        fit = MarginalFit(
            mu=float(params["mu"]),
            phi=[float(x) for x in params["phi"]],
            omega=float(params["omega"]),
            alpha=float(params["alpha"]),
            beta=float(params["beta"]),
            gamma=float(params["gamma"]),
            xi=float(params["xi"]),
            nu=float(params["nu"]),
            initial_variance=sample_var,
            log_likelihood=float(best_ll),
            n_obs=len(s) - p,
            last_state=rec.end_state(params, s, sample_var),
        )
        logger.info(
            f"Marginal fit: loglik={best_ll:.3f} persistence={fit.persistence:.4f} "
            f"xi={fit.xi:.3f} nu={fit.nu:.2f}"
        )
        benchmark = self.gaussian_ar_loglik(s, p)
        if best_ll < benchmark:
            logger.warning(
                f"Marginal fit loglik {best_ll:.3f} is below the Gaussian AR({p}) benchmark {benchmark:.3f}"
            )
        return fit

    @staticmethod
    def _objective(x: np.ndarray, s: np.ndarray, p: int, init_var: float) -> float:
        with np.errstate(all="ignore"):
            ll = rec.log_likelihood(rec.unpack(x, p), s, init_var)
        if not np.isfinite(ll):
            return 1e10
        return -ll / len(s)

    @staticmethod
    def _ols_ar(s: np.ndarray, p: int) -> Tuple[float, np.ndarray]:
        if p == 0:
            return float(np.mean(s)), np.zeros(0)
        lags = np.column_stack([s[p - j : len(s) - j] for j in range(1, p + 1)])
        design = np.column_stack([np.ones(len(s) - p), lags])
        coef, *_ = np.linalg.lstsq(design, s[p:], rcond=None)
        phi = rec.pacf_to_ar(np.clip(rec.ar_to_pacf(coef[1:]), -0.9, 0.9))
        return float(coef[0]), phi

    def gaussian_ar_loglik(self, series: Sequence[float], p: int) -> float:
        """Log-likelihood of a constant-variance Gaussian AR(p) fitted by least squares."""
        s = np.asarray(series, dtype=np.float64)
        mu, phi = self._ols_ar(s, p)
        resid = s[p:] - rec.conditional_means(s, mu, phi)
        var = float(np.mean(resid**2))
        return float(-0.5 * len(resid) * (np.log(2.0 * np.pi * var) + 1.0))

    def filter_states(self, fit: MarginalFit, series: Sequence[float]):
        """Conditional means, variances and residuals for observations p..T-1."""
        s = np.asarray(series, dtype=np.float64)
        return rec.filter_arrays(rec.params_of(fit), s, fit.initial_variance)

    def pit_transform(self, fit: MarginalFit, series: Sequence[float]) -> np.ndarray:
        """
        Probability integral transform of a series under a fit.

        The first p observations only seed the AR mean and are dropped.
        """
        _, var, resid = self.filter_states(fit, series)
        u = skew_t.cdf(resid / np.sqrt(var), fit.xi, fit.nu)
        return np.clip(u, rec.UNIT_EPS, 1.0 - rec.UNIT_EPS)

    def quantile_transform(self, fit: MarginalFit, u, state: HorizonState) -> np.ndarray:
        """Inverse PIT at a given conditional mean and variance."""
        u = np.clip(np.asarray(u, dtype=np.float64), rec.UNIT_EPS, 1.0 - rec.UNIT_EPS)
        return state.mean + np.sqrt(state.variance) * skew_t.ppf(u, fit.xi, fit.nu)

    def cdf_at_state(self, fit: MarginalFit, x, state: HorizonState) -> np.ndarray:
        z = (np.asarray(x, dtype=np.float64) - state.mean) / np.sqrt(state.variance)
        return np.clip(skew_t.cdf(z, fit.xi, fit.nu), rec.UNIT_EPS, 1.0 - rec.UNIT_EPS)

    def log_density_at_state(self, fit: MarginalFit, x, state: HorizonState) -> np.ndarray:
        sd = np.sqrt(state.variance)
        z = (np.asarray(x, dtype=np.float64) - state.mean) / sd
        return skew_t.logpdf(z, fit.xi, fit.nu) - np.log(sd)

    def next_state(self, fit: MarginalFit) -> HorizonState:
        return rec.next_step(fit)

    def forecast_paths(self, fit: MarginalFit, u_path) -> Tuple[np.ndarray, np.ndarray]:
        """
        Simulate log-differences from the stored state.

        Args:
            fit: Marginal fit
            u_path: Uniforms of shape (h,) or (n_paths, h)

        Returns:
            Tuple of (log-differences, conditional variances), shaped like u_path
        """
        u = np.asarray(u_path, dtype=np.float64)
        if u.shape[-1] < 1:
            raise ValueError("forecast horizon must be at least 1")
        return rec.simulate_paths(fit, u)

    def advance(self, fit: MarginalFit, observations: Sequence[float]) -> MarginalFit:
        """Roll the forecast state through realized observations, parameters unchanged."""
        obs = np.asarray(observations, dtype=np.float64)
        if obs.size == 0:
            return fit
        p = fit.ar_order
        state = fit.last_state
        recent = list(state.recent)
        shock, var = state.last_residual, state.last_variance
        for x in obs:
            mean = fit.mu + (float(np.dot(fit.phi, recent[::-1])) if p else 0.0)
            var = fit.omega + (fit.alpha + fit.gamma * (shock < 0.0)) * shock**2 + fit.beta * var
            shock = float(x - mean)
            if p:
                recent = recent[1:] + [float(x)]
        new_state = state.model_copy(
            update={"recent": recent, "last_residual": shock, "last_variance": float(var)}
        )
        return fit.model_copy(update={"last_state": new_state})

    def fit_panel(self, log_diffs: pd.DataFrame, spec: MarginalSpec) -> Dict[str, MarginalFit]:
        """Fit every bank column; failures are logged and re-raised with the bank name."""
        fits = {}
        for bank in log_diffs.columns:
            try:
                fits[bank] = self.fit_marginal(spec, log_diffs[bank].to_numpy())
            except Exception as e:
                logger.error(f"Marginal fit failed for {bank}: {str(e)}")
                raise MarginalFitError(f"{bank}: {e}") from e
        return fits

    def pit_panel(self, fits: Dict[str, MarginalFit], log_diffs: pd.DataFrame) -> PITPanel:
        banks: List[str] = list(log_diffs.columns)
        p = fits[banks[0]].ar_order
        columns = [self.pit_transform(fits[b], log_diffs[b].to_numpy()) for b in banks]
        return PITPanel.from_array(
            np.column_stack(columns), [d.date() for d in log_diffs.index[p:]], banks
        )


marginal_service = MarginalService()
