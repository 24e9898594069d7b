"""
AR(p)-GJR-GARCH(1,1) recursions, parameter maps and forecast simulation.
"""

from typing import Tuple

import numpy as np
from scipy.signal import lfilter
from scipy.special import expit, logit

from app.models import skew_t
from app.schemas.marginal import HorizonState, MarginalFit, MarginalState

UNIT_EPS = 1e-10
NU_MIN = 2.01
NU_SPAN = 197.99


def pacf_to_ar(r: np.ndarray) -> np.ndarray:
    """Durbin-Levinson map from partial autocorrelations in (-1, 1) to AR coefficients."""
    phi = np.zeros(0)
    for rk in r:
        phi = np.concatenate([phi - rk * phi[::-1], [rk]])
    return phi


def ar_to_pacf(phi: np.ndarray) -> np.ndarray:
    phi = np.asarray(phi, dtype=np.float64).copy()
    r = np.zeros(len(phi))
    for k in range(len(phi) - 1, -1, -1):
        rk = phi[k]
        r[k] = rk
        if k:
            phi = (phi[:k] + rk * phi[:k][::-1]) / (1.0 - rk * rk)
    return r


def unpack(x: np.ndarray, p: int) -> dict:
    """Unconstrained vector to named parameters."""
    r = np.tanh(x[1 : 1 + p])
    omega = np.exp(x[1 + p])
    persistence = expit(x[2 + p])
    w = np.exp(np.array([x[3 + p], x[4 + p], 0.0]) - max(x[3 + p], x[4 + p], 0.0))
    w = w / w.sum()
    a, b = 2.0 * persistence * w[0], 2.0 * persistence * w[1]
    return {
        "mu": x[0],
        "phi": pacf_to_ar(r),
        "omega": omega,
        "alpha": a,
        "gamma": b - a,
        "beta": persistence * w[2],
        "xi": np.exp(x[5 + p]),
        "nu": NU_MIN + NU_SPAN * expit(x[6 + p]),
    }


def pack(mu, phi, omega, alpha, gamma, beta, xi, nu) -> np.ndarray:
    a, b = alpha, alpha + gamma
    persistence = 0.5 * a + 0.5 * b + beta
    w = np.array([0.5 * a, 0.5 * b, beta]) / persistence
    return np.concatenate(
        [
            [mu],
            np.arctanh(np.clip(ar_to_pacf(phi), -0.999, 0.999)),
            [
                np.log(omega),
                logit(persistence),
                np.log(w[0] / w[2]),
                np.log(w[1] / w[2]),
                np.log(xi),
                logit((nu - NU_MIN) / NU_SPAN),
            ],
        ]
    )


def conditional_means(series: np.ndarray, mu: float, phi: np.ndarray) -> np.ndarray:
    """Means for observations p..T-1 (0-based)."""
    p, n = len(phi), len(series)
    mean = np.full(n - p, mu, dtype=np.float64)
    for j in range(1, p + 1):
        mean += phi[j - 1] * series[p - j : n - j]
    return mean


def gjr_variance(residuals, omega, alpha, gamma, beta, initial_variance) -> np.ndarray:
    """sigma^2_t = omega + (alpha + gamma 1[a_{t-1} < 0]) a_{t-1}^2 + beta sigma^2_{t-1}."""
    residuals = np.asarray(residuals, dtype=np.float64)
    if residuals.size == 0:
        return residuals
    lagged = residuals[:-1]
    drive = omega + (alpha + gamma * (lagged < 0.0)) * lagged**2
    rest = lfilter([1.0], [1.0, -beta], drive, zi=[beta * initial_variance])[0]
    return np.concatenate([[initial_variance], rest])


def filter_arrays(params: dict, series: np.ndarray, initial_variance: float) -> Tuple[np.ndarray, ...]:
    mean = conditional_means(series, params["mu"], params["phi"])
    resid = series[len(params["phi"]):] - mean
    var = gjr_variance(
        resid, params["omega"], params["alpha"], params["gamma"], params["beta"], initial_variance
    )
    return mean, var, resid


def log_likelihood(params: dict, series: np.ndarray, initial_variance: float) -> float:
    _, var, resid = filter_arrays(params, series, initial_variance)
    if np.any(var <= 0.0) or not np.all(np.isfinite(var)):
        return -np.inf
    z = resid / np.sqrt(var)
    return float(np.sum(skew_t.logpdf(z, params["xi"], params["nu"]) - 0.5 * np.log(var)))


def params_of(fit: MarginalFit) -> dict:
    return {
        "mu": fit.mu,
        "phi": np.asarray(fit.phi, dtype=np.float64),
        "omega": fit.omega,
        "alpha": fit.alpha,
        "gamma": fit.gamma,
        "beta": fit.beta,
        "xi": fit.xi,
        "nu": fit.nu,
    }


def end_state(fit_params: dict, series: np.ndarray, initial_variance: float) -> MarginalState:
    p = len(fit_params["phi"])
    _, var, resid = filter_arrays(fit_params, series, initial_variance)
    return MarginalState(
        recent=[float(x) for x in series[len(series) - p:]] if p else [],
        last_residual=float(resid[-1]),
        last_variance=float(var[-1]),
    )


def next_step(fit: MarginalFit) -> HorizonState:
    """Conditional mean and variance one step past the stored state."""
    state = fit.last_state
    recent = np.asarray(state.recent, dtype=np.float64)
    mean = fit.mu + float(np.dot(fit.phi, recent[::-1])) if fit.phi else fit.mu
    shock = state.last_residual
    variance = (
        fit.omega
        + (fit.alpha + fit.gamma * (shock < 0.0)) * shock**2
        + fit.beta * state.last_variance
    )
    return HorizonState(mean=mean, variance=variance)


def simulate_paths(fit: MarginalFit, u: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Push uniforms through the recursion.

    Args:
        fit: Marginal fit carrying the starting state
        u: Uniforms of shape (h,) or (n, h)

    Returns:
        (values, variances), both shaped like u
    """
    u = np.asarray(u, dtype=np.float64)
    squeeze = u.ndim == 1
    u = np.atleast_2d(u)
    n, h = u.shape
    p = fit.ar_order
    phi = np.asarray(fit.phi, dtype=np.float64)
    recent = np.tile(np.asarray(fit.last_state.recent, dtype=np.float64), (n, 1))
    shock = np.full(n, fit.last_state.last_residual)
    var = np.full(n, fit.last_state.last_variance)
    eta = skew_t.ppf(np.clip(u, UNIT_EPS, 1.0 - UNIT_EPS), fit.xi, fit.nu)

    values = np.empty((n, h))
    variances = np.empty((n, h))
    for k in range(h):
        mean = fit.mu + (recent[:, ::-1] @ phi if p else 0.0)
        var = fit.omega + (fit.alpha + fit.gamma * (shock < 0.0)) * shock**2 + fit.beta * var
        shock = np.sqrt(var) * eta[:, k]
        values[:, k] = mean + shock
        variances[:, k] = var
        if p:
            recent = np.concatenate([recent[:, 1:], values[:, k : k + 1]], axis=1)
    if squeeze:
        return values[0], variances[0]
    return values, variances
