"""
Standardized Fernandez-Steel skew-t distribution (zero mean, unit variance).

The unstandardized variable X has density 2/(xi + 1/xi) * g(x/xi) for x >= 0
and 2/(xi + 1/xi) * g(x*xi) for x < 0, with g the unit-scale Student-t
density. The standardized variable is (X - m) / s using the closed-form
first two moments of X.
"""

from typing import Tuple

import numpy as np
from scipy import special as sc

from app.core.special import t_pdf_np, t_ppf_np


def moments(xi: float, nu: float) -> Tuple[float, float]:
    """Mean and standard deviation of the unstandardized skew-t."""
    m1 = (
        2.0 * np.sqrt(nu) * np.exp(sc.gammaln((nu + 1.0) / 2.0) - sc.gammaln(nu / 2.0))
        / (np.sqrt(np.pi) * (nu - 1.0))
    )
    m2 = nu / (nu - 2.0)
    mean = m1 * (xi - 1.0 / xi)
    second = m2 * (xi**3 + xi**-3) / (xi + 1.0 / xi)
    return mean, np.sqrt(second - mean * mean)


def _raw_logpdf(x, xi, nu):
    scaled = np.where(x >= 0.0, x / xi, x * xi)
    return np.log(2.0 / (xi + 1.0 / xi)) + np.log(t_pdf_np(scaled, nu))


def _raw_cdf(x, xi, nu):
    x = np.asarray(x, dtype=np.float64)
    k = 1.0 + xi * xi
    left = 2.0 / k * sc.stdtr(nu, x * xi)
    right = 1.0 / k + 2.0 * xi * xi / k * (sc.stdtr(nu, x / xi) - 0.5)
    return np.where(x < 0.0, left, right)


def _raw_ppf(p, xi, nu):
    p = np.asarray(p, dtype=np.float64)
    k = 1.0 + xi * xi
    split = 1.0 / k
    lower_arg = np.clip(p * k / 2.0, 1e-300, 0.5)
    upper_arg = np.clip(0.5 + (p - split) * k / (2.0 * xi * xi), 0.5, 1.0 - 1e-16)
    lower = t_ppf_np(lower_arg, nu) / xi
    upper = xi * t_ppf_np(upper_arg, nu)
    return np.where(p < split, lower, upper)


def logpdf(z, xi: float, nu: float) -> np.ndarray:
    mean, sd = moments(xi, nu)
    return np.log(sd) + _raw_logpdf(mean + sd * np.asarray(z, dtype=np.float64), xi, nu)


def cdf(z, xi: float, nu: float) -> np.ndarray:
    mean, sd = moments(xi, nu)
    return _raw_cdf(mean + sd * np.asarray(z, dtype=np.float64), xi, nu)


def ppf(p, xi: float, nu: float) -> np.ndarray:
    mean, sd = moments(xi, nu)
    return (_raw_ppf(p, xi, nu) - mean) / sd


def median(xi: float, nu: float) -> float:
    return float(ppf(0.5, xi, nu))
