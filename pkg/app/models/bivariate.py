"""
Bivariate copula families used as links in the factor models.

Every kernel works on float64 tensors and broadcasts over u, v and the
parameter tensor (trailing dimension = parameter index), so the same code
serves pointwise evaluation, quadrature grids and batched variational draws.
Internal kernels clamp their unit-interval arguments; the public functions at
the bottom validate them and raise instead.
"""

import math
from dataclasses import dataclass
from typing import Callable, Optional, Tuple, Union

import numpy as np
import torch

from app.core import special
from app.core.errors import ConvergenceError, CopulaDomainError, UnsupportedSignError
from app.schemas.copula import (
    DF_MAX,
    DF_MIN,
    TAU_LIMIT,
    BivariateCopula,
    CopulaFamily,
    UnconstrainedParam,
)

DTYPE = torch.float64
EPS = 1e-10
_CLIP = 1.0 - 1e-12
_FRANK_SMALL = 1e-6

ArrayLike = Union[float, np.ndarray, torch.Tensor]


def as_tensor(x: ArrayLike) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x if x.dtype == DTYPE else x.to(DTYPE)
    return torch.as_tensor(np.asarray(x, dtype=np.float64))


def clamp_unit(x: torch.Tensor) -> torch.Tensor:
    return x.clamp(EPS, 1.0 - EPS)


def _ndtr(x):
    return torch.special.ndtr(x)


def _ndtri(p):
    return torch.special.ndtri(p)


# Gaussian


def _gau_log_pdf(theta, u, v):
    rho = theta[..., 0]
    x, y = _ndtri(u), _ndtri(v)
    r2 = 1.0 - rho * rho
    return -0.5 * torch.log(r2) - (rho * rho * (x * x + y * y) - 2.0 * rho * x * y) / (2.0 * r2)


def _gau_h(theta, u, v):
    rho = theta[..., 0]
    return _ndtr((_ndtri(u) - rho * _ndtri(v)) / torch.sqrt(1.0 - rho * rho))


def _gau_hinv(theta, w, v):
    rho = theta[..., 0]
    return _ndtr(rho * _ndtri(v) + torch.sqrt(1.0 - rho * rho) * _ndtri(w))


# Student-t


def _t_log_pdf(theta, u, v):
    rho, nu = theta[..., 0], theta[..., 1]
    x, y = special.t_ppf(u, nu), special.t_ppf(v, nu)
    r2 = 1.0 - rho * rho
    quad = (x * x + y * y - 2.0 * rho * x * y) / (nu * r2)
    return (
        torch.lgamma((nu + 2.0) / 2.0)
        + torch.lgamma(nu / 2.0)
        - 2.0 * torch.lgamma((nu + 1.0) / 2.0)
        - 0.5 * torch.log(r2)
        - (nu + 2.0) / 2.0 * torch.log1p(quad)
        + (nu + 1.0) / 2.0 * (torch.log1p(x * x / nu) + torch.log1p(y * y / nu))
    )


def _t_scale(rho, nu, y):
    return torch.sqrt((nu + y * y) * (1.0 - rho * rho) / (nu + 1.0))


def _t_h(theta, u, v):
    rho, nu = theta[..., 0], theta[..., 1]
    x, y = special.t_ppf(u, nu), special.t_ppf(v, nu)
    return special.t_cdf((x - rho * y) / _t_scale(rho, nu, y), nu + 1.0)


def _t_hinv(theta, w, v):
    rho, nu = theta[..., 0], theta[..., 1]
    y = special.t_ppf(v, nu)
    x = rho * y + special.t_ppf(w, nu + 1.0) * _t_scale(rho, nu, y)
    return special.t_cdf(x, nu)


# Clayton


def _cla_theta(theta):
    return theta[..., 0].clamp_min(1e-10)


def _cla_log_base(th, lu, lv):
    # log(u^-th + v^-th - 1) without cancellation for small th
    return torch.log1p(torch.expm1(-th * lu) + torch.expm1(-th * lv))


def _cla_log_pdf(theta, u, v):
    th = _cla_theta(theta)
    lu, lv = torch.log(u), torch.log(v)
    return torch.log1p(th) - (1.0 + th) * (lu + lv) - (2.0 + 1.0 / th) * _cla_log_base(th, lu, lv)


def _cla_h(theta, u, v):
    th = _cla_theta(theta)
    lu, lv = torch.log(u), torch.log(v)
    return torch.exp((-th - 1.0) * lv + (-1.0 / th - 1.0) * _cla_log_base(th, lu, lv))


def _cla_hinv(theta, w, v):
    th = _cla_theta(theta)
    lv = torch.log(v)
    a = torch.expm1(-th / (1.0 + th) * (torch.log(w) + (1.0 + th) * lv))
    b = torch.expm1(-th * lv)
    return torch.exp(-torch.log1p(a - b) / th)


# Gumbel


def _gum_parts(th, u, v):
    lx = torch.log(-torch.log(u))
    ly = torch.log(-torch.log(v))
    log_a = torch.logaddexp(th * lx, th * ly)
    return lx, ly, log_a, torch.exp(log_a / th)


def _gum_log_pdf(theta, u, v):
    th = theta[..., 0]
    lx, ly, log_a, a_root = _gum_parts(th, u, v)
    return (
        -a_root
        - torch.log(u)
        - torch.log(v)
        + (th - 1.0) * (lx + ly)
        + (2.0 / th - 2.0) * log_a
        + torch.log(a_root + th - 1.0)
    )


def _gum_h_raw(th, u, v):
    _, ly, log_a, a_root = _gum_parts(th, u, v)
    return torch.exp(-a_root + (1.0 / th - 1.0) * log_a + (th - 1.0) * ly - torch.log(v))


def _gum_h(theta, u, v):
    return _gum_h_raw(theta[..., 0], u, v)


@torch.no_grad()
def _gum_hinv(theta, w, v):
    th = theta[..., 0]
    shape = torch.broadcast_shapes(th.shape, w.shape, v.shape)
    th, w, v = th.expand(shape), w.expand(shape), v.expand(shape)
    lo = torch.full(shape, EPS, dtype=DTYPE)
    hi = torch.full(shape, 1.0 - EPS, dtype=DTYPE)
    for _ in range(64):
        mid = 0.5 * (lo + hi)
        below = _gum_h_raw(th, mid, v) < w
        lo = torch.where(below, mid, lo)
        hi = torch.where(below, hi, mid)
    u = 0.5 * (lo + hi)
    resid = (_gum_h_raw(th, u, v) - w).abs()
    interior = (u > 2.0 * EPS) & (u < 1.0 - 2.0 * EPS)
    if bool(torch.any((resid > 1e-8) & interior)):
        raise ConvergenceError(
            f"Gumbel inverse h-function did not converge (max residual {resid.max().item():.2e})"
        )
    return u


# Frank


def _fra_split(theta):
    th = theta[..., 0]
    small = th.abs() < _FRANK_SMALL
    return small, torch.where(small, torch.ones_like(th), th)


def _fra_log_pdf(theta, u, v):
    small, th = _fra_split(theta)
    e = torch.expm1(-th)
    a, b = torch.expm1(-th * u), torch.expm1(-th * v)
    val = torch.log(-th * e) - th * (u + v) - 2.0 * torch.log(torch.abs(e + a * b))
    return torch.where(small, torch.zeros_like(val), val)


def _fra_h(theta, u, v):
    small, th = _fra_split(theta)
    e = torch.expm1(-th)
    a, b = torch.expm1(-th * u), torch.expm1(-th * v)
    val = torch.exp(-th * v) * a / (e + a * b)
    return torch.where(small, u + torch.zeros_like(val), val)


def _fra_hinv(theta, w, v):
    small, th = _fra_split(theta)
    e = torch.expm1(-th)
    b = torch.expm1(-th * v)
    a = w * e / (1.0 + (1.0 - w) * b)
    val = -torch.log1p(a) / th
    return torch.where(small, w + torch.zeros_like(val), val)


# Independence


def _ind_log_pdf(theta, u, v):
    return torch.zeros(torch.broadcast_shapes(u.shape, v.shape), dtype=DTYPE)


def _ind_h(theta, u, v):
    return u + torch.zeros_like(v)


@dataclass(frozen=True)
class _Kernel:
    log_pdf: Callable
    h: Callable
    hinv: Callable


_KERNELS = {
    CopulaFamily.INDEPENDENCE: _Kernel(_ind_log_pdf, _ind_h, _ind_h),
    CopulaFamily.GAUSSIAN: _Kernel(_gau_log_pdf, _gau_h, _gau_hinv),
    CopulaFamily.STUDENT_T: _Kernel(_t_log_pdf, _t_h, _t_hinv),
    CopulaFamily.CLAYTON: _Kernel(_cla_log_pdf, _cla_h, _cla_hinv),
    CopulaFamily.GUMBEL: _Kernel(_gum_log_pdf, _gum_h, _gum_hinv),
    CopulaFamily.FRANK: _Kernel(_fra_log_pdf, _fra_h, _fra_hinv),
}


# Rotation-aware vectorized kernels


def log_pdf(family: CopulaFamily, theta: torch.Tensor, u: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    """Log copula density, broadcasting theta[..., p] against u and v."""
    u, v = clamp_unit(u), clamp_unit(v)
    kernel = _KERNELS[family.base]
    rot = family.rotation
    if rot == 90:
        return kernel.log_pdf(theta, 1.0 - u, v)
    if rot == 180:
        return kernel.log_pdf(theta, 1.0 - u, 1.0 - v)
    if rot == 270:
        return kernel.log_pdf(theta, u, 1.0 - v)
    return kernel.log_pdf(theta, u, v)


def hfunc(family: CopulaFamily, theta: torch.Tensor, u: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    """Conditional distribution of the first argument given the second."""
    u, v = clamp_unit(u), clamp_unit(v)
    kernel = _KERNELS[family.base]
    rot = family.rotation
    if rot == 90:
        out = 1.0 - kernel.h(theta, 1.0 - u, v)
    elif rot == 180:
        out = 1.0 - kernel.h(theta, 1.0 - u, 1.0 - v)
    elif rot == 270:
        out = kernel.h(theta, u, 1.0 - v)
    else:
        out = kernel.h(theta, u, v)
    return clamp_unit(out)


def hinv(family: CopulaFamily, theta: torch.Tensor, w: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    """Inverse of ``hfunc`` in its first argument."""
    w, v = clamp_unit(w), clamp_unit(v)
    kernel = _KERNELS[family.base]
    rot = family.rotation
    if rot == 90:
        out = 1.0 - kernel.hinv(theta, 1.0 - w, v)
    elif rot == 180:
        out = 1.0 - kernel.hinv(theta, 1.0 - w, 1.0 - v)
    elif rot == 270:
        out = kernel.hinv(theta, w, 1.0 - v)
    else:
        out = kernel.hinv(theta, w, v)
    return clamp_unit(out)


def kendall_tau_of(family: CopulaFamily, theta: torch.Tensor) -> torch.Tensor:
    base = family.base
    th = theta[..., 0] if family.n_params else torch.zeros(theta.shape[:-1], dtype=DTYPE)
    if base is CopulaFamily.INDEPENDENCE:
        tau = th
    elif base in (CopulaFamily.GAUSSIAN, CopulaFamily.STUDENT_T):
        tau = 2.0 / math.pi * torch.asin(th)
    elif base is CopulaFamily.CLAYTON:
        tau = th / (th + 2.0)
    elif base is CopulaFamily.GUMBEL:
        tau = 1.0 - 1.0 / th
    else:
        tau = torch.as_tensor(special.frank_tau(th.detach().cpu().numpy()), dtype=DTYPE)
    return -tau if family.rotation in (90, 270) else tau


def theta_from_tau_tensor(family: CopulaFamily, tau: torch.Tensor) -> torch.Tensor:
    """First parameter (rho or theta) as a differentiable function of Kendall tau."""
    base = family.base
    t = -tau if family.rotation in (90, 270) else tau
    if base in (CopulaFamily.GAUSSIAN, CopulaFamily.STUDENT_T):
        return torch.sin(0.5 * math.pi * t)
    if base is CopulaFamily.CLAYTON:
        return 2.0 * t / (1.0 - t)
    if base is CopulaFamily.GUMBEL:
        return 1.0 / (1.0 - t)
    if base is CopulaFamily.FRANK:
        return special.frank_theta_from_tau(t)
    raise CopulaDomainError(f"family {family.value} has no tau parameterization")


def tail_dependence(cop: BivariateCopula) -> Tuple[float, float]:
    """Lower and upper tail dependence coefficients."""
    base, rot = cop.family.base, cop.family.rotation
    lower = upper = 0.0
    if base is CopulaFamily.STUDENT_T:
        rho, nu = cop.theta
        arg = -math.sqrt((nu + 1.0) * (1.0 - rho) / (1.0 + rho))
        lower = upper = 2.0 * float(special.StudentTCdf.apply(
            torch.tensor(arg, dtype=DTYPE), torch.tensor(nu + 1.0, dtype=DTYPE)
        ))
    elif base is CopulaFamily.CLAYTON:
        lower = 2.0 ** (-1.0 / cop.theta[0])
    elif base is CopulaFamily.GUMBEL:
        upper = 2.0 - 2.0 ** (1.0 / cop.theta[0])
    if rot == 180:
        return upper, lower
    if rot in (90, 270):
        return 0.0, 0.0
    return lower, upper


# Unconstrained reparameterization


def tau_bounds(family: CopulaFamily, nonnegative: bool = False) -> Tuple[float, float]:
    sign = family.tau_sign
    if sign < 0:
        if nonnegative:
            raise UnsupportedSignError(f"{family.value} cannot carry a nonnegative tau")
        return -TAU_LIMIT, 0.0
    if sign > 0 or nonnegative:
        return 0.0, TAU_LIMIT
    return -TAU_LIMIT, TAU_LIMIT


def _scaled_tanh(x: torch.Tensor, lo: float, hi: float) -> torch.Tensor:
    return lo + (hi - lo) * 0.5 * (1.0 + torch.tanh(x))


def _scaled_artanh(value: float, lo: float, hi: float) -> float:
    z = 2.0 * (value - lo) / (hi - lo) - 1.0
    return math.atanh(min(max(z, -_CLIP), _CLIP))


def unconstrained_to_theta(
    family: CopulaFamily, x: torch.Tensor, nonnegative: bool = False
) -> torch.Tensor:
    """Map real coordinates x[..., p] to family parameters theta[..., p]."""
    if family.n_params == 0:
        return x
    lo, hi = tau_bounds(family, nonnegative)
    first = theta_from_tau_tensor(family, _scaled_tanh(x[..., 0], lo, hi))
    if family.base is CopulaFamily.STUDENT_T:
        nu = _scaled_tanh(x[..., 1], DF_MIN, DF_MAX)
        return torch.stack([first, nu], dim=-1)
    return first.unsqueeze(-1)


def unconstrained_to_tau(
    family: CopulaFamily, x: torch.Tensor, nonnegative: bool = False
) -> torch.Tensor:
    if family.n_params == 0:
        return torch.zeros(x.shape[:-1], dtype=DTYPE)
    lo, hi = tau_bounds(family, nonnegative)
    return _scaled_tanh(x[..., 0], lo, hi)


def tau_to_unconstrained(
    family: CopulaFamily, tau: float, df: Optional[float] = None, nonnegative: bool = False
) -> np.ndarray:
    if family.n_params == 0:
        return np.zeros(0)
    lo, hi = tau_bounds(family, nonnegative)
    coords = [_scaled_artanh(tau, lo, hi)]
    if family.base is CopulaFamily.STUDENT_T:
        coords.append(_scaled_artanh(10.0 if df is None else df, DF_MIN, DF_MAX))
    return np.asarray(coords, dtype=np.float64)


# Public operations


def _check_unit(*values: ArrayLike) -> None:
    for value in values:
        t = as_tensor(value)
        if not bool(torch.all((t > 0.0) & (t < 1.0))):
            raise CopulaDomainError("copula arguments must lie strictly inside (0, 1)")


def theta_tensor(cop: BivariateCopula) -> torch.Tensor:
    return torch.tensor(cop.theta, dtype=DTYPE)


def log_density(cop: BivariateCopula, u: ArrayLike, v: ArrayLike) -> torch.Tensor:
    """
    Log copula density at (u, v).

    Args:
        cop: Validated copula
        u: First argument, strictly inside (0, 1)
        v: Second argument, strictly inside (0, 1)

    Returns:
        Tensor of log-densities broadcast over u and v
    """
    _check_unit(u, v)
    return log_pdf(cop.family, theta_tensor(cop), as_tensor(u), as_tensor(v))


def h_function(cop: BivariateCopula, u: ArrayLike, given_v: ArrayLike) -> torch.Tensor:
    """Conditional distribution function of U given V = given_v."""
    _check_unit(u, given_v)
    return hfunc(cop.family, theta_tensor(cop), as_tensor(u), as_tensor(given_v))


def inverse_h(cop: BivariateCopula, w: ArrayLike, given_v: ArrayLike) -> torch.Tensor:
    """Value u with h_function(cop, u, given_v) = w."""
    _check_unit(w, given_v)
    return hinv(cop.family, theta_tensor(cop), as_tensor(w), as_tensor(given_v))


def kendall_tau(cop: BivariateCopula) -> float:
    if cop.family is CopulaFamily.INDEPENDENCE:
        return 0.0
    return float(kendall_tau_of(cop.family, theta_tensor(cop)))


def tau_to_theta(family: CopulaFamily, tau: float, df: float = 10.0) -> Tuple[float, ...]:
    """
    Parameter vector reproducing a Kendall tau.

    Args:
        family: Target family (rotations carry negative dependence)
        tau: Kendall tau in [-0.9, 0.9]
        df: Degrees of freedom attached for Student-t

    Returns:
        Parameter tuple accepted by BivariateCopula
    """
    if family is CopulaFamily.INDEPENDENCE:
        return ()
    if abs(tau) > TAU_LIMIT + 1e-12:
        raise CopulaDomainError(f"tau {tau} outside [-0.9, 0.9]")
    sign = family.tau_sign
    if sign != 0 and sign * tau <= 0.0:
        raise UnsupportedSignError(
            f"{family.value} cannot represent tau {tau}; use a rotated family"
        )
    if family.base is CopulaFamily.FRANK and tau == 0.0:
        raise CopulaDomainError("Frank requires a nonzero tau")
    first = float(theta_from_tau_tensor(family, torch.tensor(tau, dtype=DTYPE)))
    if family.base is CopulaFamily.STUDENT_T:
        return first, float(df)
    return (first,)


def sample_pair(
    cop: BivariateCopula, rng: np.random.Generator, n: Optional[int] = None
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Draw (u, v) pairs by inverting the h-function at uniform w given uniform v.

    Args:
        cop: Copula to sample
        rng: Caller-owned random stream
        n: Number of pairs; None draws a single pair of floats

    Returns:
        Tuple of arrays (or floats when n is None)
    """
    size = 1 if n is None else n
    v = rng.random(size)
    w = rng.random(size)
    with torch.no_grad():
        u = hinv(cop.family, theta_tensor(cop), as_tensor(w), as_tensor(v)).numpy()
    v = np.clip(v, EPS, 1.0 - EPS)
    if n is None:
        return float(u[0]), float(v[0])
    return u, v


def to_unconstrained(cop: BivariateCopula, nonnegative: bool = False) -> UnconstrainedParam:
    df = cop.theta[1] if cop.family.base is CopulaFamily.STUDENT_T else None
    coords = tau_to_unconstrained(cop.family, kendall_tau(cop), df=df, nonnegative=nonnegative)
    return UnconstrainedParam(value=coords.tolist())


def from_unconstrained(
    family: CopulaFamily, param: UnconstrainedParam, nonnegative: bool = False
) -> BivariateCopula:
    x = torch.tensor(param.value, dtype=DTYPE)
    with torch.no_grad():
        theta = unconstrained_to_theta(family, x, nonnegative)
    return BivariateCopula(family=family, theta=tuple(theta.tolist()))


def transpose(cop: BivariateCopula) -> BivariateCopula:
    """Copula of (V, U); only the 90/270 rotations are not exchangeable."""
    rot = cop.family.rotation
    if rot in (90, 270):
        return BivariateCopula(family=cop.family.rotated(360 - rot), theta=cop.theta)
    return cop
