"""
Special functions that need to sit inside autograd graphs.

scipy supplies the values; the derivatives are analytic where the density is
known and central differences in the degrees of freedom otherwise.
"""

from typing import Tuple

import numpy as np
import torch
from scipy import special as sc

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(64)
_FRANK_SERIES_CUTOFF = 1e-2
_FRANK_THETA_MAX = 100.0


def _sum_to_shape(grad: torch.Tensor, shape: torch.Size) -> torch.Tensor:
    """Undo broadcasting by summing over the expanded dimensions."""
    if grad.shape == shape:
        return grad
    while grad.dim() > len(shape):
        grad = grad.sum(0)
    for i, size in enumerate(shape):
        if size == 1 and grad.shape[i] != 1:
            grad = grad.sum(i, keepdim=True)
    return grad


def _to_numpy(*tensors: torch.Tensor) -> Tuple[np.ndarray, ...]:
    return tuple(t.detach().cpu().numpy() for t in torch.broadcast_tensors(*tensors))


def t_pdf_np(x: np.ndarray, nu: np.ndarray) -> np.ndarray:
    log_pdf = (
        sc.gammaln((nu + 1.0) / 2.0)
        - sc.gammaln(nu / 2.0)
        - 0.5 * np.log(nu * np.pi)
        - (nu + 1.0) / 2.0 * np.log1p(x * x / nu)
    )
    return np.exp(log_pdf)


def _dcdf_dnu(x: np.ndarray, nu: np.ndarray) -> np.ndarray:
    h = 1e-5 * np.maximum(nu, 1.0)
    return (sc.stdtr(nu + h, x) - sc.stdtr(nu - h, x)) / (2.0 * h)


def t_ppf_np(p: np.ndarray, nu: np.ndarray) -> np.ndarray:
    """Student-t quantile with one guarded Newton polish step."""
    q = sc.stdtrit(nu, p)
    resid = sc.stdtr(nu, q) - p
    dens = t_pdf_np(q, nu)
    with np.errstate(divide="ignore", invalid="ignore"):
        polished = q - np.where(dens > 1e-300, resid / dens, 0.0)
    better = np.abs(sc.stdtr(nu, polished) - p) < np.abs(resid)
    return np.where(better & np.isfinite(polished), polished, q)


class StudentTCdf(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x, nu):
        xn, nn = _to_numpy(x, nu)
        ctx.save_for_backward(x, nu)
        ctx.arrays = (xn, nn)
        return torch.as_tensor(np.asarray(sc.stdtr(nn, xn)), dtype=x.dtype)

    @staticmethod
    def backward(ctx, grad_out):
        x, nu = ctx.saved_tensors
        xn, nn = ctx.arrays
        grad_x = grad_nu = None
        if ctx.needs_input_grad[0]:
            dens = torch.as_tensor(t_pdf_np(xn, nn), dtype=grad_out.dtype)
            grad_x = _sum_to_shape(grad_out * dens, x.shape)
        if ctx.needs_input_grad[1]:
            dnu = torch.as_tensor(_dcdf_dnu(xn, nn), dtype=grad_out.dtype)
            grad_nu = _sum_to_shape(grad_out * dnu, nu.shape)
        return grad_x, grad_nu


class StudentTPpf(torch.autograd.Function):
    @staticmethod
    def forward(ctx, p, nu):
        pn, nn = _to_numpy(p, nu)
        q = t_ppf_np(pn, nn)
        ctx.save_for_backward(p, nu)
        ctx.arrays = (q, nn)
        return torch.as_tensor(np.asarray(q), dtype=p.dtype)

    @staticmethod
    def backward(ctx, grad_out):
        p, nu = ctx.saved_tensors
        q, nn = ctx.arrays
        dens = t_pdf_np(q, nn)
        grad_p = grad_nu = None
        if ctx.needs_input_grad[0]:
            grad_p = _sum_to_shape(
                grad_out * torch.as_tensor(1.0 / dens, dtype=grad_out.dtype), p.shape
            )
        if ctx.needs_input_grad[1]:
            dq = -_dcdf_dnu(q, nn) / dens
            grad_nu = _sum_to_shape(
                grad_out * torch.as_tensor(dq, dtype=grad_out.dtype), nu.shape
            )
        return grad_p, grad_nu


def t_cdf(x: torch.Tensor, nu: torch.Tensor) -> torch.Tensor:
    return StudentTCdf.apply(x, torch.as_tensor(nu, dtype=x.dtype))


def t_ppf(p: torch.Tensor, nu: torch.Tensor) -> torch.Tensor:
    return StudentTPpf.apply(p, torch.as_tensor(nu, dtype=p.dtype))


def t_log_pdf(x: torch.Tensor, nu: torch.Tensor) -> torch.Tensor:
    return (
        torch.lgamma((nu + 1.0) / 2.0)
        - torch.lgamma(nu / 2.0)
        - 0.5 * torch.log(nu * np.pi)
        - (nu + 1.0) / 2.0 * torch.log1p(x * x / nu)
    )


# Frank copula: Kendall tau through the first Debye integral


def debye_integral(a: np.ndarray) -> np.ndarray:
    """Integral of t / (e^t - 1) over [0, a] for a >= 0."""
    a = np.asarray(a, dtype=np.float64)
    t = 0.5 * a[..., None] * (_GL_NODES + 1.0)
    safe = np.where(t > 0, t, 1.0)
    integrand = np.where(t > 0, safe / np.expm1(safe), 1.0)
    return 0.5 * a * (integrand * _GL_WEIGHTS).sum(-1)


def frank_tau(theta: np.ndarray) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    a = np.abs(theta)
    small = a < _FRANK_SERIES_CUTOFF
    safe = np.where(small, 1.0, a)
    series = a / 9.0 - a**3 / 900.0 + a**5 / 52920.0
    exact = 1.0 - 4.0 / safe + 4.0 * debye_integral(safe) / safe**2
    return np.sign(theta) * np.where(small, series, exact)


def frank_tau_derivative(theta: np.ndarray) -> np.ndarray:
    a = np.abs(np.asarray(theta, dtype=np.float64))
    small = a < _FRANK_SERIES_CUTOFF
    safe = np.where(small, 1.0, a)
    series = 1.0 / 9.0 - a**2 / 300.0 + a**4 / 10584.0
    exact = (
        4.0 / safe**2
        - 8.0 * debye_integral(safe) / safe**3
        + 4.0 / (safe * np.expm1(safe))
    )
    return np.where(small, series, exact)


def frank_theta_from_tau_np(tau: np.ndarray) -> np.ndarray:
    """Invert the Frank tau map by vectorized bisection plus Newton polish."""
    tau = np.asarray(tau, dtype=np.float64)
    target = np.abs(tau)
    lo = np.zeros_like(target)
    hi = np.full_like(target, _FRANK_THETA_MAX)
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        above = frank_tau(mid) > target
        hi = np.where(above, mid, hi)
        lo = np.where(above, lo, mid)
    theta = 0.5 * (lo + hi)
    for _ in range(2):
        theta = theta - (frank_tau(theta) - target) / frank_tau_derivative(theta)
    theta = np.where(target < 1e-14, 0.0, theta)
    return np.sign(tau) * theta


class FrankThetaFromTau(torch.autograd.Function):
    @staticmethod
    def forward(ctx, tau):
        theta = frank_theta_from_tau_np(tau.detach().cpu().numpy())
        ctx.theta = theta
        return torch.as_tensor(np.asarray(theta), dtype=tau.dtype)

    @staticmethod
    def backward(ctx, grad_out):
        slope = frank_tau_derivative(ctx.theta)
        return grad_out / torch.as_tensor(slope, dtype=grad_out.dtype)


def frank_theta_from_tau(tau: torch.Tensor) -> torch.Tensor:
    return FrankThetaFromTau.apply(tau)
