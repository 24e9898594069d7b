"""
One-dimensional quadrature over a uniform latent factor, in log space.

``adaptive_hermite`` maps the latent to the probit scale, locates the mode of
the integrand per batch element on a coarse grid, refines it with a three-point
parabola and integrates with Gauss-Hermite nodes centred and scaled there. A
log-integrand that is quadratic on the probit scale (Gaussian links) is
integrated exactly. ``legendre`` is the fixed Gauss-Legendre rule on (0, 1).
"""

import math
from typing import Callable, Tuple

import numpy as np
import torch

from app.core.config import settings

DTYPE = torch.float64
_EPS = 1e-10
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)

LogIntegrand = Callable[[torch.Tensor], torch.Tensor]


def _log_phi(z: torch.Tensor) -> torch.Tensor:
    return -0.5 * z * z - _HALF_LOG_2PI


class LatentQuadrature:
    """Log of the integral of exp(f(v)) over v in (0, 1), batched."""

    RULES = ("adaptive_hermite", "legendre")

    def __init__(
        self,
        n_nodes: int = 35,
        rule: str = "adaptive_hermite",
        grid_limit: float = 7.0,
        grid_step: float = 0.5,
    ):
        if rule not in self.RULES:
            raise ValueError(f"unknown quadrature rule {rule!r}")
        self.rule = rule
        self.n_nodes = n_nodes
        if rule == "legendre":
            x, w = np.polynomial.legendre.leggauss(n_nodes)
            self.nodes = torch.as_tensor(0.5 * (x + 1.0), dtype=DTYPE)
            self.log_weights = torch.as_tensor(np.log(0.5 * w), dtype=DTYPE)
        else:
            z, w = np.polynomial.hermite_e.hermegauss(n_nodes)
            self.nodes = torch.as_tensor(z, dtype=DTYPE)
            self.log_weights = torch.as_tensor(np.log(w / math.sqrt(2.0 * math.pi)), dtype=DTYPE)
            self.grid_step = grid_step
            self.grid = torch.arange(-grid_limit, grid_limit + 0.5 * grid_step, grid_step, dtype=DTYPE)

    @classmethod
    def from_settings(cls) -> "LatentQuadrature":
        return cls(n_nodes=settings.QUADRATURE_NODES, rule=settings.QUADRATURE_RULE)

    def log_integral(self, fn: LogIntegrand, batch_shape: Tuple[int, ...]) -> torch.Tensor:
        """
        Args:
            fn: Maps latent values of shape batch_shape + (K,) to log-integrand values
            batch_shape: Leading shape shared by every evaluation

        Returns:
            Tensor of shape batch_shape
        """
        batch_shape = tuple(batch_shape)
        if self.rule == "legendre":
            v = self.nodes.expand(batch_shape + self.nodes.shape)
            return torch.logsumexp(self.log_weights + fn(v), dim=-1)
        return self._adaptive(fn, batch_shape)

    def _log_g(self, fn: LogIntegrand, z: torch.Tensor) -> torch.Tensor:
        v = torch.special.ndtr(z).clamp(_EPS, 1.0 - _EPS)
        out = fn(v) + _log_phi(z)
        return torch.nan_to_num(out, nan=-math.inf)

    @staticmethod
    def _parabola(fm, f0, fp, step):
        denom = fm - 2.0 * f0 + fp
        ok = (denom < 0.0) & torch.isfinite(denom)
        safe = torch.where(ok, denom, -torch.ones_like(denom))
        shift = torch.where(ok, 0.5 * step * (fm - fp) / safe, torch.zeros_like(denom))
        scale = torch.where(ok, step / torch.sqrt(-safe), torch.ones_like(denom))
        return shift, scale

    def _adaptive(self, fn: LogIntegrand, batch_shape: Tuple[int, ...]) -> torch.Tensor:
        grid = self.grid.expand(batch_shape + self.grid.shape)
        lg = self._log_g(fn, grid)
        n = self.grid.numel()
        idx = lg.argmax(dim=-1, keepdim=True).clamp(1, n - 2)
        f0 = lg.gather(-1, idx)[..., 0]
        fm = lg.gather(-1, idx - 1)[..., 0]
        fp = lg.gather(-1, idx + 1)[..., 0]
        shift, scale = self._parabola(fm, f0, fp, self.grid_step)
        mode = self.grid[idx[..., 0]] + shift.clamp(-self.grid_step, self.grid_step)
        scale = scale.clamp(1e-3, 3.0)

        # one refinement with the stencil at the estimated scale
        stencil = torch.stack([mode - scale, mode, mode + scale], dim=-1)
        lr = self._log_g(fn, stencil)
        shift2, scale2 = self._parabola(lr[..., 0], lr[..., 1], lr[..., 2], scale)
        refined = torch.isfinite(lr).all(-1) & (lr[..., 1] > -math.inf)
        mode = torch.where(refined, mode + shift2.clamp(-scale, scale), mode)
        scale = torch.where(refined, scale2, scale).clamp(1e-3, 3.0)
        mode, scale = mode.detach(), scale.detach()

        z = mode[..., None] + scale[..., None] * self.nodes
        lf = self._log_g(fn, z)
        return (
            torch.logsumexp(self.log_weights + lf - _log_phi(self.nodes), dim=-1)
            + torch.log(scale)
        )
