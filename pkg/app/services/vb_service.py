"""
Variational Bayes service for factor copulas.
Fits a mean-field Gaussian over unconstrained latents and link parameters by
stochastic reparameterized gradients of the ELBO.
"""

import logging
import math
from collections import deque
from typing import List, Optional, Tuple, Union

import numpy as np
import torch

from app.core.errors import VBDivergenceError
from app.models import bivariate as biv
from app.models.factor import FactorCopula
from app.schemas.copula import BivariateCopula, CopulaFamily
from app.schemas.factor import FactorKind, FactorModelSpec
from app.schemas.marginal import PITPanel
from app.schemas.vb import (
    ELBOTrace,
    LinkSummary,
    PosteriorSummary,
    PriorSpec,
    VariationalPosterior,
    VBConfig,
    VBFitResult,
)

logger = logging.getLogger(__name__)

DTYPE = torch.float64
_SUMMARY_CLIP = 15.0
_INIT_TAU = 0.3
_LOG_2PI_E = math.log(2.0 * math.pi) + 1.0

DataLike = Union[PITPanel, np.ndarray]


def as_matrix(data: DataLike) -> np.ndarray:
    if isinstance(data, PITPanel):
        return data.to_array()
    return np.asarray(data, dtype=np.float64)


class VBProblem:
    """Log joint density of (latents, link parameters) for one spec and data matrix."""

    def __init__(self, spec: FactorModelSpec, u: np.ndarray, prior: Optional[PriorSpec] = None):
        if u.shape[1] != spec.n_vars:
            raise ValueError(f"data has {u.shape[1]} columns, model expects {spec.n_vars}")
        self.spec = spec
        self.copula = FactorCopula(spec)
        self.u = torch.as_tensor(u, dtype=DTYPE)
        self.prior = prior or PriorSpec()
        self.n_time, self.n_latent = u.shape[0], spec.n_latent
        self.slots = spec.slots()
        self.families = [c.family for c in spec.links()]
        self.dims = [f.n_params for f in self.families]
        self.offsets = np.cumsum([self.n_time * self.n_latent] + self.dims).tolist()
        self.dim = self.offsets[-1]

    def split(self, z: torch.Tensor) -> Tuple[torch.Tensor, List[torch.Tensor]]:
        s = z.shape[0]
        latent = z[:, : self.n_time * self.n_latent].reshape(s, self.n_time, self.n_latent)
        params = [
            z[:, self.offsets[k] : self.offsets[k + 1]].reshape(s, 1, self.dims[k])
            for k in range(len(self.dims))
        ]
        return latent, params

    def thetas(self, params: List[torch.Tensor]) -> List[torch.Tensor]:
        return [
            biv.unconstrained_to_theta(fam, x, slot.nonnegative)
            for fam, x, slot in zip(self.families, params, self.slots)
        ]

    def log_joint(self, z: torch.Tensor) -> torch.Tensor:
        """Log p(U, latents, params) at each row of z (shape (S, D))."""
        latent, params = self.split(z)
        v = torch.sigmoid(latent).clamp(biv.EPS, 1.0 - biv.EPS)
        loglik = self.copula.conditional_log_density(self.u, v, self.thetas(params)).sum(-1)
        log_prior = self.prior.latent_log_density(latent).sum((1, 2))
        for x in params:
            if x.shape[-1]:
                log_prior = log_prior + self.prior.param_log_density(x).sum((1, 2))
        return loglik + log_prior

    def initial_mean(self) -> torch.Tensor:
        """Latents from standardized row means of normal scores; links at |tau| = 0.3."""
        scores = torch.special.ndtri(self.u.clamp(1e-6, 1.0 - 1e-6))
        latent = torch.zeros(self.n_time, self.n_latent, dtype=DTYPE)

        def standardized_probit(cols):
            m = scores[:, cols].mean(1)
            return torch.special.ndtr((m - m.mean()) / m.std().clamp_min(1e-8)).clamp(0.01, 0.99)

        latent[:, 0] = torch.logit(standardized_probit(list(range(self.spec.n_vars))))
        if self.spec.kind is FactorKind.NESTED_FACTOR:
            for g, members in enumerate(self.spec.member_lists()):
                latent[:, 1 + g] = torch.logit(standardized_probit(members))

        coords = [latent.reshape(-1)]
        for fam, slot in zip(self.families, self.slots):
            tau = -_INIT_TAU if fam.tau_sign < 0 else _INIT_TAU
            coords.append(
                torch.as_tensor(biv.tau_to_unconstrained(fam, tau, nonnegative=slot.nonnegative))
            )
        return torch.cat(coords)


def _entropy(log_sd: torch.Tensor) -> torch.Tensor:
    return log_sd.sum() + 0.5 * log_sd.numel() * _LOG_2PI_E


class VBService:
    """Service for variational fitting and posterior summaries."""

    def __init__(self, prior: Optional[PriorSpec] = None):
        self.prior = prior or PriorSpec()

    def _draws(self, problem: VBProblem, mean, log_sd, n_samples, rng) -> torch.Tensor:
        eps = torch.as_tensor(rng.standard_normal((n_samples, problem.dim)), dtype=DTYPE)
        z = mean + torch.exp(log_sd) * eps
        return problem.log_joint(z)

    @staticmethod
    def _clip(values: torch.Tensor) -> Tuple[torch.Tensor, int]:
        finite = torch.isfinite(values)
        n_bad = int((~finite).sum())
        if n_bad * 2 > values.numel():
            raise VBDivergenceError(f"{n_bad} of {values.numel()} ELBO draws were non-finite")
        kept = torch.where(finite, values, torch.zeros_like(values))
        return kept.sum() / finite.sum(), n_bad

    def elbo_estimate(
        self,
        spec: FactorModelSpec,
        data: DataLike,
        q: VariationalPosterior,
        n_samples: int,
        rng: np.random.Generator,
    ) -> float:
        """
        Monte Carlo ELBO: mean log joint over reparameterized draws plus the
        closed-form Gaussian entropy. Non-finite draws are dropped and counted.
        """
        problem = VBProblem(spec, as_matrix(data), self.prior)
        if q.n_time != problem.n_time or len(q.mean) != problem.dim:
            raise ValueError("posterior dimension does not match spec and data")
        log_sd = q.log_sd_tensor()
        with torch.no_grad():
            values = self._draws(problem, q.mean_tensor(), log_sd, n_samples, rng)
            mean_lj, n_bad = self._clip(values)
        if n_bad:
            logger.warning(f"ELBO estimate dropped {n_bad} non-finite draws")
        return float(mean_lj + _entropy(log_sd))

    def fit_vb(
        self, spec: FactorModelSpec, data: DataLike, config: Optional[VBConfig] = None
    ) -> Tuple[VariationalPosterior, ELBOTrace]:
        result = self.fit(spec, data, config)
        return result.posterior, result.trace

    def fit(
        self, spec: FactorModelSpec, data: DataLike, config: Optional[VBConfig] = None
    ) -> VBFitResult:
        """
        Maximize the ELBO with Adam, halving the step on plateaus of the
        window-smoothed ELBO, and return the best smoothed iterate.

        Args:
            spec: Model skeleton with the link families to fit
            data: PIT panel or (T, d) matrix
            config: Optimizer settings

        Returns:
            VBFitResult with the posterior and the ELBO trace
        """
        cfg = config or VBConfig.from_settings()
        u = as_matrix(data)
        problem = VBProblem(spec, u, self.prior)
        rng = np.random.default_rng(cfg.seed)

        mean = problem.initial_mean().clone().requires_grad_(True)
        log_sd = torch.full((problem.dim,), cfg.init_log_sd, dtype=DTYPE, requires_grad=True)
        optimizer = torch.optim.Adam([mean, log_sd], lr=cfg.learning_rate)
        scheduler = torch.optim.lr_scheduler.ReduceLROnPlateau(
            optimizer, mode="max", factor=0.5, patience=cfg.plateau_patience
        )

        trace = ELBOTrace()
        recent = deque(maxlen=cfg.window)
        best, best_state = -math.inf, None
        previous = None
        converged = False
        iteration = 0

        logger.info(
            f"VB fit: {spec.kind.value} d={spec.n_vars} T={problem.n_time} dim={problem.dim}"
        )
        for iteration in range(1, cfg.max_iter + 1):
            optimizer.zero_grad()
            values = self._draws(problem, mean, log_sd, cfg.n_samples, rng)
            mean_lj, _ = self._clip(values)
            elbo = mean_lj + _entropy(log_sd)
            (-elbo).backward()
            for param in (mean, log_sd):
                param.grad.nan_to_num_(nan=0.0, posinf=0.0, neginf=0.0)
            optimizer.step()
            with torch.no_grad():
                log_sd.clamp_(-15.0, 5.0)

            recent.append(float(elbo.detach()))
            smoothed = float(np.mean(recent))
            step = optimizer.param_groups[0]["lr"]
            if iteration % cfg.trace_every == 0:
                trace.append(iteration, smoothed, step)

            if iteration % cfg.window:
                continue
            if not math.isfinite(smoothed) or smoothed < best - cfg.divergence_drop:
                raise VBDivergenceError(
                    f"smoothed ELBO {smoothed:.3f} diverged from best {best:.3f}",
                    iteration=iteration,
                    best_elbo=best,
                )
            if smoothed > best:
                best = smoothed
                best_state = (mean.detach().clone(), log_sd.detach().clone())
            scheduler.step(smoothed)
            if previous is not None and abs(smoothed - previous) < cfg.tol * max(abs(previous), 1e-8):
                converged = True
                break
            previous = smoothed

        if best_state is None:
            best = float(np.mean(recent))
            best_state = (mean.detach().clone(), log_sd.detach().clone())
        logger.info(
            f"VB finished after {iteration} iterations: best smoothed ELBO {best:.3f} "
            f"(converged={converged})"
        )
        posterior = VariationalPosterior(
            spec=spec,
            n_time=problem.n_time,
            mean=best_state[0].tolist(),
            log_sd=best_state[1].tolist(),
        )
        return VBFitResult(
            posterior=posterior, trace=trace, final_elbo=best, iterations=iteration, converged=converged
        )

    def posterior_summaries(
        self, q: VariationalPosterior, n_draws: int = 4000, seed: int = 0
    ) -> PosteriorSummary:
        """
        Constrained-scale summaries. Medians push the Gaussian mean through the
        monotone constraining maps; means and sds come from Monte Carlo draws.
        """
        spec = q.spec
        rng = np.random.default_rng(seed)
        mean, sd = np.asarray(q.mean), np.exp(np.asarray(q.log_sd))
        offset = q.n_latent_coords
        links = []
        for slot, cop in zip(spec.slots(), spec.links()):
            fam = cop.family
            p = fam.n_params
            m, s = mean[offset : offset + p], sd[offset : offset + p]
            offset += p
            if p == 0:
                links.append(
                    LinkSummary(label=slot.label, family=fam, median_tau=0.0,
                                median_theta=[], mean_theta=[], sd_theta=[])
                )
                continue
            with torch.no_grad():
                x_med = torch.as_tensor(np.clip(m, -_SUMMARY_CLIP, _SUMMARY_CLIP))
                med = biv.unconstrained_to_theta(fam, x_med, slot.nonnegative)
                tau = biv.unconstrained_to_tau(fam, x_med, slot.nonnegative)
                draws = np.clip(m + s * rng.standard_normal((n_draws, p)), -_SUMMARY_CLIP, _SUMMARY_CLIP)
                theta_draws = biv.unconstrained_to_theta(fam, torch.as_tensor(draws), slot.nonnegative)
            links.append(
                LinkSummary(
                    label=slot.label,
                    family=fam,
                    median_tau=float(tau),
                    median_theta=med.tolist(),
                    mean_theta=theta_draws.mean(0).tolist(),
                    sd_theta=theta_draws.std(0).tolist(),
                )
            )
        latent = 1.0 / (1.0 + np.exp(-mean[: q.n_latent_coords]))
        return PosteriorSummary(
            links=links, latent_median=latent.reshape(q.n_time, spec.n_latent).tolist()
        )

    def median_spec(self, q: VariationalPosterior, summary: Optional[PosteriorSummary] = None) -> FactorModelSpec:
        """The skeleton with every link set to its posterior median."""
        summary = summary or self.posterior_summaries(q, n_draws=16)
        copulas = [
            BivariateCopula(family=link.family, theta=tuple(link.median_theta))
            for link in summary.links
        ]
        return q.spec.with_links(copulas)

    def fit_report(self, result: VBFitResult, summary: PosteriorSummary) -> str:
        """Fit-report text block."""
        spec = result.posterior.spec
        lines = [
            f"model = {spec.kind.value}",
            f"n_vars = {spec.n_vars}",
            f"n_time = {result.posterior.n_time}",
            f"final_elbo = {result.final_elbo:.6f}",
            f"iterations = {result.iterations}",
            f"converged = {str(result.converged).lower()}",
        ]
        for link in summary.links:
            if link.family is CopulaFamily.INDEPENDENCE:
                lines.append(f"{link.label} = ind")
                continue
            fmt = lambda xs: "/".join(f"{x:.6g}" for x in xs)  # noqa: E731
            lines.append(
                f"{link.label} = {link.family.value} tau={link.median_tau:.6f} "
                f"median={fmt(link.median_theta)} mean={fmt(link.mean_theta)} sd={fmt(link.sd_theta)}"
            )
        return "\n".join(lines) + "\n"


vb_service = VBService()
