"""
Pydantic schemas for variational inference over factor copulas.
"""

import math
from typing import List, Optional

import numpy as np
import pandas as pd
import torch
import torch.nn.functional as F
from pydantic import BaseModel, Field, model_validator

from app.core.config import Settings, settings
from app.schemas.copula import CopulaFamily
from app.schemas.factor import FactorModelSpec


class VBConfig(BaseModel):
    n_samples: int = Field(10, ge=1)
    learning_rate: float = Field(0.01, gt=0.0)
    max_iter: int = Field(20000, ge=1)
    window: int = Field(500, ge=1)
    tol: float = 1e-4
    init_log_sd: float = -2.0
    divergence_drop: float = 50.0
    plateau_patience: int = 0
    trace_every: int = 50
    seed: int = 0

    @classmethod
    def from_settings(cls, s: Optional[Settings] = None, **overrides) -> "VBConfig":
        s = s or settings
        values = dict(
            n_samples=s.VB_SAMPLES,
            learning_rate=s.VB_LEARNING_RATE,
            max_iter=s.VB_MAX_ITER,
            window=s.VB_WINDOW,
            tol=s.VB_TOL,
            init_log_sd=s.VB_INIT_LOG_SD,
            divergence_drop=s.VB_DIVERGENCE_DROP,
            seed=s.SEED,
        )
        values.update(overrides)
        return cls(**values)


class PriorSpec(BaseModel):
    """
    Uniform priors pushed to the unconstrained scale.

    Every bounded coordinate (Kendall tau, Student-t degrees of freedom) is the
    image of x under a scaled tanh map, so a uniform prior on the bounded
    interval has density sech(x)^2 / 2 in x. Latents use v = sigmoid(x), whose
    uniform prior becomes the standard logistic density.
    """

    @staticmethod
    def param_log_density(x: torch.Tensor) -> torch.Tensor:
        a = x.abs()
        return math.log(2.0) - 2.0 * a - 2.0 * torch.log1p(torch.exp(-2.0 * a))

    @staticmethod
    def latent_log_density(x: torch.Tensor) -> torch.Tensor:
        return F.logsigmoid(x) + F.logsigmoid(-x)


class VariationalPosterior(BaseModel):
    """Mean-field Gaussian over latent coordinates (time-major) then link parameters."""

    spec: FactorModelSpec
    n_time: int
    mean: List[float]
    log_sd: List[float]

    @model_validator(mode="after")
    def check_dimension(self) -> "VariationalPosterior":
        expected = self.n_time * self.spec.n_latent + self.spec.n_params
        if len(self.mean) != expected or len(self.log_sd) != expected:
            raise ValueError(f"posterior needs {expected} coordinates")
        if not all(math.isfinite(x) for x in self.log_sd):
            raise ValueError("log standard deviations must be finite")
        return self

    @property
    def n_latent_coords(self) -> int:
        return self.n_time * self.spec.n_latent

    def mean_tensor(self) -> torch.Tensor:
        return torch.tensor(self.mean, dtype=torch.float64)

    def log_sd_tensor(self) -> torch.Tensor:
        return torch.tensor(self.log_sd, dtype=torch.float64)


class ELBOTrace(BaseModel):
    iterations: List[int] = []
    elbo: List[float] = []
    step: List[float] = []

    @model_validator(mode="after")
    def equal_lengths(self) -> "ELBOTrace":
        if not len(self.iterations) == len(self.elbo) == len(self.step):
            raise ValueError("trace columns must have equal length")
        return self

    def append(self, iteration: int, elbo: float, step: float) -> None:
        self.iterations.append(iteration)
        self.elbo.append(elbo)
        self.step.append(step)

    def to_csv(self) -> str:
        frame = pd.DataFrame(
            {
                "iteration": pd.Series(self.iterations, dtype="int64"),
                "elbo": pd.Series(self.elbo, dtype="float64"),
                "step": pd.Series(self.step, dtype="float64"),
            }
        )
        return frame.to_csv(index=False, float_format="%.10g", lineterminator="\n")


class LinkSummary(BaseModel):
    label: str
    family: CopulaFamily
    median_tau: float
    median_theta: List[float]
    mean_theta: List[float]
    sd_theta: List[float]


class PosteriorSummary(BaseModel):
    links: List[LinkSummary]
    latent_median: List[List[float]]  # T x n_latent

    def latent_array(self) -> np.ndarray:
        return np.asarray(self.latent_median, dtype=np.float64)


class VBFitResult(BaseModel):
    posterior: VariationalPosterior
    trace: ELBOTrace
    final_elbo: float
    iterations: int
    converged: bool
