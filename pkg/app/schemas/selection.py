"""
Pydantic schemas for link-family selection and model comparison.
"""

import math
from typing import List, Optional

from pydantic import BaseModel, Field, field_validator, model_validator

from app.core.config import Settings, settings
from app.schemas.copula import CopulaFamily
from app.schemas.factor import FactorModelSpec
from app.schemas.vb import PosteriorSummary, VBConfig, VBFitResult


class SelectionConfig(BaseModel):
    candidates: List[CopulaFamily]
    max_iterations: int = Field(10, ge=1)
    tie_margin: float = 2.0
    vb: VBConfig = VBConfig()

    @field_validator("candidates")
    @classmethod
    def includes_gaussian(cls, v: List[CopulaFamily]) -> List[CopulaFamily]:
        if not v:
            raise ValueError("candidate family list is empty")
        if CopulaFamily.GAUSSIAN not in v:
            raise ValueError("candidate families must include the Gaussian initializer")
        return v

    @classmethod
    def from_settings(cls, s: Optional[Settings] = None, **overrides) -> "SelectionConfig":
        s = s or settings
        values = dict(
            candidates=[CopulaFamily(c) for c in s.candidate_families],
            max_iterations=s.SELECTION_MAX_ITER,
            tie_margin=s.SELECTION_TIE_MARGIN,
            vb=VBConfig.from_settings(s),
        )
        values.update(overrides)
        return cls(**values)


class ModelScore(BaseModel):
    log_likelihood: float
    n_params: int
    n_obs: int
    bic: Optional[float] = None

    @model_validator(mode="after")
    def consistent_bic(self) -> "ModelScore":
        expected = -2.0 * self.log_likelihood + self.n_params * math.log(max(self.n_obs, 1))
        if self.bic is None:
            self.bic = expected
        elif not math.isclose(self.bic, expected, rel_tol=1e-9, abs_tol=1e-9):
            raise ValueError("BIC inconsistent with log-likelihood and parameter count")
        return self


class SelectionAuditRow(BaseModel):
    iteration: int
    link: str
    family: CopulaFamily
    log_likelihood: float
    n_params: int
    bic: float
    selected: bool


class SelectionResult(BaseModel):
    spec: FactorModelSpec  # links at posterior medians
    audit: List[SelectionAuditRow]
    iterations: int
    fit: VBFitResult
    summary: PosteriorSummary
    bic_path: List[float] = []  # model BIC after the start fit and each accepted iteration
