"""
Pydantic schemas for multivariate predictive scoring.
"""

from typing import Dict, List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.schemas.factor import FactorModelSpec
from app.schemas.marginal import MarginalFit

MIN_ENSEMBLE = 100


class PredictiveEnsemble(BaseModel):
    """Simulated one-step-ahead forecasts and the realized row they are scored against."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    paths: np.ndarray  # n_paths x d
    realized: np.ndarray  # d

    @model_validator(mode="after")
    def check_shapes(self) -> "PredictiveEnsemble":
        self.paths = np.asarray(self.paths, dtype=np.float64)
        self.realized = np.asarray(self.realized, dtype=np.float64)
        if self.paths.ndim != 2 or self.realized.shape != (self.paths.shape[1],):
            raise ValueError("ensemble paths must be (n_paths, d) with a matching realized row")
        if self.paths.shape[0] < MIN_ENSEMBLE:
            raise ValueError(f"ensemble needs at least {MIN_ENSEMBLE} paths")
        return self


class PredictiveModel(BaseModel):
    """
    One-step-ahead predictive distribution: marginal fits with their current
    filter states plus a fitted factor copula over the same banks.
    """

    banks: List[str]
    marginals: Dict[str, MarginalFit]
    copula: FactorModelSpec

    @model_validator(mode="after")
    def consistent_banks(self) -> "PredictiveModel":
        if set(self.banks) != set(self.marginals) or len(self.banks) != self.copula.n_vars:
            raise ValueError("marginal fits and copula must cover the same banks")
        return self


class CdlResult(BaseModel):
    in_region: bool
    score: Optional[float] = None  # None for rows outside the region
    region_mass: Optional[float] = Field(None, ge=0.0, le=1.0)  # not estimated outside the region
    relative_error: Optional[float] = None
    flagged: bool = False  # Monte Carlo error of the region mass above 10%
