"""
Pydantic schemas for CDS-implied default probabilities and systemic risk measures.
"""

from datetime import date
from typing import List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.core.config import Settings, settings


class CdsTermSpec(BaseModel):
    rate: float = Field(0.0, gt=-1.0)  # risk-free rate per period
    lgd: float = Field(0.75, gt=0.0, le=1.0)
    periods: int = Field(5, ge=1)

    @classmethod
    def from_settings(cls, s: Optional[Settings] = None, rate: Optional[float] = None) -> "CdsTermSpec":
        s = s or settings
        return cls(rate=s.DEFAULT_RATE if rate is None else rate, lgd=s.CDS_LGD, periods=s.CDS_PERIODS)


class DistressThresholds(BaseModel):
    banks: List[str]
    thresholds: List[float]
    window: int = 1000
    percentile: float = 95.0
    as_of: Optional[date] = None

    @model_validator(mode="after")
    def check_thresholds(self) -> "DistressThresholds":
        if len(self.banks) != len(self.thresholds):
            raise ValueError("one threshold per bank is required")
        if any(not c > 0 for c in self.thresholds):
            raise ValueError("thresholds must be positive")
        return self

    def as_array(self) -> np.ndarray:
        return np.asarray(self.thresholds, dtype=np.float64)


class ScenarioSet(BaseModel):
    """Simulated spreads at the end of the horizon, basis points, one row per path."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    banks: List[str]
    spreads: np.ndarray
    horizon: int = 20
    model_id: str = ""
    window_end: Optional[date] = None
    seed: Optional[int] = None

    @field_validator("spreads")
    @classmethod
    def positive_matrix(cls, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] < 1:
            raise ValueError("spreads must be an (n_paths, d) matrix")
        if not np.all(np.isfinite(v)) or np.any(v <= 0):
            raise ValueError("simulated spreads must be positive and finite")
        return v

    @model_validator(mode="after")
    def matching_banks(self) -> "ScenarioSet":
        if self.spreads.shape[1] != len(self.banks):
            raise ValueError("spread columns do not match bank list")
        return self

    @property
    def n_paths(self) -> int:
        return self.spreads.shape[0]


class RiskReport(BaseModel):
    """
    Systemic risk measures for one forecast date.

    ``jpd[k-1]`` is the probability that at least k banks are in distress.
    EPD and ES entries are None when their conditioning event is too rare.
    """

    banks: List[str]
    report_date: Optional[date] = None
    pd: List[float]
    jpd: List[float]
    epd: List[Optional[float]]
    es: List[Optional[float]]
    n_paths: int

    @model_validator(mode="after")
    def check_measures(self) -> "RiskReport":
        d = len(self.banks)
        if not (len(self.pd) == len(self.jpd) == len(self.epd) == len(self.es) == d):
            raise ValueError("risk measures must have one entry per bank")
        probs = self.pd + self.jpd + [e for e in self.epd if e is not None]
        if any(p < 0.0 or p > 1.0 for p in probs):
            raise ValueError("probabilities must lie in [0, 1]")
        if any(b > a for a, b in zip(self.jpd, self.jpd[1:])):
            raise ValueError("joint distress probabilities must be nonincreasing in k")
        return self
