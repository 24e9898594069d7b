"""
Pydantic schemas for spread panels, ingestion reports and the rolling backtest.
"""

import math
from datetime import date
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.core.config import Settings, settings
from app.core.errors import InsufficientHistoryError
from app.schemas.factor import FactorKind, GroupPartition
from app.schemas.risk import RiskReport
from app.schemas.selection import SelectionAuditRow

MIN_TRAINING = 500


class SpreadPanel(BaseModel):
    """Daily CDS spreads in basis points, one column per bank."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    spreads: pd.DataFrame
    rates: Optional[pd.Series] = None  # risk-free proxy, decimal per period

    @model_validator(mode="after")
    def check_panel(self) -> "SpreadPanel":
        idx = self.spreads.index
        if not isinstance(idx, pd.DatetimeIndex):
            raise ValueError("spread panel must be indexed by date")
        if not idx.is_monotonic_increasing or idx.has_duplicates:
            raise ValueError("dates must be strictly increasing")
        values = self.spreads.to_numpy(dtype=np.float64)
        if not np.all(np.isfinite(values)) or np.any(values <= 0):
            raise ValueError("spreads must be positive after imputation")
        if self.rates is not None and not self.rates.index.equals(idx):
            raise ValueError("rate series must share the spread dates")
        return self

    @property
    def banks(self) -> List[str]:
        return [str(c) for c in self.spreads.columns]

    @property
    def n_obs(self) -> int:
        return len(self.spreads)

    def log_differences(self, scale: Optional[float] = None) -> pd.DataFrame:
        """Scaled daily log-differences, dated by the later observation."""
        scale = settings.RETURN_SCALE if scale is None else scale
        return (scale * np.log(self.spreads).diff()).iloc[1:]


class IngestReport(BaseModel):
    source: str
    rows_read: int
    rows_kept: int
    filled: List[Tuple[date, str]] = []  # forward-filled cells
    dropped_leading: List[date] = []
    dropped_gaps: List[date] = []  # rows inside gaps longer than the fill limit
    resumed_after_gap: List[Tuple[date, int]] = []  # first kept row after a dropped run, run length

    @property
    def n_flags(self) -> int:
        return (
            len(self.filled) + len(self.dropped_leading) + len(self.dropped_gaps) + len(self.resumed_after_gap)
        )

    def to_text(self) -> str:
        lines = [
            f"source = {self.source}",
            f"rows_read = {self.rows_read}",
            f"rows_kept = {self.rows_kept}",
            f"filled_cells = {len(self.filled)}",
            f"dropped_leading = {len(self.dropped_leading)}",
            f"dropped_gap_rows = {len(self.dropped_gaps)}",
            f"gap_resumptions = {len(self.resumed_after_gap)}",
        ]
        lines += [f"filled {d.isoformat()} {bank}" for d, bank in self.filled]
        lines += [f"dropped {d.isoformat()}" for d in self.dropped_leading + self.dropped_gaps]
        lines += [f"resumed {d.isoformat()} after {n} dropped rows" for d, n in self.resumed_after_gap]
        return "\n".join(lines) + "\n"


class BacktestPlan(BaseModel):
    holdout: int = Field(1000, ge=1)
    step: int = Field(20, ge=1)
    horizon: int = Field(20, ge=1)
    models: List[FactorKind]
    groups: Optional[GroupPartition] = None
    risk_model: FactorKind = FactorKind.BI_FACTOR
    freeze_families: bool = False
    training_window: Optional[int] = None
    n_paths: int = Field(10000, ge=1)
    score_paths: int = Field(1000, ge=100)
    region_draws: int = Field(100000, ge=1)
    seed: int = 0
    workers: int = Field(1, ge=1)

    @model_validator(mode="after")
    def groups_when_needed(self) -> "BacktestPlan":
        if any(m.needs_groups for m in self.models + [self.risk_model]) and self.groups is None:
            raise ValueError("group partition required for bi-factor or nested models")
        return self

    @classmethod
    def from_settings(
        cls, s: Optional[Settings] = None, groups: Optional[GroupPartition] = None, **overrides
    ) -> "BacktestPlan":
        s = s or settings
        values = dict(
            holdout=s.HOLDOUT,
            step=s.ROLL_STEP,
            horizon=s.HORIZON,
            models=[FactorKind(m) for m in s.model_kinds],
            groups=groups,
            risk_model=FactorKind(s.RISK_MODEL),
            freeze_families=s.FREEZE_FAMILIES,
            training_window=s.TRAINING_WINDOW,
            n_paths=s.N_PATHS,
            score_paths=s.SCORE_PATHS,
            region_draws=s.REGION_DRAWS,
            seed=s.SEED,
            workers=s.WORKERS,
        )
        values.update(overrides)
        return cls(**values)

    def check_length(self, n_obs: int) -> None:
        if self.holdout > n_obs - MIN_TRAINING:
            raise InsufficientHistoryError(
                f"holdout {self.holdout} leaves fewer than {MIN_TRAINING} of {n_obs} training rows"
            )

    def n_rolls(self) -> int:
        return math.ceil(self.holdout / self.step)

    def roll_bounds(self, n_obs: int) -> List[Tuple[int, int, int]]:
        """(training start, forecast start, forecast end) row ranges, end exclusive."""
        self.check_length(n_obs)
        bounds = []
        for r in range(self.n_rolls()):
            start = n_obs - self.holdout + r * self.step
            end = min(start + self.step, n_obs)
            train_start = max(0, start - self.training_window) if self.training_window else 0
            bounds.append((train_start, start, end))
        return bounds


class DailyScore(BaseModel):
    day: date
    lps: Optional[float] = None
    cdl: Optional[float] = None  # None outside the upper region
    vars: Optional[float] = None


class ModelRollResult(BaseModel):
    model: FactorKind
    status: str = "ok"
    error: Optional[str] = None
    lps: Optional[float] = None
    cdl: Optional[float] = None
    vars: Optional[float] = None
    daily: List[DailyScore] = []
    spec_document: Optional[str] = None
    fingerprint: Optional[str] = None
    audit: List[SelectionAuditRow] = []
    trace_csv: Optional[str] = None
    fit_report: Optional[str] = None
    cdl_flags: int = 0


class RollResult(BaseModel):
    roll: int
    train_start: date
    train_end: date
    window_start: date
    window_end: date
    status: str = "ok"
    error: Optional[str] = None
    models: List[ModelRollResult] = []
    risk: Optional[RiskReport] = None
    risk_error: Optional[str] = None
    implied_pd: List[float] = []  # at the last training date, per bank


class BacktestResult(BaseModel):
    banks: List[str]
    plan: BacktestPlan
    rolls: List[RollResult] = []
