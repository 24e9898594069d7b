"""
Pydantic schemas for per-bank marginal models and PIT panels.
"""

from datetime import date
from typing import Dict, List

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator


class MarginalSpec(BaseModel):
    ar_order: int = Field(4, ge=0, le=10)


class MarginalState(BaseModel):
    """Filter state at the end of the fitting sample."""

    recent: List[float]  # last p observations, oldest first
    last_residual: float
    last_variance: float


class HorizonState(BaseModel):
    """Conditional mean and variance for one forecast step."""

    mean: float
    variance: float = Field(..., gt=0.0)


class MarginalFit(BaseModel):
    """AR(p)-GJR-GARCH(1,1) parameters with standardized skew-t errors."""

    mu: float
    phi: List[float] = []
    omega: float = Field(..., gt=0.0)
    alpha: float = Field(..., ge=0.0)
    beta: float = Field(..., ge=0.0)
    gamma: float
    xi: float = Field(..., gt=0.0)
    nu: float = Field(..., gt=2.0)
    initial_variance: float = Field(..., gt=0.0)
    log_likelihood: float = float("nan")
    n_obs: int = 0
    last_state: MarginalState

    @field_validator("phi")
    @classmethod
    def ar_roots_outside_unit_circle(cls, v: List[float]) -> List[float]:
        if v:
            companion = np.zeros((len(v), len(v)))
            companion[0, :] = v
            companion[1:, :-1] = np.eye(len(v) - 1)
            if np.max(np.abs(np.linalg.eigvals(companion))) >= 1.0:
                raise ValueError("AR polynomial has a root on or inside the unit circle")
        return v

    @model_validator(mode="after")
    def check_variance_constraints(self) -> "MarginalFit":
        if self.alpha + self.gamma <= 0.0:
            raise ValueError("alpha + gamma must be positive")
        if self.persistence >= 1.0:
            raise ValueError(f"persistence {self.persistence:.4f} must be below 1")
        if len(self.last_state.recent) != len(self.phi):
            raise ValueError("forecast state must carry one value per AR lag")
        return self

    @property
    def ar_order(self) -> int:
        return len(self.phi)

    @property
    def persistence(self) -> float:
        return self.alpha + self.beta + 0.5 * self.gamma

    @property
    def unconditional_variance(self) -> float:
        return self.omega / (1.0 - self.persistence)

    def to_text(self) -> str:
        """Flat ``key = value`` block."""
        rows = [("ar_order", self.ar_order), ("mu", self.mu)]
        rows += [(f"phi_{j + 1}", x) for j, x in enumerate(self.phi)]
        rows += [
            ("omega", self.omega),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("xi", self.xi),
            ("nu", self.nu),
            ("initial_variance", self.initial_variance),
            ("log_likelihood", self.log_likelihood),
            ("n_obs", self.n_obs),
        ]
        rows += [(f"state_recent_{j + 1}", x) for j, x in enumerate(self.last_state.recent)]
        rows += [
            ("state_residual", self.last_state.last_residual),
            ("state_variance", self.last_state.last_variance),
        ]
        return "\n".join(
            f"{k} = {v}" if isinstance(v, int) else f"{k} = {v:.17g}" for k, v in rows
        ) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "MarginalFit":
        values: Dict[str, str] = {}
        for line in text.splitlines():
            if "=" in line and not line.lstrip().startswith("#"):
                key, _, value = line.partition("=")
                values[key.strip()] = value.strip()
        p = int(values["ar_order"])
        return cls(
            mu=float(values["mu"]),
            phi=[float(values[f"phi_{j + 1}"]) for j in range(p)],
            omega=float(values["omega"]),
            alpha=float(values["alpha"]),
            beta=float(values["beta"]),
            gamma=float(values["gamma"]),
            xi=float(values["xi"]),
            nu=float(values["nu"]),
            initial_variance=float(values["initial_variance"]),
            log_likelihood=float(values.get("log_likelihood", "nan")),
            n_obs=int(values.get("n_obs", 0)),
            last_state=MarginalState(
                recent=[float(values[f"state_recent_{j + 1}"]) for j in range(p)],
                last_residual=float(values["state_residual"]),
                last_variance=float(values["state_variance"]),
            ),
        )


class PITPanel(BaseModel):
    """T x d matrix of probability integral transforms."""

    dates: List[date]
    u: List[List[float]]
    bank_ids: List[str]

    @model_validator(mode="after")
    def check_shape(self) -> "PITPanel":
        arr = np.asarray(self.u, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != len(self.bank_ids):
            raise ValueError("PIT matrix columns must match bank labels")
        if arr.shape[0] != len(self.dates):
            raise ValueError("PIT matrix rows must match dates")
        if not np.all((arr > 0.0) & (arr < 1.0)):
            raise ValueError("PIT values must lie strictly inside (0, 1)")
        return self

    @classmethod
    def from_array(cls, u: np.ndarray, dates, bank_ids) -> "PITPanel":
        return cls(dates=list(dates), u=np.asarray(u, dtype=np.float64).tolist(), bank_ids=list(bank_ids))

    def to_array(self) -> np.ndarray:
        return np.asarray(self.u, dtype=np.float64)

    @property
    def n_obs(self) -> int:
        return len(self.dates)

    @property
    def n_banks(self) -> int:
        return len(self.bank_ids)
