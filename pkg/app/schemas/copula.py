"""
Pydantic schemas for bivariate copula links.
"""

from enum import Enum
from typing import List, Tuple

from pydantic import BaseModel, field_validator, model_validator

TAU_LIMIT = 0.9
DF_MIN = 2.0
DF_MAX = 50.0


class CopulaFamily(str, Enum):
    """Short ASCII family codes used in model files and CLI output."""

    INDEPENDENCE = "ind"
    GAUSSIAN = "gau"
    STUDENT_T = "t"
    CLAYTON = "cla"
    GUMBEL = "gum"
    FRANK = "fra"
    CLAYTON_90 = "cla_90"
    CLAYTON_180 = "cla_180"
    CLAYTON_270 = "cla_270"
    GUMBEL_90 = "gum_90"
    GUMBEL_180 = "gum_180"
    GUMBEL_270 = "gum_270"

    @property
    def base(self) -> "CopulaFamily":
        return CopulaFamily(self.value.split("_")[0])

    @property
    def rotation(self) -> int:
        parts = self.value.split("_")
        return int(parts[1]) if len(parts) > 1 else 0

    @property
    def n_params(self) -> int:
        if self is CopulaFamily.INDEPENDENCE:
            return 0
        return 2 if self is CopulaFamily.STUDENT_T else 1

    @property
    def is_symmetric(self) -> bool:
        """Families whose tau range covers both signs."""
        return self.base in (CopulaFamily.GAUSSIAN, CopulaFamily.STUDENT_T, CopulaFamily.FRANK)

    @property
    def tau_sign(self) -> int:
        """+1 / -1 for families restricted to one sign of dependence, 0 otherwise."""
        if self is CopulaFamily.INDEPENDENCE or self.is_symmetric:
            return 0
        return -1 if self.rotation in (90, 270) else 1

    def rotated(self, degrees: int) -> "CopulaFamily":
        if degrees == 0:
            return self.base
        return CopulaFamily(f"{self.base.value}_{degrees}")


class BivariateCopula(BaseModel):
    """A family code plus its parameter vector (rho, or (rho, nu) for Student-t)."""

    family: CopulaFamily
    theta: Tuple[float, ...] = ()

    @field_validator("theta", mode="before")
    @classmethod
    def coerce_theta(cls, v):
        if isinstance(v, (int, float)):
            return (float(v),)
        return tuple(float(x) for x in v)

    @model_validator(mode="after")
    def check_family_constraints(self) -> "BivariateCopula":
        fam = self.family
        if len(self.theta) != fam.n_params:
            raise ValueError(
                f"{fam.value} expects {fam.n_params} parameters, got {len(self.theta)}"
            )
        base = fam.base
        if base in (CopulaFamily.GAUSSIAN, CopulaFamily.STUDENT_T):
            if not -1.0 < self.theta[0] < 1.0:
                raise ValueError(f"correlation {self.theta[0]} outside (-1, 1)")
            if base is CopulaFamily.STUDENT_T and not DF_MIN < self.theta[1] <= DF_MAX:
                raise ValueError(f"degrees of freedom {self.theta[1]} outside (2, 50]")
        elif base is CopulaFamily.CLAYTON and not self.theta[0] > 0.0:
            raise ValueError(f"Clayton theta {self.theta[0]} must be > 0")
        elif base is CopulaFamily.GUMBEL and not self.theta[0] >= 1.0:
            raise ValueError(f"Gumbel theta {self.theta[0]} must be >= 1")
        elif base is CopulaFamily.FRANK and self.theta[0] == 0.0:
            raise ValueError("Frank theta must be nonzero")

        if fam is not CopulaFamily.INDEPENDENCE:
            from app.models.bivariate import kendall_tau

            tau = kendall_tau(self)
            if abs(tau) > TAU_LIMIT + 1e-9:
                raise ValueError(f"implied Kendall tau {tau:.4f} outside [-0.9, 0.9]")
        return self

    @property
    def code(self) -> str:
        return self.family.value

    def describe(self) -> str:
        params = ", ".join(f"{x:.6g}" for x in self.theta)
        return f"{self.family.value}({params})"


class UnconstrainedParam(BaseModel):
    """Real-line coordinates for a copula parameter vector."""

    value: List[float]
