"""
Core configuration for the bank distress copula platform.
Handles environment variables, the flat key-value config file and run settings.
"""

from typing import List, Optional, Union

from pydantic import field_validator
from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    """
    Pipeline settings using Pydantic and python-dotenv.
    All values can be overridden by environment variables or a key-value config file.
    """

    # Project Configuration
    PROJECT_NAME: str = "Bank Distress Copula"
    LOG_LEVEL: str = "INFO"
    LOG_FILE: Optional[str] = None
    OUTPUT_DIR: str = "output"

    # Marginal Configuration
    AR_ORDER: int = 4
    MARGINAL_STARTS: int = 5
    MIN_SERIES_LENGTH: int = 250
    RETURN_SCALE: float = 100.0  # log-differences modeled in percent

    # Copula Configuration
    CANDIDATE_FAMILIES: str = (
        "ind,gau,t,cla,gum,fra,cla_90,cla_180,cla_270,gum_90,gum_180,gum_270"
    )
    QUADRATURE_NODES: int = 35
    QUADRATURE_RULE: str = "adaptive_hermite"

    # Variational Bayes Configuration
    VB_SAMPLES: int = 10
    VB_LEARNING_RATE: float = 0.01
    VB_MAX_ITER: int = 20000
    VB_WINDOW: int = 500
    VB_TOL: float = 1e-4
    VB_INIT_LOG_SD: float = -2.0
    VB_DIVERGENCE_DROP: float = 50.0

    # Structure Selection Configuration
    SELECTION_MAX_ITER: int = 10
    SELECTION_TIE_MARGIN: float = 2.0

    # Risk Configuration
    CDS_LGD: float = 0.75
    CDS_PERIODS: int = 5
    DEFAULT_RATE: float = 0.0
    THRESHOLD_WINDOW: int = 1000
    THRESHOLD_PERCENTILE: float = 95.0
    N_PATHS: int = 10000
    HORIZON: int = 20
    ES_MIN_PATHS: int = 50
    RISK_MODEL: str = "bi_factor"

    # Scoring Configuration
    SCORE_PATHS: int = 1000
    REGION_DRAWS: int = 100000
    VARIOGRAM_ORDER: float = 0.5

    # Backtest Configuration
    HOLDOUT: int = 1000
    ROLL_STEP: int = 20
    MAX_GAP: int = 5
    FREEZE_FAMILIES: bool = False
    TRAINING_WINDOW: Optional[int] = None  # None keeps an expanding window
    MODELS: str = "one_factor,two_factor,bi_factor,nested_factor,factor_vine"
    WORKERS: int = 1
    SEED: int = 20230501

    @field_validator("CANDIDATE_FAMILIES", "MODELS", mode="before")
    @classmethod
    def assemble_code_list(cls, v: Union[str, List[str]]) -> str:
        if isinstance(v, (list, tuple)):
            return ",".join(str(i).strip() for i in v)
        if isinstance(v, str):
            return v
        raise ValueError(v)

    @field_validator("TRAINING_WINDOW", mode="before")
    @classmethod
    def blank_window_is_expanding(cls, v):
        if isinstance(v, str) and not v.strip():
            return None
        return v

    @property
    def candidate_families(self) -> List[str]:
        return [c.strip() for c in self.CANDIDATE_FAMILIES.split(",") if c.strip()]

    @property
    def model_kinds(self) -> List[str]:
        return [m.strip() for m in self.MODELS.split(",") if m.strip()]

    class Config:
        env_file = ".env"
        case_sensitive = True
        extra = "ignore"


settings = Settings()


def load_settings(config_file: Optional[str] = None, **overrides) -> Settings:
    """
    Build settings from an optional key-value file plus explicit overrides.

    Args:
        config_file: Path to a dotenv-style ``KEY = value`` file
        **overrides: Field values taking precedence over file and environment

    Returns:
        A fresh Settings instance
    """
    clean = {k: v for k, v in overrides.items() if v is not None}
    if config_file:
        return Settings(_env_file=config_file, **clean)
    return Settings(**clean)


def activate_settings(new: Settings) -> Settings:
    """Copy ``new`` onto the shared ``settings`` object used for service defaults."""
    for name in Settings.model_fields:
        setattr(settings, name, getattr(new, name))
    return settings
