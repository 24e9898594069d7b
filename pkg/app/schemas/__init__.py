# Pydantic schemas for every domain type

from .backtest import BacktestPlan, IngestReport, RollResult, SpreadPanel
from .copula import BivariateCopula, CopulaFamily, UnconstrainedParam
from .factor import FactorKind, FactorModelSpec, GroupPartition, VineEdge
from .marginal import HorizonState, MarginalFit, MarginalSpec, MarginalState, PITPanel
from .risk import CdsTermSpec, DistressThresholds, RiskReport, ScenarioSet
from .scoring import CdlResult, PredictiveEnsemble, PredictiveModel
from .selection import ModelScore, SelectionAuditRow, SelectionConfig, SelectionResult
from .vb import ELBOTrace, PriorSpec, VariationalPosterior, VBConfig, VBFitResult

__all__ = [
    "BacktestPlan", "IngestReport", "RollResult", "SpreadPanel",
    "BivariateCopula", "CopulaFamily", "UnconstrainedParam",
    "FactorKind", "FactorModelSpec", "GroupPartition", "VineEdge",
    "HorizonState", "MarginalFit", "MarginalSpec", "MarginalState", "PITPanel",
    "CdsTermSpec", "DistressThresholds", "RiskReport", "ScenarioSet",
    "CdlResult", "PredictiveEnsemble", "PredictiveModel",
    "ModelScore", "SelectionAuditRow", "SelectionConfig", "SelectionResult",
    "ELBOTrace", "PriorSpec", "VariationalPosterior", "VBConfig", "VBFitResult",
]
