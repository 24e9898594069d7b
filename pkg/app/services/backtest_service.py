"""
Backtest service.
Rolling-window re-estimation of marginals and factor copulas, one-step-ahead
scoring over each forecast window and end-of-window systemic risk forecasts.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
import structlog
import torch

from app.core.config import Settings, activate_settings, settings
from app.core.errors import NoRootError
from app.schemas.backtest import (
    BacktestPlan,
    BacktestResult,
    DailyScore,
    ModelRollResult,
    RollResult,
    SpreadPanel,
)
from app.schemas.factor import FactorKind, FactorModelSpec, GroupPartition
from app.schemas.marginal import MarginalFit, MarginalSpec, PITPanel
from app.schemas.risk import CdsTermSpec
from app.schemas.scoring import PredictiveModel
from app.schemas.selection import ModelScore, SelectionConfig, SelectionResult
from app.schemas.vb import VBConfig
from app.services.data_service import data_service
from app.services.marginal_service import MarginalService
from app.services.risk_service import BPS, RiskService
from app.services.scoring_service import scoring_service
from app.services.selection_service import selection_service
from app.services.vb_service import vb_service

logger = logging.getLogger(__name__)

RISK_STREAM = 1000


def selection_config(s: Settings, seed_seq: np.random.SeedSequence) -> SelectionConfig:
    vb_seed = int(seed_seq.generate_state(1)[0])
    return SelectionConfig.from_settings(s, vb=VBConfig.from_settings(s, seed=vb_seed))


def _init_worker(values: dict) -> None:
    activate_settings(Settings(**values))
    torch.set_num_threads(1)


def _run_roll_job(job: Tuple) -> RollResult:
    return BacktestService().run_roll(*job)


class BacktestService:
    """Service for in-sample fitting and the rolling out-of-sample backtest."""

    def fit_marginals(self, log_diffs: pd.DataFrame, s: Settings) -> Tuple[Dict[str, MarginalFit], PITPanel]:
        marg = MarginalService(n_starts=s.MARGINAL_STARTS, min_length=s.MIN_SERIES_LENGTH)
        fits = marg.fit_panel(log_diffs, MarginalSpec(ar_order=s.AR_ORDER))
        return fits, marg.pit_panel(fits, log_diffs)

    def fit_in_sample(
        self,
        pit: PITPanel,
        kinds: List[FactorKind],
        groups: Optional[GroupPartition] = None,
        s: Optional[Settings] = None,
        stream: int = 0,
    ) -> Dict[FactorKind, Tuple[SelectionResult, ModelScore]]:
        """Select and fit each architecture on a PIT panel and score it by BIC."""
        s = s or settings
        out = {}
        for m, kind in enumerate(kinds):
            cfg = selection_config(s, np.random.SeedSequence(s.SEED, spawn_key=(stream, m)))
            try:
                sel = selection_service.fit_model(kind, pit, groups, cfg)
                out[kind] = (sel, selection_service.compute_bic(sel.spec, pit))
                logger.info(f"{kind.value}: BIC {out[kind][1].bic:.2f}")
            except Exception as e:
                logger.error(f"In-sample fit of {kind.value} failed: {str(e)}")
        return out

    def subsample_bic_table(
        self,
        panel: SpreadPanel,
        kinds: List[FactorKind],
        groups: Optional[GroupPartition] = None,
        s: Optional[Settings] = None,
    ) -> pd.DataFrame:
        """BIC per model (rows) and subsample (columns), full sample last."""
        s = s or settings
        samples = dict(data_service.split_subsamples(panel))
        samples["full"] = panel
        table = pd.DataFrame(index=[k.value for k in kinds], columns=list(samples), dtype=float)
        for n, (name, sub) in enumerate(samples.items()):
            try:
                _, pit = self.fit_marginals(sub.log_differences(s.RETURN_SCALE), s)
            except Exception as e:
                logger.error(f"Subsample {name} skipped: {str(e)}")
                continue
            for kind, (_, score) in self.fit_in_sample(pit, kinds, groups, s, stream=n).items():
                table.loc[kind.value, name] = score.bic
        table.index.name = "model"
        return table

    # Rolling backtest

    def run_backtest(
        self,
        panel: SpreadPanel,
        plan: BacktestPlan,
        s: Optional[Settings] = None,
    ) -> BacktestResult:
        """
        Run every roll of the plan.

        Rolls are independent jobs; with ``plan.workers > 1`` they run in a
        process pool and are merged in roll order. With frozen families the
        first roll selects and later rolls refit those families only.

        Args:
            panel: Spread panel
            plan: Backtest plan
            s: Settings used inside each roll

        Returns:
            BacktestResult with one RollResult per roll
        """
        s = s or settings
        log_diffs = panel.log_differences(s.RETURN_SCALE)
        bounds = plan.roll_bounds(len(log_diffs))
        logger.info(f"Backtest with {len(bounds)} rolls over {len(plan.models)} models")

        results: List[RollResult] = []
        frozen = None
        pending = list(range(len(bounds)))
        if plan.freeze_families and pending:
            first = self.run_roll(0, bounds[0], panel, log_diffs, plan, s, None)
            results.append(first)
            frozen = {m.model: m.spec_document for m in first.models if m.spec_document}
            pending = pending[1:]

        jobs = [(r, bounds[r], panel, log_diffs, plan, s, frozen) for r in pending]
        if plan.workers > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(
                max_workers=plan.workers, initializer=_init_worker, initargs=(s.model_dump(),)
            ) as pool:
                results += list(pool.map(_run_roll_job, jobs))
        else:
            results += [self.run_roll(*job) for job in jobs]

        results.sort(key=lambda r: r.roll)
        failed = sum(r.status != "ok" for r in results)
        logger.info(f"Backtest finished: {len(results) - failed} rolls ok, {failed} failed")
        return BacktestResult(banks=panel.banks, plan=plan, rolls=results)

    def run_roll(
        self,
        roll: int,
        bounds: Tuple[int, int, int],
        panel: SpreadPanel,
        log_diffs: pd.DataFrame,
        plan: BacktestPlan,
        s: Settings,
        frozen: Optional[Dict[FactorKind, str]] = None,
    ) -> RollResult:
        """Fit on rows before the window, score each day in it, forecast risk at its end."""
        log = structlog.get_logger(__name__).bind(roll=roll)
        train_start, start, end = bounds
        train = log_diffs.iloc[train_start:start]
        window = log_diffs.iloc[start:end]
        assert train.index[-1] < window.index[0], "training rows overlap the forecast window"

        result = RollResult(
            roll=roll,
            train_start=train.index[0].date(),
            train_end=train.index[-1].date(),
            window_start=window.index[0].date(),
            window_end=window.index[-1].date(),
        )
        try:
            fits, pit = self.fit_marginals(train, s)
        except Exception as e:
            log.error("marginal fitting failed", error=str(e))
            return result.model_copy(update={"status": "failed", "error": str(e)})

        medians = train.median().to_numpy()
        fitted: Dict[FactorKind, FactorModelSpec] = {}
        for m, kind in enumerate(plan.models):
            seed_seq = np.random.SeedSequence(plan.seed, spawn_key=(roll, m))
            model_log = log.bind(model=kind.value)
            try:
                outcome, spec = self._fit_and_score(kind, pit, fits, window, medians, plan, s, seed_seq, frozen)
                fitted[kind] = spec
                model_log.info("model scored", lps=outcome.lps, cdl=outcome.cdl, vars=outcome.vars)
            except Exception as e:
                model_log.error("model failed", error=str(e))
                outcome = ModelRollResult(model=kind, status="failed", error=str(e))
            result.models.append(outcome)

        try:
            risk_spec = fitted.get(plan.risk_model)
            if risk_spec is None:
                cfg = selection_config(s, np.random.SeedSequence(plan.seed, spawn_key=(roll, RISK_STREAM)))
                risk_spec = selection_service.fit_model(plan.risk_model, pit, plan.groups, cfg).spec
            history = panel.spreads.loc[: train.index[-1]]
            risk = RiskService(min_conditioning_paths=s.ES_MIN_PATHS)
            thresholds = risk.distress_thresholds(history, s.THRESHOLD_WINDOW, s.THRESHOLD_PERCENTILE)
            rng = np.random.default_rng(np.random.SeedSequence(plan.seed, spawn_key=(roll, RISK_STREAM + 1)))
            scen = risk.forecast_scenarios(
                fits,
                risk_spec,
                history.iloc[-1].to_numpy(),
                rng,
                n_paths=plan.n_paths,
                horizon=plan.horizon,
                banks=panel.banks,
                window_end=result.train_end,
                seed=plan.seed,
            )
            result.risk = risk.risk_report(scen, thresholds, report_date=result.window_end)
            result.implied_pd = self._implied_pd(risk, panel, train.index[-1], s)
        except Exception as e:
            log.error("risk forecast failed", error=str(e))
            result.risk_error = str(e)

        if all(m.status != "ok" for m in result.models):
            result.status = "failed"
            result.error = "no model produced scores"
        return result

    def _fit_and_score(
        self,
        kind: FactorKind,
        pit: PITPanel,
        fits: Dict[str, MarginalFit],
        window: pd.DataFrame,
        medians: np.ndarray,
        plan: BacktestPlan,
        s: Settings,
        seed_seq: np.random.SeedSequence,
        frozen: Optional[Dict[FactorKind, str]],
    ) -> Tuple[ModelRollResult, FactorModelSpec]:
        cfg = selection_config(s, seed_seq)
        frozen_spec = FactorModelSpec.from_document(frozen[kind]) if frozen and kind in frozen else None
        sel = selection_service.fit_model(kind, pit, plan.groups, cfg, frozen=frozen_spec)
        rng = np.random.default_rng(seed_seq)
        marg = MarginalService(n_starts=s.MARGINAL_STARTS, min_length=s.MIN_SERIES_LENGTH)
        banks = list(window.columns)
        current = dict(fits)
        daily = []
        flags = 0
        draws = scoring_service.region_draws(sel.spec, rng, plan.region_draws)
        for day, row in window.iterrows():
            y = row.to_numpy(dtype=np.float64)
            model = PredictiveModel(banks=banks, marginals=current, copula=sel.spec)
            lps = scoring_service.log_predictive_score(model, y)
            cdl = scoring_service.conditional_likelihood_score(model, y, medians, draws=draws)
            flags += int(cdl.flagged)
            ens = scoring_service.predictive_ensemble(model, y, rng, plan.score_paths)
            daily.append(
                DailyScore(
                    day=day.date(),
                    lps=lps,
                    cdl=cdl.score,
                    vars=scoring_service.score_ensemble(ens, s.VARIOGRAM_ORDER),
                )
            )
            current = {b: marg.advance(current[b], [row[b]]) for b in banks}

        outcome = ModelRollResult(
            model=kind,
            lps=sum(d.lps for d in daily),
            cdl=sum(d.cdl for d in daily if d.cdl is not None),
            vars=sum(d.vars for d in daily),
            daily=daily,
            spec_document=sel.spec.to_document(),
            fingerprint=sel.spec.fingerprint(),
            audit=sel.audit,
            trace_csv=sel.fit.trace.to_csv(),
            fit_report=vb_service.fit_report(sel.fit, sel.summary),
            cdl_flags=flags,
        )
        return outcome, sel.spec

    @staticmethod
    def _implied_pd(risk: RiskService, panel: SpreadPanel, when: pd.Timestamp, s: Settings) -> List[float]:
        rate = float(panel.rates.loc[when]) if panel.rates is not None else s.DEFAULT_RATE
        term = CdsTermSpec(rate=rate, lgd=s.CDS_LGD, periods=s.CDS_PERIODS)
        out = []
        for bank in panel.banks:
            try:
                out.append(risk.implied_default_probability(panel.spreads.loc[when, bank] / BPS, term))
            except NoRootError:
                out.append(float("nan"))
        return out


backtest_service = BacktestService()
