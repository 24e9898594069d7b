"""
Bank Distress Copula - Command Line Entry Point
Ingests CDS spread panels, fits marginal and factor-copula models, runs the
rolling backtest and writes scores and systemic risk reports.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np
import pandas as pd

from app.core.config import Settings, activate_settings, load_settings
from app.core.errors import CopulaPipelineError
from app.core.logging import configure_logging
from app.schemas.backtest import BacktestPlan, SpreadPanel
from app.schemas.factor import FactorKind, FactorModelSpec, GroupPartition
from app.schemas.scoring import PredictiveModel
from app.services.backtest_service import backtest_service, selection_config
from app.services.data_service import data_service
from app.services.marginal_service import marginal_service
from app.services.report_service import DAILY_COLUMNS, report_service, write_csv
from app.services.risk_service import RiskService, risk_service
from app.services.scoring_service import scoring_service
from app.services.selection_service import selection_service
from app.services.vb_service import vb_service

logger = logging.getLogger("bank_distress")

# CLI flag -> settings key
_OVERRIDES = {
    "seed": "SEED",
    "workers": "WORKERS",
    "log_level": "LOG_LEVEL",
    "log_file": "LOG_FILE",
    "output_dir": "OUTPUT_DIR",
    "holdout": "HOLDOUT",
    "step": "ROLL_STEP",
    "horizon": "HORIZON",
    "models": "MODELS",
    "n_paths": "N_PATHS",
    "max_gap": "MAX_GAP",
    "freeze_families": "FREEZE_FAMILIES",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bank-distress", description=__doc__.strip().splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name: str, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="key-value configuration file")
        p.add_argument("--output-dir", dest="output_dir")
        p.add_argument("--seed", type=int)
        p.add_argument("--log-level", dest="log_level")
        p.add_argument("--log-file", dest="log_file")
        p.add_argument("--max-gap", dest="max_gap", type=int)
        p.add_argument("--input", required=True, help="spread CSV (date, bank columns)")
        p.add_argument("--rate-column", dest="rate_column")
        return p

    command("ingest", "validate and impute a spread panel")
    command("fit-marginals", "fit AR-GJR-GARCH skew-t marginals")
    command("pit", "write the PIT panel of the fitted marginals")

    p = command("select", "select link families for one architecture")
    p.add_argument("--model", required=True, choices=[k.value for k in FactorKind])
    p.add_argument("--groups", help="bank-to-group CSV")

    p = command("fit", "fit architectures and compare by BIC")
    p.add_argument("--models")
    p.add_argument("--groups")
    p.add_argument("--subsamples", action="store_true", help="BIC table per subsample")

    p = command("backtest", "rolling out-of-sample backtest")
    p.add_argument("--models")
    p.add_argument("--groups")
    p.add_argument("--holdout", type=int)
    p.add_argument("--step", type=int)
    p.add_argument("--horizon", type=int)
    p.add_argument("--n-paths", dest="n_paths", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--freeze-families", dest="freeze_families", action="store_true", default=None)

    p = command("risk", "systemic risk forecast from a fitted model file")
    p.add_argument("--model-file", dest="model_file", required=True)
    p.add_argument("--horizon", type=int)
    p.add_argument("--n-paths", dest="n_paths", type=int)

    p = command("score", "score the last rows of a panel under a fitted model file")
    p.add_argument("--model-file", dest="model_file", required=True)
    p.add_argument("--last", type=int, default=20, help="number of evaluation rows")
    return parser


def _settings_from_args(args: argparse.Namespace) -> Settings:
    overrides = {key: getattr(args, flag, None) for flag, key in _OVERRIDES.items()}
    return activate_settings(load_settings(args.config, **overrides))


def _groups(args, panel: SpreadPanel) -> Optional[GroupPartition]:
    path = getattr(args, "groups", None)
    return data_service.load_groups(path, panel.banks) if path else None


def _out(s: Settings) -> Path:
    path = Path(s.OUTPUT_DIR)
    path.mkdir(parents=True, exist_ok=True)
    return path


def cmd_ingest(args, s: Settings, panel: SpreadPanel, report) -> None:
    out = _out(s)
    panel.spreads.to_csv(out / "panel_clean.csv", float_format="%.10g", lineterminator="\n", date_format="%Y-%m-%d")
    (out / "ingest_report.txt").write_text(report.to_text(), encoding="utf-8")
    print(f"T={panel.n_obs} d={len(panel.banks)} flags={report.n_flags}")


def cmd_fit_marginals(args, s: Settings, panel: SpreadPanel, report) -> None:
    out = _out(s) / "marginals"
    out.mkdir(exist_ok=True)
    fits, _ = backtest_service.fit_marginals(panel.log_differences(s.RETURN_SCALE), s)
    for bank, fit in fits.items():
        (out / f"{bank}.txt").write_text(fit.to_text(), encoding="utf-8")
        print(f"{bank}: loglik={fit.log_likelihood:.4f} persistence={fit.persistence:.4f}")


def cmd_pit(args, s: Settings, panel: SpreadPanel, report) -> None:
    _, pit = backtest_service.fit_marginals(panel.log_differences(s.RETURN_SCALE), s)
    frame = pd.DataFrame(pit.to_array(), index=pd.Index(pit.dates, name="date"), columns=pit.bank_ids)
    frame.to_csv(_out(s) / "pit.csv", float_format="%.10g", lineterminator="\n")


def cmd_select(args, s: Settings, panel: SpreadPanel, report) -> None:
    out = _out(s)
    _, pit = backtest_service.fit_marginals(panel.log_differences(s.RETURN_SCALE), s)
    kind = FactorKind(args.model)
    cfg = selection_config(s, np.random.SeedSequence(s.SEED, spawn_key=(0, 0)))
    sel = selection_service.fit_model(kind, pit, _groups(args, panel), cfg)
    (out / f"{kind.value}.json").write_text(sel.spec.to_document(), encoding="utf-8")
    (out / f"{kind.value}_elbo.csv").write_text(sel.fit.trace.to_csv(), encoding="utf-8")
    write_csv(
        [{"window": "", "model": kind.value, **r.model_dump(), "family": r.family.value} for r in sel.audit],
        ["window", "model", "iteration", "link", "family", "log_likelihood", "n_params", "bic", "selected"],
        out / f"{kind.value}_selection_audit.csv",
    )
    print(vb_service.fit_report(sel.fit, sel.summary), end="")


def cmd_fit(args, s: Settings, panel: SpreadPanel, report) -> None:
    out = _out(s)
    kinds = [FactorKind(m) for m in s.model_kinds]
    groups = _groups(args, panel)
    if args.subsamples:
        table = backtest_service.subsample_bic_table(panel, kinds, groups, s)
        report_service.write_bic_table(table, out / "bic_subsamples.csv")
        print(table.to_string(float_format=lambda x: f"{x:.2f}"))
        return
    _, pit = backtest_service.fit_marginals(panel.log_differences(s.RETURN_SCALE), s)
    fitted = backtest_service.fit_in_sample(pit, kinds, groups, s)
    rows = []
    for kind, (sel, score) in fitted.items():
        (out / f"{kind.value}.json").write_text(sel.spec.to_document(), encoding="utf-8")
        rows.append({"model": kind.value, **score.model_dump()})
        print(f"{kind.value}: loglik={score.log_likelihood:.2f} params={score.n_params} bic={score.bic:.2f}")
    write_csv(rows, ["model", "log_likelihood", "n_params", "n_obs", "bic"], out / "bic.csv")


def cmd_backtest(args, s: Settings, panel: SpreadPanel, report) -> None:
    plan = BacktestPlan.from_settings(s, groups=_groups(args, panel))
    result = backtest_service.run_backtest(panel, plan, s)
    report_service.emit_reports(result, _out(s))
    failed = [r.roll for r in result.rolls if r.status != "ok"]
    if failed:
        logger.warning(f"Rolls with failures: {failed}")


def cmd_risk(args, s: Settings, panel: SpreadPanel, report) -> None:
    spec = FactorModelSpec.from_document(Path(args.model_file).read_text(encoding="utf-8"))
    fits, _ = backtest_service.fit_marginals(panel.log_differences(s.RETURN_SCALE), s)
    thresholds = risk_service.distress_thresholds(panel.spreads, s.THRESHOLD_WINDOW, s.THRESHOLD_PERCENTILE)
    rng = np.random.default_rng(np.random.SeedSequence(s.SEED, spawn_key=(0, 0)))
    last = panel.spreads.index[-1]
    scen = risk_service.forecast_scenarios(
        fits, spec, panel.spreads.iloc[-1].to_numpy(), rng, s.N_PATHS, s.HORIZON,
        banks=panel.banks, window_end=last.date(), seed=s.SEED,
    )
    target = (last + pd.tseries.offsets.BDay(s.HORIZON)).date()
    risk = RiskService(min_conditioning_paths=s.ES_MIN_PATHS)
    report_service.write_risk_report(risk.risk_report(scen, thresholds, report_date=target), _out(s))
    implied = risk_service.implied_pd_series(panel.spreads, panel.rates)
    implied.to_csv(_out(s) / "implied_pd_series.csv", float_format="%.10g", lineterminator="\n", date_format="%Y-%m-%d")


def cmd_score(args, s: Settings, panel: SpreadPanel, report) -> None:
    spec = FactorModelSpec.from_document(Path(args.model_file).read_text(encoding="utf-8"))
    log_diffs = panel.log_differences(s.RETURN_SCALE)
    train, evaluation = log_diffs.iloc[: -args.last], log_diffs.iloc[-args.last :]
    fits, _ = backtest_service.fit_marginals(train, s)
    medians = train.median().to_numpy()
    rng = np.random.default_rng(np.random.SeedSequence(s.SEED, spawn_key=(0, 0)))
    rows = []
    draws = scoring_service.region_draws(spec, rng, s.REGION_DRAWS)
    for day, row in evaluation.iterrows():
        y = row.to_numpy(dtype=np.float64)
        model = PredictiveModel(banks=panel.banks, marginals=fits, copula=spec)
        ens = scoring_service.predictive_ensemble(model, y, rng, s.SCORE_PATHS)
        rows.append(
            {
                "model": spec.kind.value,
                "window": 0,
                "date": day.date().isoformat(),
                "lps": scoring_service.log_predictive_score(model, y),
                "cdl": scoring_service.conditional_likelihood_score(model, y, medians, draws=draws).score,
                "vars": scoring_service.score_ensemble(ens),
            }
        )
        fits = {b: marginal_service.advance(fits[b], [row[b]]) for b in panel.banks}
    write_csv(rows, DAILY_COLUMNS, _out(s) / "scores_daily.csv")
    print(f"LPS={sum(r['lps'] for r in rows):.4f}")


COMMANDS = {
    "ingest": cmd_ingest,
    "fit-marginals": cmd_fit_marginals,
    "pit": cmd_pit,
    "select": cmd_select,
    "fit": cmd_fit,
    "backtest": cmd_backtest,
    "risk": cmd_risk,
    "score": cmd_score,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        s = _settings_from_args(args)
    except Exception as e:
        print(f"invalid configuration: {e}", file=sys.stderr)
        return 2
    configure_logging(s.LOG_LEVEL, s.LOG_FILE)
    try:
        panel, report = data_service.load_panel(args.input, s.MAX_GAP, rate_column=args.rate_column)
        COMMANDS[args.command](args, s, panel, report)
    except (CopulaPipelineError, OSError, ValueError) as e:
        logger.error(f"{args.command} failed: {str(e)}")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
