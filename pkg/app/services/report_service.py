"""
Report service.
Writes score tables, risk CSVs, selection audits and model files of a backtest.
"""

import logging
from pathlib import Path
from typing import Dict, List, Optional, Union

import pandas as pd

from app.schemas.backtest import BacktestResult, RollResult
from app.schemas.risk import RiskReport

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.10g"

SCORE_COLUMNS = ["model", "window", "window_start", "window_end", "status", "lps", "cdl", "vars"]
DAILY_COLUMNS = ["model", "window", "date", "lps", "cdl", "vars"]
BANK_COLUMNS = ["date", "bank", "pd", "epd", "es"]
JPD_COLUMNS = ["date", "k", "jpd"]
SURFACE_COLUMNS = ["date", "measure", "key", "value"]
AUDIT_COLUMNS = [
    "window", "model", "iteration", "link", "family", "log_likelihood", "n_params", "bic", "selected",
]
IMPLIED_COLUMNS = ["date", "bank", "implied_pd"]


def write_csv(rows: List[dict], columns: List[str], path: Path) -> Path:
    """Deterministic CSV: fixed column order, '%.10g' floats, empty cells for missing values."""
    frame = pd.DataFrame(rows, columns=columns)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, na_rep="", lineterminator="\n")
    return path


class ReportService:
    """Service for writing run artifacts."""

    def score_rows(self, result: BacktestResult) -> List[dict]:
        rows = []
        totals: Dict[str, Dict[str, float]] = {}
        for roll in result.rolls:
            for m in roll.models:
                rows.append(
                    {
                        "model": m.model.value,
                        "window": roll.roll,
                        "window_start": roll.window_start.isoformat(),
                        "window_end": roll.window_end.isoformat(),
                        "status": m.status,
                        "lps": m.lps,
                        "cdl": m.cdl,
                        "vars": m.vars,
                    }
                )
                if m.status == "ok":
                    t = totals.setdefault(m.model.value, {"lps": 0.0, "cdl": 0.0, "vars": 0.0})
                    t["lps"] += m.lps
                    t["cdl"] += m.cdl
                    t["vars"] += m.vars
        for kind in result.plan.models:
            if kind.value in totals:
                rows.append({"model": kind.value, "window": "total", "status": "ok", **totals[kind.value]})
        return rows

    @staticmethod
    def risk_rows(roll: RollResult) -> Dict[str, List[dict]]:
        report: Optional[RiskReport] = roll.risk
        out = {"bank": [], "jpd": [], "surface": []}
        if report is None:
            return out
        day = report.report_date.isoformat() if report.report_date else ""
        for i, bank in enumerate(report.banks):
            out["bank"].append(
                {"date": day, "bank": bank, "pd": report.pd[i], "epd": report.epd[i], "es": report.es[i]}
            )
            for measure, value in (("pd", report.pd[i]), ("epd", report.epd[i]), ("es", report.es[i])):
                out["surface"].append({"date": day, "measure": measure, "key": bank, "value": value})
        for k, value in enumerate(report.jpd, start=1):
            out["jpd"].append({"date": day, "k": k, "jpd": value})
            out["surface"].append({"date": day, "measure": "jpd", "key": str(k), "value": value})
        return out

    def emit_reports(self, result: BacktestResult, out_dir: Union[str, Path]) -> List[Path]:
        """
        Write every backtest artifact under ``out_dir``.

        Args:
            result: Completed (possibly empty) backtest
            out_dir: Output directory, created if missing

        Returns:
            Paths written, in a fixed order
        """
        out = Path(out_dir)
        models_dir = out / "models"
        models_dir.mkdir(parents=True, exist_ok=True)

        daily, bank, jpd, surface, audit, implied = [], [], [], [], [], []
        written: List[Path] = []
        for roll in result.rolls:
            risk = self.risk_rows(roll)
            bank += risk["bank"]
            jpd += risk["jpd"]
            surface += risk["surface"]
            implied += [
                {"date": roll.train_end.isoformat(), "bank": b, "implied_pd": p}
                for b, p in zip(result.banks, roll.implied_pd)
            ]
            for m in roll.models:
                daily += [
                    {"model": m.model.value, "window": roll.roll, "date": d.day.isoformat(),
                     "lps": d.lps, "cdl": d.cdl, "vars": d.vars}
                    for d in m.daily
                ]
                audit += [
                    {"window": roll.roll, "model": m.model.value, **row.model_dump(), "family": row.family.value}
                    for row in m.audit
                ]
                stem = models_dir / f"roll_{roll.roll}_{m.model.value}"
                for suffix, text in ((".json", m.spec_document), ("_elbo.csv", m.trace_csv), ("_fit.txt", m.fit_report)):
                    if text:
                        path = Path(f"{stem}{suffix}")
                        path.write_text(text, encoding="utf-8")
                        written.append(path)

        written = [
            write_csv(self.score_rows(result), SCORE_COLUMNS, out / "scores.csv"),
            write_csv(daily, DAILY_COLUMNS, out / "scores_daily.csv"),
            write_csv(bank, BANK_COLUMNS, out / "risk_bank.csv"),
            write_csv(jpd, JPD_COLUMNS, out / "risk_jpd.csv"),
            write_csv(surface, SURFACE_COLUMNS, out / "risk_surface.csv"),
            write_csv(audit, AUDIT_COLUMNS, out / "selection_audit.csv"),
            write_csv(implied, IMPLIED_COLUMNS, out / "implied_pd.csv"),
        ] + written
        manifest = out / "manifest.txt"
        manifest.write_text(self.manifest(result), encoding="utf-8")
        written.append(manifest)
        logger.info(f"Wrote {len(written)} report files to {out}")
        return written

    @staticmethod
    def manifest(result: BacktestResult) -> str:
        plan = result.plan
        lines = [
            f"banks = {','.join(result.banks)}",
            f"models = {','.join(m.value for m in plan.models)}",
            f"holdout = {plan.holdout}",
            f"step = {plan.step}",
            f"horizon = {plan.horizon}",
            f"seed = {plan.seed}",
            f"rolls = {len(result.rolls)}",
        ]
        for roll in result.rolls:
            lines.append(
                f"roll {roll.roll} {roll.window_start.isoformat()}..{roll.window_end.isoformat()} "
                f"status={roll.status}"
                + (f" error={roll.error}" if roll.error else "")
                + (f" risk_error={roll.risk_error}" if roll.risk_error else "")
            )
            for m in roll.models:
                if m.status != "ok":
                    lines.append(f"  {m.model.value} failed: {m.error}")
                elif m.cdl_flags:
                    lines.append(f"  {m.model.value} region-mass warnings: {m.cdl_flags}")
        return "\n".join(lines) + "\n"

    def write_bic_table(self, table: pd.DataFrame, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        table.to_csv(path, float_format=FLOAT_FORMAT, na_rep="", lineterminator="\n")
        return path

    def write_risk_report(self, report: RiskReport, out_dir: Union[str, Path]) -> List[Path]:
        """Per-bank, JPD and surface CSVs for a single risk report."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        roll = RollResult(
            roll=0,
            train_start=report.report_date,
            train_end=report.report_date,
            window_start=report.report_date,
            window_end=report.report_date,
            risk=report,
        )
        rows = self.risk_rows(roll)
        return [
            write_csv(rows["bank"], BANK_COLUMNS, out / "risk_bank.csv"),
            write_csv(rows["jpd"], JPD_COLUMNS, out / "risk_jpd.csv"),
            write_csv(rows["surface"], SURFACE_COLUMNS, out / "risk_surface.csv"),
        ]


report_service = ReportService()
