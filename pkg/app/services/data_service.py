"""
Data service.
Reads CDS spread panels and group mappings, imputes short gaps and splits
the panel into the standard subsamples.
"""

import logging
from datetime import date
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from app.core.config import settings
from app.core.errors import PanelFormatError
from app.models.factor import simulate as simulate_copula
from app.models.marginal import simulate_paths
from app.schemas.backtest import IngestReport, SpreadPanel
from app.schemas.factor import FactorModelSpec, GroupPartition
from app.schemas.marginal import MarginalFit

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

DEFAULT_SUBSAMPLES: Dict[str, Tuple[date, date]] = {
    "2007-2010": (date(2007, 1, 1), date(2010, 12, 31)),
    "2011-2014": (date(2011, 1, 1), date(2014, 12, 31)),
    "2015-2019": (date(2015, 1, 1), date(2019, 12, 31)),
    "2020-2023": (date(2020, 1, 1), date(2023, 5, 31)),
}


class DataService:
    """Service for panel ingestion and partitioning."""

    def load_panel(
        self,
        path: PathLike,
        max_gap: Optional[int] = None,
        date_column: str = "date",
        rate_column: Optional[str] = None,
    ) -> Tuple[SpreadPanel, IngestReport]:
        """
        Read a spread CSV with a date column and one column per bank.

        Interior gaps up to ``max_gap`` days are forward-filled and flagged;
        rows inside longer gaps are dropped, as are rows before every bank
        has its first quote.

        Args:
            path: CSV file, spreads in basis points
            max_gap: Longest gap that is forward-filled
            date_column: Name of the date column
            rate_column: Optional risk-free rate column (decimal)

        Returns:
            Tuple of (SpreadPanel, IngestReport)
        """
        max_gap = settings.MAX_GAP if max_gap is None else max_gap
        try:
            raw = pd.read_csv(path, dtype=str, skipinitialspace=True)
        except Exception as e:
            raise PanelFormatError(f"cannot read {path}: {e}") from e
        if date_column not in raw.columns or raw.shape[1] < 2:
            raise PanelFormatError(f"{path} needs a '{date_column}' column and at least one bank")

        try:
            dates = pd.to_datetime(raw[date_column], format="ISO8601")
        except (ValueError, TypeError) as e:
            raise PanelFormatError(f"unparseable date in {path}: {e}") from e
        if dates.duplicated().any():
            dup = dates[dates.duplicated()].iloc[0].date()
            raise PanelFormatError(f"duplicate date {dup} in {path}")

        values = raw.drop(columns=[date_column]).apply(lambda c: c.str.strip())
        numeric = values.apply(pd.to_numeric, errors="coerce")
        bad = values.notna() & (values != "") & numeric.isna()
        if bad.any().any():
            row = int(np.argmax(bad.any(axis=1).to_numpy()))
            raise PanelFormatError(f"unparseable value on {dates.iloc[row].date()} in {path}")
        numeric.index = pd.DatetimeIndex(dates, name="date")
        numeric = numeric.sort_index()

        rates = None
        if rate_column is not None:
            if rate_column not in numeric.columns:
                raise PanelFormatError(f"rate column '{rate_column}' not found")
            rates = numeric.pop(rate_column).ffill().bfill()
        if (numeric <= 0).any().any():
            raise PanelFormatError("spreads must be positive")

        frame, report = self.impute(numeric, max_gap, str(path))
        if rates is not None:
            rates = rates.loc[frame.index]
        logger.info(
            f"Loaded {report.rows_kept} of {report.rows_read} rows for {frame.shape[1]} banks "
            f"({len(report.filled)} cells filled)"
        )
        return SpreadPanel(spreads=frame, rates=rates), report

    @staticmethod
    def impute(frame: pd.DataFrame, max_gap: int, source: str = "") -> Tuple[pd.DataFrame, IngestReport]:
        first_complete = max(frame[c].first_valid_index() or frame.index[-1] for c in frame.columns)
        leading = frame.index[frame.index < first_complete]
        body = frame.loc[first_complete:]

        missing = body.isna()
        long_gap = pd.DataFrame(False, index=body.index, columns=body.columns)
        for c in body.columns:
            run_id = (~missing[c]).cumsum()
            run_len = missing[c].groupby(run_id).transform("sum")
            long_gap[c] = missing[c] & (run_len > max_gap)
        drop_rows = long_gap.any(axis=1)
        short = (missing & ~long_gap).loc[~drop_rows]

        filled = [
            (t.date(), str(c)) for c in body.columns for t in short.index[short[c].to_numpy()]
        ]
        filled.sort()
        clean = body.ffill()[~drop_rows]
        # the log-difference into each of these rows spans the dropped run
        segment = (~drop_rows).cumsum().shift(1, fill_value=0)
        skipped = drop_rows.groupby(segment).sum()
        resumed = [
            (t.date(), int(skipped[segment[t]]))
            for t in body.index[(~drop_rows).to_numpy()]
            if skipped[segment[t]] > 0
        ]
        for day, n in resumed:
            logger.warning(f"Panel resumes on {day.isoformat()} after {n} dropped rows")
        report = IngestReport(
            source=source,
            rows_read=len(frame),
            rows_kept=len(clean),
            filled=filled,
            dropped_leading=[t.date() for t in leading],
            dropped_gaps=[t.date() for t in body.index[drop_rows.to_numpy()]],
            resumed_after_gap=resumed,
        )
        return clean.astype(np.float64), report

    def load_groups(self, path: PathLike, banks: Sequence[str], column: Optional[str] = None) -> GroupPartition:
        """
        Read a bank-to-group mapping (columns ``bank`` and ``group`` or ``region``).
        Groups are numbered by first appearance in bank order.
        """
        table = pd.read_csv(path, dtype=str, skipinitialspace=True)
        column = column or next((c for c in ("group", "region") if c in table.columns), None)
        if "bank" not in table.columns or column is None:
            raise PanelFormatError(f"{path} needs 'bank' and 'group' (or 'region') columns")
        mapping = dict(zip(table["bank"].str.strip(), table[column].str.strip()))
        missing = [b for b in banks if b not in mapping]
        if missing:
            raise PanelFormatError(f"no group for banks {missing}")
        labels: List[str] = []
        for b in banks:
            if mapping[b] not in labels:
                labels.append(mapping[b])
        groups = [[i for i, b in enumerate(banks) if mapping[b] == g] for g in labels]
        return GroupPartition(groups=groups)

    def split_subsamples(
        self, panel: SpreadPanel, ranges: Optional[Dict[str, Tuple[date, date]]] = None
    ) -> Dict[str, SpreadPanel]:
        """Date-range subsamples; empty ranges are skipped."""
        out = {}
        for name, (start, end) in (ranges or DEFAULT_SUBSAMPLES).items():
            mask = (panel.spreads.index >= pd.Timestamp(start)) & (panel.spreads.index <= pd.Timestamp(end))
            if not mask.any():
                logger.warning(f"Subsample {name} has no observations")
                continue
            rates = panel.rates[mask] if panel.rates is not None else None
            out[name] = SpreadPanel(spreads=panel.spreads[mask], rates=rates)
        return out

    def simulate_panel(
        self,
        spec: FactorModelSpec,
        fits: Sequence[MarginalFit],
        n_obs: int,
        rng: np.random.Generator,
        start: date = date(2015, 1, 1),
        initial_spread: float = 100.0,
        banks: Optional[Sequence[str]] = None,
    ) -> SpreadPanel:
        """
        Synthetic business-day spread panel: copula rows drive each bank's
        marginal recursion, log-differences compound from ``initial_spread``.
        """
        if len(fits) != spec.n_vars:
            raise ValueError("one marginal fit per copula dimension is required")
        banks = list(banks or [f"bank_{i + 1:02d}" for i in range(spec.n_vars)])
        u = simulate_copula(spec, n_obs, rng)
        steps = np.column_stack([simulate_paths(fit, u[:, i])[0] for i, fit in enumerate(fits)])
        levels = initial_spread * np.exp(np.cumsum(steps, axis=0) / settings.RETURN_SCALE)
        levels = np.vstack([np.full(spec.n_vars, initial_spread), levels])
        index = pd.bdate_range(start=start, periods=n_obs + 1, name="date")
        return SpreadPanel(spreads=pd.DataFrame(levels, index=index, columns=banks))


data_service = DataService()
