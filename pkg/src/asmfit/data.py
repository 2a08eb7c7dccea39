"""Panel CSV ingestion with listwise deletion."""

from dataclasses import dataclass, field

import pandas as pd

from .errors import IngestionError


@dataclass
class IngestionReport:
    rows_read: int
    rows_kept: int
    missing_by_column: dict = field(default_factory=dict)
    ignored_columns: tuple = ()

    def lines(self):
        out = [f"rows read: {self.rows_read}", f"rows kept: {self.rows_kept}"]
        for col, count in self.missing_by_column.items():
            out.append(f"missing in {col}: {count}")
        if self.ignored_columns:
            out.append("ignored columns: " + ", ".join(self.ignored_columns))
        return out


def load_panel_csv(path, spec, min_rows=None):
    """Load a panel CSV and listwise-delete incomplete rows.

    Requires a header with every wave-indexed indicator column plus the
    covariates. Rows missing any modeled cell are dropped and reported per
    column. ``min_rows`` (the CLI passes 10x the free parameter count)
    triggers refusal when fewer complete rows remain.
    """
    required = list(spec.observed_columns())
    try:
        raw = pd.read_csv(path)
    except FileNotFoundError as exc:
        raise IngestionError(f"cannot open {path}") from exc
    except pd.errors.EmptyDataError as exc:
        raise IngestionError(f"{path} is empty") from exc
    if raw.shape[0] == 0:
        raise IngestionError(f"{path} has a header but no rows")
    missing_cols = [c for c in required if c not in raw.columns]
    if missing_cols:
        raise IngestionError(
            f"{path} lacks required columns: " + ", ".join(missing_cols)
        )
    for col in required:
        try:
            raw[col] = pd.to_numeric(raw[col])
        except (ValueError, TypeError) as exc:
            raise IngestionError(f"non-numeric cell in column '{col}'") from exc
    missing = {
        col: int(raw[col].isna().sum())
        for col in required
        if raw[col].isna().any()
    }
    kept = raw.dropna(subset=required)
    report = IngestionReport(
        rows_read=int(raw.shape[0]),
        rows_kept=int(kept.shape[0]),
        missing_by_column=missing,
        ignored_columns=tuple(c for c in raw.columns if c not in required),
    )
    if min_rows is not None and report.rows_kept < min_rows:
        raise IngestionError(
            f"only {report.rows_kept} complete rows; need at least {min_rows} "
            f"(10 rows per free parameter)"
        )
    return kept[required].astype(float), report
