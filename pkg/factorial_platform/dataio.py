"""
Data I/O - CSV and JSON ingestion and emission.

CSV files are comma separated, UTF-8, with a mandatory header. Row numbers
in error messages count data records from 1; the physical file line (header
included) is reported alongside.
"""

from __future__ import annotations

import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from .design import FactorialDesign, treatment_index
from .errors import DesignError, InputError, ParseError
from .estimation import GroupSummary, ObservedDataset
from .population import PotentialOutcomesTable

logger = logging.getLogger(__name__)

OUTCOME_COLUMN = "y"
TREATMENT_COLUMN = "treatment"
SUMMARY_COLUMNS = ("treatment", "n", "n1")


def _read_frame(path: str) -> pd.DataFrame:
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except FileNotFoundError:
        raise InputError(f"File not found: {path}") from None
    except pd.errors.EmptyDataError:
        raise ParseError(f"{path}: file is empty (a header row is required)") from None
    except pd.errors.ParserError as exc:
        raise ParseError(f"{path}: malformed CSV ({exc})") from None
    except UnicodeDecodeError as exc:
        raise ParseError(f"{path}: not valid UTF-8 (byte offset {exc.start})") from None
    frame.columns = [str(column).strip() for column in frame.columns]
    if frame.empty:
        raise ParseError(f"{path}: no records")
    return frame.apply(lambda column: column.str.strip())


def _require_columns(frame: pd.DataFrame, columns: Sequence[str], path: str) -> None:
    missing = [column for column in columns if column not in frame.columns]
    if missing:
        raise ParseError(
            f"{path}: missing column(s) {', '.join(missing)}; found {', '.join(frame.columns)}"
        )


def _integers(frame: pd.DataFrame, column: str, path: str) -> np.ndarray:
    values = pd.to_numeric(frame[column], errors="coerce")
    bad = values.isna() | (values != values.round())
    if bad.any():
        row = int(np.flatnonzero(bad.to_numpy())[0])
        raise ParseError(
            f"{path}: column '{column}' must hold integers, got '{frame[column].iloc[row]}'",
            row=row + 1,
            line=row + 2,
        )
    return values.to_numpy(dtype=np.int64)


def _binary(frame: pd.DataFrame, column: str, path: str) -> np.ndarray:
    values = frame[column]
    bad = ~values.isin(["0", "1"])
    if bad.any():
        row = int(np.flatnonzero(bad.to_numpy())[0])
        raise ParseError(
            f"{path}: column '{column}' must be 0 or 1, got '{values.iloc[row]}'",
            row=row + 1,
            line=row + 2,
        )
    return (values == "1").to_numpy(dtype=np.int64)


def _design_for_size(J: int, design: Optional[FactorialDesign], what: str) -> FactorialDesign:
    if design is not None:
        if design.J != J:
            raise DesignError(f"{what} describes {J} treatments but the design has {design.J}")
        return design
    K = int(round(math.log2(J))) if J > 1 else 0
    if J < 2 or 2 ** K != J:
        raise DesignError(f"{what} describes {J} treatments, which is not a power of two")
    return FactorialDesign.with_default_names(K)


def read_unit_csv(path: str, design: Optional[FactorialDesign] = None) -> ObservedDataset:
    """
    Read unit-level data.

    The file holds either one 0/1 column per factor plus ``y``, or a
    ``treatment`` column with 1-based indices plus ``y``. Without a design,
    factor columns are taken in file order and a treatment-column file sets
    K from the largest index.
    """
    frame = _read_frame(path)
    _require_columns(frame, [OUTCOME_COLUMN], path)
    outcomes = _binary(frame, OUTCOME_COLUMN, path)

    if TREATMENT_COLUMN in frame.columns:
        treatments = _integers(frame, TREATMENT_COLUMN, path)
        if design is None:
            K = max(1, int(math.ceil(math.log2(max(int(treatments.max()), 2)))))
            design = FactorialDesign.with_default_names(K)
        bad = np.flatnonzero((treatments < 1) | (treatments > design.J))
        if bad.size:
            row = int(bad[0])
            raise ParseError(
                f"{path}: unknown treatment index {treatments[row]} (expected 1..{design.J})",
                row=row + 1,
                line=row + 2,
            )
    else:
        names = design.factor_names if design else tuple(c for c in frame.columns if c != OUTCOME_COLUMN)
        if not names:
            raise ParseError(f"{path}: no factor columns and no '{TREATMENT_COLUMN}' column")
        _require_columns(frame, names, path)
        design = design or FactorialDesign(names)
        levels = np.column_stack([_binary(frame, name, path) for name in names])
        treatments = np.array([treatment_index(design, row) for row in levels], dtype=np.int64)

    logger.debug("Read %d units from %s", len(frame), path)
    return ObservedDataset(design, treatments, outcomes)


def _summary_from_rows(
    rows: Sequence[Dict[str, int]], design: Optional[FactorialDesign], path: str
) -> GroupSummary:
    seen: Dict[int, int] = {}
    for record, row in enumerate(rows, start=1):
        treatment = row["treatment"]
        if treatment in seen:
            raise ParseError(
                f"{path}: duplicate row for treatment {treatment} (first seen at row {seen[treatment]})",
                row=record,
                line=record + 1,
            )
        seen[treatment] = record
        if row["n"] < 1:
            raise ParseError(f"{path}: n must be >= 1, got {row['n']}", row=record, line=record + 1)
        if not 0 <= row["n1"] <= row["n"]:
            raise ParseError(
                f"{path}: n1 = {row['n1']} must lie in 0..n = {row['n']}", row=record, line=record + 1
            )

    design = _design_for_size(len(rows), design, path)
    missing = sorted(set(range(1, design.J + 1)) - set(seen))
    if missing:
        raise DesignError(f"{path}: no row for treatment(s) {', '.join(map(str, missing))}")
    ordered = sorted(rows, key=lambda row: row["treatment"])
    return GroupSummary(design, tuple(r["n"] for r in ordered), tuple(r["n1"] for r in ordered))


def read_summary_csv(path: str, design: Optional[FactorialDesign] = None) -> GroupSummary:
    """Read per-treatment counts from columns treatment, n, n1."""
    frame = _read_frame(path)
    _require_columns(frame, SUMMARY_COLUMNS, path)
    columns = {name: _integers(frame, name, path) for name in SUMMARY_COLUMNS}
    rows = [
        {name: int(columns[name][i]) for name in SUMMARY_COLUMNS} for i in range(len(frame))
    ]
    return _summary_from_rows(rows, design, path)


def read_summary_json(path: str, design: Optional[FactorialDesign] = None) -> GroupSummary:
    """Read the ``summary`` block (and factor names) of an analyze JSON payload."""
    try:
        with open(path, encoding="utf-8") as handle:
            payload = json.load(handle)
    except FileNotFoundError:
        raise InputError(f"File not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: not valid JSON ({exc.msg})", line=exc.lineno) from None
    except UnicodeDecodeError as exc:
        raise ParseError(f"{path}: not valid UTF-8 (byte offset {exc.start})") from None
    records = payload.get("summary") if isinstance(payload, dict) else None
    if not records:
        raise ParseError(f"{path}: no 'summary' records")
    if design is None:
        factors = (payload.get("config") or {}).get("factors")
        if factors:
            design = FactorialDesign(tuple(factors))
    try:
        rows = [{name: int(record[name]) for name in SUMMARY_COLUMNS} for record in records]
    except (KeyError, TypeError, ValueError):
        raise ParseError(f"{path}: summary records need integer treatment, n and n1") from None
    return _summary_from_rows(rows, design, path)


def read_summary(path: str, design: Optional[FactorialDesign] = None) -> GroupSummary:
    if Path(path).suffix.lower() == ".json":
        return read_summary_json(path, design)
    return read_summary_csv(path, design)


def read_population_csv(path: str, design: Optional[FactorialDesign] = None) -> PotentialOutcomesTable:
    """Read a science table: one row per unit, one 0/1 column per treatment in index order."""
    frame = _read_frame(path)
    design = _design_for_size(len(frame.columns), design, path)
    Y = np.column_stack([_binary(frame, column, path) for column in frame.columns])
    return PotentialOutcomesTable(design, Y)


def summary_from_records(records: List[Dict[str, Any]], design: Optional[FactorialDesign] = None) -> GroupSummary:
    """Build a summary from in-memory ``{treatment, n, n1}`` records."""
    try:
        rows = [{name: int(record[name]) for name in SUMMARY_COLUMNS} for record in records]
    except (KeyError, TypeError, ValueError):
        raise InputError("Summary records need integer treatment, n and n1") from None
    if not rows:
        raise InputError("Summary has no records")
    return _summary_from_rows(rows, design, "summary")


# ==================== Output ====================

def to_plain(value: Any) -> Any:
    """Plain JSON-compatible data: numpy scalars unwrapped, non-finite floats as None."""
    if isinstance(value, dict):
        return {str(key): to_plain(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_plain(item) for item in value]
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def to_json(payload: Dict[str, Any]) -> str:
    """Serialize at full float precision; non-finite floats become null."""
    return json.dumps(to_plain(payload), indent=2, ensure_ascii=False, allow_nan=False)


def write_json(payload: Dict[str, Any], path: str) -> None:
    Path(path).write_text(to_json(payload) + "\n", encoding="utf-8")


def write_csv(frame: pd.DataFrame, path: str) -> None:
    frame.to_csv(path, index=False, encoding="utf-8")
