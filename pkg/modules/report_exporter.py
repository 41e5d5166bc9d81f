"""
Report Exporter Module
======================

Export bound, sweep and sequential results as CSV, aligned text or JSON.

Features:
- Bound rows shaped like the published lower-bound table (value and seconds per cone)
- Sequential summary rows with the raw costs next to every gap column
- Gap spot-check that recomputes each percentage from the costs in the frame
- One export entry point dispatching on ExportFormat
"""

import io
import json
import logging
import math
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence

import numpy as np
import pandas as pd

from .relax import ConeKind
from .schemas import ExportFormat
from .sequential import BoundResult, RunReport

logger = logging.getLogger(__name__)

BOUND_COLUMNS = ["case", "sdp", "sdp_s", "socp", "socp_s", "parabolic", "parabolic_s"]
SEQUENTIAL_COLUMNS = ["case", "cone", "mu", "alpha", "k_f", "GFB%", "GFS%", "k_p", "GPB%", "GPS%",
                      "c_f", "c_p", "c_b", "c_s", "rounds", "status"]
SWEEP_COLUMNS = ["mu", "cone", "rank_gap", "lifted_cost", "cost", "max_violation", "gap_percent",
                 "status", "seconds"]

# gap column -> (cost column, reference column)
GAP_SOURCES = {"GFB%": ("c_f", "c_b"), "GFS%": ("c_f", "c_s"), "GPB%": ("c_p", "c_b"), "GPS%": ("c_p", "c_s")}


def bound_row(case: str, results: Mapping[ConeKind, BoundResult]) -> Dict[str, Any]:
    """One lower-bound row; cones that were not solved stay NaN."""
    row: Dict[str, Any] = {"case": case}
    for kind in ConeKind:
        result = results.get(kind)
        row[kind.value] = result.bound if result is not None else math.nan
        row[f"{kind.value}_s"] = round(result.seconds, 3) if result is not None else math.nan
    return row


def sequential_row(report: RunReport) -> Dict[str, Any]:
    row = {"case": report.case, "cone": report.kind.value}
    row.update(report.summary_row())
    row.update(c_f=report.c_f, c_p=report.c_p, c_b=report.best_known, c_s=report.sdp_bound,
               rounds=len(report.rounds), status=report.status.value)
    return row


def check_gap_columns(frame: pd.DataFrame, tol: float = 1e-6) -> List[str]:
    """
    Recompute every gap column as 100 (c - ref) / c and list the rows that disagree.

    Rows missing a cost or a reference must carry an empty gap.
    """
    problems = []
    for gap_col, (cost_col, ref_col) in GAP_SOURCES.items():
        if gap_col not in frame.columns:
            continue
        for idx, row in frame.iterrows():
            cost, ref, gap = row.get(cost_col), row.get(ref_col), row.get(gap_col)
            if pd.isna(cost) or pd.isna(ref) or cost == 0:
                if not pd.isna(gap):
                    problems.append(f"row {idx}: {gap_col}={gap} without {cost_col}/{ref_col}")
                continue
            expected = 100.0 * (cost - ref) / cost
            if pd.isna(gap) or abs(gap - expected) > tol * max(1.0, abs(expected)):
                problems.append(f"row {idx}: {gap_col}={gap} but costs give {expected:.6g}")
    return problems


class ReportExporter:
    """Writes result rows in the requested format."""

    def __init__(self, float_format: str = "%.10g"):
        self.timestamp = datetime.now().strftime("%Y%m%d_%H%M%S")
        self.float_format = float_format

    def to_frame(self, rows: Iterable[Mapping[str, Any]], columns: Optional[Sequence[str]] = None) -> pd.DataFrame:
        frame = pd.DataFrame(list(rows))
        if columns is not None:
            extra = [c for c in frame.columns if c not in columns]
            frame = frame.reindex(columns=list(columns) + extra)
        return frame

    def export_to_csv(self, frame: pd.DataFrame) -> str:
        buffer = io.StringIO()
        frame.to_csv(buffer, index=False, float_format=self.float_format)
        return buffer.getvalue()

    def export_to_text(self, frame: pd.DataFrame) -> str:
        """Aligned table for terminals; NaN prints as '-'."""
        if frame.empty:
            return "(no rows)\n"
        return frame.to_string(index=False, na_rep="-", float_format=lambda v: f"{v:.6g}") + "\n"

    def export_to_json(self, frame: pd.DataFrame, metadata: Optional[Dict[str, Any]] = None) -> str:
        records = frame.replace({np.nan: None}).to_dict(orient="records")
        export_data = {
            "metadata": {
                "export_timestamp": datetime.now().isoformat(),
                "rows": len(records),
                **(metadata or {}),
            },
            "rows": records,
        }
        return json.dumps(export_data, indent=2, default=str)

    def export(self, frame: pd.DataFrame, fmt: ExportFormat = ExportFormat.CSV,
               metadata: Optional[Dict[str, Any]] = None) -> str:
        fmt = ExportFormat(fmt)
        if fmt == ExportFormat.CSV:
            return self.export_to_csv(frame)
        if fmt == ExportFormat.TXT:
            return self.export_to_text(frame)
        return self.export_to_json(frame, metadata)

    def write(self, text: str, path: Optional[Path]) -> Optional[Path]:
        """Write to ``path``; with no path the caller prints the text."""
        if path is None:
            return None
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
        logger.info(f"Wrote {len(text)} characters to {path}")
        return path
