import io
import json
import math

import numpy as np
import pandas as pd
import pytest

from modules.conic_solver import SolveStatus
from modules.relax import ConeKind
from modules.report_exporter import (
    BOUND_COLUMNS,
    SEQUENTIAL_COLUMNS,
    ReportExporter,
    bound_row,
    check_gap_columns,
    sequential_row,
)
from modules.schemas import ExportFormat, ReferenceEntry, case_key, load_reference_values, lookup_reference
from modules.sequential import BoundResult, RoundRecord, RunReport


def bound(kind, value, ok=True):
    return BoundResult(case="case9", kind=kind, bound=value,
                       status=SolveStatus.OPTIMAL if ok else SolveStatus.NUMERICAL_FAILURE,
                       seconds=1.23456, iterations=12, size={"variables": 10})


# reference values

def test_bundled_reference_values_load():
    table = load_reference_values()
    case9 = lookup_reference(table, "case9.m")
    assert case9.best_known == pytest.approx(5296.69)
    assert case9.defaults_for(ConeKind.SOCP).mu == pytest.approx(100.0)
    case118 = lookup_reference(table, "CASE118")
    assert case118.defaults_for("parabolic").expected.k_p == 20
    assert lookup_reference(table, "toy2bus") is None


def test_case_key_normalizes_names():
    assert case_key("/data/Case9.json") == "case9"
    assert case_key("nesta_case5_pjm.m") == "nesta_case5_pjm"


def test_reference_entry_validation():
    with pytest.raises(ValueError):
        ReferenceEntry(best_known=1.0, source="")
    with pytest.raises(ValueError):
        ReferenceEntry(lower_bounds={"lp": 1.0}, source="made up")
    with pytest.raises(ValueError):
        ReferenceEntry(best_known=-5.0, source="made up")
    entry = ReferenceEntry(source="made up")
    assert entry.defaults_for(ConeKind.SDP) is None


def test_invalid_reference_file(tmp_path):
    broken = tmp_path / "broken.json"
    broken.write_text("{not json")
    with pytest.raises(ValueError, match="not valid JSON"):
        load_reference_values(broken)
    missing_source = tmp_path / "missing_source.json"
    missing_source.write_text(json.dumps({"_note": "x", "case9": {"best_known": 1.0}}))
    with pytest.raises(ValueError, match="case9"):
        load_reference_values(missing_source)


# rows

def test_bound_row_leaves_unsolved_cones_empty():
    row = bound_row("case9", {ConeKind.SDP: bound(ConeKind.SDP, 5296.7), ConeKind.SOCP: bound(ConeKind.SOCP, 5296.6)})
    assert list(row) == BOUND_COLUMNS
    assert row["sdp"] == 5296.7 and row["sdp_s"] == 1.235
    assert math.isnan(row["parabolic"]) and math.isnan(row["parabolic_s"])


def test_sequential_row_carries_costs_next_to_gaps():
    rounds = [RoundRecord(k=1, cost=105.0, penalty=0.0, rank_gap=0.0, max_violation=0.0, feasible=True,
                          exact=True, status=SolveStatus.OPTIMAL, seconds=0.1, mu=10.0)]
    report = RunReport(case="s", kind=ConeKind.SOCP, mu=10.0, alpha=1.0, eta=0.0, best_known=100.0,
                       sdp_bound=99.0, rounds=rounds)
    row = sequential_row(report)
    assert set(SEQUENTIAL_COLUMNS) <= set(row)
    assert row["c_f"] == 105.0 and row["c_b"] == 100.0 and row["rounds"] == 1
    assert check_gap_columns(pd.DataFrame([row])) == []


def test_gap_check_flags_disagreeing_rows():
    frame = pd.DataFrame([
        {"c_f": 105.0, "c_b": 100.0, "GFB%": 100 * 5 / 105},
        {"c_f": 105.0, "c_b": 100.0, "GFB%": 5.0},
        {"c_f": np.nan, "c_b": 100.0, "GFB%": 1.0},
        {"c_f": np.nan, "c_b": 100.0, "GFB%": np.nan},
    ])
    problems = check_gap_columns(frame)
    assert len(problems) == 2
    assert problems[0].startswith("row 1:")
    assert problems[1].startswith("row 2:")


# exporter

@pytest.fixture
def frame():
    return ReportExporter().to_frame([{"case": "a", "sdp": 1.5}, {"case": "b", "socp": np.nan}], BOUND_COLUMNS)


def test_to_frame_orders_known_columns_first():
    out = ReportExporter().to_frame([{"extra": 1, "case": "a"}], ["case", "sdp"])
    assert list(out.columns) == ["case", "sdp", "extra"]


def test_csv_export(frame):
    text = ReportExporter().export(frame, ExportFormat.CSV)
    back = pd.read_csv(io.StringIO(text))
    assert list(back.columns) == BOUND_COLUMNS
    assert back["sdp"].iloc[0] == 1.5


def test_text_export_marks_missing_values(frame):
    text = ReportExporter().export(frame, "txt")
    assert "-" in text.splitlines()[1]
    assert ReportExporter().export_to_text(pd.DataFrame()) == "(no rows)\n"


def test_json_export_has_metadata_and_nulls(frame):
    payload = json.loads(ReportExporter().export(frame, ExportFormat.JSON, metadata={"case": "a"}))
    assert payload["metadata"]["rows"] == 2
    assert payload["metadata"]["case"] == "a"
    assert payload["rows"][1]["socp"] is None


def test_write_creates_parent_directories(tmp_path):
    exporter = ReportExporter()
    target = tmp_path / "nested" / "out.csv"
    assert exporter.write("a,b\n", target) == target
    assert target.read_text() == "a,b\n"
    assert exporter.write("ignored", None) is None
