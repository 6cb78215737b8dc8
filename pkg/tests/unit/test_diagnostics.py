"""Tests for enhancement diagnostics collection and reporting."""

import csv

import numpy as np

from isclp.diagnostics import CSV_COLUMNS, EnhancementDiagnostics


def record(diagnostics, frames, gamma=0.5, skipped=0, retf_change=0.0):
    for _ in range(frames):
        diagnostics.record_frame(
            np.full(4, gamma), np.ones(4), np.full(4, 0.2), retf_change, skipped, 0, 1.0
        )


def test_disabled_is_a_no_op():
    diagnostics = EnhancementDiagnostics(enabled=False)
    record(diagnostics, 10)
    assert diagnostics.total_frames == 0
    assert diagnostics.final_report() == ""
    assert not diagnostics.should_print_summary()


def test_anomaly_detection():
    diagnostics = EnhancementDiagnostics(enabled=True)
    diagnostics.start()
    record(diagnostics, 5)
    record(diagnostics, 2, gamma=1e-5)
    record(diagnostics, 1, skipped=3)
    record(diagnostics, 1, retf_change=0.9)
    assert diagnostics.total_frames == 9
    assert diagnostics.gain_collapse_frames == [5, 6]
    assert diagnostics.skipped_update_frames == [7]
    assert diagnostics.retf_jump_frames == [8]


def test_periodic_summary_interval():
    diagnostics = EnhancementDiagnostics(enabled=True, summary_interval=5)
    diagnostics.start()
    record(diagnostics, 4)
    assert not diagnostics.should_print_summary()
    record(diagnostics, 1, skipped=2)
    assert diagnostics.should_print_summary()
    summary = diagnostics.periodic_summary()
    assert "Frames: 5" in summary
    assert "2 skipped updates" in summary
    assert not diagnostics.should_print_summary()


def test_write_csv(tmp_path):
    diagnostics = EnhancementDiagnostics(enabled=True, frame_rate=62.5)
    record(diagnostics, 3)
    path = diagnostics.write_csv(tmp_path / "out" / "diagnostics.csv")
    with path.open(newline="", encoding="utf-8") as f:
        rows = list(csv.reader(f))
    assert tuple(rows[0]) == CSV_COLUMNS
    assert len(rows) == 4
    assert rows[2][:3] == ["1", "0.016000", "0.5"]


def test_final_report_recommendations():
    diagnostics = EnhancementDiagnostics(enabled=True)
    diagnostics.start()
    record(diagnostics, 10, gamma=1e-6)
    diagnostics.floored_covariances = 2
    report = diagnostics.final_report()
    assert "ENHANCEMENT DIAGNOSTICS REPORT" in report
    assert "--beta-db" in report
    assert "2 error covariances repaired" in report


def test_final_report_healthy():
    diagnostics = EnhancementDiagnostics(enabled=True)
    diagnostics.start()
    record(diagnostics, 10)
    assert "No issues detected" in diagnostics.final_report()


def test_floored_covariance_advice_raises_alpha():
    diagnostics = EnhancementDiagnostics(enabled=True)
    diagnostics.start()
    record(diagnostics, 10)
    diagnostics.floored_covariances = 1
    report = diagnostics.final_report()
    assert "Raise --alpha-db toward 0" in report
    assert "Lower --alpha-db" not in report


def test_frame_statistics_use_interpolated_percentiles():
    diagnostics = EnhancementDiagnostics(enabled=True)
    stats = diagnostics._get_stats([float(v) for v in range(1, 101)])
    assert stats["min"] == 1.0
    assert stats["max"] == 100.0
    assert stats["p50"] == 50.5
    assert abs(stats["p95"] - 95.05) < 1e-9
    assert diagnostics._get_stats([]) == {"min": 0.0, "max": 0.0, "p50": 0.0, "p95": 0.0}
