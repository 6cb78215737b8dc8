"""
Enhancement diagnostics for ISCLP.

Collects per-frame filter metrics for debugging and tuning, prints periodic
summaries, writes the per-frame CSV and produces a final report with
recommendations.
"""

import csv
import logging
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np

logger = logging.getLogger(__name__)

CSV_COLUMNS = (
    "frame",
    "time_s",
    "gamma_mean",
    "phi_e_mean",
    "phi_st_mean",
    "retf_change",
    "skipped_updates",
    "rebuilt_bins",
)


@dataclass
class EnhancementDiagnostics:
    """
    Collects and analyzes per-frame enhancement metrics.

    Usage:
        diagnostics = EnhancementDiagnostics(enabled=True, frame_rate=62.5)
        diagnostics.record_frame(output, phi_st, retf_change, elapsed_ms)
        ...
        diagnostics.write_csv(path)
        print(diagnostics.final_report())
    """

    enabled: bool = False
    summary_interval: int = 500  # Frames between periodic summaries
    frame_rate: float = 62.5  # Frames per second of audio

    # Per-frame metrics
    gamma_means: list[float] = field(default_factory=list)
    phi_e_means: list[float] = field(default_factory=list)
    phi_st_means: list[float] = field(default_factory=list)
    retf_changes: list[float] = field(default_factory=list)
    skipped_updates: list[int] = field(default_factory=list)
    rebuilt_bins: list[int] = field(default_factory=list)
    frame_latencies: list[float] = field(default_factory=list)  # ms of compute per frame

    # Anomaly tracking (frame indices)
    gain_collapse_frames: list[int] = field(default_factory=list)
    skipped_update_frames: list[int] = field(default_factory=list)
    retf_jump_frames: list[int] = field(default_factory=list)

    # Thresholds
    gain_collapse_threshold: float = 1e-3  # mean gamma below this
    retf_jump_threshold: float = 0.5  # relative RETF change in one frame

    # Counters
    total_frames: int = 0
    floored_covariances: int = 0

    # Timing
    start_time: float = 0.0
    last_summary_frame: int = 0

    def start(self):
        """Start diagnostics timing."""
        self.start_time = time.time()
        self.last_summary_frame = 0

    def record_frame(
        self,
        gamma: np.ndarray,
        phi_e: np.ndarray,
        phi_st: np.ndarray,
        retf_change: float,
        skipped: int,
        rebuilt: int,
        latency_ms: float = 0.0,
    ):
        """
        Record one processed frame.

        Args:
            gamma: Post-processing gains of all bins
            phi_e: Prior error PSDs of all bins
            phi_st: Target PSD estimates of all bins
            retf_change: Relative RETF change of the frame
            skipped: Measurement updates skipped in the frame
            rebuilt: Bins whose MF/BM were rebuilt
            latency_ms: Compute time of the frame
        """
        if not self.enabled:
            return

        frame = self.total_frames
        gamma_mean = float(np.mean(gamma))
        self.gamma_means.append(gamma_mean)
        self.phi_e_means.append(float(np.mean(phi_e)))
        self.phi_st_means.append(float(np.mean(phi_st)))
        self.retf_changes.append(float(retf_change))
        self.skipped_updates.append(int(skipped))
        self.rebuilt_bins.append(int(rebuilt))
        self.frame_latencies.append(latency_ms)
        self.total_frames += 1

        # Detect anomalies
        if gamma_mean < self.gain_collapse_threshold:
            self.gain_collapse_frames.append(frame)
        if skipped > 0:
            self.skipped_update_frames.append(frame)
        if frame > 0 and retf_change > self.retf_jump_threshold:
            self.retf_jump_frames.append(frame)

    def should_print_summary(self) -> bool:
        """Check if it's time to print a periodic summary."""
        if not self.enabled:
            return False
        return (self.total_frames - self.last_summary_frame) >= self.summary_interval

    def periodic_summary(self) -> str:
        """
        Generate periodic summary of recent frames.

        Returns:
            Formatted summary string
        """
        if not self.enabled or not self.gamma_means:
            return ""

        since = self.last_summary_frame
        self.last_summary_frame = self.total_frames
        recent = slice(since, self.total_frames)

        audio_s = self.total_frames / self.frame_rate
        recent_collapse = sum(1 for f in self.gain_collapse_frames if f >= since)
        recent_skipped = sum(self.skipped_updates[recent])
        recent_jumps = sum(1 for f in self.retf_jump_frames if f >= since)
        total_anomalies = recent_collapse + recent_skipped + recent_jumps

        lines = [
            f"=== Diagnostics ({audio_s:.1f}s of audio) ===",
            f"Frames: {self.total_frames:,} | Anomalies: {total_anomalies}",
            f"Gain: avg={statistics.mean(self.gamma_means[recent]):.3f} "
            f"min={min(self.gamma_means[recent]):.3f}",
            f"Latency (ms/frame): avg={statistics.mean(self.frame_latencies[recent]):.2f} "
            f"p99={np.percentile(self.frame_latencies[recent], 99):.2f}",
        ]

        if total_anomalies > 0:
            details = []
            if recent_collapse > 0:
                details.append(f"{recent_collapse} gain collapses")
            if recent_skipped > 0:
                details.append(f"{recent_skipped} skipped updates")
            if recent_jumps > 0:
                details.append(f"{recent_jumps} RETF jumps")
            lines.append(f"Issues: {', '.join(details)}")

        return "\n".join(lines)

    def write_csv(self, path: Union[str, Path]) -> Path:
        """Write one row per frame with the CSV_COLUMNS header."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(CSV_COLUMNS)
            for i in range(self.total_frames):
                writer.writerow(
                    [
                        i,
                        f"{i / self.frame_rate:.6f}",
                        f"{self.gamma_means[i]:.9g}",
                        f"{self.phi_e_means[i]:.9g}",
                        f"{self.phi_st_means[i]:.9g}",
                        f"{self.retf_changes[i]:.9g}",
                        self.skipped_updates[i],
                        self.rebuilt_bins[i],
                    ]
                )
        logger.debug(f"Wrote {self.total_frames} diagnostic rows to {path}")
        return path

    def final_report(self) -> str:
        """
        Generate comprehensive final report.

        Returns:
            Formatted report string with all metrics and recommendations
        """
        if not self.enabled:
            return ""
        if self.total_frames == 0:
            return "No data collected"

        elapsed = time.time() - self.start_time
        audio_s = self.total_frames / self.frame_rate
        lines = [
            "",
            "=" * 60,
            "ENHANCEMENT DIAGNOSTICS REPORT",
            "=" * 60,
            "",
            "Overview:",
            f"  Frames: {self.total_frames:,} ({audio_s:.1f}s of audio)",
            f"  Wall clock: {elapsed:.1f}s (real-time factor {elapsed / audio_s:.2f})",
            "",
        ]

        lines.append("Frame Statistics:")
        lines.append("               min       p50       p95       max")
        for label, data in (
            ("gamma", self.gamma_means),
            ("ms/frame", self.frame_latencies),
            ("RETF chg", self.retf_changes),
        ):
            s = self._get_stats(data)
            lines.append(
                f"  {label:9} {s['min']:9.4g} {s['p50']:9.4g} {s['p95']:9.4g} {s['max']:9.4g}"
            )
        lines.append("")

        lines.append("Anomalies:")
        lines.append(f"  Skipped measurement updates: {sum(self.skipped_updates)}")
        lines.append(f"  Floored error covariances: {self.floored_covariances}")
        lines.append(
            f"  Gain collapses (<{self.gain_collapse_threshold:g}): {len(self.gain_collapse_frames)}"
        )
        lines.append(
            f"  RETF jumps (>{self.retf_jump_threshold:g}): {len(self.retf_jump_frames)}"
        )
        lines.append(f"  MF/BM rebuilds: {sum(self.rebuilt_bins):,}")

        if self.retf_jump_frames:
            times = [f"{f / self.frame_rate:.1f}s" for f in self.retf_jump_frames[:5]]
            suffix = (
                f" (+{len(self.retf_jump_frames) - 5} more)"
                if len(self.retf_jump_frames) > 5
                else ""
            )
            lines.append(f"    RETF jump times: {', '.join(times)}{suffix}")

        lines.append("")

        # Recommendations
        lines.append("Recommendations:")
        recommendations = self._generate_recommendations()
        if recommendations:
            for rec in recommendations:
                lines.append(f"  * {rec}")
        else:
            lines.append("  * No issues detected - filter looks healthy!")

        lines.extend(["", "=" * 60, ""])

        return "\n".join(lines)

    def _generate_recommendations(self) -> list[str]:
        """Generate tuning recommendations based on collected metrics."""
        recs = []

        collapse_pct = len(self.gain_collapse_frames) / self.total_frames * 100
        if collapse_pct > 10:
            recs.append(f"{collapse_pct:.1f}% of frames with collapsed gain - strong suppression")
            recs.append("Consider: Raise --beta-db toward 0 to slow the gain decay")

        skipped_pct = len(self.skipped_update_frames) / self.total_frames * 100
        if skipped_pct > 5:
            recs.append(f"{skipped_pct:.1f}% of frames skipped updates - input near silent")
            recs.append("Consider: Check input levels")

        if self.floored_covariances > 0:
            recs.append(f"{self.floored_covariances} error covariances repaired by flooring")
            recs.append("Consider: Raise --alpha-db toward 0 (faster forgetting) for better conditioning")

        if len(self.retf_jump_frames) > self.total_frames * 0.01:
            recs.append(f"{len(self.retf_jump_frames)} large RETF jumps - unstable RETF estimates")
            recs.append("Consider: Use the oracle estimator or a DoA-based initial RETF")

        return recs

    def _get_stats(self, data: list) -> dict:
        """min, median, 95th percentile and max of a data series."""
        if not data:
            return {"min": 0.0, "max": 0.0, "p50": 0.0, "p95": 0.0}
        p50, p95 = np.percentile(data, [50, 95])
        return {
            "min": float(np.min(data)),
            "max": float(np.max(data)),
            "p50": float(p50),
            "p95": float(p95),
        }
