"""
Core enhancement orchestrator for ISCLP.

This module provides the processing pipeline:
1. Read the multichannel input (WAV file or synthetic scene)
2. STFT analysis
3. Per frame: PSD/RETF estimation, then the ISCLP Kalman filter over all bins
4. WOLA synthesis of the enhanced signal (e+ or e)
5. Diagnostics CSV and report
"""

import dataclasses
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from isclp.audio_io import read_wav, write_wav
from isclp.config import ArrayConfig, KalmanConfig, RunConfig
from isclp.diagnostics import EnhancementDiagnostics
from isclp.errors import ConfigurationError, InputError
from isclp.estimation import (
    BlindEstimator,
    Estimator,
    EstimatorConfig,
    OracleEstimator,
    initial_retfs,
    oracle_estimates,
)
from isclp.kalman import IsclpFilter
from isclp.scenario import SceneTruth
from isclp.spatial import diffuse_coherence
from isclp.stft import StftConfig, TimeFrequencyGrid, analyze, synthesize

logger = logging.getLogger(__name__)


@dataclass
class EnhancementStats:
    """Statistics from an enhancement run"""

    duration_seconds: float
    frames: int = 0
    wall_seconds: float = 0.0
    skipped_updates: int = 0
    floored_covariances: int = 0
    output_path: Optional[Path] = None
    diagnostics_path: Optional[Path] = None


@dataclass
class EnhancementResult:
    """
    Enhanced signals and per-bin traces of one run.

    Attributes:
        enhanced: Selected output signal [samples]
        prior: Synthesized prior error e [samples]
        posterior: Synthesized post-processed e+ [samples]
        gamma: Gains [frames x K]
        stats: Run statistics
    """

    enhanced: np.ndarray
    prior: np.ndarray
    posterior: np.ndarray
    gamma: np.ndarray
    stats: EnhancementStats


class Enhancer:
    """
    Enhancement orchestrator.

    Manages the complete pipeline:
    - Input -> STFT -> estimator + ISCLP Kalman filter per frame -> synthesis

    The same code path serves recorded input (blind estimator) and synthetic
    scenes (oracle or blind estimator).
    """

    def __init__(
        self,
        stft: StftConfig,
        kalman: KalmanConfig,
        estimator: EstimatorConfig,
        output: str = "posterior",
        diagnostics: bool = False,
        summary_interval: int = 500,
    ):
        """
        Initialize enhancer.

        Args:
            stft: STFT framing
            kalman: Kalman filter tuning
            estimator: PSD/RETF estimator settings
            output: "posterior" (e+) or "prior" (e)
            diagnostics: Enable per-frame diagnostics collection
            summary_interval: Frames between diagnostic summaries
        """
        if output not in ("posterior", "prior"):
            raise ConfigurationError(f"output must be 'posterior' or 'prior', got {output!r}")
        self.stft = stft
        self.kalman = kalman
        self.estimator_config = estimator
        self.output = output
        self.debug = diagnostics
        self.summary_interval = summary_interval
        self.diagnostics: Optional[EnhancementDiagnostics] = None

    @classmethod
    def from_config(cls, config: RunConfig) -> "Enhancer":
        return cls(
            stft=config.stft,
            kalman=config.kalman,
            estimator=config.estimator,
            output=config.output,
            diagnostics=config.diagnostics,
            summary_interval=config.summary_interval,
        )

    def blind_estimator(
        self,
        estimator: EstimatorConfig,
        positions: np.ndarray,
        doas: Optional[list[float]] = None,
        true_retfs: Optional[np.ndarray] = None,
    ) -> BlindEstimator:
        """Blind estimator for an array geometry, initialized per estimator.initial_retf."""
        num_mics = positions.shape[0]
        gamma = diffuse_coherence(positions, self.stft.sample_rate, self.stft.window_length).gamma
        h_init = initial_retfs(
            estimator.initial_retf,
            self.stft,
            num_mics,
            estimator.num_sources,
            true_retfs=true_retfs,
            positions=positions,
            doas_deg=doas,
        )
        return BlindEstimator(estimator, self.stft, gamma, h_init)

    def scene_estimator(self, truth: SceneTruth, h_t_stream: Optional[np.ndarray] = None) -> Estimator:
        """
        Estimator for a synthetic scene; source count and targets come from the scene.

        Args:
            truth: The scene
            h_t_stream: Per-frame true target RETFs [frames x K x M x N_T] for
                        scenes whose sources move (oracle only)
        """
        scene = truth.config
        estimator = dataclasses.replace(
            self.estimator_config, num_sources=len(scene.sources), target=scene.target
        )
        if estimator.kind == "oracle":
            reference = analyze(truth.reference, self.stft).data[..., 0]
            phi_st, h_t = oracle_estimates(
                reference, truth.true_retfs, estimator.target, estimator.oracle_smoothing
            )
            return OracleEstimator(phi_st, h_t if h_t_stream is None else h_t_stream)
        return self.blind_estimator(estimator, truth.positions, scene.doas, truth.true_retfs)

    def process(self, mix: np.ndarray, estimator: Estimator, num_targets: int = 1) -> EnhancementResult:
        """
        Enhance a multichannel signal.

        Args:
            mix: Microphone signals [samples x M]
            estimator: Source of per-frame (phi_sT, H_T)
            num_targets: N_T

        Returns:
            EnhancementResult with signals of the input length
        """
        mix = np.asarray(mix, dtype=np.float64)
        if mix.ndim != 2 or mix.shape[1] < 2:
            raise InputError(f"Need a multichannel signal [samples x M >= 2], got shape {mix.shape}")
        grid = analyze(mix, self.stft)
        num_frames, num_bins, num_mics = grid.data.shape
        model = self.kalman.model(self.stft, num_mics, num_targets)
        kalman = IsclpFilter(model, num_bins)
        logger.info(
            f"Processing {num_frames} frames x {num_bins} bins, M={num_mics}, "
            f"L={model.filter_length}, D={model.state_dim}"
        )

        if self.debug:
            self.diagnostics = EnhancementDiagnostics(
                enabled=True,
                summary_interval=self.summary_interval,
                frame_rate=self.stft.frame_rate,
            )
            self.diagnostics.start()

        e = np.zeros((num_frames, num_bins), dtype=np.complex128)
        e_plus = np.zeros_like(e)
        gamma = np.zeros((num_frames, num_bins))
        start = time.perf_counter()
        for l in range(num_frames):
            frame_start = time.perf_counter()
            phi_st, h_t = estimator.update(grid.data[l])
            out = kalman.step(grid.data[l], h_t, phi_st)
            e[l], e_plus[l], gamma[l] = out.e, out.e_plus, out.gamma

            if self.diagnostics:
                self.diagnostics.record_frame(
                    out.gamma,
                    out.phi_e,
                    phi_st,
                    estimator.last_retf_change,
                    out.skipped,
                    out.rebuilt_bins,
                    (time.perf_counter() - frame_start) * 1000,
                )
                if self.diagnostics.should_print_summary():
                    logger.info(self.diagnostics.periodic_summary())
        wall = time.perf_counter() - start

        if self.diagnostics:
            self.diagnostics.floored_covariances = kalman.state.floored

        num_samples = mix.shape[0]
        prior = synthesize(TimeFrequencyGrid(e[..., np.newaxis], self.stft))[:num_samples, 0]
        posterior = synthesize(TimeFrequencyGrid(e_plus[..., np.newaxis], self.stft))[:num_samples, 0]
        stats = EnhancementStats(
            duration_seconds=num_samples / self.stft.sample_rate,
            frames=num_frames,
            wall_seconds=wall,
            skipped_updates=kalman.state.skipped_updates,
            floored_covariances=kalman.state.floored,
        )
        logger.info(
            f"Processed {stats.duration_seconds:.1f}s of audio in {wall:.1f}s "
            f"({kalman.spatial.total_rebuilds:,} MF/BM rebuilds, "
            f"{stats.skipped_updates} skipped updates)"
        )
        return EnhancementResult(
            enhanced=posterior if self.output == "posterior" else prior,
            prior=prior,
            posterior=posterior,
            gamma=gamma,
            stats=stats,
        )

    def process_scene(self, truth: SceneTruth, h_t_stream: Optional[np.ndarray] = None) -> EnhancementResult:
        """Enhance a synthetic scene's mixture."""
        estimator = self.scene_estimator(truth, h_t_stream)
        return self.process(truth.mix, estimator, num_targets=len(truth.config.target))

    def run(self, input_path: Path, out_dir: Path, array: ArrayConfig) -> EnhancementStats:
        """
        Run a complete enhancement of a WAV file.

        Writes out_dir/enhanced.wav and, with diagnostics enabled,
        out_dir/diagnostics.csv.

        Args:
            input_path: Multichannel WAV
            out_dir: Output directory
            array: Array geometry and source DoAs

        Returns:
            EnhancementStats with run information

        Raises:
            InputError: Unreadable input or sample-rate mismatch
            ConfigurationError: Oracle estimator or inconsistent geometry
        """
        logger.info("=" * 60)
        logger.info("ISCLP Enhancement")
        logger.info("=" * 60)

        if self.estimator_config.kind == "oracle":
            raise ConfigurationError(
                "The oracle estimator needs ground truth; use --estimator blind for recorded input"
            )

        mix, sample_rate = read_wav(input_path)
        if sample_rate != self.stft.sample_rate:
            raise InputError(
                f"{input_path} has sample rate {sample_rate} Hz, expected {self.stft.sample_rate} Hz"
            )
        num_mics = mix.shape[1]
        logger.info(f"Input: {input_path} ({mix.shape[0] / sample_rate:.1f}s, {num_mics} ch)")

        positions = array.mic_positions(num_mics)
        if (
            self.estimator_config.initial_retf == "doa"
            and len(array.source_doas) != self.estimator_config.num_sources
        ):
            raise ConfigurationError(
                f"[array] source_doas lists {len(array.source_doas)} DoA(s), "
                f"estimator expects {self.estimator_config.num_sources} source(s)"
            )
        estimator = self.blind_estimator(self.estimator_config, positions, array.source_doas)
        result = self.process(mix, estimator, num_targets=self.estimator_config.num_targets)

        stats = result.stats
        stats.output_path = Path(out_dir) / "enhanced.wav"
        write_wav(stats.output_path, result.enhanced, sample_rate)
        logger.info(f"Wrote {stats.output_path} ({self.output} output)")

        if self.diagnostics:
            stats.diagnostics_path = self.diagnostics.write_csv(Path(out_dir) / "diagnostics.csv")
            logger.info(f"Wrote {stats.diagnostics_path}")

        logger.info("=" * 60)
        logger.info(f"Enhancement complete: {stats.duration_seconds:.1f} seconds of audio")
        logger.info("=" * 60)

        if self.diagnostics:
            logger.info(self.diagnostics.final_report())

        return stats
