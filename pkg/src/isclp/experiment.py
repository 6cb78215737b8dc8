"""
Experiment runners: metric sweeps over synthetic scenes, the convergence
experiment with a source jump, and the algebraic selftest.
"""

import csv
import dataclasses
import logging
import statistics
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Union

import numpy as np

from isclp.config import RunConfig
from isclp.errors import InputError
from isclp.estimation import decompose, desmooth_eigenvalues, fit_square_root
from isclp.kalman import (
    KalmanState,
    ProcessModel,
    measurement_update,
    posterior_error,
    process_bin,
    time_update,
)
from isclp.linalg import gevd, hermitian
from isclp.metrics import cepstral_distance, fwseg_sir
from isclp.pipeline import Enhancer
from isclp.scenario import SceneConfig, SceneTruth, SourceSpec, build_scene
from isclp.spatial import build_bm, build_mf, diffuse_coherence, linear_array
from isclp.stft import StftConfig, TimeFrequencyGrid, analyze, synthesize

logger = logging.getLogger(__name__)

METRIC_COLUMNS = (
    "scene",
    "seed",
    "snr_db",
    "filter_length",
    "estimator",
    "interferer_doa",
    "sir_unprocessed",
    "sir_enhanced",
    "sir_improvement",
    "cd_unprocessed",
    "cd_enhanced",
    "cd_improvement",
)

CONVERGENCE_COLUMNS = (
    "window_start_s",
    "window_end_s",
    "sir_unprocessed",
    "sir_enhanced",
    "cd_unprocessed",
    "cd_enhanced",
)

JUMP_DOA = 15.0
CONVERGENCE_WINDOW = 2.0
CONVERGENCE_HOP = 1.0


def _optional(value: Optional[float]) -> str:
    return "" if value is None else f"{value:g}"


@dataclass
class MetricRow:
    """One line of metrics.csv."""

    scene: str
    seed: Union[int, str]
    snr_db: Optional[float]
    filter_length: int
    estimator: str
    interferer_doa: Optional[float]
    sir_unprocessed: float
    sir_enhanced: float
    cd_unprocessed: float
    cd_enhanced: float

    @property
    def sir_improvement(self) -> float:
        return self.sir_enhanced - self.sir_unprocessed

    @property
    def cd_improvement(self) -> float:
        return self.cd_enhanced - self.cd_unprocessed

    def as_csv(self) -> list[str]:
        return [
            self.scene,
            str(self.seed),
            _optional(self.snr_db),
            str(self.filter_length),
            self.estimator,
            _optional(self.interferer_doa),
            *(
                f"{v:.4f}"
                for v in (
                    self.sir_unprocessed,
                    self.sir_enhanced,
                    self.sir_improvement,
                    self.cd_unprocessed,
                    self.cd_enhanced,
                    self.cd_improvement,
                )
            ),
        ]


def evaluate(
    reference: np.ndarray,
    unprocessed: np.ndarray,
    enhanced: np.ndarray,
    sample_rate: int,
    window: tuple[float, float],
) -> tuple[float, float, float, float]:
    """
    fwseg-SIR and CD of the unprocessed and enhanced signals within a time window.

    Returns:
        (sir_unprocessed, sir_enhanced, cd_unprocessed, cd_enhanced)

    Raises:
        InputError: If the window lies outside the signals
    """
    start = int(round(window[0] * sample_rate))
    end = min(int(round(window[1] * sample_rate)), reference.size)
    if end - start <= 0:
        raise InputError(
            f"Evaluation window {window} s lies outside the {reference.size / sample_rate:.1f} s signal"
        )
    ref, unp, enh = reference[start:end], unprocessed[start:end], enhanced[start:end]
    return (
        fwseg_sir(ref, unp, sample_rate),
        fwseg_sir(ref, enh, sample_rate),
        cepstral_distance(ref, unp),
        cepstral_distance(ref, enh),
    )


def scene_variant(base: SceneConfig, seed: int, snr_db: Optional[float], interferer_doa: Optional[float]) -> SceneConfig:
    """The base scene's target sources plus at most one equal-power interferer."""
    sources = [s for s in base.sources if s.target]
    if interferer_doa is not None:
        sources.append(SourceSpec(doa_deg=interferer_doa, target=False))
    return dataclasses.replace(base, seed=seed, snr_db=snr_db, sources=sources)


def _write_csv(path: Path, columns: tuple[str, ...], rows: list[list[str]]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(columns)
        writer.writerows(rows)
    return path


def median_rows(rows: list[MetricRow]) -> list[MetricRow]:
    """One "median" row per (snr, L, estimator, interferer) condition, in first-seen order."""
    groups: dict[tuple, list[MetricRow]] = {}
    for row in rows:
        groups.setdefault((row.snr_db, row.filter_length, row.estimator, row.interferer_doa), []).append(row)
    medians = []
    for (snr_db, filter_length, estimator, doa), members in groups.items():
        medians.append(
            MetricRow(
                scene="median",
                seed="",
                snr_db=snr_db,
                filter_length=filter_length,
                estimator=estimator,
                interferer_doa=doa,
                sir_unprocessed=statistics.median(r.sir_unprocessed for r in members),
                sir_enhanced=statistics.median(r.sir_enhanced for r in members),
                cd_unprocessed=statistics.median(r.cd_unprocessed for r in members),
                cd_enhanced=statistics.median(r.cd_enhanced for r in members),
            )
        )
    return medians


def run_experiment(config: RunConfig, write: bool = True) -> list[MetricRow]:
    """
    Sweep SNR, interferer DoA, seed, filter length and estimator over synthetic scenes.

    Each scene is built once and processed with every (L, estimator) pair.
    Writes out/metrics.csv with per-scene rows followed by the median rows.

    Returns:
        Per-scene and median rows
    """
    sweep = config.experiment
    fs = config.stft.sample_rate
    interferers = sweep.interferer_doas or [None]
    logger.info("=" * 60)
    logger.info("ISCLP Experiment")
    logger.info("=" * 60)
    logger.info(
        f"SNR {sweep.snr_db} dB | L {sweep.filter_lengths} | estimators {sweep.estimators} | "
        f"interferers {sweep.interferer_doas or 'none'} | {sweep.seeds} seed(s)"
    )

    rows = []
    for snr_db in sweep.snr_db:
        for doa in interferers:
            for i in range(sweep.seeds):
                seed = config.seed + i
                scene = scene_variant(config.scene, seed, snr_db, doa)
                truth = build_scene(scene)
                name = f"s{seed}_snr{snr_db:g}" + ("" if doa is None else f"_doa{doa:g}")
                for filter_length in sweep.filter_lengths:
                    for kind in sweep.estimators:
                        enhancer = Enhancer(
                            stft=config.stft,
                            kalman=dataclasses.replace(config.kalman, filter_length=filter_length),
                            estimator=dataclasses.replace(config.estimator, kind=kind),
                            output=config.output,
                        )
                        result = enhancer.process_scene(truth)
                        metrics = evaluate(truth.reference, truth.mix[:, 0], result.enhanced, fs, sweep.window)
                        row = MetricRow(name, seed, snr_db, filter_length, kind, doa, *metrics)
                        logger.info(
                            f"{name} L={filter_length} {kind}: "
                            f"fwseg-SIR {row.sir_improvement:+.2f} dB, CD {row.cd_improvement:+.2f} dB"
                        )
                        rows.append(row)

    all_rows = rows + median_rows(rows)
    if write:
        path = _write_csv(Path(config.out) / "metrics.csv", METRIC_COLUMNS, [r.as_csv() for r in all_rows])
        logger.info(f"Wrote {path}")
    return all_rows


def concatenate_scenes(first: SceneTruth, second: SceneTruth) -> SceneTruth:
    """Join two scenes in time; ground-truth RETFs are those of the first scene."""
    return SceneTruth(
        mix=np.concatenate([first.mix, second.mix]),
        images=np.concatenate([first.images, second.images], axis=1),
        noise=np.concatenate([first.noise, second.noise]),
        reference=np.concatenate([first.reference, second.reference]),
        true_retfs=first.true_retfs,
        positions=first.positions,
        config=dataclasses.replace(first.config, duration=first.config.duration + second.config.duration),
    )


def run_convergence(config: RunConfig, write: bool = True) -> list[list[float]]:
    """
    Convergence experiment: the sources stay put for one scene duration, then
    every target jumps by JUMP_DOA degrees. Filter state runs on continuously.

    Metrics are computed in sliding CONVERGENCE_WINDOW windows. Writes
    out/convergence.csv.
    """
    fs = config.stft.sample_rate
    before = dataclasses.replace(config.scene, seed=config.seed)
    after = dataclasses.replace(
        before,
        seed=before.seed + 1,
        sources=[
            dataclasses.replace(s, doa_deg=s.doa_deg + JUMP_DOA) if s.target else s
            for s in before.sources
        ],
    )
    logger.info("=" * 60)
    logger.info(f"ISCLP Convergence: target jump of {JUMP_DOA:g} deg at {before.duration:g}s")
    logger.info("=" * 60)

    first, second = build_scene(before), build_scene(after)
    truth = concatenate_scenes(first, second)
    enhancer = Enhancer.from_config(config)

    num_frames = config.stft.frames_for(truth.mix.shape[0])
    frame_starts = np.arange(num_frames) * config.stft.hop
    target = list(before.target)
    h_stream = np.where(
        (frame_starts >= first.mix.shape[0])[:, None, None, None],
        second.true_retfs[..., target][np.newaxis],
        first.true_retfs[..., target][np.newaxis],
    )
    result = enhancer.process_scene(truth, h_t_stream=h_stream)

    rows = []
    total = truth.mix.shape[0] / fs
    start = 0.0
    while start + CONVERGENCE_WINDOW <= total + 1e-9:
        window = (start, start + CONVERGENCE_WINDOW)
        try:
            metrics = evaluate(truth.reference, truth.mix[:, 0], result.enhanced, fs, window)
        except InputError as e:
            logger.debug(f"Window {window}: {e}")
        else:
            rows.append([window[0], window[1], *metrics])
        start += CONVERGENCE_HOP

    if write:
        formatted = [[f"{v:.4f}" if i > 1 else f"{v:g}" for i, v in enumerate(r)] for r in rows]
        path = _write_csv(Path(config.out) / "convergence.csv", CONVERGENCE_COLUMNS, formatted)
        logger.info(f"Wrote {path}")
    return rows


@dataclass
class SelftestResult:
    """Outcome of one selftest check."""

    name: str
    passed: bool
    error: float
    limit: float


def _random_retf(rng: np.random.Generator, num_mics: int, num_targets: int) -> np.ndarray:
    h = rng.standard_normal((num_mics, num_targets)) + 1j * rng.standard_normal((num_mics, num_targets))
    h[0] = 1.0
    return h


def _random_psd(rng: np.random.Generator, dim: int) -> np.ndarray:
    a = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    return a @ hermitian(a) / dim + 0.1 * np.eye(dim)


def _check_stft(rng: np.random.Generator) -> float:
    config = StftConfig()
    signal = rng.standard_normal((config.sample_rate, 5))
    restored = synthesize(analyze(signal, config))[: signal.shape[0]]
    interior = slice(config.window_length, signal.shape[0] - config.window_length)
    error = np.sum((restored[interior] - signal[interior]) ** 2) / np.sum(signal[interior] ** 2)
    return float(10 * np.log10(max(error, 1e-300)))


def _check_spatial(rng: np.random.Generator) -> float:
    worst = 0.0
    draws = [_random_retf(rng, int(rng.choice([3, 5])), int(rng.choice([1, 2]))) for _ in range(1000)]
    e1 = np.zeros((3, 1), dtype=np.complex128)
    e1[0] = 1.0
    for h in draws + [e1]:
        g, b = build_mf(h), build_bm(h)
        worst = max(
            worst,
            np.max(np.abs(np.conj(g) @ h - 1.0)),
            np.max(np.abs(hermitian(b) @ h)),
        )
        if np.linalg.matrix_rank(b) != b.shape[1]:
            return float("inf")
    return float(worst)


def _check_posterior_identity(rng: np.random.Generator) -> float:
    worst = 0.0
    for _ in range(100):
        dim = int(rng.integers(2, 8))
        state = KalmanState(
            w_hat=rng.standard_normal(dim) + 1j * rng.standard_normal(dim),
            err_cov=_random_psd(rng, dim),
            gain_prev=np.ones(()),
        )
        u = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
        q = complex(rng.standard_normal(), rng.standard_normal())
        phi_st = float(rng.uniform(0.1, 2.0))
        posterior, e, phi_e = measurement_update(state, u, q, phi_st)
        e_plus = posterior_error(posterior, u, q)
        worst = max(worst, abs(e_plus - phi_st / phi_e * e) / abs(e))
    return float(worst)


def _check_decay(rng: np.random.Generator) -> float:
    model = ProcessModel(alpha=0.9, beta=0.5, psi_sc=1.0, psi_lp=0.4, filter_length=3, num_mics=2)
    state = KalmanState.initial(model.prior_diagonal())
    state.w_hat = rng.standard_normal(model.state_dim) + 1j * rng.standard_normal(model.state_dim)
    worst = 0.0
    u = np.zeros(model.state_dim)
    for _ in range(100):
        norm_before = np.linalg.norm(state.w_hat)
        state = time_update(state, model)
        state, _, _ = measurement_update(state, u, 0.0, 0.0)
        ratio = np.linalg.norm(state.w_hat) / norm_before
        worst = max(worst, abs(ratio - np.sqrt(model.alpha)) / np.sqrt(model.alpha))
    return float(worst)


def _check_gain_contract(rng: np.random.Generator) -> float:
    model = ProcessModel(alpha=0.99, beta=0.8, psi_sc=1.0, psi_lp=0.4, filter_length=3, num_mics=3)
    frames = rng.standard_normal((200, 3)) + 1j * rng.standard_normal((200, 3))
    h = _random_retf(rng, 3, 1)
    trace = process_bin(frames, h, rng.uniform(0.0, 1.0, 200), model)
    violations = np.sum(trace.gamma <= 0) + np.sum(trace.gamma > 1)
    violations += np.sum(trace.gamma[1:] < model.beta * trace.gamma[:-1] * (1 - 1e-12))
    return float(violations)


def _check_gevd_recovery(rng: np.random.Generator) -> float:
    positions = linear_array(5)
    gamma_all = diffuse_coherence(positions, 16000, 512).gamma
    worst = 0.0
    for _ in range(200):
        num_sources = int(rng.choice([1, 2]))
        gamma = gamma_all[int(rng.integers(32, 200))]
        h = _random_retf(rng, 5, num_sources)
        p = rng.uniform(0.5, 2.0, num_sources)
        phi_d = float(rng.uniform(0.1, 2.0))
        psi = h @ np.diag(p) @ hermitian(h) + phi_d * gamma

        sigma, x = gevd(psi, gamma)
        decomposition = decompose(sigma, x, gamma, num_sources)
        phi_s, _ = fit_square_root(decomposition.early_sqrt, h, iters=5)
        worst = max(
            worst,
            abs(decomposition.phi_d - phi_d) / phi_d,
            float(np.max(np.abs(phi_s - p) / p)),
        )
    return float(worst)


def _check_desmoothing(rng: np.random.Generator) -> float:
    lam = 0.9
    sequence = rng.uniform(0.1, 10.0, (500, 4))
    smoothed = np.zeros_like(sequence)
    previous = np.zeros(4)
    for t, values in enumerate(sequence):
        previous = lam * previous + (1 - lam) * values
        smoothed[t] = previous
    shifted = np.vstack([np.zeros((1, 4)), smoothed[:-1]])
    restored = desmooth_eigenvalues(smoothed, shifted, lam)
    return float(np.max(np.abs(restored - sequence)))


SELFTEST_CHECKS: tuple[tuple[str, Callable[[np.random.Generator], float], float], ...] = (
    ("stft round trip (dB)", _check_stft, -80.0),
    ("MF/BM constraints", _check_spatial, 1e-10),
    ("posterior identity", _check_posterior_identity, 1e-12),
    ("decay law", _check_decay, 1e-12),
    ("gain contract violations", _check_gain_contract, 0.5),
    ("GEVD model recovery", _check_gevd_recovery, 1e-6),
    ("desmoothing inversion", _check_desmoothing, 1e-10),
)


def run_selftest(seed: int = 0) -> list[SelftestResult]:
    """Run the algebraic identities on small random instances."""
    rng = np.random.default_rng(seed)
    results = []
    for name, check, limit in SELFTEST_CHECKS:
        error = check(rng)
        passed = bool(error < limit)
        results.append(SelftestResult(name, passed, error, limit))
        log = logger.info if passed else logger.error
        log(f"{'PASS' if passed else 'FAIL'}  {name}: {error:.3g} (limit {limit:g})")
    return results
