"""
Synthetic acoustic scenes with ground truth.

A scene places point sources at far-field directions around a linear
microphone array, convolves them with seeded synthetic room impulse
responses (direct path plus a diffuse exponentially decaying tail), and adds
spatially diffuse noise at a requested SNR. Besides the mixture, a scene
keeps every component, the early target reference at microphone 1 and the
true RETFs, so that the oracle estimator and the metrics can use them.
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np
from scipy.signal import fftconvolve

from isclp.audio_io import FileSignalSource, SignalSource, SyntheticSpeechSource, write_wav
from isclp.errors import ConfigurationError, InputError
from isclp.linalg import hermitian
from isclp.spatial import SOUND_SPEED, diffuse_coherence, linear_array
from isclp.stft import StftConfig, TimeFrequencyGrid, analyze, synthesize

logger = logging.getLogger(__name__)

ONSET = 32  # samples before the direct path
SINC_TAPS = 64
REVERB_GAIN = 0.05
EARLY_TAPS = 512


@dataclass
class SourceSpec:
    """
    One point source.

    Attributes:
        signal: "synthetic" or a WAV path
        doa_deg: Direction of arrival from broadside in degrees
        target: Whether the source belongs to the target set T
        level_db: Level relative to the other sources (unit RMS at 0 dB)
    """

    signal: str = "synthetic"
    doa_deg: float = 0.0
    target: bool = True
    level_db: float = 0.0


@dataclass
class SceneConfig:
    """
    Synthetic scene description.

    Attributes:
        num_mics: Microphones M
        spacing: Linear array spacing in meters
        sources: Point sources, at least one target, fewer than M
        t60: Reverberation time in seconds
        snr_db: Target-to-noise ratio at microphone 1; None disables the noise
        duration: Scene length in seconds
        seed: Master seed
        sample_rate: Sampling rate in Hz
        reverb_gain: Amplitude of the reverberant tail at its onset
    """

    num_mics: int = 4
    spacing: float = 0.08
    sources: list[SourceSpec] = field(default_factory=lambda: [SourceSpec()])
    t60: float = 0.4
    snr_db: Optional[float] = 10.0
    duration: float = 10.0
    seed: int = 0
    sample_rate: int = 16000
    reverb_gain: float = REVERB_GAIN

    def __post_init__(self):
        self.sources = [s if isinstance(s, SourceSpec) else SourceSpec(**s) for s in self.sources]
        if not any(s.target for s in self.sources):
            raise ConfigurationError("Scene needs at least one target source")
        if len(self.sources) >= self.num_mics:
            raise ConfigurationError(
                f"Need fewer sources than microphones, got N={len(self.sources)}, M={self.num_mics}"
            )
        if self.t60 <= 0:
            raise ConfigurationError(f"t60 must be > 0, got {self.t60}")
        if self.duration <= 0:
            raise ConfigurationError(f"duration must be > 0, got {self.duration}")
        if self.spacing <= 0:
            raise ConfigurationError(f"spacing must be > 0, got {self.spacing}")
        if self.seed < 0:
            raise ConfigurationError(f"seed must be >= 0, got {self.seed}")
        if self.snr_db is not None and math.isinf(self.snr_db):
            self.snr_db = None

    @property
    def target(self) -> tuple[int, ...]:
        return tuple(i for i, s in enumerate(self.sources) if s.target)

    @property
    def doas(self) -> list[float]:
        return [s.doa_deg for s in self.sources]

    @property
    def num_samples(self) -> int:
        return int(round(self.duration * self.sample_rate))


@dataclass
class SceneTruth:
    """
    Scene signals and ground truth.

    Attributes:
        mix: Microphone signals [samples x M], sum of images and noise
        images: Reverberant source images [N x samples x M]
        noise: Diffuse noise [samples x M]
        reference: Early target reference at microphone 1 [samples]
        true_retfs: RETFs of the early RIRs [K x M x N]
        positions: Microphone positions [M x 3]
        config: The scene description
    """

    mix: np.ndarray
    images: np.ndarray
    noise: np.ndarray
    reference: np.ndarray
    true_retfs: np.ndarray
    positions: np.ndarray
    config: SceneConfig

    @property
    def sample_rate(self) -> int:
        return self.config.sample_rate


def _rng(seed: int, *stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, *stream])


def diffuse_noise(
    gamma: np.ndarray,
    num_samples: int,
    seed: int,
    stft_config: Optional[StftConfig] = None,
) -> np.ndarray:
    """
    Noise with a prescribed spatial coherence.

    Independent Gaussian channels are analyzed, mixed per bin through a
    square root C of Gamma (C^H C = Gamma), and synthesized.

    Args:
        gamma: Coherence per bin [K x M x M]
        num_samples: Output length
        seed: Random seed
        stft_config: Framing matching K (default: window_length = 2 (K - 1))

    Returns:
        Real [num_samples x M]
    """
    gamma = np.asarray(gamma)
    if gamma.ndim != 3 or gamma.shape[1] != gamma.shape[2]:
        raise InputError(f"Gamma must be [K x M x M], got {gamma.shape}")
    num_bins, num_mics = gamma.shape[:2]
    if stft_config is None:
        stft_config = StftConfig(window_length=2 * (num_bins - 1))
    if stft_config.num_bins != num_bins:
        raise InputError(f"Gamma has {num_bins} bins, STFT framing has {stft_config.num_bins}")

    white = _rng(seed).standard_normal((num_samples, num_mics))
    grid = analyze(white, stft_config)

    values, vectors = np.linalg.eigh(0.5 * (gamma + hermitian(gamma)))
    mixing = hermitian(vectors * np.sqrt(np.maximum(values, 0.0))[:, np.newaxis, :])
    # y_k = C^H n_k, so E[y y^H] = C^H C = Gamma
    mixed = np.einsum("kmj,lkm->lkj", np.conj(mixing), grid.data)
    return synthesize(TimeFrequencyGrid(mixed, stft_config))[:num_samples]


def _coherence(positions: np.ndarray, sample_rate: int, window_length: int) -> np.ndarray:
    if positions.shape[0] == 1:
        return np.ones((window_length // 2 + 1, 1, 1))
    return diffuse_coherence(positions, sample_rate, window_length).gamma


def synth_rir(
    positions: np.ndarray,
    doa_deg: float,
    t60: float,
    seed: int,
    sample_rate: int = 16000,
    reverb_gain: float = REVERB_GAIN,
    sound_speed: float = SOUND_SPEED,
) -> np.ndarray:
    """
    Seeded synthetic room impulse response.

    Per microphone: a windowed-sinc fractional delay for the far-field direct
    path (gain 1), starting ONSET samples in, followed by a diffuse Gaussian
    tail under the envelope reverb_gain * exp(-ln(1000) n / (t60 fs)).

    Returns:
        Real [taps x M]

    Raises:
        ConfigurationError: If t60 <= 0
    """
    if t60 <= 0:
        raise ConfigurationError(f"t60 must be > 0, got {t60}")
    positions = np.asarray(positions, dtype=np.float64)
    if positions.ndim != 2:
        raise InputError(f"Microphone positions must be [M x 3], got {positions.shape}")
    if positions.shape[1] < 3:
        positions = np.pad(positions, ((0, 0), (0, 3 - positions.shape[1])))
    num_mics = positions.shape[0]

    doa = np.deg2rad(doa_deg)
    direction = np.array([np.sin(doa), np.cos(doa), 0.0])
    delays = -((positions - positions[0]) @ direction) / sound_speed * sample_rate
    delays = delays - min(delays.min(), 0.0) + ONSET

    # Length depends on the array aperture only, so RIRs of any DoA stack
    aperture = np.linalg.norm(positions[:, np.newaxis] - positions[np.newaxis], axis=-1).max()
    tail_length = int(np.ceil(1.2 * t60 * sample_rate))
    num_taps = ONSET + int(np.ceil(aperture / sound_speed * sample_rate)) + SINC_TAPS // 2 + tail_length
    rir = np.zeros((num_taps, num_mics))

    half = SINC_TAPS // 2
    for m, delay in enumerate(delays):
        start = int(np.floor(delay)) - half + 1
        n = np.arange(start, start + SINC_TAPS)
        rir[n, m] = np.sinc(n - delay) * 0.5 * (1.0 + np.cos(np.pi * (n - delay) / (half + 1)))

    onset = int(np.ceil(delays[0]))
    tail_taps = num_taps - onset
    envelope = reverb_gain * np.exp(-np.log(1000.0) * np.arange(tail_taps) / (t60 * sample_rate))
    gamma = _coherence(positions, sample_rate, EARLY_TAPS)
    tail = diffuse_noise(gamma, tail_taps, seed, StftConfig(EARLY_TAPS, sample_rate=sample_rate))
    rir[onset:] += tail * envelope[:, np.newaxis]
    return rir


def _open_source(spec: SourceSpec, seed: int, sample_rate: int) -> SignalSource:
    if spec.signal == "synthetic":
        return SyntheticSpeechSource(seed, sample_rate)
    return FileSignalSource(spec.signal, sample_rate)


def early_retfs(rirs: np.ndarray, window_length: int = EARLY_TAPS) -> np.ndarray:
    """
    RETFs from the first window_length taps of each RIR.

    Args:
        rirs: [N x taps x M]

    Returns:
        Complex [K x M x N], normalized to microphone 1
    """
    early = np.asarray(rirs)[:, :window_length, :]
    spectra = np.fft.rfft(early, n=window_length, axis=1)  # [N x K x M]
    return np.transpose(spectra / spectra[:, :, :1], (1, 2, 0))


def build_scene(config: SceneConfig) -> SceneTruth:
    """
    Render a scene and its ground truth.

    Sources are scaled to unit RMS times their level, convolved with their
    RIRs, and summed; the diffuse noise is scaled to the requested SNR with
    respect to the reverberant target power at microphone 1.

    Raises:
        InputError: Missing source files or silent target
    """
    fs = config.sample_rate
    num_samples = config.num_samples
    positions = linear_array(config.num_mics, config.spacing)
    logger.info(
        f"Building scene: M={config.num_mics}, N={len(config.sources)}, T60={config.t60}s, "
        f"SNR={config.snr_db} dB, {config.duration}s, seed={config.seed}"
    )

    images = np.zeros((len(config.sources), num_samples, config.num_mics))
    rirs = []
    reference = np.zeros(num_samples)
    for n, spec in enumerate(config.sources):
        source = _open_source(spec, config.seed * 1000 + n, fs)
        try:
            signal = source.read(num_samples)
        finally:
            source.close()
        if signal is None or not np.any(signal):
            raise InputError(f"Source {n} ({spec.signal}) is silent")
        signal = signal / np.sqrt(np.mean(signal**2)) * 10.0 ** (spec.level_db / 20.0)

        rir = synth_rir(positions, spec.doa_deg, config.t60, config.seed * 1000 + 500 + n, fs, config.reverb_gain)
        rirs.append(rir)
        images[n] = fftconvolve(signal[:, np.newaxis], rir, axes=0)[:num_samples]
        if spec.target:
            reference += fftconvolve(signal, rir[:EARLY_TAPS, 0])[:num_samples]

    noise = np.zeros((num_samples, config.num_mics))
    if config.snr_db is not None:
        gamma = _coherence(positions, fs, EARLY_TAPS)
        noise = diffuse_noise(gamma, num_samples, config.seed * 1000 + 999, StftConfig(EARLY_TAPS, sample_rate=fs))
        target_power = np.mean(np.sum(images[list(config.target), :, 0], axis=0) ** 2)
        noise_power = np.mean(noise[:, 0] ** 2)
        noise *= np.sqrt(target_power / noise_power * 10.0 ** (-config.snr_db / 10.0))

    max_taps = max(r.shape[0] for r in rirs)
    padded = np.stack([np.pad(r, ((0, max_taps - r.shape[0]), (0, 0))) for r in rirs])
    return SceneTruth(
        mix=np.sum(images, axis=0) + noise,
        images=images,
        noise=noise,
        reference=reference,
        true_retfs=early_retfs(padded),
        positions=positions,
        config=config,
    )


def write_scene(truth: SceneTruth, directory: Union[str, Path]) -> list[Path]:
    """
    Write the scene components as WAV files plus the true RETFs as .npz.

    Returns:
        Paths written
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    fs = truth.sample_rate
    written = []
    for name, data in (("mix", truth.mix), ("noise", truth.noise), ("reference", truth.reference)):
        path = directory / f"{name}.wav"
        write_wav(path, data, fs)
        written.append(path)
    for n, image in enumerate(truth.images):
        path = directory / f"source_{n}.wav"
        write_wav(path, image, fs)
        written.append(path)
    retf_path = directory / "true_retfs.npz"
    np.savez(retf_path, true_retfs=truth.true_retfs, positions=truth.positions)
    written.append(retf_path)
    logger.info(f"Wrote scene to {directory} ({len(written)} files)")
    return written
