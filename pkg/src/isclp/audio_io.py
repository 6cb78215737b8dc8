"""
Audio I/O and source signals for ISCLP.

Defines WAV reading/writing and the signal sources that feed scenes:
- Synthetic speech-like signals (default, seeded)
- File-based (user-supplied WAV)
"""

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np
import soundfile as sf
from scipy.signal import get_window, lfilter

from isclp.errors import InputError

logger = logging.getLogger(__name__)

# (formant Hz, bandwidth Hz) triples of a few vowels
VOWEL_FORMANTS = (
    ((730, 130), (1090, 150), (2440, 200)),  # a
    ((270, 100), (2290, 140), (3010, 200)),  # i
    ((300, 100), (870, 130), (2240, 190)),  # u
    ((530, 120), (1840, 140), (2480, 190)),  # e
    ((570, 120), (840, 130), (2410, 190)),  # o
)
FORMANT_GAINS = (1.0, 0.6, 0.35)
BYPASS_GAIN = 0.15  # spectral floor between formants
ASPIRATION = 0.04
TILT = 0.7
FORMANT_BLOCK = 80  # samples per formant-glide step


@dataclass
class WavFormat:
    """WAV sample format."""

    sample_rate: int = 16000
    channels: int = 1
    subtype: str = "FLOAT"

    @property
    def bits_per_sample(self) -> int:
        return {"PCM_16": 16, "PCM_24": 24, "PCM_32": 32, "FLOAT": 32, "DOUBLE": 64}.get(
            self.subtype, 0
        )


def read_wav(path: Union[str, Path]) -> tuple[np.ndarray, int]:
    """
    Read a PCM or float WAV file.

    Returns:
        (samples [samples x channels] float64, sample rate)

    Raises:
        InputError: If the file is missing or unreadable
    """
    path = Path(path)
    if not path.is_file():
        raise InputError(f"Audio file not found: {path}")
    try:
        data, sample_rate = sf.read(str(path), dtype="float64", always_2d=True)
    except RuntimeError as e:
        raise InputError(f"Cannot read audio file {path}: {e}") from e
    logger.debug(f"Read {path}: {data.shape[0]} samples, {data.shape[1]} ch, {sample_rate} Hz")
    return data, sample_rate


def write_wav(
    path: Union[str, Path], data: np.ndarray, sample_rate: int, subtype: str = "FLOAT"
) -> WavFormat:
    """Write a [samples] or [samples x channels] signal, creating parent directories."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = np.asarray(data, dtype=np.float64)
    sf.write(str(path), data, sample_rate, subtype=subtype)
    channels = 1 if data.ndim == 1 else data.shape[1]
    logger.debug(f"Wrote {path}: {data.shape[0]} samples, {channels} ch")
    return WavFormat(sample_rate=sample_rate, channels=channels, subtype=subtype)


def _resonator(frequency: float, bandwidth: float, sample_rate: int) -> tuple[np.ndarray, np.ndarray]:
    """Two-pole resonator with unit gain at its centre frequency."""
    radius = np.exp(-np.pi * bandwidth / sample_rate)
    theta = 2 * np.pi * frequency / sample_rate
    b = 0.5 * (1.0 - radius**2) * np.array([1.0, 0.0, -1.0])
    return b, np.array([1.0, -2.0 * radius * np.cos(theta), radius**2])


def _glottal_pulses(length: int, sample_rate: int, rng: np.random.Generator) -> np.ndarray:
    """Pulse train with vibrato, pitch glide, period jitter and shimmer."""
    pulses = np.zeros(length)
    f0 = rng.uniform(90.0, 220.0)
    glide = rng.uniform(-0.15, 0.15)
    vibrato = rng.uniform(2.0, 5.0)
    pos = rng.uniform(0.0, sample_rate / f0)
    while pos < length:
        pulses[int(pos)] += 1.0 + 0.1 * rng.standard_normal()
        pitch = f0 * (1.0 + glide * pos / length)
        pitch *= 1.0 + 0.08 * np.sin(2 * np.pi * vibrato * pos / sample_rate)
        pos += sample_rate / pitch * (1.0 + 0.02 * rng.standard_normal())
    return pulses


def _formant_filter(source: np.ndarray, start: tuple, end: tuple, sample_rate: int) -> np.ndarray:
    """Parallel formant bank whose resonances glide from one vowel to another."""
    start, end = np.asarray(start, dtype=float), np.asarray(end, dtype=float)
    out = BYPASS_GAIN * source
    states = np.zeros((len(FORMANT_GAINS), 2))
    for begin in range(0, source.size, FORMANT_BLOCK):
        stop = min(begin + FORMANT_BLOCK, source.size)
        frac = 0.5 * (begin + stop) / source.size
        track = (1.0 - frac) * start + frac * end
        for i, gain in enumerate(FORMANT_GAINS):
            b, a = _resonator(track[i, 0], track[i, 1], sample_rate)
            y, states[i] = lfilter(b, a, source[begin:stop], zi=states[i])
            out[begin:stop] += gain * y
    return out


def synthetic_speech(duration: float, seed: int, sample_rate: int = 16000) -> np.ndarray:
    """
    Non-stationary speech-like signal.

    Syllables of 150-400 ms are separated by short gaps and occasional
    pauses; the signal always opens with a pause. Voiced syllables are a
    jittered glottal pulse train plus aspiration noise, unvoiced ones white
    noise. Both pass a spectral tilt and a formant bank gliding between two
    vowels under a Tukey envelope. The result has unit RMS.
    """
    if duration <= 0:
        raise InputError(f"duration must be > 0, got {duration}")
    rng = np.random.default_rng(seed)
    num_samples = int(round(duration * sample_rate))
    out = np.zeros(num_samples)

    pos = int(rng.uniform(0.05, 0.15) * sample_rate)
    while pos < num_samples:
        length = int(rng.uniform(0.15, 0.4) * sample_rate)
        if rng.random() < 0.15:
            gap = int(rng.uniform(0.15, 0.3) * sample_rate)
        else:
            gap = int(rng.uniform(0.02, 0.08) * sample_rate)

        if rng.random() < 0.8:
            excitation = _glottal_pulses(length, sample_rate, rng)
            excitation += ASPIRATION * rng.standard_normal(length)
        else:
            excitation = 0.3 * rng.standard_normal(length)

        source = lfilter([1.0], [1.0, -TILT], excitation)
        start, end = rng.integers(len(VOWEL_FORMANTS), size=2)
        segment = _formant_filter(source, VOWEL_FORMANTS[start], VOWEL_FORMANTS[end], sample_rate)
        segment *= get_window(("tukey", 0.25), length, fftbins=False) * rng.uniform(0.5, 1.0)

        end_pos = min(pos + length, num_samples)
        out[pos:end_pos] += segment[: end_pos - pos]
        pos += length + gap

    rms = np.sqrt(np.mean(out**2))
    return out / rms if rms > 0 else out


class SignalSource(ABC):
    """Base class for mono source signals."""

    sample_rate: int

    @abstractmethod
    def read(self, num_samples: int) -> Optional[np.ndarray]:
        """
        Read source samples.

        Args:
            num_samples: Number of samples to read

        Returns:
            Mono samples [num_samples] or None if exhausted
        """
        pass

    @abstractmethod
    def close(self):
        """Close signal source."""
        pass


class SyntheticSpeechSource(SignalSource):
    """Seeded synthetic speech, generated on the first read."""

    def __init__(self, seed: int, sample_rate: int = 16000):
        self.seed = seed
        self.sample_rate = sample_rate

    def read(self, num_samples: int) -> Optional[np.ndarray]:
        if num_samples <= 0:
            return None
        return synthetic_speech(num_samples / self.sample_rate, self.seed, self.sample_rate)

    def close(self):
        """No-op for synthetic source."""
        pass


class FileSignalSource(SignalSource):
    """
    Source signal read from a WAV file (first channel).

    Loops when more samples are requested than the file holds.
    """

    def __init__(self, file_path: Union[str, Path], sample_rate: int = 16000):
        """
        Args:
            file_path: Path to WAV file
            sample_rate: Required sampling rate; files are not resampled

        Raises:
            InputError: Missing or unreadable file, or sample rate mismatch
        """
        self.file_path = Path(file_path)
        self.sample_rate = sample_rate
        data, file_rate = read_wav(self.file_path)
        if file_rate != sample_rate:
            raise InputError(
                f"{self.file_path} has sample rate {file_rate} Hz, expected {sample_rate} Hz"
            )
        if data.shape[1] > 1:
            logger.info(f"{self.file_path}: using channel 1 of {data.shape[1]}")
        self._data = data[:, 0]
        if not np.any(self._data):
            logger.warning(f"{self.file_path} is silent")

    def read(self, num_samples: int) -> Optional[np.ndarray]:
        if self._data is None or num_samples <= 0 or self._data.size == 0:
            return None
        repeats = -(-num_samples // self._data.size)
        if repeats > 1:
            logger.debug(f"{self.file_path}: looping {repeats}x to fill {num_samples} samples")
        return np.tile(self._data, repeats)[:num_samples]

    def close(self):
        self._data = None
