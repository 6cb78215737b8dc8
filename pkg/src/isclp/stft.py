"""
Weighted overlap-add (WOLA) STFT analysis and synthesis.

Multichannel time signals are mapped to a complex grid indexed by
(frame, bin, channel). Every other stage of the engine works on this grid
and treats frequency bins independently.

Typical usage:
    >>> config = StftConfig(window_length=512)
    >>> grid = analyze(signal, config)     # signal: [samples x M]
    >>> restored = synthesize(grid)        # [samples' x M]
"""

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import get_window

from isclp.errors import ConfigurationError, InputError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class StftConfig:
    """
    STFT framing parameters.

    Attributes:
        window_length: Frame length in samples (512 = 32 ms at 16 kHz)
        hop: Frame shift in samples (default: window_length / 2, i.e. 50% overlap)
        sample_rate: Sampling rate in Hz
    """

    window_length: int = 512
    hop: Optional[int] = None
    sample_rate: int = 16000
    window: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.hop is None:
            object.__setattr__(self, "hop", self.window_length // 2)
        if self.window_length < 2 or self.window_length % 2:
            raise ConfigurationError(
                f"window_length must be even and >= 2, got {self.window_length}"
            )
        if self.hop <= 0 or self.window_length % self.hop:
            raise ConfigurationError(
                f"hop ({self.hop}) must divide window_length ({self.window_length})"
            )
        if self.window_length < 2 * self.hop:
            raise ConfigurationError(
                f"window_length ({self.window_length}) must be at least 2 * hop ({self.hop})"
            )
        if self.sample_rate <= 0:
            raise ConfigurationError(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "window", make_window(self))

    @property
    def num_bins(self) -> int:
        """One-sided spectrum size K = window_length / 2 + 1."""
        return self.window_length // 2 + 1

    @property
    def frequencies(self) -> np.ndarray:
        """Bin center frequencies f_k = k * fs / window_length in Hz."""
        return np.arange(self.num_bins) * self.sample_rate / self.window_length

    @property
    def frame_rate(self) -> float:
        """Frames per second."""
        return self.sample_rate / self.hop

    def frames_for(self, num_samples: int) -> int:
        """Number of frames analyze() produces for a signal of num_samples."""
        if num_samples <= self.window_length:
            return 1
        return -(-(num_samples - self.window_length) // self.hop) + 1


@dataclass
class TimeFrequencyGrid:
    """
    Complex multichannel spectra.

    Attributes:
        data: Complex array [frames x bins x channels]
        config: Framing the grid was produced with
    """

    data: np.ndarray
    config: StftConfig

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.complex128)
        if self.data.ndim != 3:
            raise InputError(
                f"Grid data must be [frames x bins x channels], got shape {self.data.shape}"
            )
        if self.data.shape[1] != self.config.num_bins:
            raise InputError(
                f"Grid has {self.data.shape[1]} bins, "
                f"window_length {self.config.window_length} requires {self.config.num_bins}"
            )
        if not np.all(np.isfinite(self.data)):
            raise InputError("Grid contains non-finite entries")

    @property
    def num_frames(self) -> int:
        return self.data.shape[0]

    @property
    def num_bins(self) -> int:
        return self.data.shape[1]

    @property
    def num_channels(self) -> int:
        return self.data.shape[2]


def make_window(config: StftConfig) -> np.ndarray:
    """
    Square-root periodic Hann window, used for both analysis and synthesis.

    The window is scaled by sqrt(2 * hop / window_length) so that its square
    overlap-adds to exactly one for any admissible hop (the scale is 1 at 50%
    overlap).

    Raises:
        ConfigurationError: If hop does not divide window_length or the
            overlap is below 50%
    """
    n, hop = config.window_length, config.hop
    if n % 2 or hop <= 0 or n % hop or n < 2 * hop:
        raise ConfigurationError(
            f"Invalid window_length/hop relation: {n}/{hop}"
        )
    hann = get_window("hann", n, fftbins=True)
    return np.sqrt(hann * 2.0 * hop / n)


def analyze(signal: np.ndarray, config: StftConfig) -> TimeFrequencyGrid:
    """
    Multichannel STFT analysis.

    Frame l covers samples [l * hop, l * hop + window_length). The tail is
    zero-padded so that the last partial frame is complete.

    Args:
        signal: Real array [samples x M] (a 1-D array is treated as M = 1)
        config: STFT framing

    Returns:
        TimeFrequencyGrid with data [frames x K x M]

    Raises:
        InputError: If the signal is empty or contains non-finite samples
    """
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, np.newaxis]
    if x.ndim != 2 or x.shape[0] == 0 or x.shape[1] == 0:
        raise InputError(f"Signal must be a non-empty [samples x M] array, got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InputError("Signal contains non-finite samples")

    num_frames = config.frames_for(x.shape[0])
    padded_length = (num_frames - 1) * config.hop + config.window_length
    padded = np.zeros((padded_length, x.shape[1]))
    padded[: x.shape[0]] = x

    # [frames x M x window_length]
    frames = sliding_window_view(padded, config.window_length, axis=0)[:: config.hop]
    spectra = np.fft.rfft(frames * config.window, axis=-1)
    return TimeFrequencyGrid(np.transpose(spectra, (0, 2, 1)), config)


def synthesize(grid: TimeFrequencyGrid) -> np.ndarray:
    """
    WOLA synthesis with the analysis window.

    Returns:
        Real array [(frames - 1) * hop + window_length x M]

    Raises:
        InputError: If the grid does not match its configuration
    """
    config = grid.config
    if grid.data.shape[1] != config.num_bins:
        raise InputError(
            f"Grid has {grid.data.shape[1]} bins, expected {config.num_bins}"
        )

    num_frames, _, channels = grid.data.shape
    # [frames x window_length x M]
    segments = np.fft.irfft(grid.data, n=config.window_length, axis=1)
    segments *= config.window[np.newaxis, :, np.newaxis]

    output = np.zeros(((num_frames - 1) * config.hop + config.window_length, channels))
    for l in range(num_frames):
        start = l * config.hop
        output[start : start + config.window_length] += segments[l]
    return output
