"""
Objective speech quality metrics: frequency-weighted segmental SIR and
LPC cepstral distance, both evaluated on 32 ms frames with 50% overlap.
"""

import logging

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.linalg import solve_toeplitz
from scipy.signal import get_window, stft

from isclp.errors import InputError

logger = logging.getLogger(__name__)

FRAME_LENGTH = 512
NUM_BANDS = 25
SIR_FLOOR_DB = -10.0
SIR_CEILING_DB = 35.0
WEIGHT_EXPONENT = 0.2
ACTIVITY_DB = -40.0

LPC_ORDER = 10
CD_CEILING_DB = 10.0

EPS = 1e-20


def _check_pair(reference: np.ndarray, estimate: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    reference = np.asarray(reference, dtype=np.float64)
    estimate = np.asarray(estimate, dtype=np.float64)
    if reference.ndim != 1 or estimate.ndim != 1:
        raise InputError("Metrics take mono signals")
    if reference.shape != estimate.shape:
        raise InputError(
            f"Reference and estimate lengths differ: {reference.size} vs {estimate.size}"
        )
    if reference.size < FRAME_LENGTH:
        raise InputError(f"Signals shorter than one frame ({FRAME_LENGTH} samples)")
    if not np.any(reference):
        raise InputError("Reference signal is silent")
    return reference, estimate


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + f / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (m / 2595.0) - 1.0)


def mel_filterbank(num_bands: int, frame_length: int, sample_rate: int) -> np.ndarray:
    """Triangular mel-spaced bands [num_bands x frame_length / 2 + 1], 0 Hz to Nyquist."""
    edges = _mel_to_hz(np.linspace(0.0, _hz_to_mel(sample_rate / 2.0), num_bands + 2))
    freqs = np.arange(frame_length // 2 + 1) * sample_rate / frame_length

    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lower) / (center - lower)
    falling = (upper - freqs) / (upper - center)
    return np.maximum(0.0, np.minimum(rising, falling))


def _active_frames(energy: np.ndarray) -> np.ndarray:
    return energy > np.max(energy) * 10.0 ** (ACTIVITY_DB / 10.0)


def fwseg_sir(reference: np.ndarray, estimate: np.ndarray, sample_rate: int = 16000) -> float:
    """
    Frequency-weighted segmental SIR in dB.

    Per frame and mel band, SIR = 10 log10(|S_ref|^2 / |S_ref - S_est|^2),
    clipped to [-10, 35] dB and weighted by the band magnitude raised to 0.2.
    Frames more than 40 dB below the loudest reference frame are ignored.

    Raises:
        InputError: Length mismatch, too short, or silent reference
    """
    reference, estimate = _check_pair(reference, estimate)
    hop = FRAME_LENGTH // 2
    options = dict(fs=sample_rate, window="hann", nperseg=FRAME_LENGTH, noverlap=hop, boundary=None, padded=False)
    _, _, s_ref = stft(reference, **options)
    _, _, s_est = stft(estimate, **options)

    bank = mel_filterbank(NUM_BANDS, FRAME_LENGTH, sample_rate)
    band_ref = bank @ np.abs(s_ref) ** 2  # [bands x frames]
    band_err = bank @ np.abs(s_ref - s_est) ** 2

    sir = 10.0 * np.log10((band_ref + EPS) / (band_err + EPS))
    sir = np.clip(sir, SIR_FLOOR_DB, SIR_CEILING_DB)
    weights = np.sqrt(band_ref) ** WEIGHT_EXPONENT
    total = np.sum(weights, axis=0)

    active = _active_frames(np.sum(band_ref, axis=0)) & (total > 0)
    per_frame = np.sum(weights[:, active] * sir[:, active], axis=0) / total[active]
    return float(np.mean(per_frame))


def lpc(frame: np.ndarray, order: int = LPC_ORDER):
    """
    Autocorrelation-method LPC, A(z) = 1 + sum a_k z^-k.

    Returns:
        a [order] or None if the frame is silent or the predictor unstable
    """
    r = np.correlate(frame, frame, mode="full")[frame.size - 1 : frame.size + order]
    if r[0] <= 0:
        return None
    try:
        a = solve_toeplitz(r[:order], -r[1 : order + 1])
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(a)) or np.any(np.abs(np.roots(np.r_[1.0, a])) >= 1.0):
        return None
    return a


def lpc_cepstrum(a: np.ndarray) -> np.ndarray:
    """Cepstrum of 1 / A(z), coefficients 1..order (c_0 excluded)."""
    order = a.size
    c = np.zeros(order)
    for n in range(1, order + 1):
        k = np.arange(1, n)
        c[n - 1] = -a[n - 1] - np.sum(k / n * c[k - 1] * a[n - k - 1])
    return c


def cepstral_distance(reference: np.ndarray, estimate: np.ndarray, order: int = LPC_ORDER) -> float:
    """
    Mean LPC cepstral distance in dB over active frames, each clipped to [0, 10].

    Frames whose LPC is unstable or undefined (silent) are skipped; if none
    remain, the ceiling is returned.

    Raises:
        InputError: Length mismatch, too short, or silent reference
    """
    reference, estimate = _check_pair(reference, estimate)
    hop = FRAME_LENGTH // 2
    window = get_window("hann", FRAME_LENGTH)
    frames_ref = sliding_window_view(reference, FRAME_LENGTH)[::hop] * window
    frames_est = sliding_window_view(estimate, FRAME_LENGTH)[::hop] * window

    active = _active_frames(np.sum(frames_ref**2, axis=1))
    scale = 10.0 / np.log(10.0)
    distances = []
    skipped = 0
    for frame_ref, frame_est in zip(frames_ref[active], frames_est[active]):
        a_ref, a_est = lpc(frame_ref, order), lpc(frame_est, order)
        if a_ref is None or a_est is None:
            skipped += 1
            continue
        delta = lpc_cepstrum(a_ref) - lpc_cepstrum(a_est)
        distances.append(min(scale * np.sqrt(2.0 * np.sum(delta**2)), CD_CEILING_DB))

    if skipped:
        logger.debug(f"Cepstral distance: skipped {skipped} frame(s) with undefined LPC")
    if not distances:
        return CD_CEILING_DB
    return float(np.mean(distances))
