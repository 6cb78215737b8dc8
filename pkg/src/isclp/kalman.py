"""
ISCLP Kalman filter: joint sidelobe-cancellation (SC) and linear-prediction
(LP) filter estimation per frequency bin, plus the posterior-like spectral
post-processor.

Signal paths per bin and frame l:
    q(l) = g^H y(l)                                 reference path (MF)
    u(l) = [B^H y(l); y(l-1); ...; y(l-L+1)]        SC path | LP path
    e(l) = q(l) - w^H u(l)                          enhanced (prior) signal

The state w stacks the SC filter (M - N_T taps) and the LP filter
((L - 1) * M taps). All update functions broadcast over leading batch
dimensions, so the same code runs for a single bin or for all K bins of a
frame at once. Bins never share state.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Optional, Union

import numpy as np

from isclp.errors import ConfigurationError, InputError
from isclp.linalg import psd_floor, symmetrize
from isclp.spatial import SpatialPreprocessor

logger = logging.getLogger(__name__)

# Algorithmic defaults (16 kHz, 512-sample frames, 50% overlap)
ALPHA_DB = -25.0  # 10 log10(1 - alpha)
BETA_DB = -2.0  # 20 log10(beta)
PSI_LP_DB = -4.0  # 10 log10(psi_lp)
PSI_SC_DB_LOW = 0.0  # 10 log10(psi_sc) at 0 Hz
PSI_SC_DB_HIGH = -15.0  # 10 log10(psi_sc) at the Nyquist frequency
FILTER_LENGTH = 6

PHI_E_FLOOR = 1e-20
GAIN_FLOOR = 1e-10
CHECK_INTERVAL = 100  # frames between full eigenvalue checks of the error covariance
PSD_TOLERANCE = 1e-10  # min eigenvalue >= -PSD_TOLERANCE * trace


def psi_sc_profile(
    frequencies: np.ndarray,
    low_db: float = PSI_SC_DB_LOW,
    high_db: float = PSI_SC_DB_HIGH,
    max_frequency: Optional[float] = None,
) -> np.ndarray:
    """SC prior variance per bin, linear in dB from low_db at 0 Hz to high_db at max_frequency."""
    frequencies = np.asarray(frequencies, dtype=np.float64)
    if max_frequency is None:
        max_frequency = frequencies[-1] if frequencies.size and frequencies[-1] > 0 else 1.0
    db = low_db + (high_db - low_db) * frequencies / max_frequency
    return 10.0 ** (db / 10.0)


@dataclass
class ProcessModel:
    """
    Process equation tuning and prior state covariance pattern.

    Attributes:
        alpha: Forgetting factor in (0, 1); A = sqrt(alpha) I,
               Psi_wDelta = (1 - alpha) Psi_bar
        beta: Gain-decay limit in [0, 1]
        psi_sc: SC prior variance, scalar or one value per bin
        psi_lp: LP prior variance base in (0, 1); block i gets psi_lp ** i
        filter_length: Number of frames L >= 2 (current frame plus L - 1 delayed)
        num_mics: Microphones M
        num_targets: Target sources N_T < M
    """

    alpha: float
    beta: float
    psi_sc: Union[float, np.ndarray]
    psi_lp: float
    filter_length: int = FILTER_LENGTH
    num_mics: int = 2
    num_targets: int = 1

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ConfigurationError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigurationError(f"beta must lie in [0, 1], got {self.beta}")
        if not 0.0 < self.psi_lp < 1.0:
            raise ConfigurationError(f"psi_lp must lie in (0, 1), got {self.psi_lp}")
        self.psi_sc = np.asarray(self.psi_sc, dtype=np.float64)
        if np.any(self.psi_sc <= 0) or not np.all(np.isfinite(self.psi_sc)):
            raise ConfigurationError("psi_sc must be finite and > 0")
        if self.filter_length < 2:
            raise ConfigurationError(
                f"filter_length L must be >= 2, got {self.filter_length}"
            )
        if not 1 <= self.num_targets < self.num_mics:
            raise ConfigurationError(
                f"Need 1 <= N_T < M, got N_T={self.num_targets}, M={self.num_mics}"
            )

    @classmethod
    def from_db(
        cls,
        frequencies: np.ndarray,
        num_mics: int,
        num_targets: int = 1,
        filter_length: int = FILTER_LENGTH,
        alpha_db: float = ALPHA_DB,
        beta_db: float = BETA_DB,
        psi_lp_db: float = PSI_LP_DB,
        psi_sc_db_low: float = PSI_SC_DB_LOW,
        psi_sc_db_high: float = PSI_SC_DB_HIGH,
    ) -> "ProcessModel":
        """Build a model from the logarithmic tuning parameters."""
        return cls(
            alpha=1.0 - 10.0 ** (alpha_db / 10.0),
            beta=10.0 ** (beta_db / 20.0),
            psi_sc=psi_sc_profile(frequencies, psi_sc_db_low, psi_sc_db_high),
            psi_lp=10.0 ** (psi_lp_db / 10.0),
            filter_length=filter_length,
            num_mics=num_mics,
            num_targets=num_targets,
        )

    @property
    def state_dim(self) -> int:
        """D = L * M - N_T."""
        return self.filter_length * self.num_mics - self.num_targets

    def prior_diagonal(self) -> np.ndarray:
        """Diagonal of Psi_bar_w, shape [..., D] (leading axes follow psi_sc)."""
        sc = np.ones(self.num_mics - self.num_targets)
        lp = np.repeat(self.psi_lp ** np.arange(1, self.filter_length), self.num_mics)
        psi_sc = self.psi_sc[..., np.newaxis]
        return np.concatenate(
            [psi_sc * sc, np.broadcast_to(lp, psi_sc.shape[:-1] + lp.shape)], axis=-1
        )


@dataclass
class KalmanState:
    """
    Kalman filter state of one bin (or a stack of bins).

    Attributes:
        w_hat: State estimate [..., D]
        err_cov: Hermitian PSD error covariance [..., D, D]
        gain_prev: Previous post-processing gain gamma in (0, 1]
        frame_index: Frames processed
        skipped_updates: Measurement updates skipped because phi_e fell below the floor
        floored: Covariances repaired by eigenvalue flooring
    """

    w_hat: np.ndarray
    err_cov: np.ndarray
    gain_prev: np.ndarray
    frame_index: int = 0
    skipped_updates: int = 0
    floored: int = 0

    @classmethod
    def initial(cls, prior_diagonal: np.ndarray) -> "KalmanState":
        """w(0) = 0, Psi(0) = Psi_bar_w, gamma(0) = 1."""
        prior_diagonal = np.asarray(prior_diagonal, dtype=np.float64)
        err_cov = np.zeros(prior_diagonal.shape + prior_diagonal.shape[-1:], dtype=np.complex128)
        idx = np.arange(prior_diagonal.shape[-1])
        err_cov[..., idx, idx] = prior_diagonal
        return cls(
            w_hat=np.zeros(prior_diagonal.shape, dtype=np.complex128),
            err_cov=err_cov,
            gain_prev=np.ones(prior_diagonal.shape[:-1]),
        )


@dataclass
class DelayLine:
    """
    The last L - 1 microphone frames, newest first, zero-initialized.

    Attributes:
        frames: Complex [..., L - 1, M]
    """

    frames: np.ndarray

    @classmethod
    def zeros(cls, batch_shape: tuple, filter_length: int, num_mics: int) -> "DelayLine":
        return cls(np.zeros(tuple(batch_shape) + (filter_length - 1, num_mics), dtype=np.complex128))

    def stacked(self) -> np.ndarray:
        """u_LP = [y(l-1); ...; y(l-L+1)], shape [..., (L - 1) M]."""
        return self.frames.reshape(self.frames.shape[:-2] + (-1,))

    def advance(self, y_frame: np.ndarray) -> None:
        """Push the current frame; the oldest frame drops out."""
        y_frame = np.asarray(y_frame, dtype=np.complex128)
        self.frames = np.concatenate([y_frame[..., np.newaxis, :], self.frames[..., :-1, :]], axis=-2)


@dataclass
class FrameOutput:
    """Per-frame filter outputs, one entry per bin."""

    e: np.ndarray
    e_plus: np.ndarray
    gamma: np.ndarray
    phi_e: np.ndarray
    rebuilt_bins: int = 0
    skipped: int = 0


@dataclass
class BinTrace:
    """Outputs of process_bin, one entry per frame."""

    e: np.ndarray
    e_plus: np.ndarray
    gamma: np.ndarray
    phi_e: np.ndarray
    state: Optional[KalmanState] = field(default=None, repr=False)


def assemble_input(y_frame: np.ndarray, b: np.ndarray, delay: DelayLine) -> np.ndarray:
    """
    Stack the SC and LP filter inputs, u = [B^H y; y(l-1); ...; y(l-L+1)].

    The delay line is not advanced here.

    Raises:
        InputError: On dimension mismatch
    """
    y_frame = np.asarray(y_frame, dtype=np.complex128)
    b = np.asarray(b, dtype=np.complex128)
    if b.shape[-2] != y_frame.shape[-1] or delay.frames.shape[-1] != y_frame.shape[-1]:
        raise InputError(
            f"Dimension mismatch: y has M={y_frame.shape[-1]}, B is {b.shape[-2:]}, "
            f"delay line holds M={delay.frames.shape[-1]}"
        )
    u_sc = np.einsum("...mj,...m->...j", np.conj(b), y_frame)
    u_lp = delay.stacked()
    try:
        batch = np.broadcast_shapes(u_sc.shape[:-1], u_lp.shape[:-1])
    except ValueError as e:
        raise InputError(f"Batch shapes of y, B and delay line differ: {e}") from e
    u_sc = np.broadcast_to(u_sc, batch + u_sc.shape[-1:])
    u_lp = np.broadcast_to(u_lp, batch + u_lp.shape[-1:])
    return np.concatenate([u_sc, u_lp], axis=-1)


def time_update(state: KalmanState, model: ProcessModel) -> KalmanState:
    """
    Prior propagation: w <- sqrt(alpha) w+, Psi <- alpha Psi+ + (1 - alpha) Psi_bar.
    """
    prior = model.prior_diagonal()
    idx = np.arange(prior.shape[-1])
    err_cov = model.alpha * state.err_cov
    err_cov[..., idx, idx] += (1.0 - model.alpha) * prior
    return replace(
        state,
        w_hat=np.sqrt(model.alpha) * state.w_hat,
        err_cov=symmetrize(err_cov),
        frame_index=state.frame_index + 1,
    )


def condition_covariance(err_cov: np.ndarray, frame_index: int) -> tuple[np.ndarray, int]:
    """
    Keep the error covariance Hermitian PSD.

    Trace and diagonal checks run every frame; the full eigenvalue check runs
    every CHECK_INTERVAL frames. Matrices failing a check are eigenvalue-floored at 0.

    Returns:
        (conditioned covariance, number of floored matrices)
    """
    err_cov = symmetrize(err_cov)
    diagonal = np.real(np.diagonal(err_cov, axis1=-2, axis2=-1))
    trace = np.sum(diagonal, axis=-1)
    failing = ~np.isfinite(trace) | np.any(diagonal < -PSD_TOLERANCE * np.abs(trace)[..., np.newaxis], axis=-1)
    if frame_index % CHECK_INTERVAL == 0:
        min_eig = np.linalg.eigvalsh(err_cov)[..., 0]
        failing |= min_eig < -PSD_TOLERANCE * np.abs(trace)

    count = int(np.count_nonzero(failing))
    if count:
        logger.debug(f"Frame {frame_index}: eigenvalue flooring of {count} error covariance(s)")
        if np.ndim(failing) == 0:
            err_cov = psd_floor(err_cov)
        else:
            err_cov[failing] = psd_floor(err_cov[failing])
    return err_cov, count


def measurement_update(
    state: KalmanState,
    u: np.ndarray,
    q: np.ndarray,
    phi_st: np.ndarray,
    floor: float = PHI_E_FLOOR,
) -> tuple[KalmanState, np.ndarray, np.ndarray]:
    """
    Measurement update for q* = u^H w + s_T*.

        e*    = q* - u^H w
        phi_e = u^H Psi u + phi_sT
        k     = Psi u / phi_e
        w+    = w + k e*
        Psi+  = Psi - k u^H Psi

    Bins whose phi_e falls below the floor keep their prior state.

    Returns:
        (posterior state, prior error e, phi_e)

    Raises:
        InputError: On non-finite inputs or negative phi_sT
    """
    u = np.asarray(u, dtype=np.complex128)
    q = np.asarray(q, dtype=np.complex128)
    phi_st = np.asarray(phi_st, dtype=np.float64)
    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(q)) and np.all(np.isfinite(phi_st))):
        raise InputError("Non-finite measurement update input")
    if np.any(phi_st < 0):
        raise InputError("Target PSD phi_sT must be >= 0")

    err_cov, w_hat = state.err_cov, state.w_hat
    psi_u = np.einsum("...ij,...j->...i", err_cov, u)
    phi_e = np.real(np.einsum("...i,...i->...", np.conj(u), psi_u)) + phi_st
    e = q - np.einsum("...i,...i->...", np.conj(w_hat), u)

    valid = phi_e >= floor
    gain = np.where(valid[..., np.newaxis], psi_u / np.where(valid, phi_e, 1.0)[..., np.newaxis], 0.0)
    w_post = w_hat + gain * np.conj(e)[..., np.newaxis]
    err_post = err_cov - gain[..., :, np.newaxis] * np.conj(psi_u)[..., np.newaxis, :]

    skipped = int(np.size(valid) - np.count_nonzero(valid))
    if skipped:
        logger.debug(f"Frame {state.frame_index}: {skipped} measurement update(s) skipped (phi_e < {floor:g})")
    err_post, floored = condition_covariance(err_post, state.frame_index)

    posterior = replace(
        state,
        w_hat=w_post,
        err_cov=err_post,
        skipped_updates=state.skipped_updates + skipped,
        floored=state.floored + floored,
    )
    return posterior, e, phi_e


def post_gain(
    state: KalmanState,
    e: np.ndarray,
    phi_e: np.ndarray,
    phi_st: np.ndarray,
    beta: float,
) -> tuple[KalmanState, np.ndarray, np.ndarray]:
    """
    Decay-limited Wiener gain, gamma = max(phi_sT / phi_e, beta * gamma_prev), e+ = gamma e.

    With beta = 0 this is the posterior estimate q - (w+)^H u; with beta = 1 and
    gamma(0) = 1 the output equals e.

    Returns:
        (state with gain_prev = gamma, e+, gamma)
    """
    wiener = np.asarray(phi_st, dtype=np.float64) / np.maximum(phi_e, PHI_E_FLOOR)
    gamma = np.maximum(np.minimum(wiener, 1.0), beta * state.gain_prev)
    gamma = np.clip(gamma, GAIN_FLOOR, 1.0)
    return replace(state, gain_prev=gamma), gamma * e, gamma


def posterior_error(state: KalmanState, u: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Posterior estimate e+ = q - (w+)^H u, evaluated after measurement_update."""
    u = np.asarray(u, dtype=np.complex128)
    return np.asarray(q, dtype=np.complex128) - np.einsum("...i,...i->...", np.conj(state.w_hat), u)


class IsclpFilter:
    """
    ISCLP Kalman filter over a stack of independent frequency bins.

    Each call to step() runs one frame: MF/BM rebuild on RETF change,
    reference and filter inputs, time update, measurement update, gain
    post-processing, and finally the delay-line advance.
    """

    def __init__(self, model: ProcessModel, num_bins: int):
        self.model = model
        self.num_bins = num_bins
        try:
            prior = np.broadcast_to(model.prior_diagonal(), (num_bins, model.state_dim))
        except ValueError as e:
            raise ConfigurationError(
                f"psi_sc has shape {np.shape(model.psi_sc)}, incompatible with {num_bins} bins"
            ) from e
        self.state = KalmanState.initial(prior)
        self.delay = DelayLine.zeros((num_bins,), model.filter_length, model.num_mics)
        self.spatial = SpatialPreprocessor(num_bins, model.num_mics, model.num_targets)

    def step(self, y_frame: np.ndarray, h_t: np.ndarray, phi_st: np.ndarray) -> FrameOutput:
        """
        Process one frame.

        Args:
            y_frame: Microphone spectra [K x M]
            h_t: Target RETF estimate [K x M x N_T]
            phi_st: Target PSD estimate [K]
        """
        y_frame = np.asarray(y_frame, dtype=np.complex128)
        if y_frame.shape != (self.num_bins, self.model.num_mics):
            raise InputError(
                f"Frame has shape {y_frame.shape}, expected {(self.num_bins, self.model.num_mics)}"
            )
        phi_st = np.broadcast_to(np.asarray(phi_st, dtype=np.float64), (self.num_bins,))

        rebuilt = self.spatial.update(h_t)
        q = np.einsum("km,km->k", np.conj(self.spatial.g), y_frame)
        u = assemble_input(y_frame, self.spatial.b, self.delay)

        skipped_before = self.state.skipped_updates
        self.state = time_update(self.state, self.model)
        self.state, e, phi_e = measurement_update(self.state, u, q, phi_st)
        self.state, e_plus, gamma = post_gain(self.state, e, phi_e, phi_st, self.model.beta)
        self.delay.advance(y_frame)

        return FrameOutput(
            e=e,
            e_plus=e_plus,
            gamma=gamma,
            phi_e=phi_e,
            rebuilt_bins=rebuilt,
            skipped=self.state.skipped_updates - skipped_before,
        )


def process_bin(
    frames: np.ndarray,
    retf_stream: np.ndarray,
    psd_stream: np.ndarray,
    model: ProcessModel,
) -> BinTrace:
    """
    Run the ISCLP Kalman filter over all frames of one bin.

    Args:
        frames: Microphone spectra of the bin [frames x M]
        retf_stream: Target RETFs per frame [frames x M x N_T], or a constant [M x N_T]
        psd_stream: Target PSD per frame [frames]
        model: Process model with a scalar psi_sc

    Raises:
        InputError: If the streams are not aligned in frame index
    """
    frames = np.asarray(frames, dtype=np.complex128)
    retf_stream = np.asarray(retf_stream, dtype=np.complex128)
    psd_stream = np.asarray(psd_stream, dtype=np.float64)
    num_frames = frames.shape[0]
    if retf_stream.ndim == 2:
        retf_stream = np.broadcast_to(retf_stream, (num_frames,) + retf_stream.shape)
    if retf_stream.shape[0] != num_frames or psd_stream.shape != (num_frames,):
        raise InputError(
            f"Streams misaligned: {num_frames} frames, RETF stream {retf_stream.shape[0]}, "
            f"PSD stream {psd_stream.shape}"
        )

    kalman = IsclpFilter(model, num_bins=1)
    trace = BinTrace(
        e=np.zeros(num_frames, dtype=np.complex128),
        e_plus=np.zeros(num_frames, dtype=np.complex128),
        gamma=np.zeros(num_frames),
        phi_e=np.zeros(num_frames),
    )
    for l in range(num_frames):
        out = kalman.step(frames[l][np.newaxis], retf_stream[l][np.newaxis], psd_stream[l : l + 1])
        trace.e[l] = out.e[0]
        trace.e_plus[l] = out.e_plus[0]
        trace.gamma[l] = out.gamma[0]
        trace.phi_e[l] = out.phi_e[0]
    trace.state = kalman.state
    return trace
