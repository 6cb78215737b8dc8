"""
Target PSD and RETF estimation.

The blind estimator follows the microphone covariance recursively, whitens it
against the diffuse coherence (GEVD), undoes the recursive smoothing on the
generalized eigenvalues, and splits the covariance into a diffuse part and a
rank-N early part. The early part is fitted to the square-root model
Psi_xe^(1/2) Omega = H Diag[phi_s^(1/2)], which yields per-source PSDs and
updated RETFs.

The oracle estimator replays ground truth from a synthetic scene, isolating
the Kalman filter from estimation errors.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional, Protocol, Sequence

import numpy as np
from scipy.signal import lfilter

from isclp.errors import ConfigurationError, InputError
from isclp.linalg import gevd, hermitian, procrustes_rotation
from isclp.spatial import steering_retfs
from isclp.stft import StftConfig

logger = logging.getLogger(__name__)

SMOOTHING_TIME = 0.05  # seconds
GAMMA_LOADING = 1e-6  # relative to trace(Gamma) / M
DESMOOTH_FLOOR = 1e-10  # relative to trace(Psi_sm) / M
RETF_STEP = 0.2
ACTIVITY_RATIO = 0.1
ACTIVITY_FRAMES = 20
FIT_ITERATIONS = 3

# |[a_n]_1| below this fraction of ||a_n|| skips the RETF update of column n
PIN_TOLERANCE = 1e-10

INITIAL_RETF_MODES = ("truth", "doa", "anchored")


@dataclass
class EstimatorConfig:
    """
    Estimator tuning.

    Attributes:
        kind: "blind" or "oracle"
        num_sources: N, point sources in the scene (targets plus interferers)
        target: Ordered target source indices T
        smoothing_time: Covariance smoothing time constant in seconds
        loading: Diagonal loading of Gamma relative to trace(Gamma) / M
        retf_step: RETF blending step mu
        activity_ratio: Update a RETF column only when its PSD exceeds this
                        fraction of its recent mean
        activity_frames: Length of the recent-mean window in frames
        iterations: Alternating-minimization iterations per frame
        initial_retf: "truth", "doa" or "anchored"
        oracle_smoothing: Recursive smoothing constant of the oracle PSD (0 = none)
    """

    kind: str = "oracle"
    num_sources: int = 1
    target: tuple[int, ...] = (0,)
    smoothing_time: float = SMOOTHING_TIME
    loading: float = GAMMA_LOADING
    retf_step: float = RETF_STEP
    activity_ratio: float = ACTIVITY_RATIO
    activity_frames: int = ACTIVITY_FRAMES
    iterations: int = FIT_ITERATIONS
    initial_retf: str = "doa"
    oracle_smoothing: float = 0.0

    def __post_init__(self):
        self.target = tuple(int(t) for t in self.target)
        if self.kind not in ("blind", "oracle"):
            raise ConfigurationError(f"estimator must be 'blind' or 'oracle', got {self.kind!r}")
        if self.num_sources < 1:
            raise ConfigurationError(f"num_sources must be >= 1, got {self.num_sources}")
        if not self.target or len(set(self.target)) != len(self.target):
            raise ConfigurationError(f"target must be non-empty and unique, got {self.target}")
        if min(self.target) < 0 or max(self.target) >= self.num_sources:
            raise ConfigurationError(
                f"target {self.target} out of range for {self.num_sources} source(s)"
            )
        if self.smoothing_time <= 0:
            raise ConfigurationError(f"smoothing_time must be > 0, got {self.smoothing_time}")
        if self.loading < 0:
            raise ConfigurationError(f"loading must be >= 0, got {self.loading}")
        if not 0.0 <= self.retf_step <= 1.0:
            raise ConfigurationError(f"retf_step must lie in [0, 1], got {self.retf_step}")
        if self.activity_frames < 1 or self.iterations < 1:
            raise ConfigurationError("activity_frames and iterations must be >= 1")
        if self.initial_retf not in INITIAL_RETF_MODES:
            raise ConfigurationError(
                f"initial_retf must be one of {INITIAL_RETF_MODES}, got {self.initial_retf!r}"
            )
        if not 0.0 <= self.oracle_smoothing < 1.0:
            raise ConfigurationError(
                f"oracle_smoothing must lie in [0, 1), got {self.oracle_smoothing}"
            )

    @property
    def num_targets(self) -> int:
        return len(self.target)


@dataclass
class SmoothedCovariance:
    """
    Recursively averaged microphone covariance.

    Attributes:
        psi: Hermitian PSD [..., M, M]
        lam: Smoothing constant in (0, 1)
        sigma_prev: Smoothed generalized eigenvalues of the previous frame [..., M]
    """

    psi: np.ndarray
    lam: float
    sigma_prev: np.ndarray = field(default=None, repr=False)

    @classmethod
    def zeros(cls, batch_shape: tuple, num_mics: int, lam: float) -> "SmoothedCovariance":
        if not 0.0 < lam < 1.0:
            raise ConfigurationError(f"Smoothing constant must lie in (0, 1), got {lam}")
        return cls(
            psi=np.zeros(tuple(batch_shape) + (num_mics, num_mics), dtype=np.complex128),
            lam=lam,
            sigma_prev=np.zeros(tuple(batch_shape) + (num_mics,)),
        )


@dataclass
class GevdDecomposition:
    """
    Psi_y = Psi_xe + phi_d Gamma with Psi_xe = early_sqrt early_sqrt^H.

    Attributes:
        phi_d: Diffuse PSD [...] >= 0
        early_sqrt: Square root of the early covariance [..., M, N]
        phi_s: Per-component early PSDs [..., N] >= 0
    """

    phi_d: np.ndarray
    early_sqrt: np.ndarray
    phi_s: np.ndarray


def smoothing_constant(config: StftConfig, time_constant: float = SMOOTHING_TIME) -> float:
    """lambda = exp(-hop / (fs * time_constant))."""
    return float(np.exp(-config.hop / (config.sample_rate * time_constant)))


def smooth_covariance(prev: SmoothedCovariance, y_frame: np.ndarray) -> SmoothedCovariance:
    """Psi_sm <- lambda Psi_sm + (1 - lambda) y y^H."""
    y_frame = np.asarray(y_frame, dtype=np.complex128)
    outer = y_frame[..., :, np.newaxis] * np.conj(y_frame)[..., np.newaxis, :]
    return SmoothedCovariance(
        psi=prev.lam * prev.psi + (1.0 - prev.lam) * outer,
        lam=prev.lam,
        sigma_prev=prev.sigma_prev,
    )


def desmooth_eigenvalues(
    sigma_sm_now: np.ndarray, sigma_sm_prev: np.ndarray, lam: float, floor=0.0
) -> np.ndarray:
    """
    Inverse of the recursive average, max[(sigma_now - lambda sigma_prev) / (1 - lambda), floor].

    Raises:
        ConfigurationError: If lambda is outside (0, 1)
    """
    if not 0.0 < lam < 1.0:
        raise ConfigurationError(f"Smoothing constant must lie in (0, 1), got {lam}")
    now = np.asarray(sigma_sm_now, dtype=np.float64)
    prev = np.asarray(sigma_sm_prev, dtype=np.float64)
    return np.maximum((now - lam * prev) / (1.0 - lam), floor)


def decompose(
    sigma_desm: np.ndarray, x: np.ndarray, gamma: np.ndarray, num_sources: int
) -> GevdDecomposition:
    """
    Split a covariance into diffuse and rank-N early parts.

    phi_d is the mean of the M - N smallest generalized eigenvalues; column i
    of the early square root is Gamma x_i sqrt(max(sigma_i - phi_d, 0)).

    Args:
        sigma_desm: Generalized eigenvalues, descending [..., M]
        x: Gamma-orthonormal generalized eigenvectors [..., M, M]
        gamma: The coherence matrix the GEVD was computed against [..., M, M]
        num_sources: N < M

    Raises:
        InputError: If N >= M
    """
    sigma_desm = np.asarray(sigma_desm, dtype=np.float64)
    num_mics = sigma_desm.shape[-1]
    if not 0 < num_sources < num_mics:
        raise InputError(f"Need 0 < N < M, got N={num_sources}, M={num_mics}")

    phi_d = np.maximum(np.mean(sigma_desm[..., num_sources:], axis=-1), 0.0)
    excess = np.maximum(sigma_desm[..., :num_sources] - phi_d[..., np.newaxis], 0.0)
    early_sqrt = (np.asarray(gamma) @ np.asarray(x)[..., :num_sources]) * np.sqrt(excess)[..., np.newaxis, :]
    return GevdDecomposition(phi_d=phi_d, early_sqrt=early_sqrt, phi_s=excess)


def _initial_psd(early_sqrt: np.ndarray, h: np.ndarray) -> np.ndarray:
    """
    PSDs matching diag(H^H Psi_xe H) under the model Psi_xe = H Diag[p] H^H.

    Solves (|H^H H|^2) p = diag(H^H Psi_xe H), elementwise square.
    """
    gram = hermitian(h) @ h
    projected = hermitian(h) @ early_sqrt
    rhs = np.sum(np.abs(projected) ** 2, axis=-1)
    p = (np.linalg.pinv(np.abs(gram) ** 2) @ rhs[..., np.newaxis])[..., 0]
    return np.maximum(p, 0.0)


def fit_square_root(
    early_sqrt: np.ndarray,
    h_prior: np.ndarray,
    iters: int = FIT_ITERATIONS,
    step: float = RETF_STEP,
    activity_floor: Optional[np.ndarray] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """
    Fit Psi_xe^(1/2) Omega = H Diag[phi_s^(1/2)] by alternating minimization.

    Each iteration:
        (a) Omega from procrustes_rotation(early_sqrt, H Diag[phi^(1/2)])
        (b) phi_n^(1/2) = |h_n^H a_n| / (h_n^H h_n), a_n = column n of early_sqrt Omega
        (c) h_n = (1 - step) h_prior_n + step a_n / [a_n]_1 for active columns

    A column is active when its PSD exceeds activity_floor (default: always)
    and [a_n]_1 does not vanish.

    Args:
        early_sqrt: Complex [..., M, N]
        h_prior: RETF prior with unit first row [..., M, N]
        iters: Number of iterations
        step: RETF blending step mu
        activity_floor: Per-column PSD threshold [..., N]

    Returns:
        (phi_s [..., N] >= 0, H_post [..., M, N] with unit first row)
    """
    early_sqrt = np.asarray(early_sqrt, dtype=np.complex128)
    h_prior = np.asarray(h_prior, dtype=np.complex128)
    if early_sqrt.shape[-1] != h_prior.shape[-1] or early_sqrt.shape[-2] != h_prior.shape[-2]:
        raise InputError(
            f"early_sqrt {early_sqrt.shape[-2:]} and RETF prior {h_prior.shape[-2:]} differ"
        )
    if np.max(np.abs(h_prior[..., 0, :] - 1.0), initial=0.0) > 1e-9:
        raise InputError("RETF prior first row must equal 1")
    early_sqrt, h_prior = np.broadcast_arrays(early_sqrt, h_prior)

    h = h_prior.copy()
    phi_s = _initial_psd(early_sqrt, h)
    for _ in range(iters):
        omega, _ = procrustes_rotation(early_sqrt, h * np.sqrt(phi_s)[..., np.newaxis, :])
        a = early_sqrt @ omega
        norms = np.sum(np.abs(h) ** 2, axis=-2)
        amplitude = np.abs(np.sum(np.conj(h) * a, axis=-2)) / norms
        phi_s = amplitude**2

        pin = a[..., 0, :]
        valid = np.abs(pin) > PIN_TOLERANCE * np.linalg.norm(a, axis=-2)
        active = valid if activity_floor is None else valid & (phi_s > activity_floor)
        candidate = a / np.where(valid, pin, 1.0)[..., np.newaxis, :]
        blended = (1.0 - step) * h_prior + step * candidate
        h = np.where(active[..., np.newaxis, :], blended, h_prior)
        h[..., 0, :] = 1.0
    return phi_s, h


def extract_target(
    phi_s: np.ndarray, h_post: np.ndarray, target: Sequence[int]
) -> tuple[np.ndarray, np.ndarray]:
    """phi_sT = sum of target PSDs, H_T = target columns."""
    target = list(target)
    return np.sum(np.asarray(phi_s)[..., target], axis=-1), np.asarray(h_post)[..., target]


def oracle_estimates(
    reference: np.ndarray,
    true_retfs: np.ndarray,
    target: Sequence[int] = (0,),
    smoothing: float = 0.0,
) -> tuple[np.ndarray, np.ndarray]:
    """
    Ground-truth PSD and RETF streams.

    Args:
        reference: STFT of the target early reference s_T [frames x K]
        true_retfs: True RETFs of all sources [K x M x N]
        target: Target source indices
        smoothing: Recursive smoothing constant of |s_T|^2 (0 = none)

    Returns:
        (phi_sT [frames x K], H_T [K x M x N_T])
    """
    if not 0.0 <= smoothing < 1.0:
        raise ConfigurationError(f"oracle smoothing must lie in [0, 1), got {smoothing}")
    power = np.abs(np.asarray(reference, dtype=np.complex128)) ** 2
    if smoothing > 0:
        power = lfilter([1.0 - smoothing], [1.0, -smoothing], power, axis=0)
    return power, np.asarray(true_retfs, dtype=np.complex128)[..., list(target)]


def anchored_retfs(num_bins: int, num_mics: int, num_sources: int) -> np.ndarray:
    """Identity-anchored guess, column n = e_1 + e_(n+1)."""
    if num_sources >= num_mics:
        raise ConfigurationError(f"Need N < M, got N={num_sources}, M={num_mics}")
    h = np.zeros((num_bins, num_mics, num_sources), dtype=np.complex128)
    h[:, 0, :] = 1.0
    h[:, np.arange(1, num_sources + 1), np.arange(num_sources)] = 1.0
    return h


def initial_retfs(
    mode: str,
    stft_config: StftConfig,
    num_mics: int,
    num_sources: int,
    true_retfs: Optional[np.ndarray] = None,
    positions: Optional[np.ndarray] = None,
    doas_deg: Optional[Sequence[float]] = None,
) -> np.ndarray:
    """
    Initial RETF estimate H(0) [K x M x N].

    Raises:
        ConfigurationError: If the mode lacks the information it needs
    """
    if mode == "truth":
        if true_retfs is None:
            raise ConfigurationError("initial_retf 'truth' needs ground-truth RETFs (synthetic scene)")
        return np.asarray(true_retfs, dtype=np.complex128).copy()
    if mode == "doa":
        if positions is None or doas_deg is None:
            raise ConfigurationError("initial_retf 'doa' needs array geometry and source DoAs")
        return steering_retfs(positions, doas_deg, stft_config.sample_rate, stft_config.window_length)
    if mode == "anchored":
        return anchored_retfs(stft_config.num_bins, num_mics, num_sources)
    raise ConfigurationError(f"Unknown initial_retf mode {mode!r}")


class Estimator(Protocol):
    """Per-frame source of (phi_sT [K], H_T [K x M x N_T])."""

    last_retf_change: float

    def update(self, y_frame: np.ndarray) -> tuple[np.ndarray, np.ndarray]: ...


class BlindEstimator:
    """Blind PSD/RETF estimator over all bins of a frame."""

    def __init__(
        self,
        config: EstimatorConfig,
        stft_config: StftConfig,
        gamma: np.ndarray,
        h_init: np.ndarray,
    ):
        gamma = np.asarray(gamma, dtype=np.float64)
        h_init = np.asarray(h_init, dtype=np.complex128)
        num_bins, num_mics = gamma.shape[0], gamma.shape[-1]
        if h_init.shape != (num_bins, num_mics, config.num_sources):
            raise InputError(
                f"Initial RETFs have shape {h_init.shape}, expected "
                f"{(num_bins, num_mics, config.num_sources)}"
            )
        if config.num_sources >= num_mics:
            raise ConfigurationError(f"Need N < M, got N={config.num_sources}, M={num_mics}")

        self.config = config
        self.num_mics = num_mics
        self.lam = smoothing_constant(stft_config, config.smoothing_time)
        self.gamma = gamma + config.loading * np.eye(num_mics)
        self.cov = SmoothedCovariance.zeros((num_bins,), num_mics, self.lam)
        self.h = h_init.copy()
        self.history = np.zeros((config.activity_frames, num_bins, config.num_sources))
        self.frame_index = 0
        self.last_retf_change = 0.0
        self.skipped_columns = 0

    def update(self, y_frame: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        self.cov = smooth_covariance(self.cov, y_frame)
        sigma_sm, x = gevd(self.cov.psi, self.gamma)
        trace = np.real(np.trace(self.cov.psi, axis1=-2, axis2=-1))
        floor = DESMOOTH_FLOOR * trace / self.num_mics
        sigma = desmooth_eigenvalues(sigma_sm, self.cov.sigma_prev, self.lam, floor[..., np.newaxis])
        self.cov.sigma_prev = sigma_sm

        decomposition = decompose(sigma, x, self.gamma, self.config.num_sources)
        frames_seen = min(self.frame_index, self.config.activity_frames)
        if frames_seen:
            activity_floor = self.config.activity_ratio * np.mean(self.history[:frames_seen], axis=0)
        else:
            activity_floor = None
        phi_s, h_post = fit_square_root(
            decomposition.early_sqrt,
            self.h,
            iters=self.config.iterations,
            step=self.config.retf_step,
            activity_floor=activity_floor,
        )

        unchanged = np.all(h_post == self.h, axis=-2)
        skipped = int(np.count_nonzero(unchanged & (phi_s > 0)))
        if skipped:
            logger.debug(f"Frame {self.frame_index}: RETF update skipped for {skipped} column(s)")
        self.skipped_columns += skipped

        self.last_retf_change = float(
            np.mean(np.linalg.norm(h_post - self.h, axis=(-2, -1)) / np.linalg.norm(self.h, axis=(-2, -1)))
        )
        self.history = np.roll(self.history, 1, axis=0)
        self.history[0] = phi_s
        self.h = h_post
        self.frame_index += 1
        return extract_target(phi_s, h_post, self.config.target)


class OracleEstimator:
    """
    Replays precomputed ground-truth streams frame by frame.

    Args:
        phi_st: Target PSD per frame [frames x K]
        h_t: Target RETFs, constant [K x M x N_T] or per frame [frames x K x M x N_T]
    """

    def __init__(self, phi_st: np.ndarray, h_t: np.ndarray):
        self.phi_st = np.asarray(phi_st, dtype=np.float64)
        self.h_t = np.asarray(h_t, dtype=np.complex128)
        if self.h_t.ndim == 4 and self.h_t.shape[0] != self.phi_st.shape[0]:
            raise InputError(
                f"Oracle streams misaligned: {self.phi_st.shape[0]} PSD frames, {self.h_t.shape[0]} RETF frames"
            )
        self._h_prev = None
        self.frame_index = 0
        self.last_retf_change = 0.0

    def update(self, y_frame: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if self.frame_index >= self.phi_st.shape[0]:
            raise InputError(
                f"Oracle PSD stream has {self.phi_st.shape[0]} frames, frame {self.frame_index} requested"
            )
        phi_st = self.phi_st[self.frame_index]
        h_t = self.h_t[self.frame_index] if self.h_t.ndim == 4 else self.h_t
        if self._h_prev is not None and h_t is not self._h_prev:
            self.last_retf_change = float(
                np.mean(np.linalg.norm(h_t - self._h_prev, axis=(-2, -1)) / np.linalg.norm(self._h_prev, axis=(-2, -1)))
            )
        self._h_prev = h_t
        self.frame_index += 1
        return phi_st, h_t
