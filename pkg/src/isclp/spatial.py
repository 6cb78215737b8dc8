"""
Spatial pre-processing of the ISCLP signal paths.

Builds, per frequency bin, the matched filter (MF) g with g^H H_T = 1^T, the
blocking matrix (BM) B with B^H H_T = 0, and the spherically isotropic
(diffuse) coherence matrix Gamma of the microphone array.
"""

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import null_space

from isclp.errors import InputError, NumericalError
from isclp.linalg import gram_pinv, hermitian, solve_gram

logger = logging.getLogger(__name__)

SOUND_SPEED = 343.0

# Relative singular value below which a BM candidate counts as rank deficient
BM_RANK_TOLERANCE = 1e-8

# Relative RETF change that triggers an MF/BM rebuild for a bin
REBUILD_THRESHOLD = 1e-6


@dataclass
class RetfMatrix:
    """
    Relative early transfer functions of all N point sources.

    Attributes:
        h: Complex [..., M, N], first row pinned to 1
        target: Ordered indices of the target sources T (|T| = N_T < M)
    """

    h: np.ndarray
    target: tuple[int, ...] = (0,)

    def __post_init__(self):
        self.h = np.asarray(self.h, dtype=np.complex128)
        self.target = tuple(int(t) for t in self.target)
        if self.h.ndim < 2:
            raise InputError(f"RETF matrix must be [..., M, N], got {self.h.shape}")
        num_mics, num_sources = self.h.shape[-2:]
        if num_sources >= num_mics:
            raise InputError(f"Need N < M, got N={num_sources}, M={num_mics}")
        if not self.target or len(set(self.target)) != len(self.target):
            raise InputError(f"Target set must be non-empty and unique, got {self.target}")
        if min(self.target) < 0 or max(self.target) >= num_sources:
            raise InputError(f"Target indices {self.target} out of range for N={num_sources}")
        if not np.all(np.isfinite(self.h)):
            raise InputError("RETF matrix contains non-finite entries")
        if np.max(np.abs(self.h[..., 0, :] - 1.0)) > 1e-9:
            raise InputError("RETF matrix first row must equal 1")

    @property
    def num_targets(self) -> int:
        return len(self.target)

    @property
    def h_target(self) -> np.ndarray:
        """H_T: target columns [..., M, N_T]."""
        return self.h[..., list(self.target)]


@dataclass
class CoherenceModel:
    """
    Diffuse-field coherence of a microphone array.

    Attributes:
        mic_positions: Real [M x 3] in meters
        sound_speed: Speed of sound in m/s
        gamma: Real [K x M x M] coherence per bin
    """

    mic_positions: np.ndarray
    sound_speed: float = SOUND_SPEED
    gamma: np.ndarray = field(default=None, repr=False)

    @property
    def num_mics(self) -> int:
        return self.mic_positions.shape[0]


def normalize_retf(h: np.ndarray) -> np.ndarray:
    """Scale each column so that its first (reference microphone) entry is 1."""
    h = np.asarray(h, dtype=np.complex128)
    return h / h[..., :1, :]


def _as_positions(positions: np.ndarray) -> np.ndarray:
    positions = np.asarray(positions, dtype=np.float64)
    if positions.ndim != 2 or positions.shape[1] > 3:
        raise InputError(f"Microphone positions must be [M x 3], got {positions.shape}")
    if positions.shape[1] < 3:
        positions = np.pad(positions, ((0, 0), (0, 3 - positions.shape[1])))
    return positions


def linear_array(num_mics: int, spacing: float = 0.08) -> np.ndarray:
    """Uniform linear array along the x axis, first microphone at the origin."""
    if num_mics < 1 or spacing <= 0:
        raise InputError(f"Invalid linear array: M={num_mics}, spacing={spacing}")
    positions = np.zeros((num_mics, 3))
    positions[:, 0] = np.arange(num_mics) * spacing
    return positions


def diffuse_coherence(
    positions: np.ndarray,
    sample_rate: int,
    window_length: int,
    sound_speed: float = SOUND_SPEED,
) -> CoherenceModel:
    """
    Spherically isotropic coherence Gamma_ij(k) = sinc(2 pi f_k d_ij / c).

    Args:
        positions: Microphone positions [M x 3] in meters
        sample_rate: Sampling rate in Hz
        window_length: STFT length, f_k = k * fs / window_length
        sound_speed: Speed of sound in m/s

    Raises:
        InputError: Fewer than two microphones or coincident microphones
    """
    positions = _as_positions(positions)
    num_mics = positions.shape[0]
    if num_mics < 2:
        raise InputError("Diffuse coherence needs at least 2 microphones")

    distances = np.linalg.norm(positions[:, np.newaxis, :] - positions[np.newaxis, :, :], axis=-1)
    off_diagonal = ~np.eye(num_mics, dtype=bool)
    if np.any(distances[off_diagonal] <= 0):
        raise InputError("Coincident microphone positions")

    freqs = np.arange(window_length // 2 + 1) * sample_rate / window_length
    # np.sinc is the normalized sinc: sin(pi x) / (pi x)
    gamma = np.sinc(2.0 * freqs[:, np.newaxis, np.newaxis] * distances / sound_speed)
    return CoherenceModel(mic_positions=positions, sound_speed=sound_speed, gamma=gamma)


def steering_retfs(
    positions: np.ndarray,
    doas_deg: Sequence[float],
    sample_rate: int,
    window_length: int,
    sound_speed: float = SOUND_SPEED,
) -> np.ndarray:
    """
    Far-field RETFs for sources in the x-y plane.

    The DoA is measured from broadside (the y axis); 0 deg faces the array.

    Returns:
        Complex [K x M x N] with unit first row
    """
    positions = _as_positions(positions)
    doas = np.deg2rad(np.atleast_1d(np.asarray(doas_deg, dtype=np.float64)))
    directions = np.stack([np.sin(doas), np.cos(doas), np.zeros_like(doas)], axis=-1)
    # Arrival time relative to microphone 1 [M x N]
    delays = -((positions - positions[0]) @ directions.T) / sound_speed
    freqs = np.arange(window_length // 2 + 1) * sample_rate / window_length
    return np.exp(-2j * np.pi * freqs[:, np.newaxis, np.newaxis] * delays)


def build_mf(h_t: np.ndarray) -> np.ndarray:
    """
    Matched filter g = H_T (H_T^H H_T)^-1 1.

    Args:
        h_t: Target RETFs [..., M, N_T]

    Returns:
        g [..., M] with g^H H_T = 1^T

    Raises:
        NumericalError: If H_T is rank deficient
    """
    h_t = np.asarray(h_t, dtype=np.complex128)
    return solve_gram(h_t, np.ones(h_t.shape[:-2] + (h_t.shape[-1],)))


def _repair_bm(projection: np.ndarray, h_t: np.ndarray, columns: int) -> np.ndarray:
    """Rank repair for a single bin: largest-norm projection columns, then SVD null space."""
    norms = np.linalg.norm(projection, axis=0)
    picked = np.sort(np.argsort(-norms, kind="stable")[:columns])
    candidate = projection[:, picked]
    s = np.linalg.svd(candidate, compute_uv=False)
    if s[0] > 0 and s[-1] >= BM_RANK_TOLERANCE * s[0]:
        return candidate

    basis = null_space(hermitian(h_t))
    if basis.shape[1] < columns:
        raise NumericalError(
            f"Blocking matrix cannot be built: null space of H_T has dimension "
            f"{basis.shape[1]} < {columns}"
        )
    return basis[:, :columns]


def build_bm(h_t: np.ndarray) -> np.ndarray:
    """
    Blocking matrix from the first M - N_T columns of I - H_T (H_T^H H_T)^-1 H_T^H.

    When those columns are rank deficient (e.g. h = e_1), the M - N_T
    projection columns with the largest norms are used instead, and failing
    that an orthonormal null-space basis.

    Args:
        h_t: Target RETFs [..., M, N_T]

    Returns:
        B [..., M, M - N_T] with B^H H_T = 0 and full column rank

    Raises:
        NumericalError: If H_T is rank deficient
    """
    h_t = np.asarray(h_t, dtype=np.complex128)
    num_mics, num_targets = h_t.shape[-2:]
    columns = num_mics - num_targets
    projection = np.eye(num_mics) - gram_pinv(h_t) @ hermitian(h_t)
    blocking = projection[..., :columns].copy()

    s = np.linalg.svd(blocking, compute_uv=False)
    deficient = (s[..., 0] == 0) | (s[..., -1] < BM_RANK_TOLERANCE * s[..., 0])
    if np.any(deficient):
        batch_shape = blocking.shape[:-2]
        for index in np.argwhere(np.broadcast_to(deficient, batch_shape)):
            index = tuple(index)
            logger.debug(f"Blocking matrix rank repair at bin {index}")
            blocking[index] = _repair_bm(projection[index], h_t[index], columns)
    return blocking


class SpatialPreprocessor:
    """
    Per-bin MF and BM that follow an evolving RETF estimate.

    Bins are rebuilt only when their target RETFs change by more than
    REBUILD_THRESHOLD relative (Frobenius norm) since the last build.
    """

    def __init__(self, num_bins: int, num_mics: int, num_targets: int):
        self.num_bins = num_bins
        self.num_mics = num_mics
        self.num_targets = num_targets
        self.h_t = None
        self.g = np.zeros((num_bins, num_mics), dtype=np.complex128)
        self.b = np.zeros((num_bins, num_mics, num_mics - num_targets), dtype=np.complex128)
        self.total_rebuilds = 0

    def update(self, h_t: np.ndarray) -> int:
        """
        Track a new RETF estimate.

        Args:
            h_t: Target RETFs [K x M x N_T]

        Returns:
            Number of bins whose MF/BM were rebuilt
        """
        h_t = np.asarray(h_t, dtype=np.complex128)
        expected = (self.num_bins, self.num_mics, self.num_targets)
        if h_t.shape != expected:
            raise InputError(f"RETF stream frame has shape {h_t.shape}, expected {expected}")

        if self.h_t is None:
            changed = np.ones(self.num_bins, dtype=bool)
        else:
            delta = np.linalg.norm(h_t - self.h_t, axis=(-2, -1))
            changed = delta > REBUILD_THRESHOLD * np.linalg.norm(self.h_t, axis=(-2, -1))
            if not np.any(changed):
                return 0

        self.g[changed] = build_mf(h_t[changed])
        self.b[changed] = build_bm(h_t[changed])
        if self.h_t is None:
            self.h_t = h_t.copy()
        else:
            self.h_t[changed] = h_t[changed]

        rebuilt = int(np.count_nonzero(changed))
        self.total_rebuilds += rebuilt
        return rebuilt
