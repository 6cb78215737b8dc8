"""Random test data."""

import numpy as np


def random_retf(rng: np.random.Generator, num_mics: int, num_targets: int) -> np.ndarray:
    """Random complex RETFs [M x N_T] with unit first row."""
    h = rng.standard_normal((num_mics, num_targets)) + 1j * rng.standard_normal((num_mics, num_targets))
    h[0] = 1.0
    return h


def random_psd(rng: np.random.Generator, dim: int) -> np.ndarray:
    """Well-conditioned random Hermitian positive definite matrix."""
    a = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    return a @ a.conj().T / dim + 0.1 * np.eye(dim)
