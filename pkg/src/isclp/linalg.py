"""
Small dense complex linear algebra evaluated per frequency bin.

All functions accept arrays with leading batch dimensions (typically the bin
axis), e.g. a stack of Hermitian matrices with shape [K x M x M], and operate
on the two trailing axes. Results are complex128.
"""

import logging

import numpy as np
from scipy.linalg import lapack

from isclp.errors import InputError, NumericalError

logger = logging.getLogger(__name__)

# Condition number above which H^H H is treated as singular
GRAM_CONDITION_LIMIT = 1e12

# Relative size of A^H B below which the Procrustes problem is degenerate
PROCRUSTES_DEGENERACY = 1e-12


def hermitian(a: np.ndarray) -> np.ndarray:
    """Conjugate transpose over the trailing two axes."""
    return np.conj(np.swapaxes(a, -1, -2))


def symmetrize(a: np.ndarray) -> np.ndarray:
    """Nearest Hermitian matrix, (A + A^H) / 2."""
    return 0.5 * (a + hermitian(a))


def _as_square(a: np.ndarray, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=np.complex128)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise InputError(f"{name} must be square over its last two axes, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InputError(f"{name} contains non-finite entries")
    return a


def cholesky(a: np.ndarray, loading: float = 0.0) -> np.ndarray:
    """
    Lower Cholesky factor of A + loading * I.

    Args:
        a: Hermitian matrix [..., D, D]
        loading: Non-negative diagonal loading

    Returns:
        Lower-triangular L with L @ L^H = A + loading * I

    Raises:
        NumericalError: If the loaded matrix is not positive definite; the
            error carries the order of the failing leading minor
    """
    if loading < 0:
        raise InputError(f"Diagonal loading must be >= 0, got {loading}")
    a = _as_square(a, "Cholesky input")
    loaded = symmetrize(a) + loading * np.eye(a.shape[-1])
    try:
        return np.linalg.cholesky(loaded)
    except np.linalg.LinAlgError:
        pass

    # Locate the offending matrix and leading minor for the error message
    batch_shape = loaded.shape[:-2]
    flat = loaded.reshape((-1,) + loaded.shape[-2:])
    for i, matrix in enumerate(flat):
        _, info = lapack.zpotrf(matrix, lower=1)
        if info > 0:
            index = np.unravel_index(i, batch_shape) if batch_shape else None
            raise NumericalError(
                f"Matrix is not positive definite: leading minor of order {info} "
                f"fails (loading={loading:g})",
                minor=int(info),
                index=index,
            )
    raise NumericalError("Cholesky factorization failed")


def hermitian_evd(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    Eigendecomposition of a Hermitian matrix, eigenvalues descending.

    Ties keep the order LAPACK returns them in, so the subspace selection is
    deterministic.

    Returns:
        (eigenvalues [..., D] real descending, eigenvectors [..., D, D] unitary)

    Raises:
        InputError: If the input has non-finite entries
    """
    a = _as_square(a, "EVD input")
    values, vectors = np.linalg.eigh(symmetrize(a))
    order = np.argsort(-values, axis=-1, kind="stable")
    values = np.take_along_axis(values, order, axis=-1)
    vectors = np.take_along_axis(vectors, order[..., np.newaxis, :], axis=-1)
    return values, vectors


def gevd(
    psi: np.ndarray, gamma: np.ndarray, loading: float = 0.0
) -> tuple[np.ndarray, np.ndarray]:
    """
    Generalized eigendecomposition Psi x = lambda (Gamma + loading I) x.

    Computed by Cholesky whitening of the loaded Gamma followed by a
    Hermitian EVD. Eigenvectors are normalized so that
    X^H (Gamma + loading I) X = I.

    Returns:
        (generalized eigenvalues [..., D] descending, eigenvectors [..., D, D])

    Raises:
        InputError: On dimension mismatch
        NumericalError: If Gamma + loading I is not positive definite
    """
    psi = _as_square(psi, "Psi")
    gamma = _as_square(gamma, "Gamma")
    if psi.shape[-1] != gamma.shape[-1]:
        raise InputError(
            f"Psi ({psi.shape[-1]}x{psi.shape[-1]}) and Gamma "
            f"({gamma.shape[-1]}x{gamma.shape[-1]}) dimensions differ"
        )
    lower = cholesky(gamma, loading)
    identity = np.broadcast_to(np.eye(gamma.shape[-1]), lower.shape)
    lower_inv = np.linalg.solve(lower, identity)
    whitened = lower_inv @ psi @ hermitian(lower_inv)
    values, vectors = hermitian_evd(whitened)
    return values, hermitian(lower_inv) @ vectors


def gram_pinv(h: np.ndarray) -> np.ndarray:
    """
    H (H^H H)^-1, the pseudoinverse of H^H.

    Raises:
        NumericalError: If H^H H is singular or its condition number
            exceeds GRAM_CONDITION_LIMIT
    """
    h = np.asarray(h, dtype=np.complex128)
    if h.ndim < 2 or h.shape[-1] > h.shape[-2]:
        raise InputError(f"H must be tall [..., M, N] with N <= M, got {h.shape}")
    gram = hermitian(h) @ h
    with np.errstate(divide="ignore", invalid="ignore"):
        condition = np.linalg.cond(gram)
    bad = ~np.isfinite(condition) | (condition >= GRAM_CONDITION_LIMIT)
    if np.any(bad):
        index = tuple(int(i) for i in np.argwhere(bad)[0]) if np.ndim(bad) else None
        raise NumericalError(
            f"H^H H is rank deficient (condition number {np.max(condition):.3g})",
            index=index,
        )
    return h @ np.linalg.inv(gram)


def solve_gram(h: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """
    Compute H (H^H H)^-1 rhs.

    Args:
        h: Full column rank matrix [..., M, N]
        rhs: Vector [..., N]

    Returns:
        Vector [..., M] satisfying H^H result = rhs
    """
    rhs = np.asarray(rhs, dtype=np.complex128)
    return (gram_pinv(h) @ rhs[..., np.newaxis])[..., 0]


def procrustes_rotation(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    Unitary Omega minimizing ||A Omega - B||_F.

    Omega = U V^H from the SVD U S V^H of A^H B. When A^H B vanishes the
    problem has no unique solution; the identity is returned and flagged.

    Args:
        a: Complex [..., M, N] with N <= M
        b: Complex [..., M, N]

    Returns:
        (omega [..., N, N], degenerate flag [...] or bool)
    """
    a = np.asarray(a, dtype=np.complex128)
    b = np.asarray(b, dtype=np.complex128)
    if a.shape != b.shape or a.ndim < 2:
        raise InputError(f"Procrustes operands differ in shape: {a.shape} vs {b.shape}")
    if a.shape[-1] > a.shape[-2]:
        raise InputError(f"Procrustes requires N <= M, got {a.shape[-2:]}")

    cross = hermitian(a) @ b
    u, s, vh = np.linalg.svd(cross)
    omega = u @ vh

    scale = np.linalg.norm(a, axis=(-2, -1)) * np.linalg.norm(b, axis=(-2, -1))
    degenerate = (scale == 0) | (s[..., 0] <= PROCRUSTES_DEGENERACY * scale)
    identity = np.eye(a.shape[-1], dtype=np.complex128)
    omega = np.where(np.asarray(degenerate)[..., np.newaxis, np.newaxis], identity, omega)
    if np.ndim(degenerate) == 0:
        return omega, bool(degenerate)
    return omega, degenerate


def psd_floor(a: np.ndarray) -> np.ndarray:
    """Hermitian matrix with negative eigenvalues clipped to zero."""
    values, vectors = np.linalg.eigh(symmetrize(a))
    values = np.maximum(values, 0.0)
    return symmetrize((vectors * values[..., np.newaxis, :]) @ hermitian(vectors))
