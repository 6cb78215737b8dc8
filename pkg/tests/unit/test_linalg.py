"""Tests for the batched Hermitian linear algebra helpers."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from isclp.errors import InputError, NumericalError
from isclp.linalg import (
    cholesky,
    gevd,
    gram_pinv,
    hermitian,
    hermitian_evd,
    procrustes_rotation,
    psd_floor,
    solve_gram,
)
from tests.helpers import random_psd, random_retf


def test_hermitian_evd_descending(rng):
    a = random_psd(rng, 5)
    values, vectors = hermitian_evd(a)
    assert np.all(np.diff(values) <= 0)
    np.testing.assert_allclose(vectors @ np.diag(values) @ hermitian(vectors), a, atol=1e-12)


def test_hermitian_evd_batched(rng):
    stack = np.stack([random_psd(rng, 3) for _ in range(4)])
    values, vectors = hermitian_evd(stack)
    assert values.shape == (4, 3)
    assert vectors.shape == (4, 3, 3)


@settings(max_examples=30, deadline=None)
@given(dim=st.integers(min_value=2, max_value=6), seed=st.integers(min_value=0, max_value=2**16))
def test_gevd_normalization_and_eigen_equation(dim, seed):
    rng = np.random.default_rng(seed)
    psi, gamma = random_psd(rng, dim), random_psd(rng, dim)
    values, x = gevd(psi, gamma)
    np.testing.assert_allclose(hermitian(x) @ gamma @ x, np.eye(dim), atol=1e-9)
    np.testing.assert_allclose(psi @ x, gamma @ x @ np.diag(values), atol=1e-8)
    assert np.all(np.diff(values) <= 1e-12)


def test_gevd_dimension_mismatch(rng):
    with pytest.raises(InputError):
        gevd(random_psd(rng, 3), random_psd(rng, 4))


def test_cholesky_reports_failing_minor():
    matrix = np.diag([1.0, 2.0, -1.0])
    with pytest.raises(NumericalError) as excinfo:
        cholesky(matrix)
    assert excinfo.value.minor == 3


def test_cholesky_reports_batch_index(rng):
    stack = np.stack([random_psd(rng, 2), -np.eye(2)])
    with pytest.raises(NumericalError) as excinfo:
        cholesky(stack)
    assert excinfo.value.index == (1,)
    assert excinfo.value.minor == 1


def test_cholesky_loading_rescues_singular():
    singular = np.ones((3, 3))
    lower = cholesky(singular, loading=1e-6)
    np.testing.assert_allclose(lower @ hermitian(lower), singular + 1e-6 * np.eye(3), atol=1e-12)


def test_cholesky_rejects_negative_loading():
    with pytest.raises(InputError):
        cholesky(np.eye(2), loading=-1.0)


def test_solve_gram_satisfies_constraint(rng):
    h = random_retf(rng, 5, 2)
    g = solve_gram(h, np.ones(2))
    np.testing.assert_allclose(hermitian(h) @ g, np.ones(2), atol=1e-12)


def test_gram_pinv_rank_deficient():
    h = np.ones((4, 2), dtype=np.complex128)
    with pytest.raises(NumericalError):
        gram_pinv(h)


def test_procrustes_recovers_rotation(rng):
    a = rng.standard_normal((5, 2)) + 1j * rng.standard_normal((5, 2))
    q, _ = np.linalg.qr(rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2)))
    omega, degenerate = procrustes_rotation(a, a @ q)
    assert not degenerate
    np.testing.assert_allclose(omega, q, atol=1e-10)
    np.testing.assert_allclose(hermitian(omega) @ omega, np.eye(2), atol=1e-12)


def test_procrustes_degenerate_returns_identity(rng):
    b = rng.standard_normal((4, 2)) + 0j
    omega, degenerate = procrustes_rotation(np.zeros((4, 2)), b)
    assert degenerate
    np.testing.assert_array_equal(omega, np.eye(2))


def test_psd_floor_clips_negative_eigenvalues():
    matrix = np.diag([2.0, -1.0, 0.5]).astype(np.complex128)
    floored = psd_floor(matrix)
    np.testing.assert_allclose(np.linalg.eigvalsh(floored), [0.0, 0.5, 2.0], atol=1e-12)
