"""Tests for matched filter, blocking matrix and diffuse coherence."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from isclp.errors import InputError
from isclp.linalg import hermitian
from isclp.spatial import (
    SOUND_SPEED,
    RetfMatrix,
    SpatialPreprocessor,
    build_bm,
    build_mf,
    diffuse_coherence,
    linear_array,
    steering_retfs,
)
from tests.helpers import random_retf


def test_diffuse_coherence_values():
    positions = linear_array(3, spacing=0.05)
    gamma = diffuse_coherence(positions, 16000, 512).gamma
    assert gamma.shape == (257, 3, 3)
    np.testing.assert_allclose(np.diagonal(gamma, axis1=1, axis2=2), 1.0)
    np.testing.assert_allclose(gamma[0], 1.0)
    np.testing.assert_allclose(gamma, np.swapaxes(gamma, 1, 2))

    k = 100
    x = 2 * np.pi * (k * 16000 / 512) * 0.1 / SOUND_SPEED
    assert gamma[k, 0, 2] == pytest.approx(np.sin(x) / x)


def test_diffuse_coherence_needs_distinct_mics():
    positions = np.zeros((2, 3))
    with pytest.raises(InputError):
        diffuse_coherence(positions, 16000, 512)


def test_steering_retfs():
    h = steering_retfs(linear_array(4), [0.0, 45.0], 16000, 512)
    assert h.shape == (257, 4, 2)
    np.testing.assert_allclose(h[:, 0, :], 1.0)
    np.testing.assert_allclose(np.abs(h), 1.0)
    # Broadside arrival is simultaneous at every microphone
    np.testing.assert_allclose(h[:, :, 0], 1.0)


def test_retf_matrix_validation():
    with pytest.raises(InputError):
        RetfMatrix(np.ones((2, 2)))
    with pytest.raises(InputError):
        RetfMatrix(np.full((3, 1), 2.0))
    retfs = RetfMatrix(np.ones((4, 2)), target=(1,))
    assert retfs.h_target.shape == (4, 1)


@settings(max_examples=200, deadline=None)
@given(
    num_mics=st.sampled_from([3, 5]),
    num_targets=st.sampled_from([1, 2]),
    seed=st.integers(min_value=0, max_value=2**32 - 1),
)
def test_mf_bm_constraints(num_mics, num_targets, seed):
    h = random_retf(np.random.default_rng(seed), num_mics, num_targets)
    g, b = build_mf(h), build_bm(h)
    assert np.max(np.abs(np.conj(g) @ h - 1.0)) < 1e-10
    assert np.max(np.abs(hermitian(b) @ h)) < 1e-10
    assert b.shape == (num_mics, num_mics - num_targets)
    assert np.linalg.matrix_rank(b) == num_mics - num_targets


def test_bm_rank_repair_for_reference_only_retf():
    h = np.zeros((3, 1), dtype=np.complex128)
    h[0] = 1.0
    b = build_bm(h)
    assert np.max(np.abs(hermitian(b) @ h)) < 1e-12
    assert np.linalg.matrix_rank(b) == 2


def test_batched_mf_bm(rng):
    h = np.stack([random_retf(rng, 4, 1) for _ in range(6)])
    g, b = build_mf(h), build_bm(h)
    assert g.shape == (6, 4)
    assert b.shape == (6, 4, 3)
    np.testing.assert_allclose(np.einsum("km,kmn->kn", np.conj(g), h), 1.0, atol=1e-10)


def test_preprocessor_rebuilds_only_changed_bins(rng):
    h = np.stack([random_retf(rng, 3, 1) for _ in range(5)])
    spatial = SpatialPreprocessor(5, 3, 1)
    assert spatial.update(h) == 5
    assert spatial.update(h.copy()) == 0

    moved = h.copy()
    moved[2, 1, 0] += 0.5
    assert spatial.update(moved) == 1
    assert spatial.total_rebuilds == 6
    np.testing.assert_allclose(np.conj(spatial.g[2]) @ moved[2], 1.0, atol=1e-10)


def test_preprocessor_shape_check():
    spatial = SpatialPreprocessor(5, 3, 1)
    with pytest.raises(InputError):
        spatial.update(np.ones((4, 3, 1)))
