"""Tests for the blind and oracle PSD/RETF estimators."""

import numpy as np
import pytest

from isclp.errors import ConfigurationError, InputError
from isclp.estimation import (
    BlindEstimator,
    EstimatorConfig,
    OracleEstimator,
    SmoothedCovariance,
    anchored_retfs,
    decompose,
    desmooth_eigenvalues,
    extract_target,
    fit_square_root,
    initial_retfs,
    oracle_estimates,
    smooth_covariance,
    smoothing_constant,
)
from isclp.linalg import gevd, hermitian
from isclp.spatial import diffuse_coherence, linear_array, steering_retfs
from isclp.stft import StftConfig
from tests.helpers import random_retf


def test_smoothing_constant_default():
    assert smoothing_constant(StftConfig()) == pytest.approx(np.exp(-256 / (16000 * 0.05)))


def test_smooth_covariance_recursion(rng):
    cov = SmoothedCovariance.zeros((), 3, 0.5)
    y = rng.standard_normal(3) + 1j * rng.standard_normal(3)
    cov = smooth_covariance(cov, y)
    np.testing.assert_allclose(cov.psi, 0.5 * np.outer(y, y.conj()))
    cov = smooth_covariance(cov, y)
    np.testing.assert_allclose(cov.psi, 0.75 * np.outer(y, y.conj()))


def test_desmoothing_inverts_recursive_average(rng):
    lam = 0.9
    sequence = rng.uniform(0.1, 10.0, (500, 4))
    smoothed = np.zeros_like(sequence)
    previous = np.zeros(4)
    for t, values in enumerate(sequence):
        previous = lam * previous + (1 - lam) * values
        smoothed[t] = previous
    shifted = np.vstack([np.zeros((1, 4)), smoothed[:-1]])
    restored = desmooth_eigenvalues(smoothed, shifted, lam)
    assert np.max(np.abs(restored - sequence)) < 1e-10


def test_desmoothing_floor():
    assert desmooth_eigenvalues(np.array([0.1]), np.array([1.0]), 0.5, floor=0.01)[0] == 0.01


@pytest.mark.parametrize("lam", [0.0, 1.0, 1.5])
def test_desmoothing_rejects_lambda(lam):
    with pytest.raises(ConfigurationError):
        desmooth_eigenvalues(np.ones(2), np.ones(2), lam)


@pytest.mark.parametrize("num_sources", [1, 2])
def test_gevd_model_recovery(rng, num_sources):
    gamma_all = diffuse_coherence(linear_array(5), 16000, 512).gamma
    for _ in range(100):
        gamma = gamma_all[int(rng.integers(32, 200))]
        h = random_retf(rng, 5, num_sources)
        p = rng.uniform(0.5, 2.0, num_sources)
        phi_d = rng.uniform(0.1, 2.0)
        psi = h @ np.diag(p) @ hermitian(h) + phi_d * gamma

        sigma, x = gevd(psi, gamma)
        decomposition = decompose(sigma, x, gamma, num_sources)
        assert decomposition.phi_d == pytest.approx(phi_d, rel=1e-6)
        early = decomposition.early_sqrt
        np.testing.assert_allclose(early @ hermitian(early), psi - phi_d * gamma, atol=1e-6)

        phi_s, h_post = fit_square_root(early, h)
        np.testing.assert_allclose(phi_s, p, rtol=1e-6)
        np.testing.assert_allclose(h_post, h, atol=1e-6)


def test_decompose_rejects_too_many_sources(rng):
    with pytest.raises(InputError):
        decompose(np.ones(3), np.eye(3), np.eye(3), 3)


def test_fit_square_root_pins_reference_row(rng):
    early = rng.standard_normal((4, 2)) + 1j * rng.standard_normal((4, 2))
    phi_s, h = fit_square_root(early, random_retf(rng, 4, 2))
    np.testing.assert_allclose(h[0], 1.0)
    assert np.all(phi_s >= 0)


@pytest.mark.parametrize("iters", [1, 5])
def test_fit_square_root_undoes_unknown_rotation(rng, iters):
    for _ in range(20):
        h = random_retf(rng, 5, 2)
        d = rng.uniform(0.5, 2.0, 2) * np.exp(2j * np.pi * rng.uniform(size=2))
        omega, _ = np.linalg.qr(rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2)))
        early = h @ np.diag(d) @ hermitian(omega)
        phi_s, h_post = fit_square_root(early, h, iters=iters)
        np.testing.assert_allclose(phi_s, np.abs(d) ** 2, rtol=1e-6)
        np.testing.assert_allclose(h_post, h, atol=1e-6)


def test_fit_square_root_inactive_column_keeps_prior(rng):
    h_true = random_retf(rng, 4, 1)
    prior = random_retf(rng, 4, 1)
    early = 0.01 * h_true
    _, h = fit_square_root(early, prior, activity_floor=np.array([1.0]))
    np.testing.assert_array_equal(h, prior)


def test_fit_square_root_blends_toward_candidate(rng):
    h_true = random_retf(rng, 4, 1)
    prior = random_retf(rng, 4, 1)
    _, h = fit_square_root(2.0 * h_true, prior, iters=1, step=0.2)
    np.testing.assert_allclose(h, 0.8 * prior + 0.2 * h_true, atol=1e-12)


def test_fit_square_root_rejects_unpinned_prior(rng):
    with pytest.raises(InputError):
        fit_square_root(np.ones((3, 1)), np.full((3, 1), 2.0))


def test_extract_target():
    phi_s = np.array([[1.0, 2.0, 3.0]])
    h = np.arange(12).reshape(1, 4, 3)
    phi_st, h_t = extract_target(phi_s, h, (0, 2))
    np.testing.assert_array_equal(phi_st, [4.0])
    np.testing.assert_array_equal(h_t, h[..., [0, 2]])


def test_oracle_estimates_smoothing(rng):
    reference = rng.standard_normal((10, 5)) + 1j * rng.standard_normal((10, 5))
    retfs = np.ones((5, 3, 2), dtype=np.complex128)
    phi_st, h_t = oracle_estimates(reference, retfs, target=(1,))
    np.testing.assert_allclose(phi_st, np.abs(reference) ** 2)
    assert h_t.shape == (5, 3, 1)

    smoothed, _ = oracle_estimates(reference, retfs, smoothing=0.5)
    np.testing.assert_allclose(smoothed[0], 0.5 * np.abs(reference[0]) ** 2)
    np.testing.assert_allclose(smoothed[1], 0.5 * smoothed[0] + 0.5 * np.abs(reference[1]) ** 2)


def test_oracle_estimator_streams():
    phi_st = np.ones((3, 4))
    h_stream = np.ones((3, 4, 2, 1), dtype=np.complex128)
    h_stream[2, :, 1, 0] = 2.0
    oracle = OracleEstimator(phi_st, h_stream)
    oracle.update(None)
    oracle.update(None)
    assert oracle.last_retf_change == 0.0
    _, h_t = oracle.update(None)
    assert oracle.last_retf_change > 0.0
    np.testing.assert_array_equal(h_t, h_stream[2])
    with pytest.raises(InputError):
        oracle.update(None)


def test_oracle_estimator_misaligned():
    with pytest.raises(InputError):
        OracleEstimator(np.ones((3, 4)), np.ones((2, 4, 2, 1)))


def test_estimator_config_validation():
    with pytest.raises(ConfigurationError):
        EstimatorConfig(kind="magic")
    with pytest.raises(ConfigurationError):
        EstimatorConfig(num_sources=1, target=(1,))
    with pytest.raises(ConfigurationError):
        EstimatorConfig(initial_retf="guess")
    assert EstimatorConfig(num_sources=2, target=[1, 0]).num_targets == 2


def test_initial_retfs_modes():
    config = StftConfig()
    anchored = initial_retfs("anchored", config, 4, 2)
    np.testing.assert_array_equal(anchored[5], anchored_retfs(257, 4, 2)[5])
    np.testing.assert_array_equal(anchored[0, :, 1], [1, 0, 1, 0])

    doa = initial_retfs("doa", config, 4, 1, positions=linear_array(4), doas_deg=[30.0])
    np.testing.assert_allclose(doa, steering_retfs(linear_array(4), [30.0], 16000, 512))

    with pytest.raises(ConfigurationError):
        initial_retfs("truth", config, 4, 1)
    with pytest.raises(ConfigurationError):
        initial_retfs("doa", config, 4, 1)


def test_blind_estimator_tracks_static_source(rng):
    config = StftConfig()
    positions = linear_array(4)
    gamma = diffuse_coherence(positions, 16000, 512).gamma
    h_true = steering_retfs(positions, [20.0], 16000, 512)
    estimator = BlindEstimator(EstimatorConfig(kind="blind"), config, gamma, h_true)

    # Point source plus weak spatially white noise
    for _ in range(200):
        s = rng.standard_normal(257) + 1j * rng.standard_normal(257)
        noise = 0.01 * (rng.standard_normal((257, 4)) + 1j * rng.standard_normal((257, 4)))
        phi_st, h_t = estimator.update(h_true[:, :, 0] * s[:, np.newaxis] + noise)

    assert phi_st.shape == (257,)
    assert h_t.shape == (257, 4, 1)
    assert np.all(phi_st >= 0)
    np.testing.assert_allclose(h_t[:, 0, 0], 1.0)
    error = np.linalg.norm(h_t - h_true, axis=(1, 2)) / np.linalg.norm(h_true, axis=(1, 2))
    assert np.median(error[16:]) < 0.1


def test_blind_estimator_shape_check():
    gamma = diffuse_coherence(linear_array(3), 16000, 512).gamma
    with pytest.raises(InputError):
        BlindEstimator(EstimatorConfig(kind="blind"), StftConfig(), gamma, np.ones((257, 3, 2)))
