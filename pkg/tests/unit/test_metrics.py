"""Tests for fwseg-SIR and LPC cepstral distance."""

import numpy as np
import pytest
from scipy.signal import lfilter

from isclp.audio_io import synthetic_speech
from isclp.errors import InputError
from isclp.metrics import (
    CD_CEILING_DB,
    NUM_BANDS,
    SIR_CEILING_DB,
    cepstral_distance,
    fwseg_sir,
    lpc,
    lpc_cepstrum,
    mel_filterbank,
)


@pytest.fixture(scope="module")
def speech():
    return synthetic_speech(3.0, seed=7)


def test_identical_signals_hit_the_ceiling(speech):
    assert fwseg_sir(speech, speech) == pytest.approx(SIR_CEILING_DB)


def test_zero_estimate(speech):
    result = fwseg_sir(speech, np.zeros_like(speech))
    assert -10.0 <= result <= 0.0


def test_sir_orders_interference_levels(speech, rng):
    noise = rng.standard_normal(speech.size)
    light = fwseg_sir(speech, speech + 0.01 * noise)
    heavy = fwseg_sir(speech, speech + 0.3 * noise)
    assert light > heavy


def test_cepstral_distance_identical(speech):
    assert cepstral_distance(speech, speech) == pytest.approx(0.0, abs=1e-9)


def test_cepstral_distance_unrelated_noise(speech, rng):
    distance = cepstral_distance(speech, rng.standard_normal(speech.size))
    assert 4.0 <= distance <= CD_CEILING_DB


def test_cepstral_distance_tracks_noise_level(speech, rng):
    noise = rng.standard_normal(speech.size)
    noise *= np.sqrt(np.mean(speech**2) / np.mean(noise**2))
    at_20db = cepstral_distance(speech, speech + 0.1 * noise)
    at_0db = cepstral_distance(speech, speech + noise)
    # Mild noise must not saturate the measure
    assert at_20db < 6.0
    assert at_20db < at_0db


def test_cepstral_distance_silent_estimate_returns_ceiling(speech):
    assert cepstral_distance(speech, np.zeros_like(speech)) == CD_CEILING_DB


def test_lpc_recovers_ar1(rng):
    signal = lfilter([1.0], [1.0, -0.9], rng.standard_normal(8000))
    a = lpc(signal, order=1)
    assert a[0] == pytest.approx(-0.9, abs=0.02)


def test_lpc_silent_frame():
    assert lpc(np.zeros(512)) is None


def test_lpc_cepstrum_single_pole():
    a = np.zeros(10)
    a[0] = -0.9
    n = np.arange(1, 11)
    np.testing.assert_allclose(lpc_cepstrum(a), 0.9**n / n, atol=1e-12)


def test_mel_filterbank_shape():
    bank = mel_filterbank(NUM_BANDS, 512, 16000)
    assert bank.shape == (25, 257)
    assert np.all(bank >= 0)
    assert np.all(bank.max(axis=1) > 0)


@pytest.mark.parametrize(
    "reference,estimate",
    [
        (np.ones(1000), np.ones(999)),
        (np.ones(100), np.ones(100)),
        (np.zeros(1000), np.ones(1000)),
        (np.ones((1000, 2)), np.ones((1000, 2))),
    ],
)
def test_invalid_pairs(reference, estimate):
    with pytest.raises(InputError):
        fwseg_sir(reference, estimate)
    with pytest.raises(InputError):
        cepstral_distance(reference, estimate)
