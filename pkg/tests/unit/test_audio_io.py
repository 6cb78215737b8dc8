"""Tests for WAV I/O and source signals."""

import numpy as np
import pytest

from isclp.audio_io import (
    FileSignalSource,
    SyntheticSpeechSource,
    read_wav,
    synthetic_speech,
    write_wav,
)
from isclp.errors import InputError


def test_wav_round_trip(tmp_path, rng):
    data = 0.1 * rng.standard_normal((1000, 3))
    fmt = write_wav(tmp_path / "sub" / "x.wav", data, 16000)
    assert fmt.channels == 3
    assert fmt.bits_per_sample == 32
    restored, rate = read_wav(tmp_path / "sub" / "x.wav")
    assert rate == 16000
    np.testing.assert_allclose(restored, data, atol=1e-7)


def test_pcm16_mono_reads_as_column(tmp_path):
    write_wav(tmp_path / "m.wav", np.full(100, 0.5), 16000, subtype="PCM_16")
    data, _ = read_wav(tmp_path / "m.wav")
    assert data.shape == (100, 1)
    np.testing.assert_allclose(data, 0.5, atol=1e-4)


def test_missing_file_names_path(tmp_path):
    with pytest.raises(InputError, match="nope.wav"):
        read_wav(tmp_path / "nope.wav")


def test_unreadable_file(tmp_path):
    path = tmp_path / "bad.wav"
    path.write_bytes(b"not a wav file")
    with pytest.raises(InputError):
        read_wav(path)


def test_synthetic_speech_properties():
    signal = synthetic_speech(4.0, seed=1)
    assert signal.size == 64000
    assert np.sqrt(np.mean(signal**2)) == pytest.approx(1.0)
    np.testing.assert_array_equal(signal, synthetic_speech(4.0, seed=1))

    # Pauses between syllables: some 32 ms frames are silent
    frames = signal[: 64000 // 512 * 512].reshape(-1, 512)
    energy = np.sum(frames**2, axis=1)
    assert np.min(energy) < 1e-3 * np.max(energy)


def test_synthetic_speech_rejects_duration():
    with pytest.raises(InputError):
        synthetic_speech(0.0, seed=0)


def test_synthetic_source_reads_requested_length():
    source = SyntheticSpeechSource(seed=2)
    assert source.read(1600).shape == (1600,)
    assert source.read(0) is None


def test_file_source_loops(tmp_path):
    write_wav(tmp_path / "s.wav", np.column_stack([np.arange(4) / 10, np.zeros(4)]), 16000)
    source = FileSignalSource(tmp_path / "s.wav")
    np.testing.assert_allclose(source.read(10), np.tile(np.arange(4) / 10, 3)[:10], atol=1e-7)
    source.close()
    assert source.read(10) is None
