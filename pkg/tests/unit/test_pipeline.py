"""Tests for the enhancement orchestrator."""

from dataclasses import fields

import numpy as np
import pytest

from isclp.config import ArrayConfig, KalmanConfig
from isclp.errors import ConfigurationError, InputError
from isclp.estimation import EstimatorConfig, OracleEstimator
from isclp.pipeline import EnhancementStats, Enhancer
from isclp.scenario import SceneConfig, build_scene
from isclp.stft import StftConfig


def make_enhancer(kind="oracle", **kwargs) -> Enhancer:
    return Enhancer(StftConfig(), KalmanConfig(), EstimatorConfig(kind=kind), **kwargs)


@pytest.fixture(scope="module")
def truth():
    return build_scene(SceneConfig(duration=1.5, seed=2))


def test_process_scene_shapes(truth):
    result = make_enhancer().process_scene(truth)
    samples = truth.mix.shape[0]
    assert result.enhanced.shape == (samples,)
    assert result.prior.shape == (samples,)
    assert result.gamma.shape == (StftConfig().frames_for(samples), 257)
    assert np.all((result.gamma > 0) & (result.gamma <= 1))
    np.testing.assert_array_equal(result.enhanced, result.posterior)
    assert result.stats.frames == result.gamma.shape[0]


def test_prior_output_selection(truth):
    result = make_enhancer(output="prior").process_scene(truth)
    np.testing.assert_array_equal(result.enhanced, result.prior)


def test_invalid_output():
    with pytest.raises(ConfigurationError):
        make_enhancer(output="both")


def test_blind_scene_estimator(truth):
    result = make_enhancer(kind="blind").process_scene(truth)
    assert np.all(np.isfinite(result.enhanced))


def test_silence_in_silence_out():
    mix = np.zeros((8000, 3))
    frames = StftConfig().frames_for(8000)
    estimator = OracleEstimator(np.zeros((frames, 257)), np.ones((257, 3, 1)))
    result = make_enhancer().process(mix, estimator)
    np.testing.assert_array_equal(result.enhanced, 0.0)
    assert result.stats.skipped_updates == frames * 257


def test_mono_input_rejected():
    with pytest.raises(InputError):
        make_enhancer().process(np.zeros((1000, 1)), None)


def test_diagnostics_collected(truth):
    enhancer = make_enhancer(diagnostics=True, summary_interval=10)
    result = enhancer.process_scene(truth)
    assert enhancer.diagnostics.total_frames == result.stats.frames


def test_run_rejects_oracle(tmp_path):
    with pytest.raises(ConfigurationError):
        make_enhancer().run(tmp_path / "x.wav", tmp_path, ArrayConfig())


def test_run_missing_input(tmp_path):
    with pytest.raises(InputError, match="absent.wav"):
        make_enhancer(kind="blind").run(tmp_path / "absent.wav", tmp_path, ArrayConfig())


def test_stats_carry_only_run_counters():
    names = {f.name for f in fields(EnhancementStats)}
    assert names == {
        "duration_seconds",
        "frames",
        "wall_seconds",
        "skipped_updates",
        "floored_covariances",
        "output_path",
        "diagnostics_path",
    }
