"""Tests for the experiment runners and the selftest."""

import numpy as np
import pytest

from isclp.config import ExperimentConfig, RunConfig
from isclp.errors import ConfigurationError, InputError
from isclp.experiment import (
    METRIC_COLUMNS,
    MetricRow,
    concatenate_scenes,
    evaluate,
    median_rows,
    run_selftest,
    scene_variant,
)
from isclp.scenario import SceneConfig, build_scene


def test_selftest_passes():
    results = run_selftest(seed=0)
    assert len(results) == 7
    failed = [r.name for r in results if not r.passed]
    assert failed == []


def test_scene_variant_adds_interferer():
    base = SceneConfig()
    variant = scene_variant(base, seed=3, snr_db=5.0, interferer_doa=60.0)
    assert variant.seed == 3
    assert variant.snr_db == 5.0
    assert [(s.doa_deg, s.target) for s in variant.sources] == [(0.0, True), (60.0, False)]
    assert scene_variant(base, 0, None, None).sources == base.sources


def test_median_rows():
    rows = [
        MetricRow(f"s{i}", i, 10.0, 6, "oracle", None, 1.0, 1.0 + i, 5.0, 5.0 - i)
        for i in range(3)
    ]
    (median,) = median_rows(rows)
    assert median.scene == "median"
    assert median.sir_improvement == pytest.approx(1.0)
    assert median.cd_improvement == pytest.approx(-1.0)
    assert len(median.as_csv()) == len(METRIC_COLUMNS)
    assert median.as_csv()[5] == ""


def test_evaluate_window_outside_signal():
    signal = np.ones(16000)
    with pytest.raises(InputError):
        evaluate(signal, signal, signal, 16000, (4.0, 10.0))


def test_concatenate_scenes():
    first = build_scene(SceneConfig(duration=0.5, seed=0))
    second = build_scene(SceneConfig(duration=0.5, seed=1))
    joined = concatenate_scenes(first, second)
    assert joined.mix.shape == (16000, 4)
    assert joined.images.shape == (1, 16000, 4)
    assert joined.config.duration == pytest.approx(1.0)


def test_experiment_config_rejects_short_filters():
    with pytest.raises(ConfigurationError, match="L >= 2"):
        ExperimentConfig(filter_lengths=[1, 6])


def test_run_config_default_experiment():
    assert RunConfig().experiment.window == (4.0, 10.0)
