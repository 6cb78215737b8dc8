"""
Scaled-down enhancement trends on synthetic scenes.

Four microphones, T60 = 0.4 s, 10 s scenes, five seeds, metrics from 4 s
to 10 s. These runs take minutes; select them with `pytest -m slow`.
"""

import pytest

from isclp.config import ExperimentConfig, RunConfig
from isclp.experiment import run_experiment

pytestmark = pytest.mark.slow


def medians(config: RunConfig) -> dict:
    rows = run_experiment(config, write=False)
    return {(r.filter_length, r.estimator): r for r in rows if r.scene == "median"}


def test_target_only_scene_improves():
    config = RunConfig(mode="experiment", experiment=ExperimentConfig(seeds=5, snr_db=[10.0]))
    median = medians(config)[(6, "oracle")]
    assert median.sir_improvement >= 3.0
    assert median.cd_improvement <= -0.3


def test_interferer_needs_longer_filters():
    config = RunConfig(
        mode="experiment",
        experiment=ExperimentConfig(seeds=5, snr_db=[10.0], filter_lengths=[2, 6], interferer_doas=[60.0]),
    )
    result = medians(config)
    assert result[(6, "oracle")].sir_improvement >= 3.0
    assert result[(6, "oracle")].sir_improvement > result[(2, "oracle")].sir_improvement


def test_blind_close_to_oracle():
    config = RunConfig(
        mode="experiment",
        experiment=ExperimentConfig(seeds=5, snr_db=[10.0], estimators=["oracle", "blind"]),
    )
    result = medians(config)
    assert result[(6, "blind")].sir_improvement >= result[(6, "oracle")].sir_improvement - 3.0
