"""Tests for run configuration loading and overrides."""

from pathlib import Path

import pytest

from isclp.cli import build_config
from isclp.config import KalmanConfig, RunConfig, apply_overrides, config_sets, load_config
from isclp.errors import ConfigurationError
from isclp.stft import StftConfig

EXAMPLE = """
mode = "experiment"
seed = 4
out = "results"

[kalman]
filter_length = 8
alpha_db = -20.0

[scene]
num_mics = 5
snr_db = 5.0

[[scene.sources]]
doa_deg = 0.0

[[scene.sources]]
doa_deg = 60.0
target = false

[experiment]
seeds = 2
window = [1.0, 3.0]
"""


def test_defaults_match_published_tuning():
    config = RunConfig()
    model = config.kalman.model(config.stft, num_mics=4)
    assert config.kalman.filter_length == 6
    assert model.alpha == pytest.approx(1 - 10**-2.5)
    assert model.beta == pytest.approx(10**-0.1)
    assert config.stft.window_length == 512
    assert config.stft.hop == 256
    assert config.output == "posterior"


def test_load_config(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text(EXAMPLE)
    config = load_config(path)
    assert config.mode == "experiment"
    assert config.seed == 4
    assert config.out == Path("results")
    assert config.kalman.filter_length == 8
    assert config.kalman.alpha_db == -20.0
    assert config.kalman.beta_db == -2.0
    assert config.scene.num_mics == 5
    assert [s.target for s in config.scene.sources] == [True, False]
    assert config.experiment.window == (1.0, 3.0)


@pytest.mark.parametrize(
    "text",
    [
        "[kalman]\nfilter_length = 1\n",
        "[kalman]\nunknown = 3\n",
        "bogus = 1\n",
        "[kalman\n",
        "[experiment]\nestimators = ['magic']\n",
        "[[scene.sources]]\nloudness = 3\n",
    ],
)
def test_invalid_files(tmp_path, text):
    path = tmp_path / "run.toml"
    path.write_text(text)
    with pytest.raises(ConfigurationError):
        load_config(path)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigurationError, match="missing.toml"):
        load_config(tmp_path / "missing.toml")


def test_overrides_rebuild_sections():
    config = apply_overrides(
        RunConfig(),
        seed=9,
        out=None,
        **{"kalman.filter_length": 3, "scene.snr_db": 0.0, "stft.window_length": 256},
    )
    assert config.seed == 9
    assert config.out == Path("isclp-out")
    assert config.kalman.filter_length == 3
    assert config.kalman.alpha_db == -25.0
    assert config.scene.snr_db == 0.0
    assert config.stft == StftConfig(window_length=256)


def test_override_filter_length_one_rejected():
    with pytest.raises(ConfigurationError, match="L must be >= 2"):
        apply_overrides(RunConfig(), **{"kalman.filter_length": 1})


def test_validate_mode_requirements():
    with pytest.raises(ConfigurationError, match="--input"):
        RunConfig(mode="enhance").validate()
    with pytest.raises(ConfigurationError):
        RunConfig(mode="dance").validate()
    with pytest.raises(ConfigurationError):
        RunConfig(mode="selftest", output="middle").validate()
    RunConfig(mode="selftest").validate()


def test_kalman_config_validation():
    with pytest.raises(ConfigurationError):
        KalmanConfig(alpha_db=0.0)
    with pytest.raises(ConfigurationError):
        KalmanConfig(beta_db=1.0)


def test_config_sets(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text('[estimator]\nkind = "oracle"\n')
    assert config_sets(path, "estimator", "kind")
    assert not config_sets(path, "estimator", "num_sources")
    assert not config_sets(path, "kalman", "alpha_db")


@pytest.mark.parametrize(
    "text,expected",
    [
        ('[estimator]\nkind = "oracle"\n', "oracle"),
        ("[estimator]\nnum_sources = 1\n", "blind"),
        ("[kalman]\nfilter_length = 4\n", "blind"),
    ],
)
def test_enhance_estimator_default_respects_file(tmp_path, text, expected):
    path = tmp_path / "run.toml"
    path.write_text(text)
    config = build_config(path, "enhance", input=tmp_path / "in.wav")
    assert config.estimator.kind == expected


def test_enhance_estimator_defaults_and_flag(tmp_path):
    assert build_config(None, "enhance", input=tmp_path / "in.wav").estimator.kind == "blind"
    path = tmp_path / "run.toml"
    path.write_text('[estimator]\nkind = "oracle"\n')
    flagged = build_config(path, "enhance", input=tmp_path / "in.wav", estimator="blind")
    assert flagged.estimator.kind == "blind"
