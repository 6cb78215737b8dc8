"""
Run configuration for ISCLP.

A run is described by a TOML file with the sections [stft], [kalman],
[estimator], [scene] (with [[scene.sources]]), [array] and [experiment];
every key is optional and defaults to the published tuning. Command-line
flags override file values.

Example:
    [kalman]
    filter_length = 6
    alpha_db = -25.0

    [scene]
    num_mics = 4
    snr_db = 10.0

    [[scene.sources]]
    doa_deg = 0.0
    target = true
"""

import dataclasses
import logging
import tomllib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np

from isclp.errors import ConfigurationError
from isclp.estimation import EstimatorConfig
from isclp.kalman import (
    ALPHA_DB,
    BETA_DB,
    FILTER_LENGTH,
    PSI_LP_DB,
    PSI_SC_DB_HIGH,
    PSI_SC_DB_LOW,
    ProcessModel,
)
from isclp.scenario import SceneConfig, SourceSpec
from isclp.stft import StftConfig

logger = logging.getLogger(__name__)

MODES = ("enhance", "experiment", "selftest", "scene", "convergence")
OUTPUTS = ("posterior", "prior")


@dataclass
class KalmanConfig:
    """Logarithmic Kalman filter tuning; see ProcessModel.from_db."""

    filter_length: int = FILTER_LENGTH
    alpha_db: float = ALPHA_DB
    beta_db: float = BETA_DB
    psi_lp_db: float = PSI_LP_DB
    psi_sc_db_low: float = PSI_SC_DB_LOW
    psi_sc_db_high: float = PSI_SC_DB_HIGH

    def __post_init__(self):
        if self.filter_length < 2:
            raise ConfigurationError(
                f"filter_length L must be >= 2, got {self.filter_length}"
            )
        if self.alpha_db >= 0:
            raise ConfigurationError(f"alpha_db must be < 0, got {self.alpha_db}")
        if self.beta_db > 0:
            raise ConfigurationError(f"beta_db must be <= 0, got {self.beta_db}")
        if self.psi_lp_db >= 0:
            raise ConfigurationError(f"psi_lp_db must be < 0, got {self.psi_lp_db}")

    def model(self, stft: StftConfig, num_mics: int, num_targets: int = 1) -> ProcessModel:
        return ProcessModel.from_db(
            stft.frequencies,
            num_mics=num_mics,
            num_targets=num_targets,
            filter_length=self.filter_length,
            alpha_db=self.alpha_db,
            beta_db=self.beta_db,
            psi_lp_db=self.psi_lp_db,
            psi_sc_db_low=self.psi_sc_db_low,
            psi_sc_db_high=self.psi_sc_db_high,
        )


@dataclass
class ArrayConfig:
    """
    Geometry of a recorded array (enhance mode).

    Attributes:
        spacing: Linear array spacing in meters, used when positions is empty
        positions: Explicit microphone positions [[x, y, z], ...] in meters
        source_doas: DoAs of the N sources for the "doa" initial RETF
    """

    spacing: float = 0.08
    positions: list[list[float]] = field(default_factory=list)
    source_doas: list[float] = field(default_factory=lambda: [0.0])

    def __post_init__(self):
        if self.spacing <= 0:
            raise ConfigurationError(f"array spacing must be > 0, got {self.spacing}")

    def mic_positions(self, num_mics: int) -> np.ndarray:
        if not self.positions:
            positions = np.zeros((num_mics, 3))
            positions[:, 0] = np.arange(num_mics) * self.spacing
            return positions
        positions = np.asarray(self.positions, dtype=np.float64)
        if positions.shape[0] != num_mics:
            raise ConfigurationError(
                f"[array] lists {positions.shape[0]} positions, input has {num_mics} channels"
            )
        return positions


@dataclass
class ExperimentConfig:
    """
    Sweep definition.

    Attributes:
        seeds: Number of scenes per condition (seeds 0..seeds-1 offset by the run seed)
        snr_db: SNR values
        filter_lengths: L values
        interferer_doas: Interferer DoAs; empty for target-only scenes
        estimators: "oracle" and/or "blind"
        window: Metric evaluation window in seconds
    """

    seeds: int = 5
    snr_db: list[float] = field(default_factory=lambda: [10.0])
    filter_lengths: list[int] = field(default_factory=lambda: [FILTER_LENGTH])
    interferer_doas: list[float] = field(default_factory=list)
    estimators: list[str] = field(default_factory=lambda: ["oracle"])
    window: tuple[float, float] = (4.0, 10.0)

    def __post_init__(self):
        self.window = tuple(self.window)
        if self.seeds < 1:
            raise ConfigurationError(f"seeds must be >= 1, got {self.seeds}")
        if any(l < 2 for l in self.filter_lengths):
            raise ConfigurationError(
                f"filter_lengths must all be >= 2 (L >= 2 required), got {self.filter_lengths}"
            )
        if any(e not in ("oracle", "blind") for e in self.estimators):
            raise ConfigurationError(f"estimators must be 'oracle' or 'blind', got {self.estimators}")
        if len(self.window) != 2 or not 0 <= self.window[0] < self.window[1]:
            raise ConfigurationError(f"window must be (start, end) with start < end, got {self.window}")


@dataclass
class RunConfig:
    """
    Complete run description.

    Attributes:
        mode: enhance | experiment | selftest | scene | convergence
        input: Multichannel WAV for enhance mode
        out: Output directory
        output: "posterior" (e+) or "prior" (e) for the enhanced signal
        seed: Master seed for synthetic scenes
        diagnostics: Collect per-frame diagnostics
        summary_interval: Frames between periodic diagnostics summaries
    """

    mode: str = "enhance"
    input: Optional[Path] = None
    out: Path = Path("isclp-out")
    output: str = "posterior"
    seed: int = 0
    diagnostics: bool = True
    summary_interval: int = 500
    stft: StftConfig = field(default_factory=StftConfig)
    kalman: KalmanConfig = field(default_factory=KalmanConfig)
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    scene: SceneConfig = field(default_factory=SceneConfig)
    array: ArrayConfig = field(default_factory=ArrayConfig)
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)

    def validate(self):
        """
        Check mode-specific requirements.

        Raises:
            ConfigurationError: On a missing or inconsistent field
        """
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.output not in OUTPUTS:
            raise ConfigurationError(f"output must be one of {OUTPUTS}, got {self.output!r}")
        if self.mode == "enhance" and self.input is None:
            raise ConfigurationError("enhance mode requires --input")
        if self.scene.sample_rate != self.stft.sample_rate:
            raise ConfigurationError(
                f"scene sample_rate {self.scene.sample_rate} differs from stft sample_rate "
                f"{self.stft.sample_rate}"
            )
        if self.seed < 0:
            raise ConfigurationError(f"seed must be >= 0, got {self.seed}")


SECTIONS = {
    "stft": StftConfig,
    "kalman": KalmanConfig,
    "estimator": EstimatorConfig,
    "scene": SceneConfig,
    "array": ArrayConfig,
    "experiment": ExperimentConfig,
}


def _build(cls, section: str, values: dict[str, Any]):
    known = {f.name for f in dataclasses.fields(cls) if f.init}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigurationError(f"Unknown key(s) in [{section}]: {', '.join(unknown)}")
    try:
        if cls is SceneConfig and "sources" in values:
            sources = [s if isinstance(s, SourceSpec) else SourceSpec(**s) for s in values["sources"]]
            values = dict(values, sources=sources)
        return cls(**values)
    except TypeError as e:
        raise ConfigurationError(f"Invalid [{section}] section: {e}") from e


def load_config(path: Union[str, Path]) -> RunConfig:
    """
    Load a TOML run configuration.

    Raises:
        ConfigurationError: Missing or malformed file, unknown keys, invalid values
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"Config file not found: {path}")
    try:
        with path.open("rb") as f:
            data = tomllib.load(f)
    except tomllib.TOMLDecodeError as e:
        raise ConfigurationError(f"Cannot parse {path}: {e}") from e

    sections = {}
    top = {}
    for key, value in data.items():
        if key in SECTIONS:
            if not isinstance(value, dict):
                raise ConfigurationError(f"[{key}] must be a table in {path}")
            sections[key] = _build(SECTIONS[key], key, value)
        else:
            top[key] = value

    config = _build(RunConfig, "top level", {**top, **sections})
    for key in ("input", "out"):
        value = getattr(config, key)
        if value is not None:
            setattr(config, key, Path(value))
    logger.info(f"Loaded configuration from {path}")
    return config


def config_sets(path: Union[str, Path], section: str, key: str) -> bool:
    """Whether the TOML file at path sets [section] key explicitly."""
    with Path(path).open("rb") as f:
        table = tomllib.load(f).get(section, {})
    return isinstance(table, dict) and key in table


def apply_overrides(config: RunConfig, **overrides: Any) -> RunConfig:
    """
    Apply command-line overrides; None values are ignored.

    Keys are RunConfig fields or "section.field" paths, e.g. "kalman.filter_length".
    Sections are rebuilt so that their validation runs again.
    """
    top = {}
    per_section: dict[str, dict[str, Any]] = {}
    for key, value in overrides.items():
        if value is None:
            continue
        if "." in key:
            section, name = key.split(".", 1)
            per_section.setdefault(section, {})[name] = value
        else:
            top[key] = value

    for section, values in per_section.items():
        current = getattr(config, section)
        if isinstance(current, StftConfig):
            base = {"window_length": current.window_length, "hop": current.hop, "sample_rate": current.sample_rate}
            if "window_length" in values and "hop" not in values:
                base["hop"] = None
        else:
            base = {f.name: getattr(current, f.name) for f in dataclasses.fields(current) if f.init}
        top[section] = _build(type(current), section, {**base, **values})
    return dataclasses.replace(config, **top)
