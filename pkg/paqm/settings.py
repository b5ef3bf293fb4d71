import os
from pathlib import Path
from typing import Any, Dict, Literal, Optional, Tuple

from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from paqm import config
from paqm.core.exceptions import ConfigError


class AlignmentSettings(BaseModel):
    """REF/SUT alignment flags"""
    align_lag: bool = True
    match_gain: bool = False
    max_lag: int = Field(48000, ge=0)
    min_correlation: float = Field(0.05, ge=0.0, le=1.0)
    max_duration_mismatch: float = Field(1.0, gt=0.0)


class EarModelSettings(BaseModel):
    """Calibration constants of the FFT ear model"""
    frame_size: int = 2048
    hop: int = 1024
    n_bands: int = Field(40, ge=2)
    f_low: float = Field(50.0, gt=0.0)
    f_high: float = Field(18000.0, gt=0.0)
    listening_level_db: float = 92.0
    level_reference_hz: float = 1019.5
    spread_lower_db_per_bark: float = 27.0
    spread_upper_db_per_bark: float = 24.0
    spread_upper_freq_term: float = 230.0
    spread_level_slope: float = 0.2
    spread_exponent: float = Field(0.4, gt=0.0)
    smear_tau_100: float = Field(0.030, gt=0.0)
    smear_tau_min: float = Field(0.008, gt=0.0)
    internal_noise_db: float = 1.456
    mod_tau_100: float = Field(0.050, gt=0.0)
    mod_tau_min: float = Field(0.008, gt=0.0)
    mod_compression: float = Field(0.3, gt=0.0)
    s_min: float = Field(1.0, gt=0.0)
    c_mod: float = Field(10.0, ge=0.0)

    @field_validator("frame_size")
    @classmethod
    def _power_of_two(cls, value: int) -> int:
        if value < 16 or value & (value - 1):
            raise ValueError("frame_size must be a power of two >= 16")
        return value

    @model_validator(mode="after")
    def _check_plan(self):
        if not 0 < self.hop <= self.frame_size:
            raise ValueError("hop must be in (0, frame_size]")
        if self.f_low >= self.f_high:
            raise ValueError("f_low must be below f_high")
        return self


class LoudnessSettings(BaseModel):
    """Partial loudness constants"""
    c0: float = 0.068
    gamma: float = 0.23
    alpha: float = 1.5
    e0: float = Field(1e4, gt=0.0)
    threshold_db: float = 3.64


class MetricSettings(BaseModel):
    """Distortion metric pooling and masking offsets"""
    settling_interval: float = Field(0.5, ge=0.0)
    mask_offset_db: float = 3.0
    mask_offset_knee_bark: float = 12.0
    mask_offset_slope_db: float = 0.25
    ehs_max_freq: float = Field(9000.0, gt=0.0)
    include_imps_dm: bool = False


class CemSettings(BaseModel):
    """Cognitive effect metric windows and pooling"""
    pdev_window: float = Field(0.02, gt=0.0)
    pdev_min_frames: int = Field(2, ge=1)
    bvar_window: float = Field(0.1, gt=0.0)
    pooling: Literal["mean", "median"] = "mean"
    imps_a: float = 1.0
    imps_b: float = 1.0
    imps_c: float = Field(1.0, gt=0.0)


class MappingSettings(BaseModel):
    """Salience analysis and mapping training"""
    threshold: float = Field(0.6, ge=0.0)
    n_knots: int = Field(5, ge=2)
    g_max: float = Field(2.0, gt=0.0)
    max_rounds: int = Field(100, ge=1)
    tolerance: float = Field(1e-6, gt=0.0)
    min_contribution: float = Field(1.0, ge=0.0)
    min_observations: int = Field(10, ge=3)
    variant: Literal["bvar", "pdev", "none", "all"] = "bvar"
    monotone_premap: bool = True
    pool_conditions: bool = False


class PipelineConfig(BaseSettings):
    """Every tunable constant of the measurement pipeline"""
    alignment: AlignmentSettings = AlignmentSettings()
    ear: EarModelSettings = EarModelSettings()
    loudness: LoudnessSettings = LoudnessSettings()
    metrics: MetricSettings = MetricSettings()
    cem: CemSettings = CemSettings()
    mapping: MappingSettings = MappingSettings()

    model_config = SettingsConfigDict(
        env_prefix="PAQM_",
        env_nested_delimiter="__",
        extra="ignore",
    )

    def dm_names(self) -> Tuple[str, ...]:
        """Distortion metrics produced with this configuration"""
        if self.metrics.include_imps_dm:
            return config.DM_NAMES + (config.DM_IMPS_NOISE_LOUD,)
        return config.DM_NAMES

    def echo(self) -> Dict[str, Any]:
        """Configuration echo embedded into every artifact"""
        return {
            "tool": config.TOOL_NAME,
            "version": config.TOOL_VERSION,
            "config": self.model_dump(mode="json"),
        }


def load_config(path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None) -> PipelineConfig:
    """Build the pipeline config from file, environment and explicit overrides"""
    path = path or os.environ.get(config.CONFIG_ENV_VAR)
    if path and not Path(path).is_file():
        raise ConfigError(f"Config file not found: {path}")
    try:
        return PipelineConfig(_env_file=path, **(overrides or {}))
    except ValidationError as e:
        raise ConfigError(f"Invalid configuration: {e}") from e


def nested_overrides(flat: Dict[str, Any]) -> Dict[str, Any]:
    """Turn {'mapping.threshold': 0.7} into {'mapping': {'threshold': 0.7}}, skipping None"""
    nested: Dict[str, Any] = {}
    for key, value in flat.items():
        if value is None:
            continue
        section, _, field = key.partition(".")
        nested.setdefault(section, {})[field] = value
    return nested
