#!/usr/bin/env python3
"""
Run Configuration

Nested dataclasses describing one training/sampling run, the JSON Schema
every config file is validated against, and YAML/JSON loading. Unknown
keys are errors; omitted keys take their defaults.
"""

import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import jsonschema
import yaml

from .errors import ConfigError
from .loss import MagLossConfig
from .model import ModelConfig
from .schedule import NoiseSchedule

logger = logging.getLogger(__name__)

CONFIG_EXTENSIONS = (".yaml", ".yml", ".json")


@dataclass
class ScheduleConfig:
    T: int = 50
    beta_start: float = 1e-4
    beta_end: float = 0.05
    tau: float = 1e-4

    def build(self, zero_snr: bool = True) -> NoiseSchedule:
        return NoiseSchedule.build(self.T, self.beta_start, self.beta_end, self.tau, zero_snr)


@dataclass
class LossConfig:
    lambda_mag: float = 0.1
    fft_sizes: List[int] = field(default_factory=lambda: [512, 1024, 2048])
    window_sizes: List[int] = field(default_factory=lambda: [240, 600, 1200])
    hop_sizes: List[int] = field(default_factory=lambda: [50, 120, 240])

    def mag_config(self) -> MagLossConfig:
        return MagLossConfig(list(self.fft_sizes), list(self.window_sizes), list(self.hop_sizes))


@dataclass
class OptimizerConfig:
    name: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    lr: float = 2e-4
    eps: float = 1e-8
    batch_size: int = 16


@dataclass
class DataConfig:
    paths: List[str] = field(default_factory=list)
    segment_length: int = 16384
    sample_rate: int = 22050
    hop_length: int = 256
    n_fft: int = 1024
    n_mels: int = 80
    fmin: float = 80.0
    fmax: float = 8000.0
    sigma_min: float = 0.1
    holdout: int = 0


@dataclass
class AblationConfig:
    """Each flag switches off exactly one mechanism when False."""

    freq_dconv: bool = True
    separate_prior: bool = True
    zero_snr: bool = True
    mag_loss: bool = True


@dataclass
class TrainingConfig:
    max_steps: int = 1000
    checkpoint_interval: int = 1000
    log_interval: int = 100
    seed: int = 0


@dataclass
class NumericsConfig:
    dtype: str = "float64"
    debug_nan: bool = False


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    data: DataConfig = field(default_factory=DataConfig)
    ablations: AblationConfig = field(default_factory=AblationConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    numerics: NumericsConfig = field(default_factory=NumericsConfig)

    @property
    def effective_lambda(self) -> float:
        """lambda_mag, or 0 when the magnitude loss is ablated."""
        return self.loss.lambda_mag if self.ablations.mag_loss else 0.0

    def build_schedule(self, steps: Optional[int] = None) -> NoiseSchedule:
        """The noise schedule, optionally with a different number of steps."""
        schedule = self.schedule
        if steps is not None:
            schedule = dataclasses.replace(schedule, T=steps)
        return schedule.build(self.ablations.zero_snr)

    def to_dict(self) -> Dict[str, Any]:
        data = dataclasses.asdict(self)
        data["model"]["upsample_strides"] = list(self.model.upsample_strides)
        return data

    @classmethod
    def from_dict(cls, data: Optional[Dict[str, Any]]) -> "RunConfig":
        """
        Build a config from a (possibly partial) nested dictionary.

        Raises:
            ConfigError: if the dictionary violates the schema or a value
                is out of range
        """
        data = data or {}
        errors = ConfigValidator().validate_config(data)
        if errors:
            raise ConfigError("Invalid configuration:\n  " + "\n  ".join(errors), errors)
        sections = {}
        try:
            for f in dataclasses.fields(cls):
                section_type = f.default_factory
                sections[f.name] = section_type(**(data.get(f.name) or {}))
            config = cls(**sections)
            _check_consistency(config)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"Invalid configuration: {e}", [str(e)]) from e
        return config


def _check_consistency(config: RunConfig) -> None:
    data, model = config.data, config.model
    if data.hop_length != 2 * model.upsample_factor:
        raise ValueError(
            f"data.hop_length {data.hop_length} must be twice model.upsample_factor "
            f"{model.upsample_factor}"
        )
    if data.n_mels != model.mel_bins:
        raise ValueError(f"data.n_mels {data.n_mels} != model.mel_bins {model.mel_bins}")
    # each sub-band spans a whole number of hops
    if data.segment_length % (2 * data.hop_length):
        raise ValueError(
            f"data.segment_length {data.segment_length} must be a multiple of "
            f"2 * hop_length = {2 * data.hop_length}"
        )
    if config.schedule.tau <= 0:
        raise ValueError(
            f"schedule.tau must be > 0 to guard the rescaling against division by zero, "
            f"got {config.schedule.tau}"
        )
    # validates fft/window/hop triples
    mag = config.loss.mag_config()
    if config.ablations.mag_loss and data.segment_length // 2 < mag.min_length():
        raise ValueError(
            f"data.segment_length {data.segment_length} is too short for the magnitude loss: "
            f"each sub-band has {data.segment_length // 2} samples but the largest STFT "
            f"resolution needs {mag.min_length()} (set ablations.mag_loss: false or use "
            f"longer segments)"
        )


def _integer(minimum: int = 1) -> Dict[str, Any]:
    return {"type": "integer", "minimum": minimum}


def _number(exclusive_minimum: float = None, minimum: float = None) -> Dict[str, Any]:
    schema: Dict[str, Any] = {"type": "number"}
    if exclusive_minimum is not None:
        schema["exclusiveMinimum"] = exclusive_minimum
    if minimum is not None:
        schema["minimum"] = minimum
    return schema


def _section(properties: Dict[str, Any]) -> Dict[str, Any]:
    # an empty YAML section ("model:") loads as null
    return {"type": ["object", "null"], "additionalProperties": False, "properties": properties}


def _int_list() -> Dict[str, Any]:
    return {"type": "array", "items": _integer(), "minItems": 1}


RUN_CONFIG_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "title": "FreGrad Run Configuration",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "model": _section(
            {
                "n_blocks": _integer(),
                "dilation_cycle": _integer(),
                "hidden_dim": _integer(),
                "timestep_embed_dim": _integer(2),
                "embed_hidden_dim": _integer(),
                "mel_bins": {"type": "integer", "const": 80},
                "upsample_factor": _integer(),
                "upsample_strides": _int_list(),
                "kernel_size": _integer(),
            }
        ),
        "schedule": _section(
            {
                "T": _integer(),
                "beta_start": _number(exclusive_minimum=0),
                "beta_end": _number(exclusive_minimum=0),
                "tau": {"type": "number"},
            }
        ),
        "loss": _section(
            {
                "lambda_mag": _number(minimum=0),
                "fft_sizes": _int_list(),
                "window_sizes": _int_list(),
                "hop_sizes": _int_list(),
            }
        ),
        "optimizer": _section(
            {
                "name": {"type": "string", "enum": ["adam"]},
                "beta1": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "beta2": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "lr": _number(exclusive_minimum=0),
                "eps": _number(exclusive_minimum=0),
                "batch_size": _integer(),
            }
        ),
        "data": _section(
            {
                "paths": {"type": "array", "items": {"type": "string"}},
                "segment_length": _integer(2),
                "sample_rate": _integer(),
                "hop_length": _integer(2),
                "n_fft": _integer(2),
                "n_mels": _integer(),
                "fmin": _number(minimum=0),
                "fmax": _number(exclusive_minimum=0),
                "sigma_min": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "holdout": _integer(0),
            }
        ),
        "ablations": _section(
            {
                "freq_dconv": {"type": "boolean"},
                "separate_prior": {"type": "boolean"},
                "zero_snr": {"type": "boolean"},
                "mag_loss": {"type": "boolean"},
            }
        ),
        "training": _section(
            {
                "max_steps": _integer(0),
                "checkpoint_interval": _integer(),
                "log_interval": _integer(),
                "seed": _integer(0),
            }
        ),
        "numerics": _section(
            {
                "dtype": {"type": "string", "enum": ["float64", "float32"]},
                "debug_nan": {"type": "boolean"},
            }
        ),
    },
}


class ConfigValidator:
    """Validator for run configuration files."""

    def __init__(self):
        self.schema = RUN_CONFIG_SCHEMA
        self._validator = jsonschema.Draft7Validator(self.schema)

    def validate_config(self, config_data: Any) -> List[str]:
        """
        Validate a config dictionary against the schema.

        Returns:
            List of validation errors (empty if valid)
        """
        errors = []
        for error in sorted(self._validator.iter_errors(config_data), key=lambda e: list(e.path)):
            location = ".".join(str(p) for p in error.absolute_path)
            if error.validator == "additionalProperties":
                known = set(error.schema.get("properties", {}))
                for key in sorted(set(error.instance) - known):
                    dotted = f"{location}.{key}" if location else key
                    errors.append(f"Unknown key '{dotted}'")
            else:
                errors.append(f"{location or '<root>'}: {error.message}")
        return errors

    def validate_config_file(self, file_path: Union[str, Path]) -> List[str]:
        """Validate a config file; read errors are reported as validation errors."""
        try:
            data = _read_file(Path(file_path))
        except ConfigError as e:
            return [str(e)]
        return self.validate_config(data)


def _read_file(path: Path) -> Any:
    if path.suffix not in CONFIG_EXTENSIONS:
        raise ConfigError(f"{path}: unsupported config extension (use .yaml, .yml or .json)")
    try:
        with open(path, "r") as f:
            if path.suffix == ".json":
                return json.load(f)
            return yaml.safe_load(f)
    except FileNotFoundError:
        raise ConfigError(f"Config file not found: {path}") from None
    except (json.JSONDecodeError, yaml.YAMLError) as e:
        raise ConfigError(f"{path}: cannot parse config: {e}") from e


def load_config(path: Union[str, Path, None]) -> RunConfig:
    """Load a YAML or JSON config file; None gives the defaults."""
    if path is None:
        return RunConfig()
    path = Path(path)
    data = _read_file(path)
    try:
        config = RunConfig.from_dict(data)
    except ConfigError as e:
        raise ConfigError(f"{path}: {e}", e.errors) from e
    logger.debug(f"Loaded config from {path}")
    return config


def dump_config(config: RunConfig, path: Union[str, Path]) -> None:
    """Write a config as YAML (or JSON for a .json path)."""
    path = Path(path)
    with open(path, "w") as f:
        if path.suffix == ".json":
            json.dump(config.to_dict(), f, indent=2, sort_keys=True)
        else:
            yaml.safe_dump(config.to_dict(), f, sort_keys=False)


def config_differences(
    expected: Dict[str, Any], actual: Dict[str, Any], prefix: str = ""
) -> List[str]:
    """Dotted names of every leaf value that differs between two config dicts."""
    differing = []
    for key in sorted(set(expected) | set(actual)):
        name = f"{prefix}{key}"
        a, b = expected.get(key), actual.get(key)
        if isinstance(a, dict) and isinstance(b, dict):
            differing.extend(config_differences(a, b, f"{name}."))
        elif a != b:
            differing.append(name)
    return differing
