import logging
import os
from dataclasses import asdict, dataclass, field, fields, replace
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple, Union

import yaml

from HOSSNET.hossnet.core import ChannelKind, ConfigurationError
from HOSSNET.hossnet.datagen import CrackSpec
from HOSSNET.hossnet.flow import FlowSolverParams
from HOSSNET.hossnet.losses import LossWeights
from HOSSNET.hossnet.model import ModelConfig

HOSSNET_DATA_DIR = os.getenv("HOSSNET_DATA_DIR", "data")


class Scenario(str, Enum):
    CAUCHY_TO_FRACTURE = "cauchy_to_fracture"
    FRACTURE_TO_FRACTURE = "fracture_to_fracture"

    @property
    def input_kind(self) -> ChannelKind:
        if self is Scenario.CAUCHY_TO_FRACTURE:
            return ChannelKind.CAUCHY_STRESS
        return ChannelKind.FRACTURE_DAMAGE


class Protocol(str, Enum):
    OVER_SAMPLE = "over_sample"
    OVER_TIME = "over_time"
    INTERPOLATION_BLOCKS = "interpolation_blocks"
    INTERPOLATION_SPARSE = "interpolation_sparse"


class Variant(str, Enum):
    HRU = "HRU"
    CNN_LSTM = "CNN_LSTM"
    HOSSNET_F = "HOSSnet_F"
    HOSSNET = "HOSSnet"


@dataclass(frozen=True)
class DataConfig:
    """
    Dataset location and the synthetic benchmark used when no real data is stored.

    Parameters
    ----------
    root : str
        Container root; defaults to $HOSSNET_DATA_DIR
    n_samples : int
        Number of crack samples generated by ``generate-data``
    crack : CrackSpec
        Generator settings; sample i uses seed ``crack.seed + i``
    stress_smoothing_sigma : float
        Smoothing applied before deriving the stress channels
    held_out : str, optional
        Test sample id; the last sample when omitted
    sparse_stride : int
        Every n-th step is observed in the sparse interpolation protocol
    """

    root: str = HOSSNET_DATA_DIR
    n_samples: int = 6
    crack: CrackSpec = field(default_factory=CrackSpec)
    stress_smoothing_sigma: float = 1.0
    held_out: Optional[str] = None
    sparse_stride: int = 10

    def __post_init__(self):
        if self.n_samples < 2:
            raise ConfigurationError(f"n_samples must be >= 2, got {self.n_samples}")
        if self.sparse_stride < 2:
            raise ConfigurationError(f"sparse_stride must be >= 2, got {self.sparse_stride}")


@dataclass(frozen=True)
class TrainingConfig:
    learning_rate: float = 5e-4
    epochs: int = 100
    batch_size: int = 4
    validation_fraction: float = 0.1
    float64: bool = False
    max_prepared_batches: int = 2

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigurationError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.epochs < 1:
            raise ConfigurationError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ConfigurationError("validation_fraction must be in [0, 1)")


@dataclass(frozen=True)
class LossesConfig:
    """
    Loss weights and the settings of the perceptual and sub-region terms.

    ``extractor`` is "vgg16" (pretrained, downloaded by torchvision) or
    "random_conv" (fixed random filters, works offline).
    """

    alpha_perc: float = 0.1
    alpha_op: float = 0.01
    extractor: str = "vgg16"
    vgg_layer_index: int = 16
    magnitude_floor: float = 1e-6
    use_sub_region: bool = True
    sub_region_dilation: int = 4

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.alpha_perc, self.alpha_op)


@dataclass(frozen=True)
class EvaluationConfig:
    positive_direction: bool = True
    first_n: int = 50
    curve_interval: int = 2
    curve_max_lead: int = 60
    triptych_leads: Tuple[int, ...] = (1, 11, 21, 31, 41, 51)
    ssim_window: int = 7
    dynamic_threshold: float = 1e-4
    dynamic_dilation: int = 2


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: Scenario = Scenario.FRACTURE_TO_FRACTURE
    protocol: Protocol = Protocol.OVER_SAMPLE
    variant: Variant = Variant.HOSSNET
    seed: int = 0
    output_dir: str = "runs"
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    losses: LossesConfig = field(default_factory=LossesConfig)
    flow: FlowSolverParams = field(default_factory=FlowSolverParams)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)

    def __post_init__(self):
        try:
            object.__setattr__(self, "scenario", Scenario(self.scenario))
            object.__setattr__(self, "protocol", Protocol(self.protocol))
            object.__setattr__(self, "variant", Variant(self.variant))
        except ValueError as e:
            raise ConfigurationError(str(e)) from e

    def model_config(self) -> ModelConfig:
        """Model settings after applying the scenario's input channels and the variant."""
        config = replace(self.model, in_channels=self.scenario.input_kind.n_channels)
        if self.variant is Variant.HRU:
            config = replace(config, use_rtl=False)
        elif self.variant is Variant.CNN_LSTM:
            config = replace(config, n_res_blocks_per_stage=0)
        return config

    def loss_weights(self) -> LossWeights:
        if self.variant in (Variant.HRU, Variant.CNN_LSTM):
            return LossWeights(alpha_perc=0.0, alpha_op=0.0)
        if self.variant is Variant.HOSSNET_F:
            return LossWeights(alpha_perc=0.0, alpha_op=self.losses.alpha_op)
        return self.losses.weights

    @property
    def run_name(self) -> str:
        return f"{self.scenario.value}-{self.protocol.value}-{self.variant.value}-seed{self.seed}"

    @property
    def run_dir(self) -> Path:
        return Path(self.output_dir) / self.run_name

    def with_overrides(self, **overrides: Any) -> "ExperimentConfig":
        """Apply CLI-style overrides; None values are ignored."""
        config = self
        for key, value in overrides.items():
            if value is None:
                continue
            if key in ("scenario", "protocol", "variant", "seed", "output_dir"):
                config = replace(config, **{key: value})
            elif key == "epochs":
                config = replace(config, training=replace(config.training, epochs=int(value)))
            elif key == "positive_direction":
                config = replace(
                    config,
                    evaluation=replace(config.evaluation, positive_direction=bool(value)),
                )
            elif key == "data_root":
                config = replace(config, data=replace(config.data, root=str(value)))
            else:
                raise ConfigurationError(f"Unknown override: {key}")
        return config

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        for key in ("scenario", "protocol", "variant"):
            data[key] = getattr(self, key).value
        data["data"]["crack"] = self.data.crack.to_dict()
        data["evaluation"]["triptych_leads"] = list(self.evaluation.triptych_leads)
        return data


def _section(cls, data: Optional[Mapping[str, Any]], name: str):
    data = dict(data or {})
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigurationError(f"Unknown keys in section '{name}': {sorted(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as e:
        raise ConfigurationError(f"Invalid section '{name}': {e}") from e


def config_from_dict(data: Mapping[str, Any]) -> ExperimentConfig:
    """Build an :class:`ExperimentConfig` from the nested mapping of a YAML file."""
    data = dict(data or {})
    sections = {"data", "model", "training", "losses", "flow", "evaluation"}
    top_level = {"scenario", "protocol", "variant", "seed", "output_dir"}
    unknown = set(data) - sections - top_level
    if unknown:
        raise ConfigurationError(f"Unknown top-level config keys: {sorted(unknown)}")

    data_section = dict(data.get("data") or {})
    if "crack" in data_section:
        try:
            data_section["crack"] = CrackSpec.from_dict(data_section["crack"] or {})
        except (TypeError, ValueError) as e:
            raise ConfigurationError(f"Invalid section 'data.crack': {e}") from e
    evaluation = dict(data.get("evaluation") or {})
    if "triptych_leads" in evaluation:
        evaluation["triptych_leads"] = tuple(int(x) for x in evaluation["triptych_leads"])

    return ExperimentConfig(
        **{k: data[k] for k in top_level if k in data},
        data=_section(DataConfig, data_section, "data"),
        model=_section(ModelConfig, data.get("model"), "model"),
        training=_section(TrainingConfig, data.get("training"), "training"),
        losses=_section(LossesConfig, data.get("losses"), "losses"),
        flow=_section(FlowSolverParams, data.get("flow"), "flow"),
        evaluation=_section(EvaluationConfig, evaluation, "evaluation"),
    )


def load_config(
    path: Optional[Union[str, Path]] = None, **overrides: Any
) -> ExperimentConfig:
    """
    Read a YAML experiment config and apply CLI overrides.

    Parameters
    ----------
    path : str or Path, optional
        YAML file; the built-in defaults are used when omitted
    **overrides
        ``scenario``, ``protocol``, ``variant``, ``seed``, ``output_dir``,
        ``epochs``, ``positive_direction`` or ``data_root``

    Returns
    -------
    ExperimentConfig
    """
    data: Dict[str, Any] = {}
    if path is not None:
        try:
            with open(path, "r") as f:
                data = yaml.safe_load(f) or {}
        except (OSError, yaml.YAMLError) as e:
            raise ConfigurationError(f"Cannot read config {path}: {e}") from e
        if not isinstance(data, dict):
            raise ConfigurationError(f"Config {path} must be a mapping")
        logging.info(f"Loaded experiment config from {path}")
    return config_from_dict(data).with_overrides(**overrides)
