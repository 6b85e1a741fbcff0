from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from HOSSNET.harness.config import (
    DataConfig,
    EvaluationConfig,
    ExperimentConfig,
    LossesConfig,
    TrainingConfig,
)
from HOSSNET.hossnet.core import ChannelKind, SampleSequence
from HOSSNET.hossnet.datagen import CrackSpec, build_benchmark_set, generate_sample
from HOSSNET.hossnet.flow import FlowSolverParams
from HOSSNET.hossnet.model import ModelConfig

CONFIG_DIR = Path(__file__).resolve().parents[1] / "HOSSNET" / "configs"


@pytest.fixture
def small_spec() -> CrackSpec:
    return CrackSpec(n_initial_cracks=3, seed=7, growth_rate=0.8, grid=(16, 16), n_steps=12)


@pytest.fixture
def growing_sequence(small_spec) -> SampleSequence:
    return generate_sample(small_spec, "crack_000")


@pytest.fixture
def tiny_samples():
    spec = CrackSpec(n_initial_cracks=4, seed=3, growth_rate=0.8, grid=(16, 16), n_steps=16)
    return build_benchmark_set(3, spec)


@pytest.fixture
def tiny_config(tmp_path) -> ExperimentConfig:
    """A configuration small enough to train in seconds on a CPU."""
    return ExperimentConfig(
        seed=0,
        output_dir=str(tmp_path / "runs"),
        data=DataConfig(
            root=str(tmp_path / "data"),
            n_samples=3,
            crack=CrackSpec(n_initial_cracks=4, seed=3, growth_rate=0.8, grid=(16, 16), n_steps=16),
        ),
        model=ModelConfig(
            base_width=8, n_res_blocks_per_stage=1, latent_state_size=8, window_length=3
        ),
        training=TrainingConfig(learning_rate=5e-3, epochs=2, batch_size=4, float64=True),
        losses=LossesConfig(extractor="random_conv"),
        flow=FlowSolverParams(n_iterations=10),
        evaluation=EvaluationConfig(triptych_leads=(1, 3)),
    )


def ramp_sequence(sample_id: str, n_steps: int, shape=(8, 8)) -> SampleSequence:
    """Single pixel whose damage grows linearly; everything else stays at zero."""
    values = np.zeros((n_steps,) + shape)
    values[:, shape[0] // 2, shape[1] // 2] = np.linspace(0.0, 1.0, n_steps)
    return SampleSequence.from_array(sample_id, values, ChannelKind.FRACTURE_DAMAGE)


def constant_sequences(n_samples: int, n_steps: int):
    return [
        SampleSequence.from_array(
            f"crack_{i:03d}", np.zeros((n_steps, 2, 2)), ChannelKind.FRACTURE_DAMAGE
        )
        for i in range(n_samples)
    ]


def with_training(config: ExperimentConfig, **changes) -> ExperimentConfig:
    return replace(config, training=replace(config.training, **changes))
