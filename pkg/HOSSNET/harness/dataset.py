import hashlib
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from HOSSNET.hossnet.core import ChannelKind, ConfigurationError, NormStats, SampleSequence
from HOSSNET.hossnet.datagen import build_benchmark_set, derive_stress_channels
from HOSSNET.utils.dataset_store import DatasetStore

from .config import DataConfig, ExperimentConfig, Scenario
from .splits import Split, make_split


@dataclass
class ExperimentData:
    """
    Normalised inputs and targets of one experiment, keyed by sample id.

    In the fracture scenario ``inputs`` and ``targets`` are the same sequences.
    """

    scenario: Scenario
    inputs: Dict[str, SampleSequence]
    targets: Dict[str, SampleSequence]
    split: Split
    input_stats: NormStats
    target_stats: NormStats
    dataset_hash: str

    @property
    def sample_ids(self) -> List[str]:
        return sorted(self.targets)


def generate_dataset(data: DataConfig) -> Tuple[List[SampleSequence], List[SampleSequence]]:
    """Synthetic fracture sequences and the stress channels derived from them."""
    fracture = build_benchmark_set(data.n_samples, data.crack)
    stress = [derive_stress_channels(seq, data.stress_smoothing_sigma) for seq in fracture]
    return fracture, stress


def save_dataset(
    store: DatasetStore, fracture: Sequence[SampleSequence], stress: Sequence[SampleSequence]
) -> bool:
    results = [store.save_sequence(seq) for seq in list(fracture) + list(stress)]
    failed = [r["error"] for r in results if not r["success"]]
    for error in failed:
        logging.error(error)
    return not failed


def hash_sequences(sequences: Sequence[SampleSequence]) -> str:
    """sha256 over the float32 values of in-memory sequences, in id order."""
    digest = hashlib.sha256()
    for seq in sorted(sequences, key=lambda s: (s.channel_kind.value, s.sample_id)):
        digest.update(f"{seq.channel_kind.value}/{seq.sample_id}".encode())
        digest.update(seq.as_array().astype("<f4").tobytes())
    return digest.hexdigest()


def load_dataset(
    data: DataConfig,
) -> Tuple[List[SampleSequence], List[SampleSequence], str]:
    """Read fracture and stress sequences from the container at ``data.root``."""
    store = DatasetStore(data.root)
    fracture_ids = store.list_samples(ChannelKind.FRACTURE_DAMAGE)
    if not fracture_ids:
        raise ConfigurationError(
            f"No fracture sequences under {store.root}; run `generate-data` or `fetch-data` first"
        )
    fracture = store.load_all(ChannelKind.FRACTURE_DAMAGE)
    stress = store.load_all(ChannelKind.CAUCHY_STRESS)
    logging.info(f"Loaded {len(fracture)} fracture and {len(stress)} stress sequences from {store.root}")
    return fracture, stress, store.dataset_hash()


def prepare_experiment(
    config: ExperimentConfig,
    fracture: Sequence[SampleSequence],
    stress: Optional[Sequence[SampleSequence]] = None,
    dataset_hash: Optional[str] = None,
) -> ExperimentData:
    """
    Split the samples and normalise them with statistics of the training frames.

    Stress inputs missing from ``stress`` are derived from the fracture
    sequences in the Cauchy scenario.
    """
    fracture = sorted(fracture, key=lambda s: s.sample_id)
    split = make_split(config.protocol, fracture, config.data.held_out, config.data.sparse_stride)
    target_stats = NormStats.fit(fracture, split.train)
    targets = {seq.sample_id: target_stats.apply(seq) for seq in fracture}

    if config.scenario is Scenario.FRACTURE_TO_FRACTURE:
        inputs, input_stats = targets, target_stats
    else:
        by_id = {seq.sample_id: seq for seq in stress or []}
        raw_inputs = []
        for seq in fracture:
            if seq.sample_id not in by_id:
                logging.warning(f"No stress channels for {seq.sample_id}; deriving them from damage")
                by_id[seq.sample_id] = derive_stress_channels(seq, config.data.stress_smoothing_sigma)
            raw_inputs.append(by_id[seq.sample_id])
        input_stats = NormStats.fit(raw_inputs, split.train)
        inputs = {seq.sample_id: input_stats.apply(seq) for seq in raw_inputs}

    for sample_id in targets:
        if inputs[sample_id].time_indices != targets[sample_id].time_indices:
            raise ValueError(f"Inputs and targets of {sample_id} cover different time steps")
    return ExperimentData(
        scenario=config.scenario,
        inputs=inputs,
        targets=targets,
        split=split,
        input_stats=input_stats,
        target_stats=target_stats,
        dataset_hash=dataset_hash or hash_sequences(list(fracture) + list(stress or [])),
    )


def frame_stack(seq: SampleSequence, time_indices: Sequence[int]) -> np.ndarray:
    """(len(time_indices), H, W, C) values of the requested frames."""
    return np.stack([seq.frame_at(t).values for t in time_indices])
