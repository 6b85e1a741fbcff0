import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Set, Tuple

from HOSSNET.hossnet.core import SampleSequence

from .config import Protocol

logger = logging.getLogger(__name__)

IndexMap = Dict[str, List[int]]


@dataclass(frozen=True)
class Split:
    """
    Train and test time indices per sample id.

    A sample may appear on both sides as long as no (sample_id, time_index)
    pair does.
    """

    train: IndexMap
    test: IndexMap
    protocol: Optional[Protocol] = None

    def __post_init__(self):
        object.__setattr__(self, "train", {k: sorted(v) for k, v in self.train.items() if v})
        object.__setattr__(self, "test", {k: sorted(v) for k, v in self.test.items() if v})
        self.check_leakage()

    @staticmethod
    def _pairs(index_map: IndexMap) -> Set[Tuple[str, int]]:
        return {(sample_id, t) for sample_id, indices in index_map.items() for t in indices}

    def train_pairs(self) -> Set[Tuple[str, int]]:
        return self._pairs(self.train)

    def test_pairs(self) -> Set[Tuple[str, int]]:
        return self._pairs(self.test)

    def check_leakage(self):
        overlap = self.train_pairs() & self.test_pairs()
        if overlap:
            raise ValueError(f"Train and test splits share {len(overlap)} frames, e.g. {min(overlap)}")

    def to_dict(self) -> Dict[str, IndexMap]:
        return {"train": self.train, "test": self.test}


def _held_out(samples: Sequence[SampleSequence], held_out: Optional[str]) -> SampleSequence:
    if not samples:
        raise ValueError("No samples to split")
    if held_out is None:
        return samples[-1]
    for seq in samples:
        if seq.sample_id == held_out:
            return seq
    raise ValueError(f"Held-out sample {held_out} is not in the dataset")


def split_over_sample(
    samples: Sequence[SampleSequence], held_out: Optional[str] = None
) -> Split:
    """Train on every sample but one; test on the full sequence of the held-out one."""
    if len(samples) < 2:
        raise ValueError(f"Over-sample extrapolation needs >= 2 samples, got {len(samples)}")
    test_seq = _held_out(samples, held_out)
    train = {s.sample_id: s.time_indices for s in samples if s.sample_id != test_seq.sample_id}
    return Split(train, {test_seq.sample_id: test_seq.time_indices}, Protocol.OVER_SAMPLE)


def split_over_time(
    samples: Sequence[SampleSequence], held_out: Optional[str] = None
) -> Split:
    """
    Train on every other sample plus the first floor(T/2) steps of the
    held-out sample; test on its remaining steps.
    """
    if len(samples) < 2:
        raise ValueError(f"Over-time extrapolation needs >= 2 samples, got {len(samples)}")
    test_seq = _held_out(samples, held_out)
    indices = test_seq.time_indices
    cut = len(indices) // 2
    train = {s.sample_id: s.time_indices for s in samples if s.sample_id != test_seq.sample_id}
    train[test_seq.sample_id] = indices[:cut]
    return Split(train, {test_seq.sample_id: indices[cut:]}, Protocol.OVER_TIME)


def split_interpolation(sample: SampleSequence, mode: str = "blocks", stride: int = 10) -> Split:
    """
    Hold out intermediate steps of one sample.

    ``blocks`` observes the first and last third and tests the middle third;
    ``sparse`` observes every ``stride``-th step and tests the rest.
    """
    indices = sample.time_indices
    n_steps = len(indices)
    if mode == "blocks":
        if n_steps < 3:
            raise ValueError(f"Block interpolation needs >= 3 steps, got {n_steps}")
        block = n_steps // 3
        train = indices[:block] + indices[n_steps - block :]
        test = indices[block : n_steps - block]
        protocol = Protocol.INTERPOLATION_BLOCKS
    elif mode == "sparse":
        if stride < 2:
            raise ValueError(f"stride must be >= 2, got {stride}")
        train = indices[::stride]
        observed = set(train)
        test = [t for t in indices if t not in observed]
        protocol = Protocol.INTERPOLATION_SPARSE
    else:
        raise ValueError(f"Unknown interpolation mode: {mode}")
    return Split({sample.sample_id: train}, {sample.sample_id: test}, protocol)


def make_split(
    protocol: Protocol,
    samples: Sequence[SampleSequence],
    held_out: Optional[str] = None,
    sparse_stride: int = 10,
) -> Split:
    protocol = Protocol(protocol)
    if protocol is Protocol.OVER_SAMPLE:
        split = split_over_sample(samples, held_out)
    elif protocol is Protocol.OVER_TIME:
        split = split_over_time(samples, held_out)
    elif protocol is Protocol.INTERPOLATION_BLOCKS:
        split = split_interpolation(_held_out(samples, held_out), "blocks")
    else:
        split = split_interpolation(_held_out(samples, held_out), "sparse", sparse_stride)
    logger.info(
        f"{protocol.value} split: {len(split.train_pairs())} train frames, "
        f"{len(split.test_pairs())} test frames"
    )
    return split


def contiguous_runs(indices: Sequence[int]) -> List[List[int]]:
    """Maximal runs of consecutive integers in a sorted index list."""
    runs: List[List[int]] = []
    for t in sorted(indices):
        if runs and t == runs[-1][-1] + 1:
            runs[-1].append(t)
        else:
            runs.append([t])
    return runs
