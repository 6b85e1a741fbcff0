import logging
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
import torch

from HOSSNET.hossnet.core import frames_to_tensor

from .config import Scenario
from .dataset import ExperimentData, frame_stack
from .splits import IndexMap, contiguous_runs

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainingWindow:
    """
    Time indices of one training example.

    Fracture scenario: inputs Y[t..t+L-1], targets Y[t+1..t+L].
    Cauchy scenario: inputs X[t..t+L-1], targets Y[t..t+L-1].
    """

    sample_id: str
    input_indices: Tuple[int, ...]
    target_indices: Tuple[int, ...]


def _segments(indices: Sequence[int], span: int) -> List[List[int]]:
    runs = [run for run in contiguous_runs(indices) if len(run) >= span]
    if not runs and len(indices) >= span:
        # Sparse observations: consecutive observed steps form a strided run.
        runs = [sorted(indices)]
    return [run[i : i + span] for run in runs for i in range(len(run) - span + 1)]


def build_training_windows(
    train: IndexMap, scenario: Scenario, window_length: int
) -> List[TrainingWindow]:
    """
    All windows lying inside the training indices, in (sample_id, start) order.

    Windows come from runs of consecutive training steps. A sample whose runs
    are all too short falls back to its observed steps taken in order.
    """
    fracture = Scenario(scenario) is Scenario.FRACTURE_TO_FRACTURE
    span = window_length + 1 if fracture else window_length
    windows = []
    for sample_id in sorted(train):
        for segment in _segments(train[sample_id], span):
            if fracture:
                windows.append(TrainingWindow(sample_id, tuple(segment[:-1]), tuple(segment[1:])))
            else:
                windows.append(TrainingWindow(sample_id, tuple(segment), tuple(segment)))
    if not windows:
        raise ValueError(f"No training window of length {window_length} fits the training split")
    logger.info(f"Built {len(windows)} training windows of length {window_length}")
    return windows


def split_validation(
    windows: Sequence[TrainingWindow], fraction: float
) -> Tuple[List[TrainingWindow], List[TrainingWindow]]:
    """Hold out the last ``fraction`` of the windows (at least one when possible)."""
    windows = list(windows)
    n_val = int(round(len(windows) * fraction))
    if fraction > 0 and len(windows) >= 2:
        n_val = max(n_val, 1)
    n_val = min(n_val, len(windows) - 1)
    if n_val <= 0:
        return windows, []
    return windows[:-n_val], windows[-n_val:]


def stack_windows(
    windows: Sequence[TrainingWindow], data: ExperimentData, dtype: torch.dtype
) -> Tuple[torch.Tensor, torch.Tensor]:
    """Inputs (B, L, C, H, W) and single-channel targets (B, L, H, W)."""
    inputs = np.stack(
        [frame_stack(data.inputs[w.sample_id], w.input_indices) for w in windows]
    )
    targets = np.stack(
        [frame_stack(data.targets[w.sample_id], w.target_indices) for w in windows]
    )
    return frames_to_tensor(inputs, dtype), frames_to_tensor(targets, dtype)[:, :, 0]
