import json
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np
import torch

from HOSSNET.hossnet.core import (
    ChannelKind,
    FieldFrame,
    RegionKind,
    RegionMask,
    SampleSequence,
    frames_to_tensor,
    tensor_to_frames,
)
from HOSSNET.hossnet.metrics import (
    EvalRecord,
    MetricName,
    detect_dynamic_region,
    evaluate_frame,
    sort_records,
    summarize,
    temporal_curve,
    write_records_csv,
)
from HOSSNET.hossnet.model import HOSSNet, load_checkpoint
from HOSSNET.hossnet.postproc import enforce_positive_direction

from .config import ExperimentConfig, Scenario
from .dataset import ExperimentData
from .report import plot_curves, plot_triptych, write_curves_csv
from .splits import contiguous_runs
from .trainer import RunManifest

RECORDS_NAME = "records.csv"
SUMMARY_NAME = "summary.json"
CURVES_NAME = "curves"


class Predictor(ABC):
    """Produces the next fracture frame of a rollout."""

    name: str = "predictor"

    @abstractmethod
    def predict(
        self,
        sample_id: str,
        time_index: int,
        window: np.ndarray,
        last_target: Optional[np.ndarray],
    ) -> np.ndarray:
        """
        Parameters
        ----------
        sample_id : str
            Sample being rolled out
        time_index : int
            Step to predict
        window : np.ndarray
            (L, H, W, C) model inputs ending right before (fracture) or at
            (Cauchy) ``time_index``
        last_target : np.ndarray, optional
            Latest known or predicted (H, W, 1) fracture frame before ``time_index``

        Returns
        -------
        np.ndarray
            Predicted (H, W, 1) fracture frame
        """


class ModelPredictor(Predictor):
    name = "model"

    def __init__(self, model: HOSSNet):
        self.model = model.eval()
        self.dtype = next(model.parameters()).dtype

    def predict(self, sample_id, time_index, window, last_target):
        with torch.no_grad():
            out = self.model(frames_to_tensor(window[None], self.dtype))
        return tensor_to_frames(out[0, -1])

    @classmethod
    def from_manifest(cls, manifest: RunManifest, config: ExperimentConfig) -> "ModelPredictor":
        model, _ = load_checkpoint(manifest.checkpoint_path, expected=config.model_config())
        return cls(model)


class PersistencePredictor(Predictor):
    """Repeats the latest fracture frame; an empty frame when none is known."""

    name = "persistence"

    def predict(self, sample_id, time_index, window, last_target):
        if last_target is None:
            return np.zeros(window.shape[1:3] + (1,))
        return np.array(last_target, copy=True)


class OraclePredictor(Predictor):
    """Returns the ground truth; a perfect model for checking the evaluation path."""

    name = "oracle"

    def __init__(self, targets: Dict[str, SampleSequence]):
        self.targets = targets

    def predict(self, sample_id, time_index, window, last_target):
        return np.array(self.targets[sample_id].frame_at(time_index).values, copy=True)


@dataclass
class SampleRollout:
    sample_id: str
    predictions: List[SampleSequence]
    lead_times: Dict[int, int]
    dynamic: RegionMask


@dataclass
class EvaluationResult:
    records: List[EvalRecord]
    rollouts: Dict[str, SampleRollout] = field(default_factory=dict)
    predictor: str = "model"

    def summary(self, first_n: int = 50) -> Dict[str, float]:
        return summarize(self.records, first_n)


def _padded(indices: List[int], available: Dict[int, np.ndarray]) -> np.ndarray:
    """Frames at ``indices``; indices before the earliest available frame repeat it."""
    earliest = min(available)
    return np.stack([available[max(t, earliest)] for t in indices])


def rollout_sample(
    predictor: Predictor,
    data: ExperimentData,
    sample_id: str,
    window_length: int,
    positive_direction: bool = True,
    dynamic_threshold: float = 1e-4,
    dynamic_dilation: int = 2,
) -> SampleRollout:
    """
    Predict every test step of one sample in time order.

    Fracture inputs are autoregressive: each prediction joins the history the
    next window is cut from. Cauchy inputs are read from the given stress
    frames. A fracture sample without any known frame before its first test
    step uses that frame as the seed of the rollout.
    """
    targets = data.targets[sample_id]
    inputs = data.inputs[sample_id]
    fracture = data.scenario is Scenario.FRACTURE_TO_FRACTURE
    known = sorted(data.split.train.get(sample_id, []))
    test = sorted(data.split.test.get(sample_id, []))
    if not test:
        raise ValueError(f"Sample {sample_id} has no test steps")

    history: Dict[int, np.ndarray] = {t: targets.frame_at(t).values for t in known}
    if fracture and not any(t < test[0] for t in known):
        seed = test.pop(0)
        history[seed] = targets.frame_at(seed).values
        known = sorted(known + [seed])
        if not test:
            raise ValueError(f"Sample {sample_id} has only its seed frame to test")
    stress = {t: inputs.frame_at(t).values for t in inputs.time_indices}

    raw: Dict[int, np.ndarray] = {}
    lead_times: Dict[int, int] = {}
    first_index = targets.time_indices[0]
    for t in test:
        previous = [k for k in known if k < t]
        lead_times[t] = t - (previous[-1] if previous else first_index - 1)
        past = [k for k in history if k < t]
        last_target = history[max(past)] if past else None
        if fracture:
            window = _padded(list(range(t - window_length, t)), history)
        else:
            window = _padded(list(range(t - window_length + 1, t + 1)), stress)
        raw[t] = predictor.predict(sample_id, t, window, last_target)
        history[t] = raw[t]

    predictions = []
    for run in contiguous_runs(test):
        seq = SampleSequence.from_array(
            sample_id,
            np.stack([raw[t] for t in run]),
            ChannelKind.FRACTURE_DAMAGE,
            {"predictor": predictor.name},
            start_index=run[0],
        )
        if positive_direction:
            anchor = None
            if run[0] - 1 in known:
                anchor = FieldFrame(
                    history[run[0] - 1], ChannelKind.FRACTURE_DAMAGE, run[0] - 1
                )
            seq = enforce_positive_direction(seq, anchor)
        predictions.append(seq)

    start = test[0] - 1 if test[0] - 1 in targets.time_indices else test[0]
    if start < test[-1]:
        dynamic = detect_dynamic_region(
            targets, (start, test[-1]), dynamic_threshold, dynamic_dilation
        )
    else:
        dynamic = RegionMask(np.zeros(targets.shape, dtype=bool), RegionKind.DYNAMIC)
    return SampleRollout(sample_id, predictions, lead_times, dynamic)


def evaluate(
    config: ExperimentConfig,
    data: ExperimentData,
    predictor: Predictor,
    out_dir: Optional[Union[str, Path]] = None,
    manifest_path: Optional[Union[str, Path]] = None,
) -> EvaluationResult:
    """
    Roll out every test sample, score each predicted frame and optionally
    write the report bundle.

    Parameters
    ----------
    config : ExperimentConfig
        Window length, positive-direction switch and evaluation settings
    data : ExperimentData
        Normalised data and split; metrics are computed in normalised units
    predictor : Predictor
        Model, persistence or oracle predictor
    out_dir : str or Path, optional
        Where records.csv, summary.json, curves and triptychs are written
    manifest_path : str or Path, optional
        Run manifest the bundle refers to

    Returns
    -------
    EvaluationResult
    """
    settings = config.evaluation
    window_length = config.model_config().window_length
    records: List[EvalRecord] = []
    rollouts: Dict[str, SampleRollout] = {}
    for sample_id in sorted(data.split.test):
        rollout = rollout_sample(
            predictor,
            data,
            sample_id,
            window_length,
            settings.positive_direction,
            settings.dynamic_threshold,
            settings.dynamic_dilation,
        )
        rollouts[sample_id] = rollout
        truth = data.targets[sample_id]
        for seq in rollout.predictions:
            for frame in seq.frames:
                t = frame.time_index
                records.append(
                    evaluate_frame(
                        frame,
                        truth.frame_at(t),
                        rollout.dynamic,
                        sample_id,
                        rollout.lead_times[t],
                        settings.ssim_window,
                    )
                )
    result = EvaluationResult(sort_records(records), rollouts, predictor.name)
    logging.info(f"Evaluated {len(result.records)} predicted frames with the {predictor.name} predictor")
    if out_dir is not None:
        write_bundle(result, config, data, out_dir, manifest_path)
    return result


def lead_index(rollout: SampleRollout) -> Dict[int, int]:
    """First predicted time index of every lead time."""
    by_lead: Dict[int, int] = {}
    for t, lead in sorted(rollout.lead_times.items()):
        by_lead.setdefault(lead, t)
    return by_lead


def write_bundle(
    result: EvaluationResult,
    config: ExperimentConfig,
    data: ExperimentData,
    out_dir: Union[str, Path],
    manifest_path: Optional[Union[str, Path]] = None,
) -> Dict[str, Path]:
    """
    Write records.csv, summary.json, curves (CSV and PNG) and the
    prediction / truth / difference triptychs.
    """
    settings = config.evaluation
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {"records": write_records_csv(result.records, out_dir / RECORDS_NAME)}

    summary = {
        "predictor": result.predictor,
        "manifest": str(manifest_path) if manifest_path else None,
        "first_n": settings.first_n,
        "metrics": result.summary(settings.first_n),
    }
    paths["summary"] = out_dir / SUMMARY_NAME
    with open(paths["summary"], "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)

    curves = {
        metric.value: temporal_curve(
            result.records, metric, settings.curve_interval, settings.curve_max_lead
        )
        for metric in MetricName
    }
    paths["curves_csv"] = write_curves_csv({result.predictor: curves}, out_dir / f"{CURVES_NAME}.csv")
    paths["curves_png"] = plot_curves(
        {result.predictor: curves},
        out_dir / f"{CURVES_NAME}.png",
        title=f"{config.run_name} ({result.predictor})",
        manifest=str(manifest_path) if manifest_path else None,
    )

    for sample_id, rollout in sorted(result.rollouts.items()):
        frames = {
            frame.time_index: frame for seq in rollout.predictions for frame in seq.frames
        }
        by_lead = lead_index(rollout)
        for lead in settings.triptych_leads:
            if lead not in by_lead:
                continue
            t = by_lead[lead]
            paths[f"triptych_{sample_id}_{lead}"] = plot_triptych(
                frames[t].plane,
                data.targets[sample_id].frame_at(t).plane,
                out_dir / f"triptych_{sample_id}_lead{lead:03d}.png",
                title=f"{sample_id} t={t} (lead {lead})",
            )
    logging.info(f"Wrote evaluation bundle to {out_dir}")
    return paths
