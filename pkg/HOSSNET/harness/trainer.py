import json
import logging
import math
import subprocess
import time
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
import torch

from HOSSNET.hossnet.losses import (
    FeatureExtractor,
    LossReport,
    build_extractor,
    default_training_mask,
    total_loss,
)
from HOSSNET.hossnet.model import HOSSNet, build_model, save_checkpoint
from HOSSNET.utils.window_feeder import WindowFeeder

from .config import ExperimentConfig, Variant
from .dataset import ExperimentData
from .progress_reporter import ProgressReporter
from .windows import build_training_windows, split_validation, stack_windows

CHECKPOINT_NAME = "checkpoint.pt"
MANIFEST_NAME = "manifest.json"
HISTORY_NAME = "history.jsonl"


class TrainingDivergedError(RuntimeError):
    """Raised when a training loss becomes NaN or infinite."""


def source_revision() -> str:
    """Git revision of the working tree, or "unknown" outside a repository."""
    try:
        result = subprocess.run(
            ["git", "rev-parse", "HEAD"], capture_output=True, text=True, timeout=10
        )
    except (OSError, subprocess.SubprocessError) as e:
        logging.warning(f"Cannot determine source revision: {e}")
        return "unknown"
    if result.returncode != 0:
        return "unknown"
    return result.stdout.strip() or "unknown"


@dataclass
class RunManifest:
    """
    Provenance of one training run; every emitted table and figure points at one.

    Parameters
    ----------
    config : dict
        Snapshot of the ExperimentConfig
    revision : str
        Source revision of the code that produced the run
    dataset_hash : str
        sha256 of the dataset the run was trained on
    wall_clock_s : float
        Training time in seconds
    final_loss : dict
        Decomposed training loss of the last epoch
    checkpoint_path : str
        Best-validation checkpoint
    """

    config: Dict[str, Any]
    revision: str
    dataset_hash: str
    wall_clock_s: float
    final_loss: Dict[str, float]
    checkpoint_path: str
    best_epoch: int = 0
    best_score: float = math.inf
    input_stats: Dict[str, Any] = field(default_factory=dict)
    target_stats: Dict[str, Any] = field(default_factory=dict)
    split: Dict[str, Any] = field(default_factory=dict)
    history: List[Dict[str, Any]] = field(default_factory=list)

    def save(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as f:
            json.dump(asdict(self), f, indent=2, sort_keys=True)
        logging.info(f"Wrote run manifest {path}")
        return path

    @classmethod
    def load(cls, path: Union[str, Path]) -> "RunManifest":
        with open(path, "r") as f:
            return cls(**json.load(f))


class Trainer:
    """
    Trains one model variant on the training windows of an experiment.

    Parameters
    ----------
    config : ExperimentConfig
        Experiment settings; the variant decides architecture and loss weights
    data : ExperimentData
        Normalised sequences and the split
    run_dir : Path, optional
        Output directory; ``config.run_dir`` when omitted
    extractor : FeatureExtractor, optional
        Perceptual feature extractor overriding ``config.losses.extractor``
    """

    def __init__(
        self,
        config: ExperimentConfig,
        data: ExperimentData,
        run_dir: Optional[Union[str, Path]] = None,
        extractor: Optional[FeatureExtractor] = None,
    ):
        if data.scenario is not config.scenario:
            raise ValueError(
                f"Data was prepared for {data.scenario.value}, config asks for {config.scenario.value}"
            )
        self.config = config
        self.data = data
        self.run_dir = Path(run_dir) if run_dir else config.run_dir
        self.dtype = torch.float64 if config.training.float64 else torch.float32
        self.model_config = config.model_config()
        self.weights = config.loss_weights()
        self.extractor = extractor
        if self.extractor is None and self.weights.alpha_perc > 0:
            self.extractor = build_extractor(config.losses.extractor, config.losses.vgg_layer_index)

        windows = build_training_windows(
            data.split.train, config.scenario, self.model_config.window_length
        )
        self.train_windows, self.val_windows = split_validation(
            windows, config.training.validation_fraction
        )

    def _batches(self, epoch: int) -> List[List[int]]:
        rng = np.random.default_rng([self.config.seed, epoch])
        order = rng.permutation(len(self.train_windows)).tolist()
        size = self.config.training.batch_size
        return [order[i : i + size] for i in range(0, len(order), size)]

    def _make_batch(self, indices):
        return stack_windows([self.train_windows[i] for i in indices], self.data, self.dtype)

    def batch_loss(self, model: HOSSNet, inputs: torch.Tensor, targets: torch.Tensor) -> LossReport:
        pred = model(inputs)[:, :, 0]
        losses = self.config.losses
        mask = default_training_mask(targets, losses.sub_region_dilation) if losses.use_sub_region else None
        return total_loss(
            pred,
            targets,
            self.weights,
            mask=mask,
            flow_params=self.config.flow,
            extractor=self.extractor,
            magnitude_floor=losses.magnitude_floor,
        )

    def validate(self, model: HOSSNet) -> Optional[Dict[str, float]]:
        if not self.val_windows:
            return None
        model.eval()
        sums: Dict[str, float] = defaultdict(float)
        size = self.config.training.batch_size
        with torch.no_grad():
            for i in range(0, len(self.val_windows), size):
                chunk = self.val_windows[i : i + size]
                inputs, targets = stack_windows(chunk, self.data, self.dtype)
                for key, value in self.batch_loss(model, inputs, targets).as_dict().items():
                    sums[key] += value * len(chunk)
        return {key: value / len(self.val_windows) for key, value in sums.items()}

    def train(self) -> RunManifest:
        training = self.config.training
        torch.manual_seed(self.config.seed)
        model = build_model(self.model_config, self.config.seed, self.dtype)
        optimizer = torch.optim.Adam(model.parameters(), lr=training.learning_rate)
        reporter = ProgressReporter(self.run_dir / HISTORY_NAME)
        checkpoint_path = self.run_dir / CHECKPOINT_NAME

        logging.info(
            f"Training {self.config.variant.value} on {len(self.train_windows)} windows "
            f"({len(self.val_windows)} validation) for {training.epochs} epochs"
        )
        best_score, best_epoch = math.inf, 0
        last_finite: Optional[Dict[str, float]] = None
        train_terms: Dict[str, float] = {}
        start = time.perf_counter()

        for epoch in range(1, training.epochs + 1):
            model.train()
            sums: Dict[str, float] = defaultdict(float)
            n_windows = 0
            feeder = WindowFeeder(self._make_batch, self._batches(epoch), training.max_prepared_batches)
            try:
                for batch_index, (inputs, targets) in enumerate(feeder):
                    optimizer.zero_grad()
                    report = self.batch_loss(model, inputs, targets)
                    if not report.is_finite():
                        message = (
                            f"Non-finite loss {report.as_dict()} at epoch {epoch}, batch {batch_index}; "
                            f"last finite loss: {last_finite}"
                        )
                        reporter.send_progress_update(
                            "diverged", message, int(100 * (epoch - 1) / training.epochs)
                        )
                        raise TrainingDivergedError(message)
                    report.total.backward()
                    optimizer.step()
                    last_finite = report.as_dict()
                    for key, value in last_finite.items():
                        sums[key] += value * len(inputs)
                    n_windows += len(inputs)
            finally:
                feeder.stop()

            train_terms = {key: value / n_windows for key, value in sums.items()}
            val_terms = self.validate(model)
            if val_terms is not None and not all(math.isfinite(v) for v in val_terms.values()):
                message = (
                    f"Non-finite validation loss {val_terms} at epoch {epoch}; "
                    f"last finite loss: {last_finite}"
                )
                reporter.send_progress_update("diverged", message, int(100 * epoch / training.epochs))
                raise TrainingDivergedError(message)
            score = (val_terms or train_terms)["total"]
            improved = score < best_score
            if improved:
                best_score, best_epoch = score, epoch
                save_checkpoint(checkpoint_path, model, self._checkpoint_extra(epoch))
            reporter.send_progress_update(
                "training",
                f"epoch {epoch}/{training.epochs} train total {train_terms['total']:.6g}"
                + (f", validation total {val_terms['total']:.6g}" if val_terms else ""),
                int(100 * epoch / training.epochs),
                epoch=epoch,
                train=train_terms,
                validation=val_terms,
                improved=improved,
            )

        wall_clock = time.perf_counter() - start
        if not checkpoint_path.exists():
            raise TrainingDivergedError(
                f"No checkpoint was written to {checkpoint_path}; best score {best_score}"
            )
        reporter.send_progress_update(
            "completed", f"best epoch {best_epoch} (score {best_score:.6g})", 100
        )
        manifest = RunManifest(
            config=self.config.to_dict(),
            revision=source_revision(),
            dataset_hash=self.data.dataset_hash,
            wall_clock_s=wall_clock,
            final_loss=train_terms,
            checkpoint_path=str(checkpoint_path),
            best_epoch=best_epoch,
            best_score=best_score,
            input_stats=self.data.input_stats.to_dict(),
            target_stats=self.data.target_stats.to_dict(),
            split=self.data.split.to_dict(),
            history=reporter.epochs(),
        )
        manifest.save(self.run_dir / MANIFEST_NAME)
        return manifest

    def _checkpoint_extra(self, epoch: int) -> Dict[str, Any]:
        return {
            "epoch": epoch,
            "run_name": self.config.run_name,
            "input_stats": self.data.input_stats.to_dict(),
            "target_stats": self.data.target_stats.to_dict(),
        }


def train(config: ExperimentConfig, data: ExperimentData, **kwargs) -> RunManifest:
    return Trainer(config, data, **kwargs).train()


def run_baseline(
    config: ExperimentConfig, variant: Union[Variant, str], data: ExperimentData, **kwargs
) -> RunManifest:
    """Train ``variant`` with the splits, seed and budget of ``config``."""
    return train(config.with_overrides(variant=Variant(variant)), data, **kwargs)
