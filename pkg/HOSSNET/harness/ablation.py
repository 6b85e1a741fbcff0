import csv
import logging
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

from .config import ExperimentConfig, Variant
from .dataset import ExperimentData
from .evaluator import ModelPredictor, evaluate
from .trainer import MANIFEST_NAME, train

ABLATION_RUNS_NAME = "ablation_runs.csv"
COMPARISON_NAME = "comparison.csv"


@dataclass(frozen=True)
class AblationRun:
    variant: Variant
    seed: int
    wfe: float
    manifest_path: str


@dataclass
class AblationResult:
    """Early-step WFE of every (variant, seed) run of a directional ablation."""

    runs: List[AblationRun]
    first_n: int
    paths: Dict[str, Path] = field(default_factory=dict)

    def wfe_by_seed(self, variant: Union[Variant, str]) -> Dict[int, float]:
        variant = Variant(variant)
        return {run.seed: run.wfe for run in self.runs if run.variant is variant}

    def wins(self, candidate: Union[Variant, str], baseline: Union[Variant, str]) -> int:
        """Number of seeds where ``candidate`` has a WFE no worse than ``baseline``."""
        ours = self.wfe_by_seed(candidate)
        theirs = self.wfe_by_seed(baseline)
        return sum(1 for seed in ours if seed in theirs and ours[seed] <= theirs[seed])

    def table(self) -> List[Dict[str, float]]:
        rows = []
        for variant in sorted({run.variant for run in self.runs}, key=lambda v: v.value):
            values = list(self.wfe_by_seed(variant).values())
            rows.append(
                {
                    "variant": variant.value,
                    "n_seeds": len(values),
                    "wfe_mean": statistics.fmean(values),
                    "wfe_std": statistics.stdev(values) if len(values) > 1 else 0.0,
                }
            )
        return rows


def run_ablation(
    config: ExperimentConfig,
    data: ExperimentData,
    out_dir: Union[str, Path],
    variants: Sequence[Union[Variant, str]] = (Variant.HOSSNET, Variant.HRU),
    seeds: Sequence[int] = (0, 1, 2),
    first_n: Optional[int] = 10,
) -> AblationResult:
    """
    Train and evaluate every variant under every seed on one split.

    Parameters
    ----------
    config : ExperimentConfig
        Shared settings; only the variant and the seed change between runs
    data : ExperimentData
        Prepared data, reused by every run
    out_dir : str or Path
        Receives one run directory per (variant, seed), ablation_runs.csv and
        comparison.csv (mean and sample standard deviation of WFE per variant)
    variants : Sequence[Variant or str]
        Variants to compare
    seeds : Sequence[int]
        Seeds of the repeated runs
    first_n : int, optional
        WFE is averaged over lead times 1..first_n; the config's value when None

    Returns
    -------
    AblationResult
    """
    if not variants or not seeds:
        raise ValueError("An ablation needs at least one variant and one seed")
    first_n = first_n or config.evaluation.first_n
    out_dir = Path(out_dir)
    runs: List[AblationRun] = []
    for seed in seeds:
        for variant in variants:
            run_config = config.with_overrides(variant=Variant(variant), seed=seed, output_dir=str(out_dir))
            manifest = train(run_config, data)
            predictor = ModelPredictor.from_manifest(manifest, run_config)
            manifest_path = run_config.run_dir / MANIFEST_NAME
            result = evaluate(run_config, data, predictor, run_config.run_dir / "eval", manifest_path)
            wfe = result.summary(first_n)["wfe"]
            runs.append(AblationRun(run_config.variant, seed, wfe, str(manifest_path)))
            logging.info(f"{run_config.variant.value} seed {seed}: WFE over the first {first_n} steps {wfe:.6g}")

    ablation = AblationResult(runs, first_n)
    ablation.paths = write_ablation(ablation, out_dir)
    return ablation


def write_ablation(ablation: AblationResult, out_dir: Union[str, Path]) -> Dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    runs_path = out_dir / ABLATION_RUNS_NAME
    with open(runs_path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["variant", "seed", f"wfe_first_{ablation.first_n}", "manifest"])
        for run in sorted(ablation.runs, key=lambda r: (r.variant.value, r.seed)):
            writer.writerow([run.variant.value, run.seed, repr(run.wfe), run.manifest_path])

    table_path = out_dir / COMPARISON_NAME
    with open(table_path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["variant", "n_seeds", "wfe_mean", "wfe_std"])
        for row in ablation.table():
            writer.writerow(
                [row["variant"], row["n_seeds"], repr(row["wfe_mean"]), repr(row["wfe_std"])]
            )
    logging.info(f"Wrote ablation over {len(ablation.runs)} runs to {out_dir}")
    return {"runs": runs_path, "table": table_path}
