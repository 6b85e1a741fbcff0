import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from HOSSNET.hossnet.core import ConfigurationError, NormStats, SampleSequence
from HOSSNET.utils.dataset_store import DatasetStore
from HOSSNET.utils.s3_utils import fetch_dataset

from .ablation import run_ablation
from .config import ExperimentConfig, Protocol, Scenario, Variant, load_config
from .dataset import ExperimentData, generate_dataset, load_dataset, prepare_experiment, save_dataset
from .evaluator import (
    ModelPredictor,
    OraclePredictor,
    PersistencePredictor,
    evaluate,
    rollout_sample,
)
from .report import compare_runs
from .trainer import MANIFEST_NAME, RunManifest, TrainingDivergedError, Trainer

logging.basicConfig(level=logging.INFO)

PREDICTORS = ("model", "persistence", "oracle")


def _add_experiment_args(parser: argparse.ArgumentParser):
    parser.add_argument("--config", type=str, help="YAML experiment config")
    parser.add_argument("--variant", choices=[v.value for v in Variant])
    parser.add_argument("--protocol", choices=[p.value for p in Protocol])
    parser.add_argument("--scenario", choices=[s.value for s in Scenario])
    parser.add_argument("--seed", type=int)
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--positive-direction", choices=["on", "off"])
    parser.add_argument("--data-root", type=str, help="Dataset root (default: $HOSSNET_DATA_DIR)")
    parser.add_argument("--output-dir", type=str)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hossnet", description="Physics-guided fracture reconstruction experiments"
    )
    commands = parser.add_subparsers(dest="command", required=True)

    generate = commands.add_parser("generate-data", help="Generate the synthetic crack benchmark")
    _add_experiment_args(generate)
    generate.add_argument(
        "--out", dest="data_root", type=str, help="Directory the dataset is written to"
    )

    fetch = commands.add_parser("fetch-data", help="Download and unpack a dataset archive")
    fetch.add_argument("--url", required=True, help="s3:// or https:// URL of a .tar(.gz) archive")
    fetch.add_argument("--checksum", required=True, help="Expected sha256 of the archive")
    fetch.add_argument("--data-root", type=str, help="Dataset root (default: $HOSSNET_DATA_DIR)")

    train = commands.add_parser("train", help="Train one model variant")
    _add_experiment_args(train)

    for name, help_text in (
        ("evaluate", "Roll out the test split and write the metric bundle"),
        ("predict", "Roll out the test split and store the predicted sequences"),
    ):
        sub = commands.add_parser(name, help=help_text)
        _add_experiment_args(sub)
        sub.add_argument("--manifest", type=str, help="Run manifest (default: <run dir>/manifest.json)")
        sub.add_argument("--predictor", choices=PREDICTORS, default="model")
        sub.add_argument("--out", type=str, help="Output directory")

    ablation = commands.add_parser(
        "ablation", help="Compare variants by early-step WFE over several seeds"
    )
    _add_experiment_args(ablation)
    ablation.add_argument(
        "--variants", nargs="+", choices=[v.value for v in Variant], default=["HOSSnet", "HRU"]
    )
    ablation.add_argument("--seeds", nargs="+", type=int, default=[0, 1, 2])
    ablation.add_argument("--first-n", type=int, default=10, help="Lead times averaged into WFE")
    ablation.add_argument("--out", type=str, required=True)

    report = commands.add_parser("report", help="Compare evaluation bundles")
    report.add_argument(
        "--bundle",
        action="append",
        required=True,
        metavar="LABEL=DIR",
        help="Evaluation bundle to include; repeat once per run",
    )
    report.add_argument("--out", type=str, required=True)
    report.add_argument("--interval", type=int, default=2)
    report.add_argument("--max-lead", type=int, default=60)
    return parser


def _config(args: argparse.Namespace) -> ExperimentConfig:
    positive = None if args.positive_direction is None else args.positive_direction == "on"
    return load_config(
        args.config,
        variant=args.variant,
        protocol=args.protocol,
        scenario=args.scenario,
        seed=args.seed,
        epochs=args.epochs,
        positive_direction=positive,
        data_root=args.data_root,
        output_dir=args.output_dir,
    )


def _experiment(config: ExperimentConfig) -> ExperimentData:
    fracture, stress, dataset_hash = load_dataset(config.data)
    return prepare_experiment(config, fracture, stress, dataset_hash)


def _predictor(args, config: ExperimentConfig, data: ExperimentData):
    manifest_path = Path(args.manifest) if args.manifest else config.run_dir / MANIFEST_NAME
    if args.predictor == "persistence":
        return PersistencePredictor(), None
    if args.predictor == "oracle":
        return OraclePredictor(data.targets), None
    manifest = RunManifest.load(manifest_path)
    if manifest.dataset_hash != data.dataset_hash:
        logging.warning(f"Dataset changed since {manifest_path} was trained")
    if NormStats.from_dict(manifest.target_stats) != data.target_stats:
        raise ConfigurationError(f"Normalisation of {manifest_path} does not match the data")
    return ModelPredictor.from_manifest(manifest, config), manifest_path


def run_generate(args) -> int:
    config = _config(args)
    fracture, stress = generate_dataset(config.data)
    store = DatasetStore(config.data.root)
    if not save_dataset(store, fracture, stress):
        return 1
    logging.info(f"Dataset hash: {store.dataset_hash()}")
    return 0


def run_fetch(args) -> int:
    root = args.data_root or load_config().data.root
    return 0 if fetch_dataset(args.url, args.checksum, root) else 1


def run_train(args) -> int:
    config = _config(args)
    manifest = Trainer(config, _experiment(config)).train()
    logging.info(f"Final loss {manifest.final_loss}; checkpoint {manifest.checkpoint_path}")
    return 0


def run_evaluate(args) -> int:
    config = _config(args)
    data = _experiment(config)
    predictor, manifest_path = _predictor(args, config, data)
    out_dir = Path(args.out) if args.out else config.run_dir / f"eval_{predictor.name}"
    result = evaluate(config, data, predictor, out_dir, manifest_path)
    logging.info(f"Summary over the first {config.evaluation.first_n} steps: "
                 f"{result.summary(config.evaluation.first_n)}")
    return 0


def run_predict(args) -> int:
    config = _config(args)
    data = _experiment(config)
    predictor, _ = _predictor(args, config, data)
    store = DatasetStore(args.out or str(config.run_dir / f"predictions_{predictor.name}"))
    window_length = config.model_config().window_length
    for sample_id in sorted(data.split.test):
        rollout = rollout_sample(
            predictor, data, sample_id, window_length, config.evaluation.positive_direction
        )
        for seq in rollout.predictions:
            named = SampleSequence(f"{sample_id}_t{seq.time_indices[0]:04d}", seq.frames, seq.metadata)
            if not store.save_sequence(named, data.target_stats)["success"]:
                return 1
    return 0


def run_ablation_command(args) -> int:
    config = _config(args)
    result = run_ablation(
        config, _experiment(config), args.out, args.variants, args.seeds, args.first_n
    )
    if len(args.variants) == 2:
        candidate, baseline = args.variants
        logging.info(
            f"{candidate} WFE no worse than {baseline} in "
            f"{result.wins(candidate, baseline)} of {len(args.seeds)} seeds"
        )
    return 0


def run_report(args) -> int:
    bundles = []
    for entry in args.bundle:
        label, sep, path = entry.partition("=")
        if not sep:
            raise ConfigurationError(f"--bundle expects LABEL=DIR, got {entry}")
        bundles.append((label, path))
    compare_runs(bundles, args.out, args.interval, args.max_lead)
    return 0


COMMANDS = {
    "generate-data": run_generate,
    "fetch-data": run_fetch,
    "train": run_train,
    "evaluate": run_evaluate,
    "predict": run_predict,
    "report": run_report,
    "ablation": run_ablation_command,
}


def main(argv: Optional[List[str]] = None) -> int:
    """
    Entry point of the experiment CLI.
    """
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigurationError as e:
        logging.error(f"Configuration error: {e}")
        return 2
    except TrainingDivergedError as e:
        logging.error(f"Training diverged: {e}")
        return 3


if __name__ == "__main__":
    sys.exit(main())
