import csv
import json
import logging
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from HOSSNET.hossnet.metrics import MetricName, read_records_csv, temporal_curve  # noqa: E402

# label -> metric -> lead time -> mean value
CurveTable = Mapping[str, Mapping[str, Mapping[int, float]]]

COMPARISON_NAME = "comparison"


def write_curves_csv(curves: CurveTable, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["label", "lead_time"] + [m.value for m in MetricName])
        for label in sorted(curves):
            leads = sorted(set().union(*(curves[label][m.value] for m in MetricName)))
            for lead in leads:
                writer.writerow(
                    [label, lead]
                    + [repr(curves[label][m.value].get(lead, float("nan"))) for m in MetricName]
                )
    return path


def plot_curves(
    curves: CurveTable,
    path: Union[str, Path],
    title: str = "",
    manifest: Optional[str] = None,
) -> Path:
    """One panel per metric, one line per label, lead time on the x axis."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, axes = plt.subplots(1, len(MetricName), figsize=(15, 4))
    for ax, metric in zip(axes, MetricName):
        for label in sorted(curves):
            table = curves[label][metric.value]
            leads = sorted(table)
            ax.plot(leads, [table[lead] for lead in leads], marker="o", markersize=3, label=label)
        ax.set_xlabel("lead time (steps)")
        ax.set_ylabel(metric.value.upper())
        ax.grid(True, alpha=0.3)
    axes[0].legend()
    fig.suptitle(title)
    if manifest:
        fig.text(0.01, 0.01, f"manifest: {manifest}", fontsize=7)
    plt.tight_layout()
    plt.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_triptych(
    pred: np.ndarray, truth: np.ndarray, path: Union[str, Path], title: str = ""
) -> Path:
    """Prediction (top), ground truth (middle) and their difference (bottom)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, axes = plt.subplots(3, 1, figsize=(4, 10))
    panels = [
        ("prediction", pred, "viridis", (0.0, 1.0)),
        ("ground truth", truth, "viridis", (0.0, 1.0)),
        ("difference", pred - truth, "coolwarm", (-1.0, 1.0)),
    ]
    for ax, (name, image, cmap, (vmin, vmax)) in zip(axes, panels):
        im = ax.imshow(image, cmap=cmap, vmin=vmin, vmax=vmax)
        ax.set_title(name)
        ax.axis("off")
        plt.colorbar(im, ax=ax)
    fig.suptitle(title)
    plt.tight_layout()
    plt.savefig(path, dpi=150)
    plt.close(fig)
    return path


def _bundle_summary(bundle_dir: Path) -> Dict:
    with open(bundle_dir / "summary.json", "r") as f:
        return json.load(f)


def compare_runs(
    bundles: Sequence[Tuple[str, Union[str, Path]]],
    out_dir: Union[str, Path],
    interval: int = 2,
    max_lead: int = 60,
) -> Dict[str, Path]:
    """
    Comparison table and curves of several evaluation bundles.

    Parameters
    ----------
    bundles : Sequence[Tuple[str, str or Path]]
        (label, bundle directory) pairs, e.g. one per model variant
    out_dir : str or Path
        Receives comparison.csv, comparison_curves.csv and comparison_curves.png

    Returns
    -------
    Dict[str, Path]
        Written files
    """
    if not bundles:
        raise ValueError("compare_runs needs at least one bundle")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    rows: List[List] = []
    curves: Dict[str, Dict[str, Dict[int, float]]] = {}
    for label, bundle_dir in bundles:
        bundle_dir = Path(bundle_dir)
        summary = _bundle_summary(bundle_dir)
        metrics = summary["metrics"]
        rows.append(
            [label]
            + [repr(float(metrics[m.value])) for m in MetricName]
            + [int(metrics["n_records"]), summary.get("manifest") or ""]
        )
        records = read_records_csv(bundle_dir / "records.csv")
        curves[label] = {
            m.value: temporal_curve(records, m, interval, max_lead) for m in MetricName
        }

    table_path = out_dir / f"{COMPARISON_NAME}.csv"
    with open(table_path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["label"] + [m.value for m in MetricName] + ["n_records", "manifest"])
        writer.writerows(rows)

    paths = {
        "table": table_path,
        "curves_csv": write_curves_csv(curves, out_dir / f"{COMPARISON_NAME}_curves.csv"),
        "curves_png": plot_curves(curves, out_dir / f"{COMPARISON_NAME}_curves.png", "comparison"),
    }
    logging.info(f"Wrote comparison of {len(bundles)} runs to {out_dir}")
    return paths
