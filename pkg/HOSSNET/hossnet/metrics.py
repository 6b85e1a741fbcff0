import csv
import logging
from collections import defaultdict
from dataclasses import asdict, dataclass
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple, Union

import numpy as np
from scipy.ndimage import binary_dilation, uniform_filter

from .core import FieldFrame, RegionKind, RegionMask, SampleSequence

logger = logging.getLogger(__name__)

CSV_FIELDS = ("sample_id", "lead_time", "rmse", "ssim", "wfe")

FrameLike = Union[FieldFrame, np.ndarray]


class MetricName(str, Enum):
    RMSE = "rmse"
    SSIM = "ssim"
    WFE = "wfe"


@dataclass(frozen=True)
class EvalRecord:
    """Metrics of one predicted frame, ``lead_time`` steps past the last known frame."""

    sample_id: str
    lead_time: int
    rmse: float
    ssim: float
    wfe: float

    def __post_init__(self):
        if self.lead_time < 0:
            raise ValueError(f"lead_time must be >= 0, got {self.lead_time}")
        if not self.rmse >= 0 or not self.wfe >= 0:
            raise ValueError(f"rmse and wfe must be non-negative, got {self.rmse}, {self.wfe}")
        if not -1.0 <= self.ssim <= 1.0:
            raise ValueError(f"ssim must lie in [-1, 1], got {self.ssim}")

    def value(self, metric: Union[MetricName, str]) -> float:
        return float(getattr(self, MetricName(metric).value))


def _values(frame: FrameLike) -> np.ndarray:
    """(H, W, C) float64 view of a frame or array; 2-D arrays gain a channel axis."""
    values = frame.values if isinstance(frame, FieldFrame) else np.asarray(frame, np.float64)
    if values.ndim == 2:
        values = values[:, :, None]
    if values.ndim != 3:
        raise ValueError(f"Frames must be H×W or H×W×C, got shape {values.shape}")
    return values


def _pair(pred: FrameLike, truth: FrameLike) -> Tuple[np.ndarray, np.ndarray]:
    a, b = _values(pred), _values(truth)
    if a.shape != b.shape:
        raise ValueError(f"Prediction {a.shape} and truth {b.shape} differ")
    return a, b


def rmse(pred: FrameLike, truth: FrameLike) -> float:
    a, b = _pair(pred, truth)
    return float(np.sqrt(np.mean((a - b) ** 2)))


def ssim(
    pred: FrameLike,
    truth: FrameLike,
    window: int = 7,
    k1: float = 0.01,
    k2: float = 0.03,
    data_range: float = 1.0,
) -> float:
    """
    Mean structural similarity over uniform ``window``×``window`` neighbourhoods.

    Local statistics are computed with a box filter; the border band of
    half a window, where the filter would read padded values, is excluded
    from the mean. Multi-channel frames average the per-channel values.
    """
    if window < 1 or window % 2 == 0:
        raise ValueError(f"window must be a positive odd integer, got {window}")
    if data_range <= 0:
        raise ValueError(f"data_range must be positive, got {data_range}")
    a, b = _pair(pred, truth)
    height, width = a.shape[:2]
    if height < window or width < window:
        raise ValueError(f"Frame {height}×{width} is smaller than the {window}×{window} window")

    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    pad = (window - 1) // 2
    scores = []
    for c in range(a.shape[2]):
        x, y = a[:, :, c], b[:, :, c]
        mu_x = uniform_filter(x, size=window)
        mu_y = uniform_filter(y, size=window)
        var_x = uniform_filter(x * x, size=window) - mu_x**2
        var_y = uniform_filter(y * y, size=window) - mu_y**2
        cov = uniform_filter(x * y, size=window) - mu_x * mu_y
        numerator = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
        denominator = (mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2)
        local = numerator / denominator
        scores.append(local[pad : height - pad, pad : width - pad].mean())
    return float(np.clip(np.mean(scores), -1.0, 1.0))


def detect_dynamic_region(
    truth_seq: SampleSequence,
    window: Tuple[int, int],
    threshold: float = 1e-4,
    dilation: int = 2,
) -> RegionMask:
    """
    Pixels whose ground truth changes by more than ``threshold`` over the
    inclusive time window, grown by ``dilation`` pixels (8-connected).

    The fixed region is the complement of the returned mask.
    """
    t0, t1 = window
    if t0 >= t1:
        raise ValueError(f"Window start must precede its end, got ({t0}, {t1})")
    indices = truth_seq.time_indices
    if t0 < indices[0] or t1 > indices[-1]:
        raise ValueError(
            f"Window ({t0}, {t1}) is outside sequence {truth_seq.sample_id} "
            f"[{indices[0]}, {indices[-1]}]"
        )
    stack = truth_seq.window(t0, t1 + 1).as_array()
    change = (stack.max(axis=0) - stack.min(axis=0)).max(axis=-1)
    mask = change > threshold
    if dilation > 0 and mask.any():
        mask = binary_dilation(mask, structure=np.ones((3, 3), dtype=bool), iterations=dilation)
    return RegionMask(mask, RegionKind.DYNAMIC)


def region_rmse(pred: FrameLike, truth: FrameLike, region: np.ndarray) -> float:
    """RMSE over the pixels of ``region`` (all channels); 0 for an empty region."""
    a, b = _pair(pred, truth)
    region = np.asarray(region, dtype=bool)
    if region.shape != a.shape[:2]:
        raise ValueError(f"Region {region.shape} does not match frame {a.shape[:2]}")
    if not region.any():
        return 0.0
    return float(np.sqrt(np.mean((a[region] - b[region]) ** 2)))


def wfe(
    pred: FrameLike,
    truth: FrameLike,
    dynamic: RegionMask,
    dynamic_weight: float = 10.0,
    fixed_weight: float = 1.0,
) -> float:
    """Weighted fracture error: 10·RMSE on the dynamic region + RMSE on the fixed region."""
    fixed = dynamic.complement()
    return dynamic_weight * region_rmse(pred, truth, dynamic.mask) + fixed_weight * region_rmse(
        pred, truth, fixed.mask
    )


def evaluate_frame(
    pred: FrameLike,
    truth: FrameLike,
    dynamic: RegionMask,
    sample_id: str,
    lead_time: int,
    ssim_window: int = 7,
) -> EvalRecord:
    return EvalRecord(
        sample_id=sample_id,
        lead_time=lead_time,
        rmse=rmse(pred, truth),
        ssim=ssim(pred, truth, window=ssim_window),
        wfe=wfe(pred, truth, dynamic),
    )


def temporal_curve(
    records: Sequence[EvalRecord],
    metric: Union[MetricName, str],
    interval: int = 2,
    max_lead: int = 60,
) -> Dict[int, float]:
    """
    Mean metric per lead time at leads 1, 1 + interval, ... up to ``max_lead``.

    Leads without records are left out of the table.
    """
    if not records:
        raise ValueError("temporal_curve needs at least one record")
    if interval < 1:
        raise ValueError(f"interval must be >= 1, got {interval}")
    metric = MetricName(metric)
    by_lead: Dict[int, List[float]] = defaultdict(list)
    for record in records:
        by_lead[record.lead_time].append(record.value(metric))
    return {
        lead: float(np.mean(by_lead[lead]))
        for lead in range(1, max_lead + 1, interval)
        if lead in by_lead
    }


def summarize(records: Sequence[EvalRecord], first_n: int = 50) -> Dict[str, float]:
    """Per-frame metrics averaged over every record with 1 <= lead_time <= first_n."""
    selected = [r for r in records if 1 <= r.lead_time <= first_n]
    if not selected:
        raise ValueError(f"No records with lead time in [1, {first_n}]")
    summary: Dict[str, float] = {
        m.value: float(np.mean([r.value(m) for r in selected])) for m in MetricName
    }
    summary["n_records"] = len(selected)
    return summary


def sort_records(records: Iterable[EvalRecord]) -> List[EvalRecord]:
    return sorted(records, key=lambda r: (r.sample_id, r.lead_time))


def write_records_csv(records: Iterable[EvalRecord], path: Union[str, Path]) -> Path:
    """Write records sorted by (sample_id, lead_time) with round-trip exact floats."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(CSV_FIELDS)
        for record in sort_records(records):
            row = asdict(record)
            writer.writerow(
                [row["sample_id"], row["lead_time"]]
                + [repr(float(row[k])) for k in ("rmse", "ssim", "wfe")]
            )
    return path


def read_records_csv(path: Union[str, Path]) -> List[EvalRecord]:
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        missing = set(CSV_FIELDS) - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"{path} lacks columns {sorted(missing)}")
        return [
            EvalRecord(
                sample_id=row["sample_id"],
                lead_time=int(row["lead_time"]),
                rmse=float(row["rmse"]),
                ssim=float(row["ssim"]),
                wfe=float(row["wfe"]),
            )
            for row in reader
        ]
