import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import torch

logger = logging.getLogger(__name__)

# Material constants of the tensile-failure setup the datasets mimic.
DEFAULT_MATERIAL = {
    "density_kg_m3": 2500.0,
    "youngs_modulus_gpa": 22.6,
    "poisson_ratio": 0.242,
}


class ConfigurationError(ValueError):
    """Raised for configuration that cannot be honoured."""


class ChannelKind(str, Enum):
    """Kind of field stored in a frame."""

    FRACTURE_DAMAGE = "fracture_damage"
    CAUCHY_STRESS = "cauchy_stress"

    @property
    def n_channels(self) -> int:
        return 1 if self is ChannelKind.FRACTURE_DAMAGE else 3


class RegionKind(str, Enum):
    DYNAMIC = "dynamic"
    FIXED = "fixed"
    SUB_REGION = "sub_region"


def _frozen_array(values: Any, dtype=np.float64) -> np.ndarray:
    array = np.array(values, dtype=dtype, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class FieldFrame:
    """
    One field snapshot on a fixed H×W grid.

    Grid origin is the top-left pixel, x grows rightward (axis 1) and y grows
    downward (axis 0).

    Parameters
    ----------
    values : np.ndarray
        Array of shape (H, W, C). A 2-D array is accepted for single-channel
        frames and promoted to (H, W, 1).
    channel_kind : ChannelKind
        Fracture damage (C=1) or Cauchy stress (C=3: Cx, Cy, Cxy)
    time_index : int
        Simulation step, t >= 0
    """

    values: np.ndarray
    channel_kind: ChannelKind
    time_index: int

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim == 2:
            values = values[:, :, None]
        if values.ndim != 3:
            raise ValueError(f"Frame values must be H×W×C, got shape {values.shape}")
        kind = ChannelKind(self.channel_kind)
        if values.shape[2] != kind.n_channels:
            raise ValueError(
                f"{kind.value} frames need {kind.n_channels} channel(s), got {values.shape[2]}"
            )
        if self.time_index < 0:
            raise ValueError(f"time_index must be >= 0, got {self.time_index}")
        object.__setattr__(self, "values", _frozen_array(values))
        object.__setattr__(self, "channel_kind", kind)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape[0], self.values.shape[1]

    @property
    def plane(self) -> np.ndarray:
        """The H×W array of a single-channel frame."""
        if self.values.shape[2] != 1:
            raise ValueError("plane is only defined for single-channel frames")
        return self.values[:, :, 0]


@dataclass(frozen=True)
class SampleSequence:
    """
    Ordered time series of frames for one crack sample.

    Parameters
    ----------
    sample_id : str
        Identifier of the crack sample
    frames : Sequence[FieldFrame]
        Frames with consecutive time indices, all sharing H, W and kind
    metadata : Mapping[str, Any]
        Free-form key-value metadata (material constants, generator seed, ...)
    """

    sample_id: str
    frames: Tuple[FieldFrame, ...]
    metadata: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        frames = tuple(self.frames)
        if not frames:
            raise ValueError(f"Sequence {self.sample_id} has no frames")
        first = frames[0]
        for previous, frame in zip(frames, frames[1:]):
            if frame.time_index != previous.time_index + 1:
                raise ValueError(
                    f"Sequence {self.sample_id} has a gap between t={previous.time_index} "
                    f"and t={frame.time_index}"
                )
            if frame.shape != first.shape or frame.channel_kind != first.channel_kind:
                raise ValueError(
                    f"Sequence {self.sample_id} mixes frame shapes or channel kinds"
                )
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "metadata", dict(self.metadata))

    @classmethod
    def from_array(
        cls,
        sample_id: str,
        values: np.ndarray,
        channel_kind: ChannelKind,
        metadata: Optional[Mapping[str, Any]] = None,
        start_index: int = 0,
    ) -> "SampleSequence":
        """Build a sequence from a T×H×W×C (or T×H×W) array."""
        values = np.asarray(values)
        frames = tuple(
            FieldFrame(values[t], channel_kind, start_index + t)
            for t in range(values.shape[0])
        )
        return cls(sample_id, frames, metadata or {})

    @property
    def channel_kind(self) -> ChannelKind:
        return self.frames[0].channel_kind

    @property
    def shape(self) -> Tuple[int, int]:
        return self.frames[0].shape

    @property
    def n_steps(self) -> int:
        return len(self.frames)

    @property
    def time_indices(self) -> List[int]:
        return [frame.time_index for frame in self.frames]

    def frame_at(self, time_index: int) -> FieldFrame:
        offset = time_index - self.frames[0].time_index
        if offset < 0 or offset >= len(self.frames):
            raise IndexError(f"t={time_index} is outside sequence {self.sample_id}")
        return self.frames[offset]

    def as_array(self) -> np.ndarray:
        """Stacked T×H×W×C copy of the frame values."""
        return np.stack([frame.values for frame in self.frames])

    def window(self, start: int, stop: int) -> "SampleSequence":
        """Frames with start <= time_index < stop."""
        frames = tuple(f for f in self.frames if start <= f.time_index < stop)
        return SampleSequence(self.sample_id, frames, self.metadata)


@dataclass(frozen=True)
class FlowField:
    """Per-pixel motion (u along x, v along y) in pixels per step."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        u = _frozen_array(self.u)
        v = _frozen_array(self.v)
        if u.ndim != 2 or u.shape != v.shape:
            raise ValueError(f"u and v must be matching H×W arrays, got {u.shape}, {v.shape}")
        if not (np.isfinite(u).all() and np.isfinite(v).all()):
            raise ValueError("Flow components must be finite")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.u.shape

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.u, self.v)


@dataclass(frozen=True)
class RegionMask:
    mask: np.ndarray
    kind: RegionKind

    def __post_init__(self):
        mask = np.array(self.mask, dtype=bool, copy=True)
        if mask.ndim != 2:
            raise ValueError(f"Region masks are H×W, got shape {mask.shape}")
        mask.setflags(write=False)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "kind", RegionKind(self.kind))

    @property
    def n_pixels(self) -> int:
        return int(self.mask.sum())

    def is_empty(self) -> bool:
        return not self.mask.any()

    def complement(self) -> "RegionMask":
        """Fixed region of a dynamic mask and vice versa."""
        if self.kind is RegionKind.DYNAMIC:
            kind = RegionKind.FIXED
        elif self.kind is RegionKind.FIXED:
            kind = RegionKind.DYNAMIC
        else:
            kind = RegionKind.SUB_REGION
        return RegionMask(~self.mask, kind)

    @classmethod
    def full(cls, shape: Tuple[int, int], kind: RegionKind = RegionKind.SUB_REGION):
        return cls(np.ones(shape, dtype=bool), kind)


@dataclass
class NormStats:
    """
    Per-channel min/max statistics of a min-max normalisation.

    Statistics are fitted on training frames only and re-applied unchanged to
    validation and test data.
    """

    channel_kind: ChannelKind
    minimum: List[float]
    maximum: List[float]
    warnings: List[str] = field(default_factory=list)

    @classmethod
    def fit(
        cls,
        sequences: Sequence[SampleSequence],
        time_indices: Optional[Mapping[str, Sequence[int]]] = None,
    ) -> "NormStats":
        """
        Fit statistics on the given sequences.

        Parameters
        ----------
        sequences : Sequence[SampleSequence]
            Training sequences
        time_indices : Mapping[str, Sequence[int]], optional
            Restricts each sample to these time indices (e.g. the training half
            of an over-time split). Samples absent from the mapping are skipped.
        """
        if not sequences:
            raise ValueError("Cannot fit normalisation statistics on no sequences")
        kind = sequences[0].channel_kind
        blocks = []
        for seq in sequences:
            if seq.channel_kind != kind:
                raise ValueError("All sequences must share one channel kind")
            values = seq.as_array()
            if time_indices is not None:
                if seq.sample_id not in time_indices:
                    continue
                offsets = [t - seq.frames[0].time_index for t in time_indices[seq.sample_id]]
                values = values[offsets]
            if not np.isfinite(values).all():
                raise ValueError(f"Sequence {seq.sample_id} contains non-finite values")
            blocks.append(values.reshape(-1, kind.n_channels))
        if not blocks:
            raise ValueError("No training frames selected for normalisation")
        stacked = np.concatenate(blocks, axis=0)
        stats = cls(kind, stacked.min(axis=0).tolist(), stacked.max(axis=0).tolist())
        for channel, (lo, hi) in enumerate(zip(stats.minimum, stats.maximum)):
            if hi == lo:
                message = f"{kind.value} channel {channel} is constant ({lo}); mapped to zeros"
                logger.warning(message)
                stats.warnings.append(message)
        return stats

    def _bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        return np.asarray(self.minimum, dtype=np.float64), np.asarray(
            self.maximum, dtype=np.float64
        )

    def apply_array(self, values: np.ndarray, clip: bool = True) -> np.ndarray:
        """
        Map values into [0, 1] with the fitted bounds.

        With ``clip`` values outside the fitted range, which only occur on
        non-training splits, are clipped to 0 or 1. They invert to the
        fitted minimum or maximum, not to their original value.
        """
        lo, hi = self._bounds()
        span = hi - lo
        safe = np.where(span > 0, span, 1.0)
        out = np.where(span > 0, (values - lo) / safe, 0.0)
        return np.clip(out, 0.0, 1.0) if clip else out

    def invert_array(self, values: np.ndarray) -> np.ndarray:
        lo, hi = self._bounds()
        return values * (hi - lo) + lo

    def apply(self, seq: SampleSequence) -> SampleSequence:
        """Normalised copy of ``seq``, clipped into [0, 1] (see :meth:`apply_array`)."""
        self._check_kind(seq)
        return _rebuild(seq, self.apply_array(seq.as_array()))

    def invert(self, seq: SampleSequence) -> SampleSequence:
        self._check_kind(seq)
        return _rebuild(seq, self.invert_array(seq.as_array()))

    def _check_kind(self, seq: SampleSequence):
        if seq.channel_kind != self.channel_kind:
            raise ValueError(
                f"Statistics are for {self.channel_kind.value}, sequence {seq.sample_id} "
                f"is {seq.channel_kind.value}"
            )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "channel_kind": self.channel_kind.value,
            "minimum": list(self.minimum),
            "maximum": list(self.maximum),
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "NormStats":
        return cls(
            ChannelKind(data["channel_kind"]),
            [float(x) for x in data["minimum"]],
            [float(x) for x in data["maximum"]],
            list(data.get("warnings", [])),
        )


def _rebuild(seq: SampleSequence, values: np.ndarray) -> SampleSequence:
    return SampleSequence.from_array(
        seq.sample_id,
        values,
        seq.channel_kind,
        seq.metadata,
        start_index=seq.frames[0].time_index,
    )


def normalize_dataset(
    sequences: Sequence[SampleSequence], stats: Optional[NormStats] = None
) -> Tuple[List[SampleSequence], NormStats]:
    """
    Min-max normalise sequences into [0, 1] per channel.

    Parameters
    ----------
    sequences : Sequence[SampleSequence]
        Sequences to normalise
    stats : NormStats, optional
        Previously fitted training statistics. When omitted the statistics are
        fitted on ``sequences``, which must then be the training split.

    Returns
    -------
    Tuple[List[SampleSequence], NormStats]
        Normalised sequences and the statistics used
    """
    if not sequences:
        raise ValueError("normalize_dataset needs at least one sequence")
    if stats is None:
        stats = NormStats.fit(sequences)
    return [stats.apply(seq) for seq in sequences], stats


def denormalize_dataset(
    sequences: Sequence[SampleSequence], stats: NormStats
) -> List[SampleSequence]:
    return [stats.invert(seq) for seq in sequences]


def frames_to_tensor(
    values: np.ndarray, dtype: torch.dtype = torch.float32
) -> torch.Tensor:
    """Convert a (..., H, W, C) array into a channels-first (..., C, H, W) tensor."""
    tensor = torch.as_tensor(np.ascontiguousarray(values), dtype=dtype)
    return tensor.movedim(-1, -3).contiguous()


def tensor_to_frames(tensor: torch.Tensor) -> np.ndarray:
    """Inverse of :func:`frames_to_tensor`."""
    return tensor.detach().cpu().movedim(-3, -1).numpy().astype(np.float64)
