import logging
from dataclasses import asdict, dataclass, replace
from typing import Any, Dict, List, Mapping, Tuple

import numpy as np
from scipy.ndimage import gaussian_filter

from .core import DEFAULT_MATERIAL, ChannelKind, SampleSequence

logger = logging.getLogger(__name__)

# Loading of the reference setup: 2 m × 3 m sample, bottom edge fixed, top
# edge pulled upward. Cracks open perpendicular to the load, i.e. horizontally.
LOADING_SETUP = {
    "domain_width_m": 2.0,
    "domain_height_m": 3.0,
    "top_velocity_m_s": 0.3,
    "strain_rate_per_s": 0.1,
    "loading": "uniaxial_tension_vertical",
}

_PATH_SPACING = 0.5


@dataclass(frozen=True)
class CrackSpec:
    """
    Parameters of one procedurally generated crack sample.

    Parameters
    ----------
    n_initial_cracks : int
        Number of pre-existing crack segments
    seed : int
        Seed of the sample's random generator
    growth_rate : float
        Tip advance per step in pixels
    branching_prob : float
        Per-step probability that an active tip spawns a branch
    grid : Tuple[int, int]
        Raster size (H, W)
    n_steps : int
        Number of frames T
    initial_length : float
        Length of the seeded segments in pixels
    footprint_sigma : float
        Width of the Gaussian damage footprint around the crack path
    angular_jitter : float
        Standard deviation of the per-step tip direction change (radians)
    load_bias : float
        Fraction of the deviation from horizontal removed every step
    max_active_tips : int
        Upper bound on simultaneously growing tips; branching stops at the bound
    """

    n_initial_cracks: int = 20
    seed: int = 0
    growth_rate: float = 0.5
    branching_prob: float = 0.02
    grid: Tuple[int, int] = (32, 32)
    n_steps: int = 60
    initial_length: float = 2.0
    footprint_sigma: float = 1.0
    angular_jitter: float = 0.25
    load_bias: float = 0.2
    max_active_tips: int = 64

    def __post_init__(self):
        if self.n_initial_cracks < 1:
            raise ValueError(f"n_initial_cracks must be >= 1, got {self.n_initial_cracks}")
        if self.n_steps < 2:
            raise ValueError(f"n_steps must be >= 2, got {self.n_steps}")
        if self.growth_rate < 0:
            raise ValueError(f"growth_rate must be >= 0, got {self.growth_rate}")
        if not 0.0 <= self.branching_prob <= 1.0:
            raise ValueError(f"branching_prob must be in [0, 1], got {self.branching_prob}")
        if self.footprint_sigma <= 0:
            raise ValueError("footprint_sigma must be positive")
        object.__setattr__(self, "grid", tuple(int(x) for x in self.grid))

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "CrackSpec":
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        unknown = set(data) - set(known)
        if unknown:
            raise ValueError(f"Unknown crack spec keys: {sorted(unknown)}")
        return cls(**known)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["grid"] = list(self.grid)
        return data


def _footprint(points: np.ndarray, shape: Tuple[int, int], sigma: float) -> np.ndarray:
    """Max over points of an isotropic Gaussian of peak 1."""
    if len(points) == 0:
        return np.zeros(shape)
    yy, xx = np.mgrid[0 : shape[0], 0 : shape[1]].astype(np.float64)
    d2 = (yy[None] - points[:, 0, None, None]) ** 2 + (
        xx[None] - points[:, 1, None, None]
    ) ** 2
    return np.exp(-d2 / (2.0 * sigma**2)).max(axis=0)


def _path_points(start: np.ndarray, stop: np.ndarray) -> np.ndarray:
    length = float(np.hypot(*(stop - start)))
    if length == 0.0:
        return np.empty((0, 2))
    n = max(int(np.ceil(length / _PATH_SPACING)), 1)
    fractions = np.linspace(0.0, 1.0, n + 1)[1:]
    return start[None] + fractions[:, None] * (stop - start)[None]


def _wrap(angle: float) -> float:
    return (angle + np.pi) % (2.0 * np.pi) - np.pi


def _place_cracks(spec: CrackSpec, rng: np.random.Generator) -> np.ndarray:
    height, width = spec.grid
    margin = 2
    rows = np.arange(margin, height - margin)
    cols = np.arange(margin, width - margin)
    n_sites = len(rows) * len(cols)
    if n_sites < spec.n_initial_cracks:
        raise ValueError(
            f"Grid {spec.grid} is too small to place {spec.n_initial_cracks} cracks "
            f"({n_sites} interior sites)"
        )
    chosen = rng.choice(n_sites, size=spec.n_initial_cracks, replace=False)
    return np.stack([rows[chosen // len(cols)], cols[chosen % len(cols)]], axis=1).astype(
        np.float64
    )


def generate_sample(spec: CrackSpec, sample_id: str = "crack_000") -> SampleSequence:
    """
    Generate a monotone fracture-damage sequence.

    Seeded segments are deposited at t=0; every later step each active tip
    performs one step of a biased random walk and deposits a Gaussian
    footprint along the newly traversed path. Damage is the running maximum of
    all deposits, so every pixel is non-decreasing in time and lies in [0, 1].
    """
    rng = np.random.default_rng(spec.seed)
    shape = spec.grid
    centres = _place_cracks(spec, rng)

    damage = np.zeros(shape)
    tips: List[Tuple[np.ndarray, float]] = []
    for centre in centres:
        angle = rng.normal(0.0, spec.angular_jitter)
        direction = np.array([np.sin(angle), np.cos(angle)])
        half = 0.5 * spec.initial_length * direction
        a, b = centre - half, centre + half
        seg = np.vstack([a[None], _path_points(a, b)])
        damage = np.maximum(damage, _footprint(seg, shape, spec.footprint_sigma))
        tips.append((b.copy(), angle))
        tips.append((a.copy(), _wrap(angle + np.pi)))

    frames = [damage.copy()]
    for _ in range(1, spec.n_steps):
        traversed = []
        next_tips = []
        for position, angle in tips:
            # Pull toward horizontal growth (0 or pi), then jitter.
            target = 0.0 if abs(angle) < np.pi / 2 else np.pi
            angle = _wrap(angle + spec.load_bias * _wrap(target - angle))
            angle = _wrap(angle + rng.normal(0.0, spec.angular_jitter))
            step = spec.growth_rate * np.array([np.sin(angle), np.cos(angle)])
            new_position = position + step
            traversed.append(_path_points(position, new_position))
            inside = (0 <= new_position[0] < shape[0]) and (0 <= new_position[1] < shape[1])
            if inside:
                next_tips.append((new_position, angle))
                if (
                    rng.random() < spec.branching_prob
                    and len(next_tips) < spec.max_active_tips
                ):
                    side = 1.0 if rng.random() < 0.5 else -1.0
                    next_tips.append((new_position.copy(), _wrap(angle + side * np.pi / 6)))
        tips = next_tips
        if traversed:
            points = np.vstack(traversed)
            damage = np.maximum(damage, _footprint(points, shape, spec.footprint_sigma))
        frames.append(damage.copy())

    metadata = {
        **DEFAULT_MATERIAL,
        **LOADING_SETUP,
        "generator": "biased_random_walk_tips",
        "crack_spec": spec.to_dict(),
    }
    return SampleSequence.from_array(
        sample_id, np.stack(frames)[..., None], ChannelKind.FRACTURE_DAMAGE, metadata
    )


def central_gradients(field: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Central differences (d/dx, d/dy) of an H×W field with replicated borders."""
    padded = np.pad(field, 1, mode="edge")
    gx = (padded[1:-1, 2:] - padded[1:-1, :-2]) / 2.0
    gy = (padded[2:, 1:-1] - padded[:-2, 1:-1]) / 2.0
    return gx, gy


def _rescale(channel: np.ndarray) -> np.ndarray:
    lo, hi = channel.min(), channel.max()
    if hi == lo:
        return np.zeros_like(channel)
    return (channel - lo) / (hi - lo)


def derive_stress_channels(
    damage_seq: SampleSequence, smoothing_sigma: float = 1.0
) -> SampleSequence:
    """
    Derive pseudo Cauchy stress channels from a damage sequence.

    Each frame is smoothed, differentiated by central differences and turned
    into |d/dx|, |d/dy| and |d/dx · d/dy|. Every channel is rescaled to [0, 1]
    over the whole sequence.
    """
    if damage_seq.channel_kind is not ChannelKind.FRACTURE_DAMAGE:
        raise ValueError(
            f"Stress channels derive from fracture damage, got {damage_seq.channel_kind.value}"
        )
    damage = damage_seq.as_array()[..., 0]
    channels = np.empty(damage.shape + (3,))
    for t, plane in enumerate(damage):
        smooth = gaussian_filter(plane, sigma=smoothing_sigma, mode="nearest")
        gx, gy = central_gradients(smooth)
        channels[t, :, :, 0] = np.abs(gx)
        channels[t, :, :, 1] = np.abs(gy)
        channels[t, :, :, 2] = np.abs(gx * gy)
    for c in range(3):
        channels[..., c] = _rescale(channels[..., c])
    metadata = {**damage_seq.metadata, "derived_from": ChannelKind.FRACTURE_DAMAGE.value}
    return SampleSequence.from_array(
        damage_seq.sample_id,
        channels,
        ChannelKind.CAUCHY_STRESS,
        metadata,
        start_index=damage_seq.frames[0].time_index,
    )


def build_benchmark_set(n_samples: int, base_spec: CrackSpec) -> List[SampleSequence]:
    """Generate ``n_samples`` sequences with consecutive seeds starting at base_spec.seed."""
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    samples = []
    for i in range(n_samples):
        spec = replace(base_spec, seed=base_spec.seed + i)
        samples.append(generate_sample(spec, sample_id=f"crack_{i:03d}"))
        logger.info(
            f"Generated crack_{i:03d}: {spec.n_steps} steps on {spec.grid} (seed {spec.seed})"
        )
    return samples
