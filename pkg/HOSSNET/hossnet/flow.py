import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
import torch
import torch.nn.functional as F

from .core import FieldFrame, FlowField, SampleSequence

logger = logging.getLogger(__name__)

DERIVATIVE_SCHEMES = ("central", "forward")
SOLVER_METHODS = ("jacobi", "gauss_seidel")

# Straight-through margin keeping arccos' finite at |r| == 1.
_ARCCOS_GRAD_MARGIN = 1e-6

# Weights of the 3×3 averaging stencil.
_EDGE_WEIGHT = 1.0
_CORNER_WEIGHT = 0.5

# Sweeps between two convergence checks of estimate_flow.
_CHECK_EVERY = 10


@dataclass(frozen=True)
class FlowSolverParams:
    """
    Horn-Schunck solver settings.

    Parameters
    ----------
    smoothness : float
        Weight lambda of the smoothness term; the objective uses lambda**2
    n_iterations : int
        Number of sweeps of the differentiable solve used inside losses, and
        the minimum number of sweeps of :func:`estimate_flow`
    derivative_scheme : str
        "central" or "forward" spatial differences
    method : str
        "jacobi" updates every pixel from the previous sweep's local averages;
        "gauss_seidel" updates the four colours of a 2×2 tiling in turn
    tolerance : float
        :func:`estimate_flow` stops once the objective decreases by less than
        ``tolerance * max(1, objective)`` per sweep
    max_iterations : int
        Upper bound on the sweeps of :func:`estimate_flow`
    """

    smoothness: float = 1.0
    n_iterations: int = 100
    derivative_scheme: str = "central"
    method: str = "jacobi"
    tolerance: float = 1e-9
    max_iterations: int = 20000

    def __post_init__(self):
        if not (math.isfinite(self.smoothness) and self.smoothness > 0):
            raise ValueError(f"smoothness must be finite and positive, got {self.smoothness}")
        if self.n_iterations < 1:
            raise ValueError(f"n_iterations must be >= 1, got {self.n_iterations}")
        if self.derivative_scheme not in DERIVATIVE_SCHEMES:
            raise ValueError(
                f"derivative_scheme must be one of {DERIVATIVE_SCHEMES}, got {self.derivative_scheme}"
            )
        if self.method not in SOLVER_METHODS:
            raise ValueError(f"method must be one of {SOLVER_METHODS}, got {self.method}")
        if not (math.isfinite(self.tolerance) and self.tolerance >= 0):
            raise ValueError(f"tolerance must be finite and non-negative, got {self.tolerance}")
        if self.max_iterations < self.n_iterations:
            raise ValueError(
                f"max_iterations ({self.max_iterations}) must be >= n_iterations ({self.n_iterations})"
            )


def spatial_derivatives(
    image: torch.Tensor, scheme: str = "central"
) -> Tuple[torch.Tensor, torch.Tensor]:
    """d/dx and d/dy of (..., H, W) images with replicated borders."""
    if scheme == "central":
        padded_x = torch.cat([image[..., :, :1], image, image[..., :, -1:]], dim=-1)
        padded_y = torch.cat([image[..., :1, :], image, image[..., -1:, :]], dim=-2)
        gx = (padded_x[..., :, 2:] - padded_x[..., :, :-2]) / 2.0
        gy = (padded_y[..., 2:, :] - padded_y[..., :-2, :]) / 2.0
    elif scheme == "forward":
        padded_x = torch.cat([image, image[..., :, -1:]], dim=-1)
        padded_y = torch.cat([image, image[..., -1:, :]], dim=-2)
        gx = padded_x[..., :, 1:] - padded_x[..., :, :-1]
        gy = padded_y[..., 1:, :] - padded_y[..., :-1, :]
    else:
        raise ValueError(f"Unknown derivative scheme: {scheme}")
    return gx, gy


def image_derivatives(
    frame_a: torch.Tensor, frame_b: torch.Tensor, scheme: str = "central"
) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Spatial derivatives averaged over the pair, and the forward time difference."""
    ax, ay = spatial_derivatives(frame_a, scheme)
    bx, by = spatial_derivatives(frame_b, scheme)
    return (ax + bx) / 2.0, (ay + by) / 2.0, frame_b - frame_a




def _neighbour_sum(field: torch.Tensor) -> torch.Tensor:
    # 3×3 stencil; neighbours outside the grid contribute nothing.
    padded = F.pad(field, (1, 1, 1, 1))
    edges = (
        padded[..., :-2, 1:-1]
        + padded[..., 2:, 1:-1]
        + padded[..., 1:-1, :-2]
        + padded[..., 1:-1, 2:]
    )
    corners = (
        padded[..., :-2, :-2] + padded[..., :-2, 2:] + padded[..., 2:, :-2] + padded[..., 2:, 2:]
    )
    return _EDGE_WEIGHT * edges + _CORNER_WEIGHT * corners


def _colour_masks(shape: Tuple[int, int], device, method: str) -> List[Optional[torch.Tensor]]:
    if method == "jacobi":
        return [None]
    rows = torch.arange(shape[0], device=device)[:, None] % 2
    cols = torch.arange(shape[1], device=device)[None, :] % 2
    # No two pixels of one colour share the 3×3 stencil.
    return [(rows == r) & (cols == c) for r in (0, 1) for c in (0, 1)]


class _FlowSweeper:
    """Derivatives and per-pixel denominators shared by every sweep of one solve."""

    def __init__(self, frame_a: torch.Tensor, frame_b: torch.Tensor, params: FlowSolverParams):
        if frame_a.shape != frame_b.shape:
            raise ValueError(
                f"Frame shapes differ: {tuple(frame_a.shape)} vs {tuple(frame_b.shape)}"
            )
        height, width = frame_a.shape[-2:]
        if height < 2 or width < 2:
            raise ValueError(f"Flow needs at least a 2×2 grid, got {height}×{width}")
        self.params = params
        self.ix, self.iy, self.it = image_derivatives(frame_a, frame_b, params.derivative_scheme)
        self.lam2 = params.smoothness**2
        ones = torch.ones((height, width), dtype=frame_a.dtype, device=frame_a.device)
        self.degree = _neighbour_sum(ones)
        self.denom = self.lam2 * self.degree + self.ix**2 + self.iy**2
        self.colours = _colour_masks((height, width), frame_a.device, params.method)

    def sweep(self, u: torch.Tensor, v: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        # Each update is the exact minimiser over a pixel's own (u, v) given
        # its local averages, so no sweep increases the objective.
        for colour in self.colours:
            u_bar = _neighbour_sum(u) / self.degree
            v_bar = _neighbour_sum(v) / self.degree
            step = (self.ix * u_bar + self.iy * v_bar + self.it) / self.denom
            if colour is None:
                u, v = u_bar - self.ix * step, v_bar - self.iy * step
            else:
                u = torch.where(colour, u_bar - self.ix * step, u)
                v = torch.where(colour, v_bar - self.iy * step, v)
        return u, v

    def objective(self, u: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
        return _objective(self.ix, self.iy, self.it, u, v, self.lam2)


def horn_schunck(
    frame_a: torch.Tensor, frame_b: torch.Tensor, params: FlowSolverParams
) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Dense flow between batches of (..., H, W) frames after exactly
    ``params.n_iterations`` sweeps. Differentiable with respect to both frames.
    """
    sweeper = _FlowSweeper(frame_a, frame_b, params)
    u = torch.zeros_like(sweeper.ix)
    v = torch.zeros_like(sweeper.iy)
    for _ in range(params.n_iterations):
        u, v = sweeper.sweep(u, v)
    return u, v


def _pair_differences(field: torch.Tensor) -> List[Tuple[float, torch.Tensor]]:
    return [
        (_EDGE_WEIGHT, torch.diff(field, dim=-1)),
        (_EDGE_WEIGHT, torch.diff(field, dim=-2)),
        (_CORNER_WEIGHT, field[..., 1:, 1:] - field[..., :-1, :-1]),
        (_CORNER_WEIGHT, field[..., 1:, :-1] - field[..., :-1, 1:]),
    ]


def _objective(ix, iy, it, u, v, lam2: float) -> torch.Tensor:
    data = ((ix * u + iy * v + it) ** 2).sum(dim=(-2, -1))
    smooth = torch.zeros_like(data)
    for field in (u, v):
        for weight, diff in _pair_differences(field):
            smooth = smooth + weight * (diff**2).sum(dim=(-2, -1))
    return data + lam2 * smooth


def flow_objective(
    frame_a: torch.Tensor,
    frame_b: torch.Tensor,
    u: torch.Tensor,
    v: torch.Tensor,
    params: FlowSolverParams,
) -> torch.Tensor:
    """
    Discretised brightness-constancy objective with lambda**2 smoothness.

    The smoothness term sums squared differences over every pair of pixels
    sharing the 3×3 stencil, edge pairs with weight 1 and corner pairs with
    weight 1/2.
    """
    ix, iy, it = image_derivatives(frame_a, frame_b, params.derivative_scheme)
    return _objective(ix, iy, it, u, v, params.smoothness**2)


def _as_float64(array: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.array(array, dtype=np.float64, copy=True))


def _single_channel(frame: FieldFrame) -> torch.Tensor:
    if frame.values.shape[2] != 1:
        raise ValueError("Optical flow needs single-channel frames")
    return _as_float64(frame.plane)


def estimate_flow(
    frame_a: FieldFrame, frame_b: FieldFrame, params: Optional[FlowSolverParams] = None
) -> FlowField:
    """
    Estimate the flow carrying ``frame_a`` to ``frame_b``.

    Runs at least ``params.n_iterations`` sweeps, then keeps sweeping until
    the objective settles within ``params.tolerance`` or
    ``params.max_iterations`` is reached.

    Parameters
    ----------
    frame_a : FieldFrame
        Earlier single-channel frame
    frame_b : FieldFrame
        Later single-channel frame of the same shape
    params : FlowSolverParams, optional
        Solver settings, defaults when omitted

    Returns
    -------
    FlowField
        Per-pixel (u, v) in pixels per step
    """
    params = params or FlowSolverParams()
    if frame_a.shape != frame_b.shape:
        raise ValueError(f"Frame shapes differ: {frame_a.shape} vs {frame_b.shape}")
    with torch.no_grad():
        sweeper = _FlowSweeper(_single_channel(frame_a), _single_channel(frame_b), params)
        u = torch.zeros_like(sweeper.ix)
        v = torch.zeros_like(sweeper.iy)
        for _ in range(params.n_iterations):
            u, v = sweeper.sweep(u, v)
        sweeps = params.n_iterations
        previous = float(sweeper.objective(u, v))
        while sweeps < params.max_iterations:
            block = min(_CHECK_EVERY, params.max_iterations - sweeps)
            for _ in range(block):
                u, v = sweeper.sweep(u, v)
            sweeps += block
            current = float(sweeper.objective(u, v))
            if (previous - current) / block <= params.tolerance * max(1.0, abs(current)):
                break
            previous = current
        else:
            logger.warning(
                f"Flow solver stopped at max_iterations={params.max_iterations} before converging"
            )
        logger.debug(f"Flow solve finished after {sweeps} sweeps")
    return FlowField(u.numpy(), v.numpy())


def _safe_arccos(r: torch.Tensor) -> torch.Tensor:
    exact = r.clamp(-1.0, 1.0)
    inner = r.clamp(-1.0 + _ARCCOS_GRAD_MARGIN, 1.0 - _ARCCOS_GRAD_MARGIN)
    # Value of the exact clamp, gradient of the inner one.
    approx = torch.arccos(inner)
    return approx + (torch.arccos(exact) - approx).detach()


def angle_loss(
    u_obs: torch.Tensor,
    v_obs: torch.Tensor,
    u_pred: torch.Tensor,
    v_pred: torch.Tensor,
    magnitude_floor: float = 1e-6,
    region: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """
    Sum over pixels of the squared angle between two flow fields.

    Pixels where either vector is shorter than ``magnitude_floor`` (or that
    fall outside ``region``) contribute nothing. Returns one value per leading
    index, i.e. the last two dimensions are reduced.
    """
    if magnitude_floor <= 0:
        raise ValueError(f"magnitude_floor must be positive, got {magnitude_floor}")
    mag2_obs = u_obs**2 + v_obs**2
    mag2_pred = u_pred**2 + v_pred**2
    floor2 = magnitude_floor**2
    valid = (mag2_obs >= floor2) & (mag2_pred >= floor2)
    if region is not None:
        valid = valid & region.to(torch.bool)
    ones = torch.ones_like(mag2_obs)
    norm = torch.sqrt(torch.where(valid, mag2_obs, ones)) * torch.sqrt(
        torch.where(valid, mag2_pred, ones)
    )
    cosine = torch.where(valid, (u_obs * u_pred + v_obs * v_pred) / norm, ones)
    angle2 = _safe_arccos(cosine) ** 2
    return torch.where(valid, angle2, torch.zeros_like(angle2)).sum(dim=(-2, -1))


def flow_angle_loss(
    flow_pred: FlowField, flow_obs: FlowField, magnitude_floor: float = 1e-6
) -> float:
    """Sum over valid pixels of arccos(cosine similarity)**2; symmetric and scale-free."""
    if flow_pred.shape != flow_obs.shape:
        raise ValueError(f"Flow shapes differ: {flow_pred.shape} vs {flow_obs.shape}")
    obs = [_as_float64(a) for a in (flow_obs.u, flow_obs.v)]
    pred = [_as_float64(a) for a in (flow_pred.u, flow_pred.v)]
    loss = angle_loss(*obs, *pred, magnitude_floor)
    return float(loss)


def optical_flow_loss(
    pred: torch.Tensor,
    obs: torch.Tensor,
    params: FlowSolverParams,
    magnitude_floor: float = 1e-6,
    region: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """
    Mean over consecutive pairs of the angle loss between predicted and observed flow.

    Parameters
    ----------
    pred, obs : torch.Tensor
        Sequences of shape (..., T, H, W) with T >= 2
    region : torch.Tensor, optional
        Boolean mask broadcastable to (..., H, W) restricting valid pixels

    Returns
    -------
    torch.Tensor
        One value per leading index; gradients flow into ``pred`` only.
    """
    if pred.shape != obs.shape:
        raise ValueError(f"Sequence shapes differ: {tuple(pred.shape)} vs {tuple(obs.shape)}")
    if pred.dim() < 3 or pred.shape[-3] < 2:
        raise ValueError("The optical-flow term needs at least two frames")
    with torch.no_grad():
        u_obs, v_obs = horn_schunck(obs[..., :-1, :, :], obs[..., 1:, :, :], params)
    u_pred, v_pred = horn_schunck(pred[..., :-1, :, :], pred[..., 1:, :, :], params)
    if region is not None:
        region = region.unsqueeze(-3)
    per_pair = angle_loss(u_obs, v_obs, u_pred, v_pred, magnitude_floor, region)
    return per_pair.mean(dim=-1)


def optical_flow_regularizer(
    pred_seq: SampleSequence,
    obs_seq: SampleSequence,
    params: Optional[FlowSolverParams] = None,
    magnitude_floor: float = 1e-6,
) -> float:
    """Sequence-level optical-flow regulariser averaged over the T-1 frame pairs."""
    params = params or FlowSolverParams()
    if pred_seq.n_steps < 2 or obs_seq.n_steps < 2:
        raise ValueError("The optical-flow regulariser needs T >= 2")
    if pred_seq.n_steps != obs_seq.n_steps or pred_seq.shape != obs_seq.shape:
        raise ValueError("Predicted and observed sequences must be aligned")
    pred = _as_float64(_planes(pred_seq))
    obs = _as_float64(_planes(obs_seq))
    with torch.no_grad():
        return float(optical_flow_loss(pred, obs, params, magnitude_floor))


def _planes(seq: SampleSequence) -> np.ndarray:
    values = seq.as_array()
    if values.shape[-1] != 1:
        raise ValueError("Optical flow needs single-channel sequences")
    return values[..., 0]
