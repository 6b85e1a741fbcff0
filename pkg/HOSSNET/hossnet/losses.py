import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Callable, Dict, Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from .core import ConfigurationError
from .flow import FlowSolverParams, optical_flow_loss

logger = logging.getLogger(__name__)

PixelLoss = Callable[..., torch.Tensor]

# ImageNet statistics expected by the pretrained VGG extractor.
_IMAGENET_MEAN = (0.485, 0.456, 0.406)
_IMAGENET_STD = (0.229, 0.224, 0.225)


@dataclass(frozen=True)
class LossWeights:
    """Weights of the perceptual and optical-flow terms relative to MSE."""

    alpha_perc: float = 0.1
    alpha_op: float = 0.01

    def __post_init__(self):
        for name in ("alpha_perc", "alpha_op"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise ValueError(f"{name} must be finite and non-negative, got {value}")


@dataclass(frozen=True)
class LossReport:
    """Decomposed loss of one batch; every field is a 0-d tensor."""

    mse: torch.Tensor
    perceptual: torch.Tensor
    optical: torch.Tensor
    total: torch.Tensor

    @classmethod
    def combine(
        cls,
        weights: LossWeights,
        mse: torch.Tensor,
        perceptual: torch.Tensor,
        optical: torch.Tensor,
    ) -> "LossReport":
        total = mse + weights.alpha_perc * perceptual + weights.alpha_op * optical
        return cls(mse, perceptual, optical, total)

    def as_dict(self) -> Dict[str, float]:
        return {
            "mse": float(self.mse),
            "perceptual": float(self.perceptual),
            "optical": float(self.optical),
            "total": float(self.total),
        }

    def is_finite(self) -> bool:
        return all(math.isfinite(v) for v in self.as_dict().values())


def _check_shapes(pred: torch.Tensor, truth: torch.Tensor):
    if pred.shape != truth.shape:
        raise ValueError(f"Prediction {tuple(pred.shape)} and truth {tuple(truth.shape)} differ")


def mse_loss(pred: torch.Tensor, truth: torch.Tensor, reduction: str = "mean") -> torch.Tensor:
    """Mean over all samples, steps and pixels of the squared difference."""
    _check_shapes(pred, truth)
    return F.mse_loss(pred, truth, reduction=reduction)


def masked(loss_fn: PixelLoss, mask: torch.Tensor) -> PixelLoss:
    """
    Restrict a pixel-wise loss to a region.

    ``loss_fn`` must accept ``reduction="none"`` and return per-pixel values
    whose trailing two dimensions are (H, W); ``mask`` is an (H, W) or
    batch-wise (B, H, W) boolean mask broadcast over the remaining dims.
    """
    mask = torch.as_tensor(mask, dtype=torch.bool)
    if not mask.any():
        raise ValueError("Region mask selects no pixels")

    def region_loss(pred: torch.Tensor, truth: torch.Tensor) -> torch.Tensor:
        per_pixel = loss_fn(pred, truth, reduction="none")
        weights = _broadcast_mask(mask, per_pixel).to(per_pixel.dtype)
        return (per_pixel * weights).sum() / weights.sum()

    return region_loss


def _broadcast_mask(mask: torch.Tensor, like: torch.Tensor) -> torch.Tensor:
    mask = mask.to(like.device)
    if mask.dim() == 3 and like.dim() > 3:
        # (B, H, W) against (B, ..., H, W)
        mask = mask.reshape(mask.shape[0], *([1] * (like.dim() - 3)), *mask.shape[1:])
    return mask.expand_as(like)


class FeatureExtractor(nn.Module, ABC):
    """Frozen convolutional feature map of (N, 3, H, W) images."""

    def freeze(self) -> "FeatureExtractor":
        for param in self.parameters():
            param.requires_grad_(False)
        self.eval()
        return self

    def train(self, mode: bool = True) -> "FeatureExtractor":
        # Frozen extractors stay in inference mode.
        return super().train(False)

    @abstractmethod
    def features(self, images: torch.Tensor) -> torch.Tensor:
        ...

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        return self.features(images)


class VGGFeatureExtractor(FeatureExtractor):
    """
    Pretrained 16-layer VGG truncated after ``layer_index`` feature layers.

    The default of 16 stops after relu3_3, a mid-depth feature map.
    """

    def __init__(self, layer_index: int = 16):
        super().__init__()
        try:
            from torchvision.models import VGG16_Weights, vgg16

            vgg = vgg16(weights=VGG16_Weights.DEFAULT)
        except Exception as e:
            raise ConfigurationError(
                f"Pretrained VGG16 weights are unavailable ({e}); "
                "set losses.alpha_perc: 0 to disable the perceptual term "
                "or losses.extractor: random_conv for an offline extractor"
            ) from e
        self.layers = nn.Sequential(*list(vgg.features)[:layer_index])
        self.register_buffer("mean", torch.tensor(_IMAGENET_MEAN).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor(_IMAGENET_STD).view(1, 3, 1, 1))
        self.freeze()

    def features(self, images: torch.Tensor) -> torch.Tensor:
        return self.layers((images - self.mean) / self.std)


class RandomConvExtractor(FeatureExtractor):
    """Tiny fixed random convolution used offline and in gradient tests."""

    def __init__(self, out_channels: int = 8, seed: int = 0):
        super().__init__()
        generator = torch.Generator().manual_seed(seed)
        weight = torch.randn(out_channels, 3, 3, 3, generator=generator) / 3.0
        self.register_buffer("weight", weight)
        self.freeze()

    def features(self, images: torch.Tensor) -> torch.Tensor:
        return torch.tanh(F.conv2d(images, self.weight.to(images.dtype), padding=1))


def build_extractor(name: str, layer_index: int = 16) -> FeatureExtractor:
    if name == "vgg16":
        return VGGFeatureExtractor(layer_index)
    if name == "random_conv":
        return RandomConvExtractor()
    raise ConfigurationError(f"Unknown feature extractor: {name}")


def _as_images(frames: torch.Tensor) -> torch.Tensor:
    """(..., H, W) single-channel frames → (N, 3, H, W) by channel replication."""
    flat = frames.reshape(-1, 1, *frames.shape[-2:])
    return flat.expand(-1, 3, -1, -1)


def perceptual_loss(
    pred: torch.Tensor,
    truth: torch.Tensor,
    extractor: FeatureExtractor,
    mask: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """
    Mean squared difference of extractor features of prediction and truth.

    With a mask both images are zeroed outside the region before feature
    extraction, so the term only sees the sub-region.
    """
    _check_shapes(pred, truth)
    if mask is not None:
        weights = _broadcast_mask(torch.as_tensor(mask, dtype=torch.bool), pred).to(pred.dtype)
        pred = pred * weights
        truth = truth * weights
    extractor = extractor.to(device=pred.device, dtype=pred.dtype)
    pred_features = extractor(_as_images(pred))
    with torch.no_grad():
        truth_features = extractor(_as_images(truth))
    return F.mse_loss(pred_features, truth_features)


def default_training_mask(truth: torch.Tensor, dilation: int = 4) -> torch.Tensor:
    """
    Sub-region of each window: the bounding box of pixels whose truth changes
    within the window, grown by ``dilation`` pixels and clipped to the grid.

    ``truth`` is (B, T, H, W); returns a (B, H, W) boolean mask. A window
    without change keeps the whole frame.
    """
    changed = (truth.amax(dim=1) - truth.amin(dim=1)) > 0
    batch, height, width = changed.shape
    mask = torch.zeros_like(changed)
    for b in range(batch):
        rows = torch.nonzero(changed[b].any(dim=1)).flatten()
        cols = torch.nonzero(changed[b].any(dim=0)).flatten()
        if len(rows) == 0:
            mask[b] = True
            continue
        r0 = max(int(rows.min()) - dilation, 0)
        r1 = min(int(rows.max()) + dilation, height - 1)
        c0 = max(int(cols.min()) - dilation, 0)
        c1 = min(int(cols.max()) + dilation, width - 1)
        mask[b, r0 : r1 + 1, c0 : c1 + 1] = True
    return mask


def total_loss(
    pred: torch.Tensor,
    truth: torch.Tensor,
    weights: LossWeights,
    mask: Optional[torch.Tensor] = None,
    flow_params: Optional[FlowSolverParams] = None,
    extractor: Optional[FeatureExtractor] = None,
    magnitude_floor: float = 1e-6,
) -> LossReport:
    """
    MSE + alpha_perc * perceptual + alpha_op * optical, all on the sub-region.

    Parameters
    ----------
    pred, truth : torch.Tensor
        Fracture windows of shape (B, T, H, W) or (T, H, W)
    weights : LossWeights
        Term weights; a zero weight skips computing its term
    mask : torch.Tensor, optional
        (H, W) or (B, H, W) boolean sub-region; the whole frame when omitted
    flow_params : FlowSolverParams, optional
        Solver settings of the optical-flow term
    extractor : FeatureExtractor, optional
        Required when alpha_perc > 0
    magnitude_floor : float
        Flow vectors shorter than this are ignored by the angle term

    Returns
    -------
    LossReport
        Tensor-valued terms; ``total`` is differentiable with respect to ``pred``
    """
    _check_shapes(pred, truth)
    if pred.dim() == 3:
        pred, truth = pred.unsqueeze(0), truth.unsqueeze(0)
    if mask is None:
        mask = torch.ones(pred.shape[-2:], dtype=torch.bool, device=pred.device)
    mask = torch.as_tensor(mask, dtype=torch.bool, device=pred.device)
    if mask.dim() == 2:
        mask = mask.expand(pred.shape[0], -1, -1)

    zero = pred.new_zeros(())
    mse = masked(mse_loss, mask)(pred, truth)

    perceptual = zero
    if weights.alpha_perc > 0:
        if extractor is None:
            raise ConfigurationError("alpha_perc > 0 needs a feature extractor")
        perceptual = perceptual_loss(pred, truth, extractor, mask)

    optical = zero
    if weights.alpha_op > 0:
        if pred.shape[1] < 2:
            raise ValueError("The optical-flow term needs windows with T >= 2")
        optical = optical_flow_loss(
            pred, truth, flow_params or FlowSolverParams(), magnitude_floor, region=mask
        ).mean()

    return LossReport.combine(weights, mse, perceptual, optical)
