import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple, Union

import torch
import torch.nn as nn

logger = logging.getLogger(__name__)

OUTPUT_ACTIVATIONS = ("sigmoid", "none")
SKIP_MERGES = ("add", "concat")
UPSAMPLE_MODES = ("nearest", "transpose")


@dataclass(frozen=True)
class ModelConfig:
    """
    Architecture of the encoder / recurrent transition / decoder network.

    Parameters
    ----------
    in_channels : int
        1 for fracture inputs, 3 for Cauchy stress inputs
    base_width : int
        Feature channels of every convolution
    n_res_blocks_per_stage : int
        Residual blocks in each encoder stage and in the decoder
    latent_state_size : int
        Hidden size of the per-pixel LSTM
    window_length : int
        Frames per window fed to the recurrent layer
    output_activation : str
        "sigmoid" keeps outputs in (0, 1); "none" leaves them linear
    use_rtl : bool
        False replaces the LSTM by the identity (frame-independent baseline)
    skip_merge : str
        "add" (summation) or "concat" (concatenation + 1×1 reduction)
    upsample_mode : str
        "nearest" (upsample then conv) or "transpose" (2×2 up-convolution)
    """

    in_channels: int = 1
    base_width: int = 64
    n_res_blocks_per_stage: int = 3
    latent_state_size: int = 64
    window_length: int = 5
    output_activation: str = "sigmoid"
    use_rtl: bool = True
    skip_merge: str = "add"
    upsample_mode: str = "nearest"
    prelu_init: float = 0.25
    bn_momentum: float = 0.9
    bn_eps: float = 1e-5

    def __post_init__(self):
        if self.in_channels not in (1, 3):
            raise ValueError(f"in_channels must be 1 or 3, got {self.in_channels}")
        if self.base_width < 1:
            raise ValueError(f"base_width must be >= 1, got {self.base_width}")
        if self.window_length < 1:
            raise ValueError(f"window_length must be >= 1, got {self.window_length}")
        if self.n_res_blocks_per_stage < 0:
            raise ValueError("n_res_blocks_per_stage must be >= 0")
        if self.latent_state_size < 1:
            raise ValueError("latent_state_size must be >= 1")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"output_activation must be one of {OUTPUT_ACTIVATIONS}")
        if self.skip_merge not in SKIP_MERGES:
            raise ValueError(f"skip_merge must be one of {SKIP_MERGES}")
        if self.upsample_mode not in UPSAMPLE_MODES:
            raise ValueError(f"upsample_mode must be one of {UPSAMPLE_MODES}")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ModelConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"Unknown model config keys: {sorted(unknown)}")
        return cls(**data)


def _conv(in_channels: int, out_channels: int) -> nn.Conv2d:
    return nn.Conv2d(in_channels, out_channels, kernel_size=3, padding=1)


class ResidualBlock(nn.Module):
    """conv 3×3 → batch norm → PReLU, added onto the identity shortcut."""

    def __init__(self, width: int, config: ModelConfig):
        super().__init__()
        self.conv = _conv(width, width)
        self.norm = nn.BatchNorm2d(width, eps=config.bn_eps, momentum=1.0 - config.bn_momentum)
        self.act = nn.PReLU(width, init=config.prelu_init)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x + self.act(self.norm(self.conv(x)))


def _stage(width: int, config: ModelConfig) -> nn.Sequential:
    return nn.Sequential(*[ResidualBlock(width, config) for _ in range(config.n_res_blocks_per_stage)])


class Encoder(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        width = config.base_width
        self.conv_in = _conv(config.in_channels, width)
        self.stage1 = _stage(width, config)
        self.pool = nn.MaxPool2d(kernel_size=2, stride=2)
        self.conv_mid = _conv(width, width)
        self.stage2 = _stage(width, config)
        self.conv_out = _conv(width, width)

    def forward(self, x: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        skip = self.stage1(self.conv_in(x))
        latent = self.conv_out(self.stage2(self.conv_mid(self.pool(skip))))
        return latent, skip


class RecurrentTransition(nn.Module):
    """
    LSTM over the window axis, applied independently at every latent pixel.

    Hidden and cell states start at zero for each window.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.lstm = nn.LSTM(config.base_width, config.latent_state_size, batch_first=False)
        self.project = (
            nn.Identity()
            if config.latent_state_size == config.base_width
            else nn.Linear(config.latent_state_size, config.base_width)
        )

    def forward(self, latents: torch.Tensor) -> torch.Tensor:
        batch, length, width, height, breadth = latents.shape
        sequence = latents.permute(1, 0, 3, 4, 2).reshape(length, batch * height * breadth, width)
        hidden, _ = self.lstm(sequence)
        hidden = self.project(hidden)
        return hidden.reshape(length, batch, height, breadth, width).permute(1, 0, 4, 2, 3)


class Decoder(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        width = config.base_width
        self.config = config
        self.conv_in = _conv(width, width)
        if config.upsample_mode == "transpose":
            self.up = nn.ConvTranspose2d(width, width, kernel_size=2, stride=2)
        else:
            self.up = nn.Upsample(scale_factor=2, mode="nearest")
        self.reduce = nn.Conv2d(2 * width, width, kernel_size=1) if config.skip_merge == "concat" else None
        self.stage = _stage(width, config)
        self.conv_out = _conv(width, width)
        # Per-pixel fully connected layer down to one channel.
        self.head = nn.Conv2d(width, 1, kernel_size=1)

    def forward(self, latent: torch.Tensor, skip: torch.Tensor) -> torch.Tensor:
        up = self.up(self.conv_in(latent))
        if up.shape != skip.shape:
            raise ValueError(
                f"Upsampled latent {tuple(up.shape)} does not match skip {tuple(skip.shape)}"
            )
        if self.reduce is not None:
            merged = self.reduce(torch.cat([up, skip], dim=1))
        else:
            merged = up + skip
        out = self.head(self.conv_out(self.stage(merged)))
        if self.config.output_activation == "sigmoid":
            out = torch.sigmoid(out)
        return out


class HOSSNet(nn.Module):
    """
    Encoder, recurrent transition layer and decoder for fracture reconstruction.

    Windows are channels-first tensors of shape (B, L, C, H, W); an unbatched
    (L, C, H, W) window is accepted too. H and W must be even.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.encoder = Encoder(config)
        self.rtl = RecurrentTransition(config) if config.use_rtl else None
        self.decoder = Decoder(config)

    def _check_window(self, window: torch.Tensor) -> torch.Tensor:
        if window.dim() == 4:
            window = window.unsqueeze(0)
        if window.dim() != 5:
            raise ValueError(f"Expected a (B, L, C, H, W) window, got {tuple(window.shape)}")
        if window.shape[2] != self.config.in_channels:
            raise ValueError(
                f"Window has {window.shape[2]} channels, model expects {self.config.in_channels}"
            )
        height, width = window.shape[-2:]
        if height % 2 or width % 2:
            raise ValueError(f"Frame size must be even for 2×2 pooling, got {height}×{width}")
        return window

    def encode(self, window: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        """Latents (B, L, w, H/2, W/2) and pre-pool skips (B, L, w, H, W)."""
        window = self._check_window(window)
        batch, length = window.shape[:2]
        latent, skip = self.encoder(window.flatten(0, 1))
        return latent.unflatten(0, (batch, length)), skip.unflatten(0, (batch, length))

    def rtl_step(self, latents: torch.Tensor) -> torch.Tensor:
        if self.rtl is None:
            return latents
        return self.rtl(latents)

    def decode(self, latents: torch.Tensor, skip: torch.Tensor) -> torch.Tensor:
        if latents.shape[:2] != skip.shape[:2]:
            raise ValueError("Latent and skip windows differ in batch or length")
        batch, length = latents.shape[:2]
        out = self.decoder(latents.flatten(0, 1), skip.flatten(0, 1))
        return out.unflatten(0, (batch, length))

    def forward(self, window: torch.Tensor) -> torch.Tensor:
        unbatched = window.dim() == 4
        latents, skip = self.encode(window)
        out = self.decode(self.rtl_step(latents), skip)
        return out.squeeze(0) if unbatched else out


def build_model(config: ModelConfig, seed: int = 0, dtype: torch.dtype = torch.float32) -> HOSSNet:
    """Seeded model construction; same seed and config give identical weights."""
    torch.manual_seed(seed)
    return HOSSNet(config).to(dtype)


def save_checkpoint(
    path: Union[str, Path],
    model: HOSSNet,
    extra: Optional[Dict[str, Any]] = None,
) -> Path:
    """Write weights and the model config (as JSON text) into one file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "model_config": json.dumps(model.config.to_dict(), sort_keys=True),
            "state_dict": model.state_dict(),
            "extra": json.dumps(extra or {}, sort_keys=True),
        },
        path,
    )
    logger.info(f"Saved checkpoint to {path}")
    return path


def load_checkpoint(
    path: Union[str, Path], expected: Optional[ModelConfig] = None
) -> Tuple[HOSSNet, Dict[str, Any]]:
    """
    Restore a model from :func:`save_checkpoint`.

    Parameters
    ----------
    path : str or Path
        Checkpoint file
    expected : ModelConfig, optional
        When given, the stored config must equal it

    Returns
    -------
    Tuple[HOSSNet, Dict[str, Any]]
        The model (eval mode, dtype of the stored weights) and the extra payload
    """
    payload = torch.load(Path(path), map_location="cpu", weights_only=True)
    config = ModelConfig.from_dict(json.loads(payload["model_config"]))
    if expected is not None and expected != config:
        raise ValueError(
            f"Checkpoint {path} was written for {config}, which does not match {expected}"
        )
    model = HOSSNet(config)
    state = payload["state_dict"]
    dtype = next(v.dtype for v in state.values() if v.is_floating_point())
    model = model.to(dtype)
    model.load_state_dict(state)
    model.eval()
    return model, json.loads(payload.get("extra", "{}"))


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad)

