"""3D U-Net with modality-specific stems and a shared trunk.

Tensors inside the network use the convolution layout ``[B, C, T, H, W]``;
the data layout ``[B, T, C, H, W]`` is converted at the ``forward_*`` entry
points, which also handle padding.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ChannelMismatch, InvalidConfig, ShapeMismatch, ShapeNotPadded
from .sits_core import Modality


@dataclass
class ModelConfig:
    base_channels: int = 16
    depth: int = 3
    proj_dim: int = 32
    temporal_factor: int = 2
    spatial_factor: int = 2
    num_classes: int = 5
    radar_channels: int = 2
    optical_channels: int = 3
    negative_slope: float = 0.01

    def validate(self) -> "ModelConfig":
        for name in ("base_channels", "depth", "proj_dim", "temporal_factor", "spatial_factor",
                     "num_classes", "radar_channels", "optical_channels"):
            if getattr(self, name) < 1:
                raise InvalidConfig(f"{name} must be >= 1")
        return self

    @property
    def feature_dim(self) -> int:
        return self.base_channels * 2 ** (self.depth - 1)

    def channels(self, modality: Modality) -> int:
        return self.radar_channels if Modality(modality) is Modality.RADAR else self.optical_channels

    @property
    def multiples(self) -> tuple[int, int, int]:
        """Required divisors of (T, H, W)."""
        k = self.depth - 1
        return self.temporal_factor ** k, self.spatial_factor ** k, self.spatial_factor ** k

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidConfig(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d).validate()


@dataclass
class FeatureMap:
    """Bottleneck features ``[B, D, T', H', W']`` plus the encoder skips."""
    tensor: torch.Tensor
    skips: list = field(default_factory=list)
    modality: Modality | None = None
    factors: tuple = (1, 1, 1)


class ConvBlock(nn.Sequential):
    def __init__(self, c_in: int, c_out: int, slope: float):
        super().__init__(
            nn.Conv3d(c_in, c_out, kernel_size=3, padding=1, bias=False),  # BN supplies the shift
            nn.BatchNorm3d(c_out),
            nn.LeakyReLU(slope),
        )


class S4Net(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg.validate()
        b, s = cfg.base_channels, cfg.negative_slope
        self.stems = nn.ModuleDict({
            m.value: nn.Sequential(ConvBlock(cfg.channels(m), b, s), ConvBlock(b, b, s))
            for m in Modality
        })
        pool = (cfg.temporal_factor, cfg.spatial_factor, cfg.spatial_factor)
        self.pool = nn.MaxPool3d(pool)
        self.trunk = nn.ModuleList(
            ConvBlock(b * 2 ** (l - 1), b * 2 ** l, s) for l in range(1, cfg.depth)
        )
        d = cfg.feature_dim
        self.projector = nn.Sequential(
            nn.Conv3d(d, d, 1, bias=False), nn.BatchNorm3d(d), nn.LeakyReLU(s), nn.Conv3d(d, cfg.proj_dim, 1),
        )
        self.up = nn.ModuleList(
            nn.ConvTranspose3d(b * 2 ** l, b * 2 ** (l - 1), kernel_size=pool, stride=pool)
            for l in range(cfg.depth - 1, 0, -1)
        )
        self.dec = nn.ModuleList(
            ConvBlock(b * 2 ** l, b * 2 ** (l - 1), s) for l in range(cfg.depth - 1, 0, -1)
        )
        self.recon_heads = nn.ModuleDict({m.value: nn.Conv3d(b, cfg.channels(m), 1) for m in Modality})
        self.seg_head = nn.Conv2d(b, cfg.num_classes, 1)

    # -- building blocks -------------------------------------------------
    def encode(self, x: torch.Tensor, modality) -> FeatureMap:
        """``x``: padded ``[B, C, T, H, W]``."""
        modality = Modality(modality)
        if x.ndim != 5:
            raise ShapeMismatch(f"expected [B, C, T, H, W], got {tuple(x.shape)}")
        if x.shape[1] != self.cfg.channels(modality):
            raise ChannelMismatch(f"{modality.value} expects {self.cfg.channels(modality)} channels, "
                                  f"got {x.shape[1]}")
        for size, m in zip(x.shape[2:], self.cfg.multiples):
            if size % m:
                raise ShapeNotPadded(f"T, H, W {tuple(x.shape[2:])} must be multiples of {self.cfg.multiples}")
        h = self.stems[modality.value](x)
        skips = [h]
        for block in self.trunk:
            h = block(self.pool(h))
            skips.append(h)
        k = self.cfg.depth - 1
        factors = (self.cfg.temporal_factor ** k, self.cfg.spatial_factor ** k, self.cfg.spatial_factor ** k)
        return FeatureMap(h, skips[:-1], modality, factors)

    def project(self, f: FeatureMap | torch.Tensor) -> torch.Tensor:
        t = f.tensor if isinstance(f, FeatureMap) else f
        if t.shape[1] != self.cfg.feature_dim:
            raise ChannelMismatch(f"projector expects {self.cfg.feature_dim} channels, got {t.shape[1]}")
        return self.projector(t)

    def decode(self, f: FeatureMap) -> torch.Tensor:
        h = f.tensor
        for up, block, skip in zip(self.up, self.dec, reversed(f.skips)):
            h = up(h)
            if h.shape[2:] != skip.shape[2:]:
                raise ShapeMismatch(f"skip {tuple(skip.shape)} does not match upsampled {tuple(h.shape)}")
            h = block(torch.cat([skip, h], dim=1))
        return h

    def reconstruct(self, f: FeatureMap, out_modality=None) -> torch.Tensor:
        """Opposite-modality estimate ``[B, C_out, T, H, W]`` at padded size."""
        out = Modality(out_modality) if out_modality is not None else f.modality.other
        return self.recon_heads[out.value](self.decode(f))

    def segment(self, f: FeatureMap, t_valid: int | None = None) -> torch.Tensor:
        """Logits ``[B, K, H, W]``; decoder features are averaged over time first."""
        h = self.decode(f)
        if t_valid is not None:
            h = h[:, :, :t_valid]
        return self.seg_head(h.mean(dim=2))

    # -- data-layout entry points ----------------------------------------
    def forward_segment(self, x: torch.Tensor, modality) -> torch.Tensor:
        """``x``: ``[B, T, C, H, W]`` -> logits ``[B, K, H, W]``."""
        xp, (t, h, w) = pad_input(to_conv_layout(x), self.cfg.multiples)
        logits = self.segment(self.encode(xp, modality), t_valid=t)
        return logits[..., :h, :w]

    def forward_reconstruct(self, x: torch.Tensor, modality) -> torch.Tensor:
        """``x``: ``[B, T, C, H, W]`` -> opposite modality ``[B, T, C_out, H, W]``."""
        xp, (t, h, w) = pad_input(to_conv_layout(x), self.cfg.multiples)
        out = self.reconstruct(self.encode(xp, modality))
        return out[:, :, :t, :h, :w].permute(0, 2, 1, 3, 4)

    def modality_parameters(self, modality) -> list[nn.Parameter]:
        return list(self.stems[Modality(modality).value].parameters())


def to_conv_layout(x: torch.Tensor) -> torch.Tensor:
    """``[B, T, C, H, W]`` -> ``[B, C, T, H, W]``."""
    return x.permute(0, 2, 1, 3, 4)


def pad_input(x: torch.Tensor, multiples) -> tuple[torch.Tensor, tuple[int, int, int]]:
    """Reflect-pad T, H, W of a ``[B, C, T, H, W]`` tensor up to the given multiples."""
    sizes = tuple(x.shape[2:])
    pads = [(-s) % m for s, m in zip(sizes, multiples)]
    if not any(pads):
        return x, sizes
    # F.pad order: last dim first
    spec = [0, pads[2], 0, pads[1], 0, pads[0]]
    mode = "reflect" if all(p < s for p, s in zip(pads, sizes)) else "replicate"
    return F.pad(x, spec, mode=mode), sizes


def build_model(cfg: ModelConfig, seed: int = 0) -> S4Net:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return S4Net(cfg)
