"""Convolutional feature extractor and per-region ROI attention/embedding."""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn
import torch.nn.functional as F

FULL_REGION_CHOICES = (12, 17, 27)


def _conv_out(n: int, kernel: int, stride: int, padding: int) -> int:
    return (n + 2 * padding - kernel) // stride + 1


@dataclass(frozen=True)
class BackboneConfig:
    """Shape contract of the backbone and ROI stage.

    ``conv_channels`` lists the output channels of successive stride-2,
    3x3 conv blocks; the last entry must equal ``map_channels`` and the
    resulting spatial size must equal ``map_height`` x ``map_width``.
    """

    profile: str = "toy"
    input_size: int = 64
    map_height: int = 8
    map_width: int = 8
    map_channels: int = 32
    num_regions: int = 17
    embed_dim: int = 16
    conv_channels: tuple[int, ...] = (8, 16, 32)
    conv_padding: int = 1
    conv_bias: bool = True

    def __post_init__(self):
        if self.profile not in ("paper", "toy"):
            raise ValueError(f"unknown profile {self.profile!r}")
        for name in ("input_size", "map_height", "map_width", "map_channels", "num_regions", "embed_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not self.conv_channels or self.conv_channels[-1] != self.map_channels:
            raise ValueError("last conv block must emit map_channels channels")
        n = self.input_size
        for _ in self.conv_channels:
            n = _conv_out(n, 3, 2, self.conv_padding)
        if (n, n) != (self.map_height, self.map_width):
            raise ValueError(
                f"conv stack maps {self.input_size}px to {n}x{n}, "
                f"expected {self.map_height}x{self.map_width}"
            )
        if self.profile == "paper":
            if (self.map_height, self.map_width, self.map_channels) != (17, 17, 768):
                raise ValueError("paper profile requires a 17x17x768 feature map")
            if self.embed_dim != 16:
                raise ValueError("paper profile requires embed_dim 16")
            if self.num_regions not in FULL_REGION_CHOICES:
                raise ValueError(f"paper profile num_regions must be one of {FULL_REGION_CHOICES}")

    @classmethod
    def paper(cls, num_regions: int = 17) -> "BackboneConfig":
        # 299 -> 149 -> 74 -> 36 -> 17 with unpadded stride-2 3x3 convs
        return cls(
            profile="paper", input_size=299, map_height=17, map_width=17, map_channels=768,
            num_regions=num_regions, embed_dim=16, conv_channels=(32, 64, 192, 768), conv_padding=0,
        )

    @classmethod
    def toy(cls, **overrides) -> "BackboneConfig":
        return cls(profile="toy", **overrides)


def fan_in_uniform_(weight: torch.Tensor, fan_in: int, generator: torch.Generator | None = None,
                    gain: float = 1.0) -> torch.Tensor:
    """Uniform init with variance ``gain / fan_in`` (gain 2 ahead of GELU layers)."""
    bound = math.sqrt(3.0 * gain / fan_in)
    with torch.no_grad():
        weight.uniform_(-bound, bound, generator=generator)
    return weight


class FeatureExtractor(nn.Module):
    """Stack of stride-2 conv + GELU blocks mapping (N, 3, S, S) images to (N, C, h, w) maps."""

    def __init__(self, config: BackboneConfig):
        super().__init__()
        self.config = config
        layers = []
        c_in = 3
        for c_out in config.conv_channels:
            layers.append(nn.Conv2d(c_in, c_out, 3, stride=2, padding=config.conv_padding,
                                    bias=config.conv_bias))
            layers.append(nn.GELU())
            c_in = c_out
        self.blocks = nn.Sequential(*layers)

    def reset_parameters(self, generator=None):
        for m in self.blocks:
            if isinstance(m, nn.Conv2d):
                fan_in_uniform_(m.weight, m.in_channels * 9, generator, gain=2.0)
                if m.bias is not None:
                    nn.init.zeros_(m.bias)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        cfg = self.config
        expected = (3, cfg.input_size, cfg.input_size)
        if images.dim() != 4 or tuple(images.shape[1:]) != expected:
            raise ValueError(f"expected images of shape (N, {expected}), got {tuple(images.shape)}")
        return self.blocks(images)


class RoiAttention(nn.Module):
    """Per-region 1x1-conv attention logits, spatial softmax, attended pooling and dense embedding.

    Region ``u`` owns row ``u`` of every parameter tensor, so permuting the
    rows permutes the output regions identically.
    """

    def __init__(self, channels: int, num_regions: int, embed_dim: int):
        super().__init__()
        self.att_weight = nn.Parameter(torch.empty(num_regions, channels))
        self.att_bias = nn.Parameter(torch.zeros(num_regions))
        self.emb_weight = nn.Parameter(torch.empty(num_regions, embed_dim, channels))
        self.emb_bias = nn.Parameter(torch.zeros(num_regions, embed_dim))

    def reset_parameters(self, generator=None):
        fan_in_uniform_(self.att_weight, self.att_weight.shape[1], generator)
        fan_in_uniform_(self.emb_weight, self.emb_weight.shape[2], generator, gain=2.0)
        nn.init.zeros_(self.att_bias)
        nn.init.zeros_(self.emb_bias)

    def attention_logits(self, fmap: torch.Tensor) -> torch.Tensor:
        # (N, C, h, w) -> (N, U, h*w)
        flat = fmap.flatten(2)
        return torch.einsum("uc,ncp->nup", self.att_weight, flat) + self.att_bias[None, :, None]

    def attention(self, fmap: torch.Tensor) -> torch.Tensor:
        return torch.softmax(self.attention_logits(fmap), dim=-1)

    def pool(self, fmap: torch.Tensor, weights: torch.Tensor) -> torch.Tensor:
        """Attention-weighted sum of map channels: (N, U, h*w) x (N, C, h, w) -> (N, U, C)."""
        return torch.einsum("nup,ncp->nuc", weights, fmap.flatten(2))

    def embed(self, attended: torch.Tensor) -> torch.Tensor:
        return F.gelu(torch.einsum("udc,nuc->nud", self.emb_weight, attended) + self.emb_bias)

    def forward(self, fmap: torch.Tensor) -> torch.Tensor:
        return self.embed(self.pool(fmap, self.attention(fmap)))


class BackboneROI(nn.Module):
    def __init__(self, config: BackboneConfig):
        super().__init__()
        self.config = config
        self.features = FeatureExtractor(config)
        self.roi = RoiAttention(config.map_channels, config.num_regions, config.embed_dim)

    def reset_parameters(self, generator=None):
        self.features.reset_parameters(generator)
        self.roi.reset_parameters(generator)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        return self.roi(self.features(images))


def images_to_tensor(images, dtype=torch.float32) -> torch.Tensor:
    """(N, H, W, 3) or (H, W, 3) arrays in [0, 1] to an (N, 3, H, W) tensor."""
    t = torch.as_tensor(images, dtype=dtype)
    if t.dim() == 3:
        t = t[None]
    return t.permute(0, 3, 1, 2).contiguous()


def extract_feature_map(image, backbone: BackboneROI) -> torch.Tensor:
    """Single (H, W, 3) image to its (h, w, C) feature map."""
    cfg = backbone.config
    shape = tuple(image.shape)
    if shape != (cfg.input_size, cfg.input_size, 3):
        raise ValueError(f"expected image of shape {(cfg.input_size, cfg.input_size, 3)}, got {shape}")
    dtype = next(backbone.parameters()).dtype
    fmap = backbone.features(images_to_tensor(image, dtype))
    return fmap[0].permute(1, 2, 0)


def extract_roi_features(fmap: torch.Tensor, backbone: BackboneROI) -> torch.Tensor:
    """(h, w, C) feature map to the (U, D) ROI feature set."""
    cfg = backbone.config
    if tuple(fmap.shape) != (cfg.map_height, cfg.map_width, cfg.map_channels):
        raise ValueError(f"feature map shape {tuple(fmap.shape)} does not match config")
    return backbone.roi(fmap.permute(2, 0, 1)[None])[0]
