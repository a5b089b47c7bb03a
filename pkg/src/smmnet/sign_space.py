"""Per-AU metric spaces: a transformer over the first H ROI features and diagonal AU heads."""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn
import torch.nn.functional as F

from .backbone_roi import fan_in_uniform_


@dataclass(frozen=True)
class SignConfig:
    num_au: int = 12
    num_layers: int = 2
    num_heads: int = 4
    ff_dim: int | None = None  # defaults to 4 * model dim

    def __post_init__(self):
        if self.num_au < 1 or self.num_layers < 0 or self.num_heads < 1:
            raise ValueError("num_au and num_heads must be positive, num_layers non-negative")


def positional_encoding(num_tokens: int, dim: int, dtype=torch.float64) -> torch.Tensor:
    """Fixed sinusoidal table: even columns sin, odd columns cos, both at h / 10000^(2k/dim)."""
    if num_tokens < 1 or dim < 1:
        raise ValueError("num_tokens and dim must be >= 1")
    if dim % 2:
        raise ValueError(f"positional encoding needs an even dim, got {dim}")
    pos = torch.arange(num_tokens, dtype=torch.float64)[:, None]
    freq = 10000.0 ** (torch.arange(0, dim, 2, dtype=torch.float64) / dim)
    pe = torch.empty(num_tokens, dim, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(pos / freq)
    pe[:, 1::2] = torch.cos(pos / freq)
    return pe.to(dtype)


class EncoderLayer(nn.Module):
    """Pre-norm transformer block: x + MHA(LN(x)), then x + FFN(LN(x))."""

    def __init__(self, dim: int, num_heads: int, ff_dim: int):
        super().__init__()
        if dim % num_heads:
            raise ValueError(f"model dim {dim} not divisible by {num_heads} heads")
        self.num_heads = num_heads
        self.norm1 = nn.LayerNorm(dim)
        self.qkv = nn.Linear(dim, 3 * dim)
        self.out = nn.Linear(dim, dim)
        self.norm2 = nn.LayerNorm(dim)
        self.ff1 = nn.Linear(dim, ff_dim)
        self.ff2 = nn.Linear(ff_dim, dim)

    def reset_parameters(self, generator=None):
        for lin in (self.qkv, self.out, self.ff1, self.ff2):
            fan_in_uniform_(lin.weight, lin.in_features, generator)
            nn.init.zeros_(lin.bias)
        for ln in (self.norm1, self.norm2):
            nn.init.ones_(ln.weight)
            nn.init.zeros_(ln.bias)

    def attend(self, x: torch.Tensor) -> torch.Tensor:
        n, t, d = x.shape
        hd = d // self.num_heads
        q, k, v = self.qkv(x).view(n, t, 3, self.num_heads, hd).permute(2, 0, 3, 1, 4)
        att = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(hd), dim=-1)
        return self.out((att @ v).transpose(1, 2).reshape(n, t, d))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attend(self.norm1(x))
        return x + self.ff2(F.gelu(self.ff1(self.norm2(x))))


class SignSpace(nn.Module):
    """Maps (N, U, D) ROI features to (N, H, D) sign features and (N, H) AU logits."""

    def __init__(self, config: SignConfig, dim: int, num_regions: int):
        super().__init__()
        if config.num_au > num_regions:
            raise ValueError(f"num_au ({config.num_au}) exceeds the number of regions ({num_regions})")
        self.config = config
        self.dim = dim
        ff = config.ff_dim or 4 * dim
        self.layers = nn.ModuleList(EncoderLayer(dim, config.num_heads, ff) for _ in range(config.num_layers))
        self.au_weight = nn.Parameter(torch.empty(config.num_au, dim))
        self.au_bias = nn.Parameter(torch.zeros(config.num_au))

    def reset_parameters(self, generator=None):
        for layer in self.layers:
            layer.reset_parameters(generator)
        fan_in_uniform_(self.au_weight, self.dim, generator)
        nn.init.zeros_(self.au_bias)

    def transform(self, rois: torch.Tensor) -> torch.Tensor:
        h = self.config.num_au
        if rois.shape[-2] < h:
            raise ValueError(f"need at least {h} ROI vectors, got {rois.shape[-2]}")
        x = rois[..., :h, :] + positional_encoding(h, self.dim, rois.dtype).to(rois.device)
        for layer in self.layers:
            x = layer(x)
        return x

    def scores(self, signs: torch.Tensor) -> torch.Tensor:
        return au_scores(signs, self.au_weight, self.au_bias)[0]

    def forward(self, rois: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        signs = self.transform(rois)
        return signs, self.scores(signs)


def au_scores(signs: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Diagonal AU head: logit_h reads only sign vector h. Returns (logits, probabilities)."""
    if signs.shape[-2:] != weight.shape or bias.shape != weight.shape[:1]:
        raise ValueError(f"sign features {tuple(signs.shape)} do not match head {tuple(weight.shape)}")
    logits = (signs * weight).sum(-1) + bias
    return logits, torch.sigmoid(logits)


def sign_transform(rois: torch.Tensor, sign_space: SignSpace) -> torch.Tensor:
    """(U, D) or (N, U, D) ROI features to (H, D) / (N, H, D) sign features."""
    if rois.dim() == 2:
        return sign_space.transform(rois[None])[0]
    return sign_space.transform(rois)
