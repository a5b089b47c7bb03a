"""The full network: backbone/ROI stage feeding a sign (AU) branch and a message (EXPR/VA) branch."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
import torch
from torch import nn

from .backbone_roi import BackboneConfig, BackboneROI, images_to_tensor
from .message_space import Decoded, MessageSpace
from .sign_space import SignConfig, SignSpace

CHECKPOINT_VERSION = 1
NAMESPACES = ("backbone_roi", "sign_space", "message_space")


@dataclass(frozen=True)
class ModelConfig:
    backbone: BackboneConfig = BackboneConfig()
    sign: SignConfig = SignConfig()
    num_expr: int = 8

    @classmethod
    def paper(cls, num_regions: int = 17) -> "ModelConfig":
        return cls(BackboneConfig.paper(num_regions), SignConfig())

    @classmethod
    def for_profile(cls, profile: str) -> "ModelConfig":
        return cls.paper() if profile == "paper" else cls()

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        bb = dict(d.get("backbone", {}))
        if "conv_channels" in bb:
            bb["conv_channels"] = tuple(bb["conv_channels"])
        return cls(BackboneConfig(**bb), SignConfig(**d.get("sign", {})), d.get("num_expr", 8))


class Prediction(NamedTuple):
    """Per-frame outputs plus the intermediate features the smoothing stage re-decodes."""

    rois: torch.Tensor          # (N, U, D)
    signs: torch.Tensor         # (N, H, D)
    messages: torch.Tensor      # (N, U, D)
    au_logits: torch.Tensor     # (N, H)
    expr_logits: torch.Tensor   # (N, C)
    va: torch.Tensor            # (N, 2), in (-1, 1)
    va_pre: torch.Tensor        # (N, 2)

    @property
    def au_probs(self) -> torch.Tensor:
        return torch.sigmoid(self.au_logits)

    @property
    def expr_probs(self) -> torch.Tensor:
        return torch.softmax(self.expr_logits, dim=-1)


class SMMEmotionNet(nn.Module):
    def __init__(self, config: ModelConfig = ModelConfig(), seed: int = 0):
        super().__init__()
        self.config = config
        bb = config.backbone
        self.backbone_roi = BackboneROI(bb)
        self.sign_space = SignSpace(config.sign, bb.embed_dim, bb.num_regions)
        self.message_space = MessageSpace(bb.num_regions, bb.embed_dim, config.num_expr)
        self.reset_parameters(seed)

    def reset_parameters(self, seed: int = 0):
        g = torch.Generator().manual_seed(seed)
        self.backbone_roi.reset_parameters(g)
        self.sign_space.reset_parameters(g)
        self.message_space.reset_parameters(g)

    @property
    def dtype(self) -> torch.dtype:
        return self.message_space.projections.dtype

    def decode_signs(self, signs: torch.Tensor) -> torch.Tensor:
        return self.sign_space.scores(signs)

    def decode_messages(self, messages: torch.Tensor) -> Decoded:
        return self.message_space.decode_messages(messages)

    def forward(self, images: torch.Tensor) -> Prediction:
        rois = self.backbone_roi(images)
        signs, au_logits = self.sign_space(rois)
        messages, dec = self.message_space(rois)
        return Prediction(rois, signs, messages, au_logits, dec.expr_logits, dec.va, dec.va_pre)

    def predict_images(self, images: np.ndarray, batch_size: int = 64) -> Prediction:
        """Inference on (N, H, W, 3) arrays without gradient tracking."""
        outs = []
        with torch.no_grad():
            for i in range(0, len(images), batch_size):
                outs.append(self(images_to_tensor(images[i: i + batch_size], self.dtype)))
        return Prediction(*(torch.cat(parts) for parts in zip(*outs)))


def save_checkpoint(model: SMMEmotionNet, path: str | Path, extra: dict | None = None) -> None:
    """Single ``.npz`` archive keyed ``<namespace>/<param>``, float32 values, mandatory version."""
    arrays = {
        "__version__": np.array(CHECKPOINT_VERSION),
        "__config__": np.array(json.dumps(model.config.to_dict())),
        "__extra__": np.array(json.dumps(extra or {})),
    }
    for name, p in model.state_dict().items():
        ns, rest = name.split(".", 1)
        arrays[f"{ns}/{rest}"] = p.detach().cpu().numpy().astype(np.float32)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path: str | Path, dtype: torch.dtype = torch.float32) -> tuple[SMMEmotionNet, dict]:
    with np.load(path, allow_pickle=False) as z:
        if "__version__" not in z.files:
            raise ValueError(f"{path}: checkpoint has no version field")
        version = int(z["__version__"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        config = ModelConfig.from_dict(json.loads(str(z["__config__"])))
        extra = json.loads(str(z["__extra__"])) if "__extra__" in z.files else {}
        state = {k.replace("/", ".", 1): torch.from_numpy(z[k]) for k in z.files if not k.startswith("__")}
    model = SMMEmotionNet(config).to(dtype)
    model.load_state_dict({k: v.to(dtype) for k, v in state.items()})
    return model, extra
