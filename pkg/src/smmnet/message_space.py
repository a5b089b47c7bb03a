"""Shared message space: per-region linear projections, consensus averaging, EXPR/VA decoding."""
from __future__ import annotations

from typing import NamedTuple, Sequence

import torch
from torch import nn

from .backbone_roi import fan_in_uniform_


class Decoded(NamedTuple):
    expr_logits: torch.Tensor
    va: torch.Tensor
    va_pre: torch.Tensor  # affine VA outputs before squashing

    @property
    def valence(self) -> torch.Tensor:
        return self.va[..., 0]

    @property
    def arousal(self) -> torch.Tensor:
        return self.va[..., 1]


def squash(x: torch.Tensor) -> torch.Tensor:
    return torch.tanh(x)


def project_region(f: torch.Tensor, u: int, projections: torch.Tensor) -> torch.Tensor:
    """A^(u) f for a 0-based region index ``u``."""
    if not 0 <= u < projections.shape[0]:
        raise IndexError(f"region index {u} out of range [0, {projections.shape[0]})")
    return projections[u] @ f


def consensus(messages: Sequence[torch.Tensor] | torch.Tensor) -> torch.Tensor:
    """Arithmetic mean over the region axis (a list of vectors, or axis -2 of a tensor)."""
    if isinstance(messages, torch.Tensor):
        if messages.shape[-2] == 0:
            raise ValueError("consensus of an empty set of messages")
        return messages.mean(dim=-2)
    if len(messages) == 0:
        raise ValueError("consensus of an empty set of messages")
    return torch.stack(list(messages)).mean(dim=0)


def decode(consensus_vec: torch.Tensor, expr_weight, expr_bias, va_weight, va_bias) -> Decoded:
    """Affine EXPR logits and squashed VA from a consensus vector (or batch of them)."""
    d = consensus_vec.shape[-1]
    if expr_weight.shape[-1] != d or va_weight.shape != (2, d):
        raise ValueError("head dimensions do not match the message dimension")
    expr = consensus_vec @ expr_weight.T + expr_bias
    va_pre = consensus_vec @ va_weight.T + va_bias
    return Decoded(expr, squash(va_pre), va_pre)


class MessageSpace(nn.Module):
    def __init__(self, num_regions: int, dim: int, num_expr: int = 8):
        super().__init__()
        self.num_regions = num_regions
        self.dim = dim
        self.projections = nn.Parameter(torch.empty(num_regions, dim, dim))
        self.expr_weight = nn.Parameter(torch.empty(num_expr, dim))
        self.expr_bias = nn.Parameter(torch.zeros(num_expr))
        self.va_weight = nn.Parameter(torch.empty(2, dim))
        self.va_bias = nn.Parameter(torch.zeros(2))

    def reset_parameters(self, generator=None, noise: float = 0.01):
        with torch.no_grad():
            eye = torch.eye(self.dim, dtype=self.projections.dtype)
            jitter = torch.randn(self.projections.shape, generator=generator, dtype=self.projections.dtype)
            self.projections.copy_(eye + noise * jitter)
        fan_in_uniform_(self.expr_weight, self.dim, generator)
        fan_in_uniform_(self.va_weight, self.dim, generator)
        nn.init.zeros_(self.expr_bias)
        nn.init.zeros_(self.va_bias)

    def project(self, rois: torch.Tensor) -> torch.Tensor:
        """(N, U, D) ROI features to (N, U, D) per-region messages."""
        if rois.shape[-2] != self.num_regions:
            raise ValueError(f"expected {self.num_regions} regions, got {rois.shape[-2]}")
        # contiguous so the consensus reduction order does not depend on how messages were stored
        return torch.einsum("uij,nuj->nui", self.projections, rois).contiguous()

    def decode(self, consensus_vec: torch.Tensor) -> Decoded:
        return decode(consensus_vec, self.expr_weight, self.expr_bias, self.va_weight, self.va_bias)

    def decode_messages(self, messages: torch.Tensor) -> Decoded:
        return self.decode(consensus(messages))

    def forward(self, rois: torch.Tensor) -> tuple[torch.Tensor, Decoded]:
        messages = self.project(rois)
        return messages, self.decode_messages(messages)


def verify_linearity_equivalence(rois: torch.Tensor, space: MessageSpace, tol: float = 1e-9) -> bool:
    """Average-then-decode equals decode-each-region-then-average on the affine (pre-squash) outputs."""
    with torch.no_grad():
        messages = space.project(rois if rois.dim() == 3 else rois[None])
        avg_first = space.decode(consensus(messages))
        per_region = space.decode(messages)  # decode broadcasts over the region axis
        dec_first_expr = per_region.expr_logits.mean(dim=-2)
        dec_first_va = per_region.va_pre.mean(dim=-2)
    return bool(
        torch.allclose(avg_first.expr_logits, dec_first_expr, rtol=0, atol=tol)
        and torch.allclose(avg_first.va_pre, dec_first_va, rtol=0, atol=tol)
    )
