"""Gated fusion of representation channels, softmax labeling, and the loss."""
from __future__ import annotations

import torch
from torch import nn

__all__ = [
    "GateLayer",
    "GatedFusion",
    "LabelClassifier",
    "decode_labels",
    "sequence_loss",
]

LOG_EPS = 1e-12


class GateLayer(nn.Module):
    """Element-wise convex combination of two channels.

    gate = sigmoid(W [theta; lam]); output = gate * theta + (1 - gate) * lam.
    W is a bias-free (dim x 2*dim) matrix, so every output component lies
    between the corresponding components of the two inputs.
    """

    def __init__(self, dim: int):
        super().__init__()
        scale = 1.0 / (2.0 * dim) ** 0.5
        self.weight = nn.Parameter(torch.randn(dim, 2 * dim) * scale)

    def forward(self, theta: torch.Tensor, lam: torch.Tensor) -> torch.Tensor:
        gate = torch.sigmoid(torch.cat([theta, lam], dim=-1) @ self.weight.T)
        return gate * theta + (1.0 - gate) * lam


class GatedFusion(nn.Module):
    """Two-layer gate: (context, internal) first, then (fused, external).

    A disabled channel bypasses its gate layer entirely. The internal mask
    zeroes the internal channel for tokens outside the domain vocabulary
    before gating. Gate layers keep separate parameters unless
    ``share_params`` is set.
    """

    def __init__(
        self,
        dim: int,
        use_internal: bool,
        use_external: bool,
        share_params: bool = False,
    ):
        super().__init__()
        self.use_internal = use_internal
        self.use_external = use_external
        self.internal_gate = GateLayer(dim) if use_internal else None
        if use_external:
            self.external_gate = (
                self.internal_gate
                if share_params and self.internal_gate is not None
                else GateLayer(dim)
            )
        else:
            self.external_gate = None

    def forward(
        self,
        context: torch.Tensor,
        internal: torch.Tensor | None = None,
        internal_mask: torch.Tensor | None = None,
        external: torch.Tensor | None = None,
    ) -> torch.Tensor:
        fused = context
        if self.use_internal:
            if internal is None:
                raise ValueError("internal channel enabled but no vectors given")
            if internal_mask is not None:
                internal = internal * internal_mask.unsqueeze(-1).to(internal.dtype)
            fused = self.internal_gate(fused, internal)
        if self.use_external:
            if external is None:
                raise ValueError("external channel enabled but no vectors given")
            fused = self.external_gate(fused, external)
        return fused


class LabelClassifier(nn.Module):
    """Per-token label distribution: softmax(x @ W + b)."""

    def __init__(self, dim: int, n_labels: int):
        super().__init__()
        scale = 1.0 / dim ** 0.5
        self.weight = nn.Parameter(torch.randn(dim, n_labels) * scale)
        self.bias = nn.Parameter(torch.zeros(n_labels))

    def logits(self, x: torch.Tensor) -> torch.Tensor:
        return x @ self.weight + self.bias

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return torch.softmax(self.logits(x), dim=-1)


def decode_labels(probs: torch.Tensor) -> torch.Tensor:
    """Per-token argmax with ties broken by the lowest label index."""
    n_labels = probs.shape[-1]
    is_max = probs == probs.max(dim=-1, keepdim=True).values
    idx = torch.arange(n_labels, device=probs.device).expand_as(probs)
    return torch.where(is_max, idx, n_labels).min(dim=-1).values


def sequence_loss(
    probs: torch.Tensor,
    gold: torch.Tensor,
    mask: torch.Tensor | None = None,
) -> torch.Tensor:
    """Cross-entropy summed over real tokens.

    ``gold`` is either an index tensor (..., N) or one-hot (..., N, L).
    Probabilities are clamped at 1e-12 before the log; padded positions are
    excluded via ``mask``.
    """
    clamped = probs.clamp_min(LOG_EPS)
    if gold.dim() == probs.dim():
        nll = -(gold.to(probs.dtype) * clamped.log()).sum(dim=-1)
    else:
        nll = -clamped.log().gather(-1, gold.unsqueeze(-1)).squeeze(-1)
    if mask is not None:
        nll = nll * mask.to(probs.dtype)
    return nll.sum()
