"""Contextual token encoder: stacked BiLSTM, multi-head self-attention, FFNN."""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn
from torch.nn.utils.rnn import pack_padded_sequence, pad_packed_sequence

from .features import ConfigurationError

__all__ = [
    "EncoderConfig",
    "LockedDropout",
    "scaled_dot_attention",
    "BiLstmEncoder",
    "MultiHeadSelfAttention",
    "FeedForward",
    "ContextEncoder",
]


@dataclass(frozen=True)
class EncoderConfig:
    input_dim: int = 128
    lstm_hidden: int = 128  # per direction; output is twice this
    lstm_layers: int = 2
    n_heads: int = 8
    head_dim: int = 32
    locked_dropout: float = 0.3

    @property
    def output_dim(self) -> int:
        return 2 * self.lstm_hidden

    def validate(self) -> "EncoderConfig":
        if self.n_heads * self.head_dim != self.output_dim:
            raise ConfigurationError(
                f"n_heads * head_dim must equal {self.output_dim}, got "
                f"{self.n_heads} * {self.head_dim}"
            )
        if self.lstm_layers < 1:
            raise ConfigurationError("need at least one BiLSTM layer")
        return self


class LockedDropout(nn.Module):
    """Dropout with a single mask per sequence, shared across timesteps."""

    def __init__(self, p: float):
        super().__init__()
        if not 0.0 <= p < 1.0:
            raise ConfigurationError(f"dropout must be in [0, 1), got {p}")
        self.p = p

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if not self.training or self.p == 0.0:
            return x
        mask = x.new_empty(x.shape[0], 1, x.shape[2]).bernoulli_(1.0 - self.p)
        return x * mask / (1.0 - self.p)


def scaled_dot_attention(
    q: torch.Tensor,
    k: torch.Tensor,
    v: torch.Tensor,
    key_mask: torch.Tensor | None = None,
) -> tuple[torch.Tensor, torch.Tensor]:
    """softmax(Q K^T / sqrt(d)) V with optional key masking.

    ``key_mask`` is boolean over key positions (True = real token); masked
    keys receive exactly zero attention weight. Returns (output, weights).
    """
    d = q.shape[-1]
    scores = q @ k.transpose(-2, -1) / math.sqrt(d)
    if key_mask is not None:
        scores = scores.masked_fill(~key_mask.unsqueeze(-2), -1e9)
    weights = torch.softmax(scores, dim=-1)
    return weights @ v, weights


class BiLstmEncoder(nn.Module):
    """Stacked bidirectional LSTM over packed sequences.

    Locked dropout is applied to the output of every layer while training.
    Packing keeps padded tails out of the backward pass, so batched and
    per-sentence encodings agree.
    """

    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.config = config
        self.layers = nn.ModuleList()
        in_dim = config.input_dim
        for _ in range(config.lstm_layers):
            self.layers.append(
                nn.LSTM(
                    in_dim,
                    config.lstm_hidden,
                    batch_first=True,
                    bidirectional=True,
                )
            )
            in_dim = config.output_dim
        self.dropout = LockedDropout(config.locked_dropout)

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        """(B, N, input_dim), bool (B, N) -> (B, N, 2 * lstm_hidden)."""
        lengths = mask.sum(dim=1).to(torch.int64).cpu()
        total = x.shape[1]
        out = x
        for layer in self.layers:
            packed = pack_padded_sequence(
                out, lengths, batch_first=True, enforce_sorted=False
            )
            packed_out, _ = layer(packed)
            out, _ = pad_packed_sequence(
                packed_out, batch_first=True, total_length=total
            )
            out = self.dropout(out)
        return out


class MultiHeadSelfAttention(nn.Module):
    """Parallel self-attention heads with a shared output projection.

    Per-head projections are bias-free matrices (model_dim x head_dim); the
    concatenated heads pass through one (model_dim x model_dim) matrix.
    """

    def __init__(self, config: EncoderConfig):
        super().__init__()
        config.validate()
        dim, heads, hdim = config.output_dim, config.n_heads, config.head_dim
        scale = 1.0 / math.sqrt(dim)
        self.w_query = nn.Parameter(torch.randn(heads, dim, hdim) * scale)
        self.w_key = nn.Parameter(torch.randn(heads, dim, hdim) * scale)
        self.w_value = nn.Parameter(torch.randn(heads, dim, hdim) * scale)
        self.w_merge = nn.Parameter(torch.randn(heads * hdim, dim) * scale)

    def forward(
        self,
        h: torch.Tensor,
        mask: torch.Tensor | None = None,
        return_weights: bool = False,
    ):
        """(B, N, D), bool (B, N) -> (B, N, D)."""
        q = torch.einsum("bnd,hde->bhne", h, self.w_query)
        k = torch.einsum("bnd,hde->bhne", h, self.w_key)
        v = torch.einsum("bnd,hde->bhne", h, self.w_value)
        key_mask = mask.unsqueeze(1) if mask is not None else None
        attended, weights = scaled_dot_attention(q, k, v, key_mask)
        b, heads, n, hdim = attended.shape
        merged = attended.permute(0, 2, 1, 3).reshape(b, n, heads * hdim)
        out = merged @ self.w_merge
        return (out, weights) if return_weights else out


class FeedForward(nn.Module):
    """One ReLU hidden layer, then a linear map back to the model dimension."""

    def __init__(self, dim: int):
        super().__init__()
        self.hidden = nn.Linear(dim, dim)
        self.out = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.out(torch.relu(self.hidden(x)))


class ContextEncoder(nn.Module):
    """Full encoding pipeline: BiLSTM stack, multi-head attention, FFNN."""

    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.config = config.validate()
        self.bilstm = BiLstmEncoder(config)
        self.attention = MultiHeadSelfAttention(config)
        self.ffnn = FeedForward(config.output_dim)

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        """(B, N, input_dim), bool (B, N) -> (B, N, output_dim)."""
        h = self.bilstm(x, mask)
        m = self.attention(h, mask)
        return self.ffnn(m)
