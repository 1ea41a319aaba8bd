"""In-domain semantic augmentation via embedding nearest neighbors.

Two flavors share one neighbor cache: hard augmentation weights neighbors
by a softmax over cosine similarities and needs no trained parameters, so
it is fully precomputable; soft augmentation scores neighbors against the
token's contextual representation through a trained bilinear form.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .cbow import CbowConfig, EmbeddingModel, train_cbow

__all__ = [
    "DEFAULT_DOMAIN_CONFIG",
    "train_domain_embeddings",
    "NeighborCache",
    "knn_neighbors",
    "hsa_augment",
    "hsa_table",
    "SoftNeighborAttention",
]

# Window 3, min_count 2, 256 dims, CBOW mode.
DEFAULT_DOMAIN_CONFIG = CbowConfig(dim=256, window=3, min_count=2)


def train_domain_embeddings(
    sentences: list[list[str]],
    config: CbowConfig = DEFAULT_DOMAIN_CONFIG,
) -> EmbeddingModel:
    """Train the in-domain word embedding model on unlabeled sentence text."""
    if not sentences:
        raise ValueError("cannot train domain embeddings on an empty corpus")
    return train_cbow(sentences, config)


@dataclass
class NeighborCache:
    """Top-K neighbors per vocabulary word, sorted by descending cosine."""

    k: int
    neighbors: dict[str, list[tuple[str, float]]] = field(default_factory=dict)

    def __contains__(self, word: str) -> bool:
        return word in self.neighbors

    def get(self, word: str) -> list[tuple[str, float]] | None:
        return self.neighbors.get(word)

    def save(self, path: str | Path) -> None:
        with Path(path).open("w", encoding="utf-8") as fh:
            fh.write(f"#ctiner-neighbors v1 k={self.k}\n")
            for word, pairs in self.neighbors.items():
                cells = [word]
                for neighbor, score in pairs:
                    cells.append(neighbor)
                    cells.append(repr(score))
                fh.write("\t".join(cells) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "NeighborCache":
        with Path(path).open("r", encoding="utf-8") as fh:
            header = fh.readline().strip()
            if not header.startswith("#ctiner-neighbors v1"):
                raise ValueError(f"unrecognized neighbor cache header: {header!r}")
            k = int(header.split("k=")[1])
            neighbors: dict[str, list[tuple[str, float]]] = {}
            for line in fh:
                cells = line.rstrip("\n").split("\t")
                word = cells[0]
                pairs = [
                    (cells[i], float(cells[i + 1]))
                    for i in range(1, len(cells) - 1, 2)
                ]
                neighbors[word] = pairs
        return cls(k=k, neighbors=neighbors)


def knn_neighbors(
    model: EmbeddingModel, k: int, chunk_size: int = 512
) -> NeighborCache:
    """Exact top-K cosine neighbors for every vocabulary word.

    Ties break by ascending word index; a word never neighbors itself.
    """
    n = len(model)
    if not 1 <= k < n:
        raise ValueError(f"k must satisfy 1 <= k < vocabulary size {n}, got {k}")

    norms = np.linalg.norm(model.vectors, axis=1, keepdims=True)
    unit = model.vectors / np.maximum(norms, 1e-12)

    neighbors: dict[str, list[tuple[str, float]]] = {}
    for start in range(0, n, chunk_size):
        stop = min(n, start + chunk_size)
        sims = unit[start:stop] @ unit.T
        for row, word_idx in enumerate(range(start, stop)):
            scores = sims[row].copy()
            scores[word_idx] = -np.inf
            # sort by descending score, ascending index on ties
            order = np.lexsort((np.arange(n), -scores))[:k]
            neighbors[model.words[word_idx]] = [
                (model.words[j], float(np.clip(scores[j], -1.0, 1.0)))
                for j in order
            ]
    return NeighborCache(k=k, neighbors=neighbors)


def hsa_augment(
    word: str, cache: NeighborCache, model: EmbeddingModel
) -> np.ndarray:
    """Neighbor-weighted vector with softmax-of-cosine weights.

    Needs nothing trained, so it can run entirely ahead of training. Words
    outside the domain vocabulary fall back to the zero vector; the caller
    records the missing-augmentation mask bit.
    """
    pairs = cache.get(word)
    if not pairs:
        return np.zeros(model.dim)
    scores = np.array([score for _, score in pairs])
    weights = np.exp(scores - scores.max())
    weights /= weights.sum()
    vectors = np.stack([model.vectors[model.word_to_index[w]] for w, _ in pairs])
    return weights @ vectors


def hsa_table(cache: NeighborCache, model: EmbeddingModel) -> dict[str, np.ndarray]:
    """Precompute the hard augmentation vector for every cached word."""
    return {word: hsa_augment(word, cache, model) for word in cache.neighbors}


class SoftNeighborAttention(nn.Module):
    """Trained bilinear attention between context vectors and neighbors.

    Scores are ``m_i @ W @ v_ij`` normalized over the K neighbors. The safe
    default is a proper softmax; ``literal_normalization`` divides raw
    exponentiated scores by the un-exponentiated score sum instead, which can
    hit zero or negative denominators and is provided only for comparison.
    """

    def __init__(
        self,
        context_dim: int = 256,
        neighbor_dim: int | None = None,
        literal_normalization: bool = False,
    ):
        super().__init__()
        neighbor_dim = neighbor_dim or context_dim
        scale = 1.0 / (context_dim ** 0.5)
        self.bilinear = nn.Parameter(torch.randn(context_dim, neighbor_dim) * scale)
        self.literal_normalization = literal_normalization

    def forward(
        self,
        context: torch.Tensor,
        neighbor_vectors: torch.Tensor,
        mask: torch.Tensor | None = None,
    ) -> torch.Tensor:
        """(B, N, D), (B, N, K, Dn), bool (B, N) -> (B, N, Dn)."""
        scores = torch.einsum(
            "bnd,de,bnke->bnk", context, self.bilinear, neighbor_vectors
        )
        if self.literal_normalization:
            weights = torch.exp(scores) / scores.sum(dim=-1, keepdim=True)
        else:
            weights = torch.softmax(scores, dim=-1)
        out = torch.einsum("bnk,bnkd->bnd", weights, neighbor_vectors)
        if mask is not None:
            out = torch.where(mask.unsqueeze(-1), out, torch.zeros_like(out))
        return out
