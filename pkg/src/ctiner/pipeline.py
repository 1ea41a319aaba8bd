"""Glue between corpora and the network: resource bundle and batch building."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .cbow import EmbeddingModel
from .corpus import Sentence, Vocabulary
from .external import ExternalProvider
from .features import (
    MixedFeatureConfig,
    PosTagger,
    RuleBasedPosTagger,
    component_one_hot,
)
from .internal import NeighborCache, hsa_table
from .model import AugmentationSwitches

__all__ = ["Resources", "SentenceBatch", "BatchBuilder"]


@dataclass
class Resources:
    """Everything a model run needs besides trainable weights."""

    vocab: Vocabulary
    labels: list[str]
    word_matrix: np.ndarray | None = None
    pos_matrix: np.ndarray | None = None
    domain_model: EmbeddingModel | None = None
    neighbor_cache: NeighborCache | None = None
    provider: ExternalProvider | None = None
    pos_tagger: PosTagger = field(default_factory=RuleBasedPosTagger)

    def __post_init__(self):
        self.label_to_index = {l: i for i, l in enumerate(self.labels)}


@dataclass
class SentenceBatch:
    """Padded tensors for one batch; augmentation fields exist per switches."""

    sentence_ids: list[str]
    word_idx: torch.Tensor  # (B, N)
    char_idx: torch.Tensor  # (B, N, L)
    pos_idx: torch.Tensor  # (B, N)
    component: torch.Tensor  # (B, N, slots)
    mask: torch.Tensor  # (B, N) bool
    labels: torch.Tensor | None = None  # (B, N)
    internal_vectors: torch.Tensor | None = None  # (B, N, Di) precomputed hard aug
    neighbor_vectors: torch.Tensor | None = None  # (B, N, K, Di) for soft aug
    internal_mask: torch.Tensor | None = None  # (B, N) bool, domain-vocab hits
    external: torch.Tensor | None = None  # (B, N, De)

    def __len__(self) -> int:
        return len(self.sentence_ids)


class BatchBuilder:
    """Converts sentences into padded index/feature tensors.

    Internal augmentation inputs are materialized from the neighbor cache at
    construction time: the hard variant as one finished vector per word, the
    soft variant as the raw neighbor matrix the model attends over.
    """

    def __init__(
        self,
        resources: Resources,
        feature_config: MixedFeatureConfig,
        switches: AugmentationSwitches,
        dtype: torch.dtype = torch.float32,
    ):
        self.res = resources
        self.config = feature_config
        self.switches = switches
        self.dtype = dtype

        self._hsa: dict[str, np.ndarray] | None = None
        self._ssa_neighbors: dict[str, np.ndarray] | None = None
        if switches.internal != "none":
            if resources.domain_model is None or resources.neighbor_cache is None:
                raise ValueError(
                    "internal augmentation requires the domain embedding model "
                    "and the neighbor cache"
                )
            if switches.internal == "hsa":
                self._hsa = hsa_table(resources.neighbor_cache, resources.domain_model)
            else:
                self._ssa_neighbors = _neighbor_matrices(
                    resources.neighbor_cache, resources.domain_model
                )
        if switches.external and resources.provider is None:
            raise ValueError("external augmentation requires a provider")

    def build(self, sentences: list[Sentence], with_labels: bool = True) -> SentenceBatch:
        res, cfg = self.res, self.config
        b = len(sentences)
        n = max(len(s) for s in sentences)
        max_chars = cfg.max_word_chars

        word_idx = torch.zeros(b, n, dtype=torch.long)
        char_idx = torch.zeros(b, n, max_chars, dtype=torch.long)
        pos_idx = torch.zeros(b, n, dtype=torch.long)
        component = torch.zeros(b, n, cfg.component_dim, dtype=self.dtype)
        mask = torch.zeros(b, n, dtype=torch.bool)
        labels = torch.zeros(b, n, dtype=torch.long) if with_labels else None

        pad_slot = torch.as_tensor(component_one_hot(None, cfg.component_dim))
        component[:, :] = pad_slot.to(self.dtype)

        for i, sent in enumerate(sentences):
            tags = sent.pos_tags
            if not all(tags):
                tags = res.pos_tagger.tag(sent.surfaces)
            for j, tok in enumerate(sent.tokens):
                word_idx[i, j] = res.vocab.word_index(tok.surface)
                for c, ch in enumerate(tok.surface[:max_chars]):
                    char_idx[i, j, c] = res.vocab.char_index(ch)
                pos_idx[i, j] = res.vocab.pos_index(tags[j])
                component[i, j] = torch.as_tensor(
                    component_one_hot(tok.surface, cfg.component_dim)
                ).to(self.dtype)
                mask[i, j] = True
                if with_labels:
                    labels[i, j] = res.label_to_index[tok.gold_label]

        batch = SentenceBatch(
            sentence_ids=[s.id for s in sentences],
            word_idx=word_idx,
            char_idx=char_idx,
            pos_idx=pos_idx,
            component=component,
            mask=mask,
            labels=labels,
        )
        self._attach_internal(batch, sentences)
        self._attach_external(batch, sentences)
        return batch

    def _attach_internal(self, batch: SentenceBatch, sentences: list[Sentence]):
        if self.switches.internal == "none":
            return
        b, n = batch.mask.shape
        dim = self.res.domain_model.dim
        internal_mask = torch.zeros(b, n, dtype=torch.bool)
        if self.switches.internal == "hsa":
            vectors = torch.zeros(b, n, dim, dtype=self.dtype)
            for i, sent in enumerate(sentences):
                for j, tok in enumerate(sent.tokens):
                    vec = self._hsa.get(tok.surface)
                    if vec is not None:
                        vectors[i, j] = torch.as_tensor(vec, dtype=self.dtype)
                        internal_mask[i, j] = True
            batch.internal_vectors = vectors
        else:
            k = self.res.neighbor_cache.k
            neighbors = torch.zeros(b, n, k, dim, dtype=self.dtype)
            for i, sent in enumerate(sentences):
                for j, tok in enumerate(sent.tokens):
                    mat = self._ssa_neighbors.get(tok.surface)
                    if mat is not None:
                        neighbors[i, j] = torch.as_tensor(mat, dtype=self.dtype)
                        internal_mask[i, j] = True
            batch.neighbor_vectors = neighbors
        batch.internal_mask = internal_mask

    def _attach_external(self, batch: SentenceBatch, sentences: list[Sentence]):
        if not self.switches.external:
            return
        b, n = batch.mask.shape
        dim = self.res.provider.dim
        external = torch.zeros(b, n, dim, dtype=self.dtype)
        for i, sent in enumerate(sentences):
            vecs = self.res.provider.encode(sent.surfaces, sentence_id=sent.id)
            external[i, : len(sent)] = torch.as_tensor(vecs, dtype=self.dtype)
        batch.external = external


def _neighbor_matrices(
    cache: NeighborCache, model: EmbeddingModel
) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    for word, pairs in cache.neighbors.items():
        out[word] = np.stack(
            [model.vectors[model.word_to_index[w]] for w, _ in pairs]
        ).astype(np.float32)
    return out
