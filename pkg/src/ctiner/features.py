"""Per-token mixed input features: word, morphology, POS, and component channels.

The four channels are concatenated (50 + 30 + 10 + 8 = 98 dims) and linearly
projected to the 128-dim fused input consumed by the context encoder.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import numpy as np
import torch
from torch import nn

from .cbow import CbowConfig, EmbeddingModel, train_cbow
from .corpus import PAD, UNK, Vocabulary
from .vectors import read_vector_file

__all__ = [
    "COMPONENT_CLASSES",
    "COMPONENT_SLOTS",
    "MixedFeatureConfig",
    "ConfigurationError",
    "classify_component",
    "component_one_hot",
    "WordEmbeddingTable",
    "load_pretrained_words",
    "CharCNN",
    "pretrain_pos_embeddings",
    "pos_embedding_matrix",
    "PosTagger",
    "RuleBasedPosTagger",
    "MixedFeatureEmbedder",
]

# Seven surface-form classes; the 8th one-hot slot is the pad/unknown slot.
COMPONENT_CLASSES = (
    "allNum",
    "allLower",
    "allUpper",
    "upperInit",
    "mainNum",
    "containNum",
    "other",
)
COMPONENT_SLOTS = 8


class ConfigurationError(ValueError):
    """Raised at startup when configured dimensions are inconsistent."""


@dataclass(frozen=True)
class MixedFeatureConfig:
    word_dim: int = 50
    char_emb_dim: int = 30
    morph_dim: int = 30
    char_kernel: int = 3
    max_word_chars: int = 32
    pos_pretrain_dim: int = 30
    pos_dim: int = 10
    component_dim: int = COMPONENT_SLOTS
    fused_dim: int = 128

    @property
    def concat_dim(self) -> int:
        return self.word_dim + self.morph_dim + self.pos_dim + self.component_dim

    def validate(self) -> "MixedFeatureConfig":
        if self.component_dim < len(COMPONENT_CLASSES) + 1:
            raise ConfigurationError(
                f"component_dim must hold {len(COMPONENT_CLASSES)} classes "
                f"plus a pad slot, got {self.component_dim}"
            )
        if self.fused_dim < 1 or self.concat_dim < 1:
            raise ConfigurationError("feature dimensions must be positive")
        return self


def classify_component(word: str) -> str:
    """Classify a word's surface form; first matching rule wins.

    Priority: allNum, allUpper, allLower, upperInit, mainNum, containNum,
    other.
    """
    if not word:
        raise ValueError("cannot classify an empty word")
    n_digits = sum(ch.isdigit() for ch in word)
    alphas = [ch for ch in word if ch.isalpha()]
    if n_digits == len(word):
        return "allNum"
    if n_digits == 0 and alphas:
        if all(ch.isupper() for ch in alphas):
            return "allUpper"
        if all(ch.islower() for ch in alphas):
            return "allLower"
        if word[0].isupper() and all(ch.islower() for ch in alphas[1:]):
            return "upperInit"
    if n_digits * 2 > len(word):
        return "mainNum"
    if n_digits >= 1:
        return "containNum"
    return "other"


def component_one_hot(word: str | None, slots: int = COMPONENT_SLOTS) -> np.ndarray:
    """One-hot component vector; ``None`` marks padding (reserved last slot)."""
    vec = np.zeros(slots)
    if word is None:
        vec[slots - 1] = 1.0
    else:
        vec[COMPONENT_CLASSES.index(classify_component(word))] = 1.0
    return vec


def load_pretrained_words(path: str | Path) -> dict[str, np.ndarray]:
    words, matrix = read_vector_file(path)
    return dict(zip(words, matrix))


class WordEmbeddingTable:
    """Word-vector lookup with cached random init for out-of-vocabulary words.

    Known words return their pretrained row exactly. Unknown words draw one
    uniform sample strictly inside (-sqrt(3/dim), +sqrt(3/dim)) that is cached
    per surface form, so repeated lookups are stable. The cache is filled
    during the single-threaded build phase.
    """

    def __init__(
        self,
        dim: int = 50,
        pretrained: dict[str, np.ndarray] | None = None,
        seed: int = 0,
        lowercase_fallback: bool = True,
    ):
        self.dim = dim
        self.pretrained = pretrained or {}
        self.lowercase_fallback = lowercase_fallback
        self._rng = np.random.default_rng(seed)
        self._cache: dict[str, np.ndarray] = {}
        for word, vec in self.pretrained.items():
            if len(vec) != dim:
                raise ConfigurationError(
                    f"pretrained vector for {word!r} has dim {len(vec)}, "
                    f"expected {dim}"
                )

    @property
    def oov_bound(self) -> float:
        return math.sqrt(3.0 / self.dim)

    def _sample_oov(self) -> np.ndarray:
        bound = self.oov_bound
        vec = self._rng.uniform(-bound, bound, size=self.dim)
        while np.any(vec <= -bound) or np.any(vec >= bound):
            bad = (vec <= -bound) | (vec >= bound)
            vec[bad] = self._rng.uniform(-bound, bound, size=int(bad.sum()))
        return vec

    def provenance(self, word: str) -> str:
        if word in self.pretrained:
            return "pretrained"
        if self.lowercase_fallback and word.lower() in self.pretrained:
            return "pretrained"
        return "oov-random"

    def lookup(self, word: str) -> np.ndarray:
        if word in self.pretrained:
            return np.asarray(self.pretrained[word], dtype=np.float64)
        if self.lowercase_fallback and word.lower() in self.pretrained:
            return np.asarray(self.pretrained[word.lower()], dtype=np.float64)
        if word not in self._cache:
            self._cache[word] = self._sample_oov()
        return self._cache[word]

    def matrix_for(self, vocab: Vocabulary) -> tuple[np.ndarray, list[str]]:
        """Embedding matrix aligned to vocabulary indices, plus provenance."""
        n = vocab.n_words
        matrix = np.zeros((n, self.dim))
        provenance = ["oov-random"] * n
        for word, idx in vocab.word_to_index.items():
            if word == PAD:
                continue  # padding row stays zero
            matrix[idx] = self.lookup(word)
            provenance[idx] = self.provenance(word)
        return matrix, provenance


class CharCNN(nn.Module):
    """Fixed-size morphological word vector from its character sequence.

    Character embeddings pass through two width-3 convolutions, each with
    batch normalization, then a max-pool over character positions and a ReLU.
    Words with no characters (all padding) map to the zero vector.
    """

    def __init__(self, n_chars: int, config: MixedFeatureConfig):
        super().__init__()
        pad = config.char_kernel // 2
        self.emb = nn.Embedding(n_chars, config.char_emb_dim, padding_idx=0)
        self.conv1 = nn.Conv1d(
            config.char_emb_dim, config.morph_dim, config.char_kernel, padding=pad
        )
        self.bn1 = nn.BatchNorm1d(config.morph_dim)
        self.conv2 = nn.Conv1d(
            config.morph_dim, config.morph_dim, config.char_kernel, padding=pad
        )
        self.bn2 = nn.BatchNorm1d(config.morph_dim)
        self.out_dim = config.morph_dim

    def forward(self, char_idx: torch.Tensor) -> torch.Tensor:
        """char_idx: (B, L) padded char indices -> (B, out_dim)."""
        mask = char_idx > 0
        x = self.emb(char_idx).transpose(1, 2)
        x = self.bn1(self.conv1(x))
        x = self.bn2(self.conv2(x))
        x = x.masked_fill(~mask[:, None, :], -1e9)
        pooled = x.max(dim=2).values
        out = torch.relu(pooled)
        return out * mask.any(dim=1, keepdim=True)


def pretrain_pos_embeddings(
    pos_sequences: list[list[str]],
    dim: int = 30,
    window: int = 3,
    epochs: int = 30,
    seed: int = 0,
) -> EmbeddingModel:
    """Train CBOW embeddings over POS-tag sequences (window 3, every tag kept)."""
    distinct = {t for seq in pos_sequences for t in seq}
    if len(distinct) < 2:
        raise ValueError(
            f"need at least 2 distinct POS tags to pretrain, got {len(distinct)}"
        )
    config = CbowConfig(
        dim=dim, window=window, min_count=1, epochs=epochs, seed=seed,
        batch_size=256,
    )
    return train_cbow(pos_sequences, config)


def pos_embedding_matrix(vocab: Vocabulary, model: EmbeddingModel) -> np.ndarray:
    """POS table aligned to vocabulary indices; unseen tags share the unknown row."""
    rng = np.random.default_rng(0)
    matrix = np.zeros((vocab.n_pos, model.dim))
    matrix[vocab.pos_to_index[UNK]] = rng.uniform(-0.1, 0.1, size=model.dim)
    for tag, idx in vocab.pos_to_index.items():
        vec = model.vector(tag)
        if vec is not None:
            matrix[idx] = vec
    return matrix


class PosTagger(Protocol):
    """Anything that maps a token sequence to one POS tag per token."""

    def tag(self, words: list[str]) -> list[str]:
        ...


_CLOSED_CLASS = {
    "the": "DT", "a": "DT", "an": "DT", "this": "DT", "that": "DT",
    "these": "DT", "those": "DT",
    "of": "IN", "in": "IN", "on": "IN", "at": "IN", "by": "IN", "for": "IN",
    "with": "IN", "from": "IN", "against": "IN", "via": "IN", "over": "IN",
    "and": "CC", "or": "CC", "but": "CC",
    "to": "TO",
    "is": "VBZ", "are": "VBP", "was": "VBD", "were": "VBD", "be": "VB",
    "been": "VBN", "has": "VBZ", "have": "VBP", "had": "VBD",
    "it": "PRP", "they": "PRP", "we": "PRP", "he": "PRP", "she": "PRP",
    "their": "PRP$", "its": "PRP$", "our": "PRP$",
    "will": "MD", "can": "MD", "may": "MD", "could": "MD", "would": "MD",
    "not": "RB", "also": "RB",
}


class RuleBasedPosTagger:
    """Bundled fallback tagger emitting Penn-Treebank-style tags.

    A pluggable stand-in for an off-the-shelf tagger; corpora with a POS
    column bypass it entirely.
    """

    def tag(self, words: list[str]) -> list[str]:
        return [self._tag_one(w) for w in words]

    @staticmethod
    def _tag_one(word: str) -> str:
        lower = word.lower()
        if lower in _CLOSED_CLASS:
            return _CLOSED_CLASS[lower]
        if all(not ch.isalnum() for ch in word):
            return "SYM"
        if any(ch.isdigit() for ch in word) and not any(ch.isalpha() for ch in word):
            return "CD"
        if word[0].isupper():
            return "NNP"
        if lower.endswith("ing"):
            return "VBG"
        if lower.endswith("ed"):
            return "VBD"
        if lower.endswith("ly"):
            return "RB"
        if lower.endswith("s") and not lower.endswith("ss") and len(lower) > 3:
            return "NNS"
        return "NN"


class MixedFeatureEmbedder(nn.Module):
    """Eq.-style fused token input: concat four channels, project linearly.

    The POS channel is pretrained at ``pos_pretrain_dim`` and projected to
    ``pos_dim`` by a jointly learned linear map. The final projection has no
    bias: output = concat @ fusion_weight.
    """

    def __init__(
        self,
        config: MixedFeatureConfig,
        vocab: Vocabulary,
        word_matrix: np.ndarray | None = None,
        pos_matrix: np.ndarray | None = None,
    ):
        super().__init__()
        self.config = config.validate()
        self.word_emb = nn.Embedding(vocab.n_words, config.word_dim, padding_idx=0)
        self.char_cnn = CharCNN(vocab.n_chars, config)
        self.pos_emb = nn.Embedding(
            vocab.n_pos, config.pos_pretrain_dim, padding_idx=0
        )
        self.pos_project = nn.Linear(config.pos_pretrain_dim, config.pos_dim)
        self.fuse = nn.Linear(config.concat_dim, config.fused_dim, bias=False)

        if word_matrix is not None:
            if word_matrix.shape != (vocab.n_words, config.word_dim):
                raise ConfigurationError(
                    f"word matrix shape {word_matrix.shape} does not match "
                    f"({vocab.n_words}, {config.word_dim})"
                )
            with torch.no_grad():
                self.word_emb.weight.copy_(torch.as_tensor(word_matrix))
        if pos_matrix is not None:
            if pos_matrix.shape != (vocab.n_pos, config.pos_pretrain_dim):
                raise ConfigurationError(
                    f"POS matrix shape {pos_matrix.shape} does not match "
                    f"({vocab.n_pos}, {config.pos_pretrain_dim})"
                )
            with torch.no_grad():
                self.pos_emb.weight.copy_(torch.as_tensor(pos_matrix))

    def forward(
        self,
        word_idx: torch.Tensor,
        char_idx: torch.Tensor,
        pos_idx: torch.Tensor,
        component: torch.Tensor,
    ) -> torch.Tensor:
        """(B, N), (B, N, L), (B, N), (B, N, slots) -> (B, N, fused_dim)."""
        b, n = word_idx.shape
        w = self.word_emb(word_idx)
        m = self.char_cnn(char_idx.reshape(b * n, -1)).reshape(b, n, -1)
        p = self.pos_project(self.pos_emb(pos_idx))
        c = component.to(w.dtype)
        return self.fuse(torch.cat([w, m, p, c], dim=-1))
