"""Minimal CBOW word-embedding trainer with negative sampling.

Deterministic single-process implementation used for both POS-tag
pretraining and the in-domain word embeddings. Windows are fixed width
(no random shrinking) and updates run in shuffled minibatches, so a seed
fully determines the resulting table.
"""
from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .vectors import read_vector_file, write_vector_file

__all__ = ["CbowConfig", "EmbeddingModel", "train_cbow"]


@dataclass(frozen=True)
class CbowConfig:
    dim: int = 256
    window: int = 3
    min_count: int = 2
    epochs: int = 15
    negative: int = 5
    initial_lr: float = 0.05
    min_lr: float = 1e-4
    batch_size: int = 512
    seed: int = 0


@dataclass
class EmbeddingModel:
    """Trained embedding table plus the recipe that produced it."""

    words: list[str]
    vectors: np.ndarray
    meta: dict

    def __post_init__(self):
        self.word_to_index = {w: i for i, w in enumerate(self.words)}

    def __contains__(self, word: str) -> bool:
        return word in self.word_to_index

    def __len__(self) -> int:
        return len(self.words)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def vector(self, word: str) -> np.ndarray | None:
        idx = self.word_to_index.get(word)
        return None if idx is None else self.vectors[idx]

    def save(self, path: str | Path) -> None:
        write_vector_file(path, self.words, self.vectors)
        Path(str(path) + ".meta.json").write_text(
            json.dumps(self.meta, indent=1), encoding="utf-8"
        )

    @classmethod
    def load(cls, path: str | Path) -> "EmbeddingModel":
        words, vectors = read_vector_file(path)
        meta_path = Path(str(path) + ".meta.json")
        meta = (
            json.loads(meta_path.read_text(encoding="utf-8"))
            if meta_path.exists()
            else {}
        )
        return cls(words=words, vectors=vectors, meta=meta)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(x, -30.0, 30.0)))


def train_cbow(sentences: list[list[str]], config: CbowConfig) -> EmbeddingModel:
    """Train CBOW embeddings over tokenized sentences.

    Tokens below ``min_count`` are dropped from the sequences before
    windowing, matching the usual word2vec behavior.
    """
    counts = Counter(tok for sent in sentences for tok in sent)
    words = sorted(w for w, c in counts.items() if c >= config.min_count)
    if not words:
        raise ValueError(
            f"vocabulary is empty after min_count={config.min_count} filtering"
        )
    word_to_index = {w: i for i, w in enumerate(words)}
    vocab_size = len(words)

    encoded = [
        np.array([word_to_index[t] for t in sent if t in word_to_index], dtype=np.int64)
        for sent in sentences
    ]
    encoded = [e for e in encoded if len(e) >= 2]

    rng = np.random.default_rng(config.seed)
    w_in = rng.uniform(-0.5, 0.5, size=(vocab_size, config.dim)) / config.dim
    w_out = np.zeros((vocab_size, config.dim))

    if not encoded:
        # Degenerate but non-empty vocabulary: nothing to predict from.
        return EmbeddingModel(words=words, vectors=w_in, meta=_meta(config, counts))

    # noise distribution for negative sampling: unigram^0.75
    freqs = np.array([counts[w] for w in words], dtype=np.float64) ** 0.75
    noise = freqs / freqs.sum()

    centers, contexts, ctx_counts = _window_examples(encoded, config.window)
    n_examples = len(centers)
    total_batches = max(
        1, config.epochs * ((n_examples + config.batch_size - 1) // config.batch_size)
    )

    batch_no = 0
    for _ in range(config.epochs):
        order = rng.permutation(n_examples)
        for start in range(0, n_examples, config.batch_size):
            sel = order[start: start + config.batch_size]
            lr = max(
                config.min_lr,
                config.initial_lr * (1.0 - batch_no / total_batches),
            )
            batch_no += 1

            ctx = contexts[sel]
            mask = ctx >= 0
            safe = np.where(mask, ctx, 0)
            h = (w_in[safe] * mask[:, :, None]).sum(axis=1)
            h /= ctx_counts[sel][:, None]

            neg = rng.choice(vocab_size, size=(len(sel), config.negative), p=noise)
            targets = np.concatenate([centers[sel][:, None], neg], axis=1)
            labels = np.zeros_like(targets, dtype=np.float64)
            labels[:, 0] = 1.0

            scores = np.einsum("bd,btd->bt", h, w_out[targets])
            grad = _sigmoid(scores) - labels

            grad_h = np.einsum("bt,btd->bd", grad, w_out[targets])
            delta_out = -lr * grad[:, :, None] * h[:, None, :]
            np.add.at(w_out, targets, delta_out)

            per_ctx = -lr * grad_h / ctx_counts[sel][:, None]
            np.add.at(w_in, safe, per_ctx[:, None, :] * mask[:, :, None])

    return EmbeddingModel(words=words, vectors=w_in, meta=_meta(config, counts))


def _window_examples(
    encoded: list[np.ndarray], window: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    centers: list[int] = []
    contexts: list[list[int]] = []
    width = 2 * window
    for sent in encoded:
        n = len(sent)
        for i in range(n):
            lo, hi = max(0, i - window), min(n, i + window + 1)
            ctx = [int(sent[j]) for j in range(lo, hi) if j != i]
            if not ctx:
                continue
            centers.append(int(sent[i]))
            contexts.append(ctx + [-1] * (width - len(ctx)))
    ctx_arr = np.array(contexts, dtype=np.int64)
    return (
        np.array(centers, dtype=np.int64),
        ctx_arr,
        (ctx_arr >= 0).sum(axis=1).astype(np.float64),
    )


def _meta(config: CbowConfig, counts: Counter) -> dict:
    meta = asdict(config)
    meta["mode"] = "cbow"
    meta["corpus_tokens"] = int(sum(counts.values()))
    return meta
