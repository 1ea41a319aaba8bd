"""General-domain augmentation from a pretrained contextual language model.

Providers emit one hidden vector per word. Three implementations cover
different environments: a finetuned transformer (heavyweight, optional), a
precomputed-embedding file reader, and a deterministic stub so the rest of
the pipeline is testable on any machine. Subtoken hidden states are pooled
by summation before the shared projection to the encoder width.
"""
from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Protocol, runtime_checkable

import numpy as np
import torch
from torch import nn

from .corpus import LabeledCorpus

__all__ = [
    "ExternalProvider",
    "ProviderUnavailableError",
    "StubProvider",
    "PrecomputedProvider",
    "write_precomputed",
    "WordPieceTokenizer",
    "align_subtokens",
    "SubtokenAlignment",
    "pool_subtokens",
    "pool_and_project",
    "FinetuneConfig",
    "TransformerProvider",
    "finetune_provider",
]


class ProviderUnavailableError(RuntimeError):
    """Raised when a provider's backing resources cannot be loaded."""


@runtime_checkable
class ExternalProvider(Protocol):
    """One hidden vector per word of a sentence, fixed dimension."""

    @property
    def dim(self) -> int:
        ...

    def encode(self, words: list[str], sentence_id: str = "") -> np.ndarray:
        ...


class StubProvider:
    """Deterministic pseudo-random vectors keyed by (word, position, seed).

    Lets the full pipeline run end-to-end, reproducibly, without any
    language model.
    """

    def __init__(self, dim: int = 32, seed: int = 0):
        self._dim = dim
        self.seed = seed

    @property
    def dim(self) -> int:
        return self._dim

    def encode(self, words: list[str], sentence_id: str = "") -> np.ndarray:
        out = np.empty((len(words), self._dim))
        for i, word in enumerate(words):
            digest = hashlib.blake2b(
                f"{self.seed}:{i}:{word}".encode("utf-8"), digest_size=8
            ).digest()
            rng = np.random.default_rng(int.from_bytes(digest, "little"))
            out[i] = rng.uniform(-1.0, 1.0, size=self._dim)
        return out


_PRECOMPUTED_HEADER = "#ctiner-external v1"


def write_precomputed(
    path: str | Path, vectors_by_sentence: dict[str, np.ndarray], dim: int
) -> None:
    """Persist per-token vectors: one ``sentence_id  index  components`` line each."""
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write(f"{_PRECOMPUTED_HEADER} dim={dim}\n")
        for sid, matrix in vectors_by_sentence.items():
            for idx, row in enumerate(matrix):
                comps = " ".join(repr(float(v)) for v in row)
                fh.write(f"{sid}\t{idx}\t{comps}\n")


class PrecomputedProvider:
    """Serves token vectors previously written with :func:`write_precomputed`."""

    def __init__(self, path: str | Path):
        path = Path(path)
        with path.open("r", encoding="utf-8") as fh:
            header = fh.readline().strip()
            if not header.startswith(_PRECOMPUTED_HEADER):
                raise ProviderUnavailableError(
                    f"{path} is not a precomputed-embedding file (header {header!r})"
                )
            self._dim = int(header.split("dim=")[1])
            rows: dict[str, dict[int, np.ndarray]] = {}
            for line in fh:
                sid, idx, comps = line.rstrip("\n").split("\t")
                vec = np.array([float(v) for v in comps.split(" ")])
                rows.setdefault(sid, {})[int(idx)] = vec
        self._by_sentence = {
            sid: np.stack([cols[i] for i in sorted(cols)]) for sid, cols in rows.items()
        }

    @property
    def dim(self) -> int:
        return self._dim

    def encode(self, words: list[str], sentence_id: str = "") -> np.ndarray:
        matrix = self._by_sentence.get(sentence_id)
        if matrix is None:
            raise ProviderUnavailableError(
                f"no precomputed vectors for sentence {sentence_id!r}"
            )
        if matrix.shape[0] != len(words):
            raise ProviderUnavailableError(
                f"sentence {sentence_id!r} has {matrix.shape[0]} stored vectors "
                f"but {len(words)} words"
            )
        return matrix


SubtokenAlignment = list[list[int]]


class WordPieceTokenizer:
    """Greedy longest-match-first subword tokenizer over a fixed vocabulary."""

    def __init__(
        self,
        vocab: set[str] | list[str],
        unk_token: str = "[UNK]",
        continuation_prefix: str = "##",
        lowercase: bool = True,
    ):
        self.vocab = set(vocab)
        self.unk_token = unk_token
        self.continuation_prefix = continuation_prefix
        self.lowercase = lowercase

    def tokenize_word(self, word: str) -> list[str]:
        if self.lowercase:
            word = word.lower()
        pieces: list[str] = []
        start = 0
        while start < len(word):
            end = len(word)
            piece = None
            while end > start:
                candidate = word[start:end]
                if start > 0:
                    candidate = self.continuation_prefix + candidate
                if candidate in self.vocab:
                    piece = candidate
                    break
                end -= 1
            if piece is None:
                return [self.unk_token]
            pieces.append(piece)
            start = end
        return pieces


def align_subtokens(
    words: list[str], tokenize_word: Callable[[str], list[str]]
) -> tuple[list[str], SubtokenAlignment]:
    """Tokenize each word and map it to its subtoken indices.

    Every word maps to at least one subtoken; a word with no pieces maps to
    the tokenizer's unknown token with a warning. Indices exclude any special
    begin/end markers because none are emitted here; alignments partition the
    subtoken sequence in order.
    """
    subtokens: list[str] = []
    alignment: SubtokenAlignment = []
    for word in words:
        pieces = tokenize_word(word)
        if not pieces:
            warnings.warn(f"word {word!r} produced no subtokens; using [UNK]")
            pieces = ["[UNK]"]
        alignment.append(list(range(len(subtokens), len(subtokens) + len(pieces))))
        subtokens.extend(pieces)
    return subtokens, alignment


def pool_subtokens(
    hidden_states: torch.Tensor, alignment: SubtokenAlignment
) -> torch.Tensor:
    """Sum each word's subtoken hidden states: (S, H) -> (N, H)."""
    return torch.stack(
        [hidden_states[indices].sum(dim=0) for indices in alignment]
    )


def pool_and_project(
    hidden_states: torch.Tensor,
    alignment: SubtokenAlignment,
    fc: nn.Linear,
) -> torch.Tensor:
    """Pooled subtoken sums through the shared projection: (S, H) -> (N, out)."""
    return fc(pool_subtokens(hidden_states, alignment))


@dataclass(frozen=True)
class FinetuneConfig:
    epochs: int = 100
    batch_size: int = 32
    lr: float = 5e-5
    dropout: float = 0.5
    warmup_proportion: float = 0.002
    weight_decay: float = 1e-5
    lr_decay: float = 1e-5
    seed: int = 0


class TransformerProvider:
    """Finetuned contextual LM provider (requires the transformers package).

    Pools subtoken hidden states per word by summation using the tokenizer's
    own word alignment.
    """

    def __init__(self, model, tokenizer, device: str = "cpu"):
        self.model = model.to(device).eval()
        self.tokenizer = tokenizer
        self.device = device
        self._dim = int(self.model.config.hidden_size)

    @property
    def dim(self) -> int:
        return self._dim

    @classmethod
    def from_pretrained(cls, path: str | Path, device: str = "cpu"):
        transformers = _require_transformers()
        path = Path(path)
        if not path.exists():
            raise ProviderUnavailableError(
                f"no local model at {path}; use the precomputed or stub provider "
                "instead (external.provider: precomputed | stub)"
            )
        model = transformers.AutoModel.from_pretrained(str(path))
        tokenizer = transformers.AutoTokenizer.from_pretrained(str(path))
        return cls(model, tokenizer, device=device)

    @torch.no_grad()
    def encode(self, words: list[str], sentence_id: str = "") -> np.ndarray:
        enc = self.tokenizer(
            words,
            is_split_into_words=True,
            return_tensors="pt",
            truncation=True,
        ).to(self.device)
        hidden = self.model(**enc).last_hidden_state[0]
        word_ids = enc.word_ids(0)
        alignment: SubtokenAlignment = [[] for _ in words]
        for pos, wid in enumerate(word_ids):
            if wid is not None:
                alignment[wid].append(pos)
        for wid, indices in enumerate(alignment):
            if not indices:
                warnings.warn(
                    f"word {words[wid]!r} lost to truncation; using zero vector"
                )
        pooled = torch.stack(
            [
                hidden[idx].sum(dim=0) if idx else hidden.new_zeros(self._dim)
                for idx in alignment
            ]
        )
        return pooled.cpu().numpy().astype(np.float64)


def finetune_provider(
    train: LabeledCorpus,
    valid: LabeledCorpus,
    base_model_path: str | Path,
    config: FinetuneConfig = FinetuneConfig(),
    device: str = "cpu",
) -> TransformerProvider:
    """Finetune a pretrained LM on token classification over the train split.

    Keeps the epoch whose validation token accuracy is best, then returns the
    frozen encoder as a provider. The schedule warms the learning rate up
    over ``warmup_proportion`` of all steps and then decays it linearly by
    ``lr_decay`` per step.
    """
    transformers = _require_transformers()
    path = Path(base_model_path)
    if not path.exists():
        raise ProviderUnavailableError(
            f"no local base model at {path}; use the precomputed or stub "
            "provider instead (external.provider: precomputed | stub)"
        )

    labels = sorted({l for s in train.sentences for l in s.labels})
    label_to_id = {l: i for i, l in enumerate(labels)}
    tokenizer = transformers.AutoTokenizer.from_pretrained(str(path))
    model = transformers.AutoModelForTokenClassification.from_pretrained(
        str(path),
        num_labels=len(labels),
        hidden_dropout_prob=config.dropout,
    ).to(device)

    torch.manual_seed(config.seed)

    def batches(corpus: LabeledCorpus):
        sents = corpus.sentences
        for i in range(0, len(sents), config.batch_size):
            chunk = sents[i: i + config.batch_size]
            enc = tokenizer(
                [s.surfaces for s in chunk],
                is_split_into_words=True,
                padding=True,
                truncation=True,
                return_tensors="pt",
            )
            target = torch.full(enc["input_ids"].shape, -100, dtype=torch.long)
            for row, sent in enumerate(chunk):
                seen = set()
                for pos, wid in enumerate(enc.word_ids(row)):
                    if wid is not None and wid not in seen:
                        seen.add(wid)
                        target[row, pos] = label_to_id[sent.tokens[wid].gold_label]
            yield enc.to(device), target.to(device)

    optimizer = torch.optim.AdamW(
        model.parameters(), lr=config.lr, weight_decay=config.weight_decay
    )
    steps_per_epoch = max(1, (len(train.sentences) + config.batch_size - 1)
                          // config.batch_size)
    total_steps = config.epochs * steps_per_epoch
    warmup_steps = max(1, int(config.warmup_proportion * total_steps))

    def lr_at(step: int) -> float:
        if step < warmup_steps:
            return config.lr * (step + 1) / warmup_steps
        return max(config.lr * (1.0 - config.lr_decay) ** (step - warmup_steps), 0.0)

    best_acc, best_state, step = -1.0, None, 0
    for _ in range(config.epochs):
        model.train()
        for enc, target in batches(train):
            for group in optimizer.param_groups:
                group["lr"] = lr_at(step)
            out = model(**enc, labels=target)
            optimizer.zero_grad()
            out.loss.backward()
            optimizer.step()
            step += 1
        model.eval()
        hits = total = 0
        with torch.no_grad():
            for enc, target in batches(valid):
                logits = model(**enc).logits
                pred = logits.argmax(dim=-1)
                keep = target != -100
                hits += int((pred[keep] == target[keep]).sum())
                total += int(keep.sum())
        acc = hits / max(total, 1)
        if acc > best_acc:
            best_acc = acc
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}

    if best_state is not None:
        model.load_state_dict(best_state)
    encoder = model.base_model
    return TransformerProvider(encoder, tokenizer, device=device)


def _require_transformers():
    try:
        import transformers
    except ImportError as exc:
        raise ProviderUnavailableError(
            "the transformers package is not installed; install the "
            "'transformer' extra or use the precomputed or stub provider"
        ) from exc
    return transformers
