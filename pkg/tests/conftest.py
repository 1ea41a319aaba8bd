"""Shared fixtures: small corpora, desk-scale configs, miniature models."""
from __future__ import annotations

import numpy as np
import pytest
import torch

from ctiner.cbow import CbowConfig, EmbeddingModel
from ctiner.corpus import LabeledCorpus, Sentence, Token, build_vocab
from ctiner.encoder import EncoderConfig
from ctiner.external import StubProvider
from ctiner.features import (
    MixedFeatureConfig,
    WordEmbeddingTable,
    pos_embedding_matrix,
    pretrain_pos_embeddings,
)
from ctiner.fixtures import smoke_corpus
from ctiner.internal import knn_neighbors, train_domain_embeddings
from ctiner.model import AugmentationSwitches, ModelConfig, TaggerModel
from ctiner.pipeline import BatchBuilder, Resources


def make_sentence(words: list[str], labels: list[str] | None = None,
                  sid: str = "s0") -> Sentence:
    labels = labels or ["O"] * len(words)
    return Sentence(
        tokens=tuple(Token(surface=w, gold_label=l) for w, l in zip(words, labels)),
        id=sid,
    )


@pytest.fixture(scope="session")
def smoke():
    return smoke_corpus(30, seed=13)


# Desk-scale configuration the training-level tests share. Dimensions keep
# the documented ratios (four feature channels, two-layer BiLSTM, parallel
# heads) at a size a CPU can memorize quickly.
DESK_FEATURES = MixedFeatureConfig(
    word_dim=48, char_emb_dim=16, morph_dim=16, pos_pretrain_dim=16,
    pos_dim=8, component_dim=8, fused_dim=96, max_word_chars=20,
)
DESK_ENCODER = EncoderConfig(
    input_dim=96, lstm_hidden=96, lstm_layers=2, n_heads=4, head_dim=48,
    locked_dropout=0.0,
)
DESK_INTERNAL_DIM = 192
DESK_STUB_DIM = 16


@pytest.fixture(scope="session")
def desk_resources(smoke):
    """Fully materialized resources for the smoke corpus at desk scale."""
    vocab = build_vocab(smoke)
    pos_model = pretrain_pos_embeddings(
        [s.pos_tags for s in smoke.sentences], dim=16, epochs=10, seed=3
    )
    domain = train_domain_embeddings(
        [s.surfaces for s in smoke.sentences],
        CbowConfig(dim=DESK_INTERNAL_DIM, window=3, min_count=2, epochs=60,
                   initial_lr=0.1, seed=5),
    )
    cache = knn_neighbors(domain, 3)
    word_matrix, _ = WordEmbeddingTable(dim=48, seed=11).matrix_for(vocab)
    return Resources(
        vocab=vocab,
        labels=smoke.bio_labels,
        word_matrix=word_matrix,
        pos_matrix=pos_embedding_matrix(vocab, pos_model),
        domain_model=domain,
        neighbor_cache=cache,
        provider=StubProvider(dim=DESK_STUB_DIM, seed=2),
    )


@pytest.fixture(scope="session")
def desk_model_config(desk_resources):
    return ModelConfig(
        features=DESK_FEATURES,
        encoder=DESK_ENCODER,
        internal_dim=DESK_INTERNAL_DIM,
        external_dim=DESK_STUB_DIM,
        n_labels=len(desk_resources.labels),
    )


# ---------------------------------------------------------------------------
# 8-dim miniature in float64 for gradient checking.

MINI_FEATURES = MixedFeatureConfig(
    word_dim=3, char_emb_dim=2, morph_dim=2, char_kernel=3, max_word_chars=6,
    pos_pretrain_dim=2, pos_dim=2, component_dim=8, fused_dim=8,
)
MINI_ENCODER = EncoderConfig(
    input_dim=8, lstm_hidden=4, lstm_layers=2, n_heads=2, head_dim=4,
    locked_dropout=0.0,
)


def build_miniature(
    switches: AugmentationSwitches, seed: int = 0
) -> tuple[TaggerModel, BatchBuilder, "SentenceBatch"]:
    """Tiny float64 model + one built batch, for finite-difference checks."""
    sentences = [
        make_sentence(["Alpha", "hit", "web", "hosts"],
                      ["B-X", "O", "B-Y", "I-Y"], "m0"),
        make_sentence(["they", "hit", "Alpha"], ["O", "O", "B-X"], "m1"),
    ]
    corpus = LabeledCorpus(sentences=sentences, label_inventory={"X", "Y"})
    vocab = build_vocab(corpus)

    rng = np.random.default_rng(seed)
    words = sorted({w for s in sentences for w in s.surfaces})
    domain = EmbeddingModel(
        words=words, vectors=rng.normal(size=(len(words), 8)), meta={}
    )
    cache = knn_neighbors(domain, 2)
    resources = Resources(
        vocab=vocab,
        labels=["O", "B-X", "I-X", "B-Y", "I-Y"],
        domain_model=domain,
        neighbor_cache=cache,
        provider=StubProvider(dim=8, seed=seed),
    )

    config = ModelConfig(
        features=MINI_FEATURES,
        encoder=MINI_ENCODER,
        internal_dim=8,
        external_dim=8,
        n_labels=len(resources.labels),
    )
    torch.manual_seed(seed)
    model = TaggerModel(config, switches, vocab).double()
    model.eval()
    builder = BatchBuilder(
        resources, MINI_FEATURES, switches, dtype=torch.float64
    )
    batch = builder.build(sentences)
    return model, builder, batch
