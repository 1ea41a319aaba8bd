"""Mixed feature channels: word/OOV table, char CNN, POS CBOW, components."""
from __future__ import annotations

import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from ctiner.corpus import LabeledCorpus, build_vocab
from ctiner.features import (
    COMPONENT_CLASSES,
    CharCNN,
    ConfigurationError,
    MixedFeatureConfig,
    MixedFeatureEmbedder,
    RuleBasedPosTagger,
    WordEmbeddingTable,
    classify_component,
    component_one_hot,
    pos_embedding_matrix,
    pretrain_pos_embeddings,
)

from conftest import make_sentence


class TestWordEmbeddingTable:
    def test_oov_bound_value(self):
        table = WordEmbeddingTable(dim=50)
        assert table.oov_bound == pytest.approx(0.2449489742783178, abs=1e-12)
        assert table.oov_bound == pytest.approx(math.sqrt(3.0 / 50))

    def test_known_word_exact(self):
        vec = np.linspace(-1, 1, 50)
        table = WordEmbeddingTable(dim=50, pretrained={"apple": vec})
        assert np.array_equal(table.lookup("apple"), vec)
        assert table.provenance("apple") == "pretrained"

    def test_lowercase_fallback(self):
        vec = np.ones(50)
        table = WordEmbeddingTable(dim=50, pretrained={"apple": vec})
        assert np.array_equal(table.lookup("Apple"), vec)

    def test_oov_cached(self):
        table = WordEmbeddingTable(dim=50, seed=4)
        first = table.lookup("zxcvq")
        second = table.lookup("zxcvq")
        assert np.array_equal(first, second)
        assert table.provenance("zxcvq") == "oov-random"

    def test_oov_strictly_inside_bound(self):
        table = WordEmbeddingTable(dim=50, seed=1)
        bound = table.oov_bound
        for i in range(500):
            vec = table.lookup(f"word{i}")
            assert np.all(vec > -bound)
            assert np.all(vec < bound)

    def test_matrix_for_alignment(self, smoke):
        vocab = build_vocab(smoke)
        table = WordEmbeddingTable(dim=50, seed=0)
        matrix, provenance = table.matrix_for(vocab)
        assert matrix.shape == (vocab.n_words, 50)
        assert len(provenance) == vocab.n_words
        idx = vocab.word_to_index["APT19"]
        assert np.array_equal(matrix[idx], table.lookup("APT19"))

    def test_dim_mismatch_rejected(self):
        with pytest.raises(ConfigurationError):
            WordEmbeddingTable(dim=50, pretrained={"x": np.zeros(10)})


class TestClassifyComponent:
    @pytest.mark.parametrize(
        "word,expected",
        [
            ("127", "allNum"),
            ("ABC", "allUpper"),
            ("A", "allUpper"),
            ("abc", "allLower"),
            ("Apple", "upperInit"),
            ("a1234", "mainNum"),
            ("PE800BmcA06.exe", "containNum"),
            ("Ab1", "containNum"),
            ("-", "other"),
            ("ABC-DEF", "allUpper"),
            ("@#", "other"),
        ],
    )
    def test_examples(self, word, expected):
        assert classify_component(word) == expected

    def test_digit_ratio_boundary(self):
        # exactly half digits is not "mainly numeric"
        assert classify_component("a1b2") == "containNum"
        assert classify_component("a1b23") == "mainNum"

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            classify_component("")

    @given(st.text(min_size=1, max_size=24))
    @settings(max_examples=300, deadline=None)
    def test_total_and_deterministic(self, word):
        cls = classify_component(word)
        assert cls in COMPONENT_CLASSES
        assert classify_component(word) == cls

    def test_one_hot(self):
        vec = component_one_hot("Apple")
        assert vec.shape == (8,)
        assert vec.sum() == 1.0
        assert vec[COMPONENT_CLASSES.index("upperInit")] == 1.0

    def test_one_hot_padding_slot(self):
        vec = component_one_hot(None)
        assert vec[7] == 1.0
        assert vec.sum() == 1.0


class TestCharCNN:
    def config(self, **kw):
        base = dict(
            word_dim=8, char_emb_dim=6, morph_dim=30, char_kernel=3,
            max_word_chars=20, pos_pretrain_dim=4, pos_dim=4,
            component_dim=8, fused_dim=16,
        )
        base.update(kw)
        return MixedFeatureConfig(**base)

    def encode(self, cnn, words, vocab_map, max_chars=20):
        idx = torch.zeros(len(words), max_chars, dtype=torch.long)
        for i, w in enumerate(words):
            for c, ch in enumerate(w[:max_chars]):
                idx[i, c] = vocab_map[ch]
        return cnn(idx)

    def test_fixed_output_dim(self):
        torch.manual_seed(0)
        cnn = CharCNN(30, self.config()).eval()
        vocab_map = {ch: i + 2 for i, ch in enumerate("abcdefghijklmnopq")}
        out = self.encode(cnn, ["abc", "abcdefghijklmnopq"], vocab_map)
        assert out.shape == (2, 30)

    def test_zero_parameters_zero_output(self):
        cnn = CharCNN(10, self.config()).eval()
        for p in cnn.parameters():
            torch.nn.init.zeros_(p)
        out = self.encode(cnn, ["abc"], {"a": 2, "b": 3, "c": 4})
        assert torch.all(out == 0)

    def test_empty_word_zero_vector(self):
        torch.manual_seed(0)
        cnn = CharCNN(10, self.config()).eval()
        out = cnn(torch.zeros(1, 20, dtype=torch.long))
        assert torch.all(out == 0)

    def test_char_index_permutation_invariance(self):
        torch.manual_seed(3)
        config = self.config()
        cnn = CharCNN(10, config).eval()
        vocab_map = {"a": 2, "b": 3, "c": 4}
        before = self.encode(cnn, ["abcba", "cab"], vocab_map)

        # permute the non-reserved rows and remap indices consistently
        perm = {2: 4, 3: 2, 4: 3}
        with torch.no_grad():
            weight = cnn.emb.weight.clone()
            for old, new in perm.items():
                cnn.emb.weight[new] = weight[old]
        remapped = {ch: perm[i] for ch, i in vocab_map.items()}
        after = self.encode(cnn, ["abcba", "cab"], remapped)
        assert torch.allclose(before, after, atol=1e-6)

    def test_output_dim_constant_across_lengths(self):
        torch.manual_seed(1)
        cnn = CharCNN(40, self.config()).eval()
        vocab_map = {ch: i + 2 for i, ch in enumerate("abcdefghijklmnopqrstuvwxyz")}
        for n in range(1, 21):
            out = self.encode(cnn, ["a" * n], vocab_map)
            assert out.shape == (1, 30)


class TestPosPretraining:
    def make_sequences(self, tags, n=40):
        return [[tags[i % len(tags)], tags[(i + 1) % len(tags)], tags[(i + 2) % len(tags)]]
                for i in range(n)]

    def test_table_rows(self):
        tags = [f"T{i}" for i in range(17)]
        model = pretrain_pos_embeddings(self.make_sequences(tags), dim=8, epochs=3)
        assert len(model) == 17
        assert model.dim == 8

    def test_reserved_rows_in_matrix(self, smoke):
        vocab = build_vocab(smoke)
        tags = sorted(vocab.pos_to_index)[2:]
        model = pretrain_pos_embeddings(self.make_sequences(tags), dim=8, epochs=3)
        matrix = pos_embedding_matrix(vocab, model)
        assert matrix.shape == (vocab.n_pos, 8)
        assert np.array_equal(matrix[0], np.zeros(8))  # padding row

    def test_unseen_tag_uses_unknown_row(self, smoke):
        vocab = build_vocab(smoke)
        model = pretrain_pos_embeddings(
            self.make_sequences(sorted(vocab.pos_to_index)[2:]), dim=8, epochs=3
        )
        matrix = pos_embedding_matrix(vocab, model)
        assert vocab.pos_index("NEVERSEEN") == 1
        assert not np.array_equal(matrix[1], np.zeros(8))

    def test_clique_corpus_cosine_ordering(self):
        # Two disjoint tag cliques: a tag must end nearer to the tags it
        # co-occurs with than to tags it never meets. Light training: long
        # training on a degenerate 8-tag corpus polarizes the geometry.
        import itertools

        a = [f"A{i}" for i in range(4)]
        b = [f"B{i}" for i in range(4)]
        seqs = []
        for combo in itertools.permutations(range(4), 3):
            seqs.append([a[i] for i in combo])
            seqs.append([b[i] for i in combo])
        model = pretrain_pos_embeddings(seqs * 4, dim=16, epochs=5, seed=2)

        def cos(x, y):
            vx, vy = model.vector(x), model.vector(y)
            return float(vx @ vy / (np.linalg.norm(vx) * np.linalg.norm(vy)))

        within = min(cos("A0", other) for other in a[1:])
        across = max(cos("A0", other) for other in b)
        assert within > across

    def test_too_few_tags(self):
        with pytest.raises(ValueError, match="2 distinct"):
            pretrain_pos_embeddings([["NN", "NN"]], dim=4)


class TestRuleBasedPosTagger:
    def test_basic_tags(self):
        tagger = RuleBasedPosTagger()
        tags = tagger.tag(["The", "attackers", "used", "Mimikatz", "in", "2020", "."])
        assert tags[0] == "DT"
        assert tags[3] == "NNP"
        assert tags[4] == "IN"
        assert tags[5] == "CD"
        assert tags[6] == "SYM"

    def test_one_tag_per_word(self):
        tagger = RuleBasedPosTagger()
        words = ["a", "quick", "scan"]
        assert len(tagger.tag(words)) == len(words)


class TestMixedFeatureEmbedder:
    def test_paper_dims_concat_98(self):
        config = MixedFeatureConfig()
        assert config.concat_dim == 98
        assert config.fused_dim == 128

    def build(self, smoke, config=None):
        vocab = build_vocab(smoke)
        config = config or MixedFeatureConfig(
            word_dim=6, char_emb_dim=4, morph_dim=4, pos_pretrain_dim=4,
            pos_dim=3, component_dim=8, fused_dim=10, max_word_chars=12,
        )
        torch.manual_seed(0)
        return MixedFeatureEmbedder(config, vocab), vocab, config

    def batch_inputs(self, smoke, vocab, config):
        from ctiner.model import AugmentationSwitches
        from ctiner.pipeline import BatchBuilder, Resources

        res = Resources(vocab=vocab, labels=smoke.bio_labels)
        builder = BatchBuilder(res, config, AugmentationSwitches())
        batch = builder.build(smoke.sentences[:4])
        return batch

    def test_output_shape(self, smoke):
        embedder, vocab, config = self.build(smoke)
        batch = self.batch_inputs(smoke, vocab, config)
        embedder.eval()
        out = embedder(batch.word_idx, batch.char_idx, batch.pos_idx, batch.component)
        assert out.shape == (4, batch.word_idx.shape[1], config.fused_dim)

    def test_zero_fusion_matrix_zero_output(self, smoke):
        embedder, vocab, config = self.build(smoke)
        with torch.no_grad():
            embedder.fuse.weight.zero_()
        batch = self.batch_inputs(smoke, vocab, config)
        embedder.eval()
        out = embedder(batch.word_idx, batch.char_idx, batch.pos_idx, batch.component)
        assert torch.all(out == 0)

    def test_linear_in_fusion_matrix(self, smoke):
        embedder, vocab, config = self.build(smoke)
        batch = self.batch_inputs(smoke, vocab, config)
        embedder.eval()
        with torch.no_grad():
            one = embedder(
                batch.word_idx, batch.char_idx, batch.pos_idx, batch.component
            )
            embedder.fuse.weight.mul_(2.0)
            two = embedder(
                batch.word_idx, batch.char_idx, batch.pos_idx, batch.component
            )
        assert torch.allclose(two, 2.0 * one, atol=1e-5)

    def test_shape_mismatch_is_startup_error(self, smoke):
        vocab = build_vocab(smoke)
        config = MixedFeatureConfig(
            word_dim=6, char_emb_dim=4, morph_dim=4, pos_pretrain_dim=4,
            pos_dim=3, component_dim=8, fused_dim=10,
        )
        with pytest.raises(ConfigurationError):
            MixedFeatureEmbedder(config, vocab, word_matrix=np.zeros((3, 6)))

    def test_component_dim_must_fit_classes(self):
        with pytest.raises(ConfigurationError):
            MixedFeatureConfig(component_dim=7).validate()
