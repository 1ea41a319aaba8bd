"""Command-line entry points for reproducible corpus-to-metrics runs.

Artifacts live under the configured output directory; each command checks
for its upstream artifacts and, when one is missing, names the exact
command that produces it. Exit codes: 0 success, 1 usage error, 2 data
error, 3 numeric failure.
"""
from __future__ import annotations

import dataclasses
import json
import sys
from pathlib import Path

import click
import numpy as np

from . import corpus as corpus_io
from .cbow import CbowConfig, EmbeddingModel
from .config import RunConfig, default_config, load_config, save_config
from .corpus import CorpusError, LabeledCorpus, Sentence, Token, Vocabulary
from .evaluation import evaluate_labels
from .external import (
    PrecomputedProvider,
    ProviderUnavailableError,
    StubProvider,
    TransformerProvider,
)
from .features import (
    ConfigurationError,
    RuleBasedPosTagger,
    WordEmbeddingTable,
    load_pretrained_words,
    pos_embedding_matrix,
    pretrain_pos_embeddings,
)
from .fixtures import smoke_corpus
from .internal import NeighborCache, knn_neighbors, train_domain_embeddings
from .model import AugmentationSwitches, load_checkpoint, save_checkpoint
from .pipeline import BatchBuilder, Resources
from .training import (
    NumericError,
    corpus_hash,
    derive_seed,
    evaluate_model,
    fit,
    format_ablation_table,
    predict_labels,
    run_ablation,
    write_run_manifest,
)

FIXTURE_CORPUS = "fixture:smoke"


class MissingArtifact(CorpusError):
    """An upstream artifact is absent; the message names the producing command."""


def _require(path: Path, producer: str, config_path: str) -> Path:
    if not path.exists():
        raise MissingArtifact(
            f"missing artifact {path}; run: ctiner {producer} --config {config_path}"
        )
    return path


@dataclasses.dataclass
class Workspace:
    config: RunConfig
    config_path: str
    out: Path

    # artifact locations
    @property
    def splits_dir(self) -> Path:
        return self.out / "splits"

    def split_file(self, name: str) -> Path:
        return self.splits_dir / f"{name}.conll"

    @property
    def vocab_file(self) -> Path:
        return self.out / "vocab.json"

    @property
    def manifest_file(self) -> Path:
        return self.out / "split_manifest.json"

    @property
    def pos_vectors(self) -> Path:
        return self.out / "pos_vectors.txt"

    @property
    def domain_vectors(self) -> Path:
        return self.out / "domain_vectors.txt"

    @property
    def neighbors_file(self) -> Path:
        return self.out / "neighbors.txt"

    @property
    def checkpoint_file(self) -> Path:
        return self.out / "checkpoint.pt"

    @property
    def labels_file(self) -> Path:
        return self.out / "labels.json"


def _load_workspace(config_path: str, seed, dataset, out) -> Workspace:
    if config_path and Path(config_path).exists():
        config = load_config(config_path)
    elif config_path:
        raise MissingArtifact(
            f"config file {config_path} not found; write one with: "
            f"ctiner init-config --out {config_path}"
        )
    else:
        config = default_config()
    if seed is not None:
        config.seed = seed
    if dataset:
        config.data = dataclasses.replace(config.data, dataset=dataset)
    if out:
        config.out_dir = out
    ws = Workspace(config=config, config_path=config_path or "<defaults>",
                   out=Path(config.out_dir))
    ws.out.mkdir(parents=True, exist_ok=True)
    return ws


def _load_source_corpus(ws: Workspace) -> LabeledCorpus:
    source = ws.config.data.corpus
    if source == FIXTURE_CORPUS:
        return smoke_corpus(seed=derive_seed(ws.config.seed, "fixture"))
    return corpus_io.load_conll(
        source, scheme=ws.config.data.dataset, strict=ws.config.data.strict_bio
    )


def _load_splits(ws: Workspace) -> tuple[LabeledCorpus, LabeledCorpus, LabeledCorpus]:
    out = []
    for name in ("train", "valid", "test"):
        path = _require(ws.split_file(name), "prepare", ws.config_path)
        part = corpus_io.load_conll(path, scheme=ws.config.data.dataset)
        part.split = name
        out.append(part)
    return tuple(out)


def _build_provider(ws: Workspace):
    ext = ws.config.external
    if not ext.enabled:
        return None
    if ext.provider == "stub":
        return StubProvider(dim=ext.stub_dim, seed=derive_seed(ws.config.seed, "stub"))
    if ext.provider == "precomputed":
        if not ext.precomputed_path:
            raise MissingArtifact(
                "external.provider is 'precomputed' but external.precomputed_path "
                "is empty in the config"
            )
        return PrecomputedProvider(ext.precomputed_path)
    if ext.provider == "transformer":
        return TransformerProvider.from_pretrained(ext.base_model_path)
    raise ConfigurationError(f"unknown external provider {ext.provider!r}")


def _build_resources(
    ws: Workspace,
    switches: AugmentationSwitches,
    vocab: Vocabulary | None = None,
    labels: list[str] | None = None,
    for_training: bool = True,
) -> Resources:
    """Resources for a run; eval/tag reuse the checkpoint's vocab and labels
    and skip the initialization matrices (the weights are already trained)."""
    if vocab is None:
        vocab = Vocabulary.load(_require(ws.vocab_file, "prepare", ws.config_path))
    if labels is None:
        labels = json.loads(
            _require(ws.labels_file, "prepare", ws.config_path).read_text()
        )

    word_matrix = pos_matrix = None
    if for_training:
        pretrained = {}
        if ws.config.data.pretrained_word_vectors:
            pretrained = load_pretrained_words(ws.config.data.pretrained_word_vectors)
        table = WordEmbeddingTable(
            dim=ws.config.features.word_dim,
            pretrained=pretrained,
            seed=derive_seed(ws.config.seed, "word-oov"),
        )
        word_matrix, _ = table.matrix_for(vocab)

        pos_model = EmbeddingModel.load(
            _require(ws.pos_vectors, "pretrain-pos", ws.config_path)
        )
        pos_matrix = pos_embedding_matrix(vocab, pos_model)

    domain_model = neighbor_cache = None
    if switches.internal != "none":
        domain_model = EmbeddingModel.load(
            _require(ws.domain_vectors, "pretrain-domain", ws.config_path)
        )
        neighbor_cache = NeighborCache.load(
            _require(ws.neighbors_file, "precompute-neighbors", ws.config_path)
        )

    return Resources(
        vocab=vocab,
        labels=labels,
        word_matrix=word_matrix,
        pos_matrix=pos_matrix,
        domain_model=domain_model,
        neighbor_cache=neighbor_cache,
        provider=_build_provider(ws),
        pos_tagger=RuleBasedPosTagger(),
    )


_shared_options = [
    click.option("--config", "config_path", default="", help="run config file (YAML)"),
    click.option("--seed", type=int, default=None, help="override the run seed"),
    click.option("--dataset", default="", help="dataset scheme name"),
    click.option("--out", default="", help="override the output directory"),
]


def shared_options(fn):
    for opt in reversed(_shared_options):
        fn = opt(fn)
    return fn


@click.group()
def cli():
    """Trainable NER for cyber-threat-intelligence text."""


@cli.command("init-config")
@click.option("--out", default="ctiner.yaml", help="where to write the config")
def init_config(out):
    """Write a fully populated default config file."""
    save_config(default_config(), out)
    click.echo(f"wrote {out}")


@cli.command()
@shared_options
def prepare(config_path, seed, dataset, out):
    """Split the corpus, build the vocabulary, and write both to disk."""
    ws = _load_workspace(config_path, seed, dataset, out)
    corpus = _load_source_corpus(ws)
    n_entities = corpus.entity_count()
    click.echo(f"loaded {len(corpus)} sentences, {n_entities} entity spans")

    train, valid, test = corpus_io.split_corpus(
        corpus, ws.config.data.ratios, seed=derive_seed(ws.config.seed, "split")
    )
    ws.splits_dir.mkdir(parents=True, exist_ok=True)
    for part in (train, valid, test):
        corpus_io.write_conll(part, ws.split_file(part.split))
        click.echo(f"  {part.split}: {len(part)} sentences")
    corpus_io.write_split_manifest(ws.manifest_file, train, valid, test)

    vocab = corpus_io.build_vocab(train, min_count=ws.config.data.min_count)
    if not vocab.pos_to_index.keys() - set(Vocabulary.RESERVED):
        tagger = RuleBasedPosTagger()
        tags = {t for s in train.sentences for t in tagger.tag(s.surfaces)}
        for tag in sorted(tags):
            vocab.pos_to_index[tag] = len(vocab.pos_to_index)
    vocab.save(ws.vocab_file)
    labels = corpus.bio_labels
    ws.labels_file.write_text(json.dumps(labels, indent=1), encoding="utf-8")
    click.echo(
        f"vocab: {vocab.n_words} words, {vocab.n_chars} chars, {vocab.n_pos} POS tags"
    )


@cli.command("pretrain-pos")
@shared_options
def pretrain_pos(config_path, seed, dataset, out):
    """Train CBOW embeddings over POS-tag sequences from the train split."""
    ws = _load_workspace(config_path, seed, dataset, out)
    train = corpus_io.load_conll(
        _require(ws.split_file("train"), "prepare", ws.config_path)
    )
    tagger = RuleBasedPosTagger()
    sequences = [
        s.pos_tags if all(s.pos_tags) else tagger.tag(s.surfaces)
        for s in train.sentences
    ]
    model = pretrain_pos_embeddings(
        sequences,
        dim=ws.config.features.pos_pretrain_dim,
        window=ws.config.pos_pretrain.window,
        epochs=ws.config.pos_pretrain.epochs,
        seed=derive_seed(ws.config.seed, "pos-cbow"),
    )
    model.save(ws.pos_vectors)
    click.echo(f"wrote {ws.pos_vectors} ({len(model)} tags, dim {model.dim})")


@cli.command("pretrain-domain")
@shared_options
def pretrain_domain(config_path, seed, dataset, out):
    """Train in-domain word embeddings on the unlabeled corpus text."""
    ws = _load_workspace(config_path, seed, dataset, out)
    corpus = _load_source_corpus(ws)
    cfg = ws.config.internal
    model = train_domain_embeddings(
        [s.surfaces for s in corpus.sentences],
        CbowConfig(
            dim=cfg.dim,
            window=cfg.window,
            min_count=cfg.min_count,
            epochs=cfg.epochs,
            seed=derive_seed(ws.config.seed, "domain-cbow"),
        ),
    )
    model.save(ws.domain_vectors)
    click.echo(f"wrote {ws.domain_vectors} ({len(model)} words, dim {model.dim})")


@cli.command("precompute-neighbors")
@shared_options
def precompute_neighbors(config_path, seed, dataset, out):
    """Exact top-K cosine neighbors for every domain-vocabulary word."""
    ws = _load_workspace(config_path, seed, dataset, out)
    model = EmbeddingModel.load(
        _require(ws.domain_vectors, "pretrain-domain", ws.config_path)
    )
    cache = knn_neighbors(model, ws.config.internal.k_neighbors)
    cache.save(ws.neighbors_file)
    click.echo(f"wrote {ws.neighbors_file} (K={cache.k}, {len(model)} words)")


@cli.command()
@shared_options
@click.option("--switches", "switch_text", default="", help="e.g. base+ext+hsa")
def train(config_path, seed, dataset, out, switch_text):
    """Train a model and keep the best-validation checkpoint."""
    ws = _load_workspace(config_path, seed, dataset, out)
    switches = (
        AugmentationSwitches.parse(switch_text) if switch_text else ws.config.switches
    )
    train_c, valid_c, test_c = _load_splits(ws)
    resources = _build_resources(ws, switches)
    model_config = ws.config.model_config(n_labels=len(resources.labels))
    train_config = ws.config.train_config()

    model, builder, result = fit(
        train_c, valid_c, resources, model_config, train_config, switches,
        out_dir=ws.out, log=click.echo,
    )
    meta = {
        "switches": switches.label,
        "best_valid_f1": result.best_valid_f1,
        "best_epoch": result.best_epoch,
    }
    save_checkpoint(ws.checkpoint_file, model, resources.vocab, resources.labels, meta)
    write_run_manifest(
        ws.out / "run_manifest.json",
        config=ws.config.to_dict(),
        switches=switches,
        dataset_hashes={
            "train": corpus_hash(train_c),
            "valid": corpus_hash(valid_c),
            "test": corpus_hash(test_c),
        },
        extra={"best_valid_f1": result.best_valid_f1},
    )
    report = evaluate_model(model, builder, test_c)
    (ws.out / "metrics.json").write_text(
        json.dumps(report.to_records(), indent=1), encoding="utf-8"
    )
    click.echo(f"wrote {ws.checkpoint_file}")
    click.echo(report.format_table())


@cli.command("eval")
@shared_options
@click.option("--split", default="test", type=click.Choice(["train", "valid", "test"]))
@click.option(
    "--predictions", default="", help="score a 'token gold pred' file instead"
)
def eval_cmd(config_path, seed, dataset, out, split, predictions):
    """Strict entity-level metrics for a checkpoint or a predictions file."""
    ws = _load_workspace(config_path, seed, dataset, out)
    if predictions:
        gold, pred = _read_predictions(Path(predictions))
        report = evaluate_labels(gold, pred)
    else:
        model, vocab, labels, _meta = load_checkpoint(
            _require(ws.checkpoint_file, "train", ws.config_path)
        )
        resources = _build_resources(
            ws, model.switches, vocab=vocab, labels=labels, for_training=False
        )
        builder = BatchBuilder(resources, model.config.features, model.switches)
        corpus = corpus_io.load_conll(
            _require(ws.split_file(split), "prepare", ws.config_path),
            scheme=ws.config.data.dataset,
        )
        report = evaluate_model(model, builder, corpus)
    (ws.out / "metrics.json").write_text(
        json.dumps(report.to_records(), indent=1), encoding="utf-8"
    )
    click.echo(report.format_table())


@cli.command()
@shared_options
@click.option("--input", "input_path", default="-", help="text file, one sentence per line")
def tag(config_path, seed, dataset, out, input_path):
    """Label raw text with the trained model: token<TAB>label lines."""
    ws = _load_workspace(config_path, seed, dataset, out)
    model, vocab, labels, _meta = load_checkpoint(
        _require(ws.checkpoint_file, "train", ws.config_path)
    )
    resources = _build_resources(
        ws, model.switches, vocab=vocab, labels=labels, for_training=False
    )
    builder = BatchBuilder(resources, model.config.features, model.switches)

    text = (
        sys.stdin.read()
        if input_path == "-"
        else Path(input_path).read_text(encoding="utf-8")
    )
    tagger = RuleBasedPosTagger()
    sentences = []
    for i, line in enumerate(text.splitlines()):
        words = line.split()
        if not words:
            continue
        tags = tagger.tag(words)
        sentences.append(
            Sentence(
                tokens=tuple(
                    Token(surface=w, gold_label="O", pos_tag=t)
                    for w, t in zip(words, tags)
                ),
                id=f"input{i:06d}",
            )
        )
    if not sentences:
        raise CorpusError("no sentences in the input")
    predicted = predict_labels(model, builder, sentences)
    for sent, labels_row in zip(sentences, predicted):
        for tok, label in zip(sent.tokens, labels_row):
            click.echo(f"{tok.surface}\t{label}")
        click.echo("")


@cli.command()
@shared_options
def ablate(config_path, seed, dataset, out):
    """Train and score the six switch configurations in table order."""
    ws = _load_workspace(config_path, seed, dataset, out)
    train_c, valid_c, test_c = _load_splits(ws)
    # every configuration's artifacts must exist up front
    resources = _build_resources(
        ws, AugmentationSwitches(internal="hsa", external=True)
    )
    model_config = ws.config.model_config(n_labels=len(resources.labels))
    rows = run_ablation(
        train_c, valid_c, test_c, resources, model_config, ws.config.train_config(),
        log=click.echo,
    )
    with (ws.out / "ablation.jsonl").open("w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
    click.echo(format_ablation_table(rows))


def _read_predictions(path: Path) -> tuple[list[list[str]], list[list[str]]]:
    gold: list[list[str]] = []
    pred: list[list[str]] = []
    cur_g: list[str] = []
    cur_p: list[str] = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        stripped = line.strip()
        if not stripped:
            if cur_g:
                gold.append(cur_g)
                pred.append(cur_p)
                cur_g, cur_p = [], []
            continue
        cols = stripped.split()
        if len(cols) < 3:
            raise CorpusError(
                f"{path}:{lineno}: expected 'token gold pred', got {line!r}"
            )
        cur_g.append(cols[-2])
        cur_p.append(cols[-1])
    if cur_g:
        gold.append(cur_g)
        pred.append(cur_p)
    if not gold:
        raise CorpusError(f"no predictions in {path}")
    return gold, pred


def main(argv: list[str] | None = None) -> int:
    """Entry point with the documented exit-code mapping."""
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.ClickException as exc:
        exc.show()
        return 1
    except (ConfigurationError,) as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    except (CorpusError, ProviderUnavailableError, FileNotFoundError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        return 2
    except NumericError as exc:
        click.echo(f"numeric failure: {exc}", err=True)
        return 3


if __name__ == "__main__":
    sys.exit(main())
