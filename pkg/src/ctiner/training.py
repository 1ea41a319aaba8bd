"""End-to-end optimization loop, model selection, and the ablation harness."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import random
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import torch

from .corpus import LabeledCorpus, Sentence
from .evaluation import MetricsReport, evaluate_labels
from .features import ConfigurationError
from .fusion import decode_labels, sequence_loss
from .model import AugmentationSwitches, ModelConfig, TaggerModel
from .pipeline import BatchBuilder, Resources

__all__ = [
    "TrainConfig",
    "NumericError",
    "EpochRecord",
    "TrainResult",
    "derive_seed",
    "default_lr_schedule",
    "train_model",
    "fit",
    "predict_labels",
    "evaluate_model",
    "ABLATION_ORDER",
    "run_ablation",
    "format_ablation_table",
    "corpus_hash",
    "write_run_manifest",
]

# Table row order for the six-configuration comparison.
ABLATION_ORDER = (
    "base",
    "base+ssa",
    "base+hsa",
    "base+ext",
    "base+ext+ssa",
    "base+ext+hsa",
)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    weight_decay: float = 1e-5
    min_lr: float = 5e-5
    lr_decay: float = 1e-5
    batch_size: int = 64
    epochs: int = 200
    grad_clip: float = 5.0
    seed: int = 0
    # "token_mean" rescales the summed cross-entropy by the token count of
    # the batch so the learning rate is insensitive to batch size; "sum"
    # optimizes the raw summed loss.
    loss_reduction: str = "token_mean"

    def validate(self) -> "TrainConfig":
        if self.lr < self.min_lr:
            raise ConfigurationError(
                f"lr {self.lr} must be at least min_lr {self.min_lr}"
            )
        if self.loss_reduction not in ("token_mean", "sum"):
            raise ConfigurationError(
                f"unknown loss_reduction {self.loss_reduction!r}"
            )
        return self


class NumericError(RuntimeError):
    """Non-finite loss; carries the offending batch for diagnosis."""

    def __init__(self, message: str, batch_ids: list[str] | None = None):
        super().__init__(message)
        self.batch_ids = batch_ids or []


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    valid_f1: float
    lr: float
    seconds: float


@dataclass
class TrainResult:
    history: list[EpochRecord]
    best_valid_f1: float
    best_epoch: int

    @property
    def mean_epoch_seconds(self) -> float:
        return sum(r.seconds for r in self.history) / max(len(self.history), 1)


def derive_seed(base_seed: int, phase: str) -> int:
    """Stable per-phase seed derived from the single run seed."""
    digest = hashlib.blake2b(
        f"{base_seed}:{phase}".encode("utf-8"), digest_size=8
    ).digest()
    return int.from_bytes(digest, "little") % (2 ** 31)


def default_lr_schedule(epoch: int, config: TrainConfig) -> float:
    """Per-epoch multiplicative decay floored at the minimum learning rate."""
    return max(config.min_lr, config.lr * (1.0 - config.lr_decay) ** epoch)


def _length_buckets(
    sentences: list[Sentence], batch_size: int
) -> list[list[Sentence]]:
    ordered = sorted(sentences, key=lambda s: (len(s), s.id))
    return [
        ordered[i: i + batch_size] for i in range(0, len(ordered), batch_size)
    ]


def train_model(
    model: TaggerModel,
    builder: BatchBuilder,
    train: LabeledCorpus,
    valid: LabeledCorpus,
    config: TrainConfig,
    schedule: Callable[[int, TrainConfig], float] | None = None,
    out_dir: str | Path | None = None,
    log: Callable[[str], None] | None = None,
) -> TrainResult:
    """Optimize with Adam, select the best-validation checkpoint.

    Batches bucket sentences by length; bucket order reshuffles each epoch
    from the run seed. A non-finite loss aborts with the offending batch
    dumped.
    """
    config.validate()
    schedule = schedule or default_lr_schedule
    torch.manual_seed(derive_seed(config.seed, "train"))
    optimizer = torch.optim.Adam(
        model.parameters(), lr=config.lr, weight_decay=config.weight_decay
    )
    buckets = _length_buckets(train.sentences, config.batch_size)

    history: list[EpochRecord] = []
    best_f1, best_epoch, best_state = -1.0, -1, None
    out_path = Path(out_dir) if out_dir is not None else None
    history_fh = (
        (out_path / "history.jsonl").open("w", encoding="utf-8")
        if out_path is not None
        else None
    )

    try:
        for epoch in range(config.epochs):
            started = time.perf_counter()
            lr = schedule(epoch, config)
            for group in optimizer.param_groups:
                group["lr"] = lr

            model.train()
            order = list(range(len(buckets)))
            random.Random(derive_seed(config.seed, f"epoch-{epoch}")).shuffle(order)
            epoch_loss = 0.0
            epoch_tokens = 0
            for bucket_idx in order:
                sents = buckets[bucket_idx]
                batch = builder.build(sents)
                probs = model(batch)
                loss = sequence_loss(probs, batch.labels, batch.mask)
                n_tokens = int(batch.mask.sum())
                if not torch.isfinite(loss):
                    ids = batch.sentence_ids
                    if out_path is not None:
                        (out_path / "failed_batch.json").write_text(
                            json.dumps(
                                {"epoch": epoch, "loss": str(loss.item()),
                                 "sentence_ids": ids},
                                indent=1,
                            ),
                            encoding="utf-8",
                        )
                    raise NumericError(
                        f"non-finite loss {loss.item()} in epoch {epoch} on "
                        f"sentences {ids[:8]}",
                        batch_ids=ids,
                    )
                objective = loss / n_tokens if config.loss_reduction == "token_mean" else loss
                optimizer.zero_grad()
                objective.backward()
                if config.grad_clip > 0:
                    torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
                optimizer.step()
                epoch_loss += float(loss.detach())
                epoch_tokens += n_tokens

            valid_f1 = evaluate_model(model, builder, valid).f1
            record = EpochRecord(
                epoch=epoch,
                train_loss=epoch_loss / max(epoch_tokens, 1),
                valid_f1=valid_f1,
                lr=lr,
                seconds=time.perf_counter() - started,
            )
            history.append(record)
            if history_fh is not None:
                history_fh.write(json.dumps(dataclasses.asdict(record)) + "\n")
                history_fh.flush()
            if log is not None:
                log(
                    f"epoch {epoch:3d}  loss/token {record.train_loss:.4f}  "
                    f"valid F1 {valid_f1:.4f}  lr {lr:.2e}"
                )
            if valid_f1 > best_f1:
                best_f1, best_epoch = valid_f1, epoch
                best_state = {
                    k: v.detach().clone() for k, v in model.state_dict().items()
                }
    finally:
        if history_fh is not None:
            history_fh.close()

    if best_state is not None:
        model.load_state_dict(best_state)
    model.eval()
    return TrainResult(history=history, best_valid_f1=best_f1, best_epoch=best_epoch)


def fit(
    train: LabeledCorpus,
    valid: LabeledCorpus,
    resources: Resources,
    model_config: ModelConfig,
    train_config: TrainConfig,
    switches: AugmentationSwitches,
    schedule: Callable[[int, TrainConfig], float] | None = None,
    out_dir: str | Path | None = None,
    log: Callable[[str], None] | None = None,
) -> tuple[TaggerModel, BatchBuilder, TrainResult]:
    """Build a model for the switch set and train it, fully seeded.

    ``n_labels`` and the external width are taken from the resources; the
    internal augmentation dim is checked against the domain model.
    """
    config = dataclasses.replace(model_config, n_labels=len(resources.labels))
    if switches.external:
        if resources.provider is None:
            raise ConfigurationError(
                "external augmentation is switched on but the resources carry "
                "no provider"
            )
        config = dataclasses.replace(config, external_dim=resources.provider.dim)
    if switches.internal != "none" and resources.domain_model is not None:
        if resources.domain_model.dim != config.internal_dim:
            raise ConfigurationError(
                f"domain embeddings have dim {resources.domain_model.dim} but "
                f"the model expects {config.internal_dim}"
            )
    torch.manual_seed(derive_seed(train_config.seed, f"model-init-{switches.label}"))
    model = TaggerModel(
        config,
        switches,
        resources.vocab,
        word_matrix=resources.word_matrix,
        pos_matrix=resources.pos_matrix,
    )
    builder = BatchBuilder(resources, config.features, switches)
    result = train_model(
        model, builder, train, valid, train_config,
        schedule=schedule, out_dir=out_dir, log=log,
    )
    return model, builder, result


@torch.no_grad()
def predict_labels(
    model: TaggerModel,
    builder: BatchBuilder,
    sentences: list[Sentence],
    batch_size: int = 64,
) -> list[list[str]]:
    """Decode BIO label sequences for sentences, in their given order."""
    model.eval()
    labels = builder.res.labels
    out: list[list[str]] = []
    for i in range(0, len(sentences), batch_size):
        chunk = sentences[i: i + batch_size]
        batch = builder.build(chunk, with_labels=False)
        picked = decode_labels(model(batch))
        for row, sent in enumerate(chunk):
            out.append([labels[int(picked[row, j])] for j in range(len(sent))])
    return out


def evaluate_model(
    model: TaggerModel,
    builder: BatchBuilder,
    corpus: LabeledCorpus,
    batch_size: int = 64,
) -> MetricsReport:
    pred = predict_labels(model, builder, corpus.sentences, batch_size=batch_size)
    gold = [s.labels for s in corpus.sentences]
    return evaluate_labels(
        gold, pred,
        label_inventory=corpus.label_inventory,
        sentence_ids=[s.id for s in corpus.sentences],
    )


def run_ablation(
    train: LabeledCorpus,
    valid: LabeledCorpus,
    eval_corpus: LabeledCorpus,
    resources: Resources,
    model_config: ModelConfig,
    train_config: TrainConfig,
    switch_sets: tuple[str, ...] = ABLATION_ORDER,
    log: Callable[[str], None] | None = None,
) -> list[dict]:
    """Train one model per switch set, in table row order; report P/R/F1."""
    rows: list[dict] = []
    for switch_text in switch_sets:
        switches = AugmentationSwitches.parse(switch_text)
        model, builder, result = fit(
            train, valid, resources, model_config, train_config, switches
        )
        report = evaluate_model(model, builder, eval_corpus)
        rows.append(
            {
                "switches": switches.label,
                "precision": report.precision,
                "recall": report.recall,
                "f1": report.f1,
                "token_accuracy": report.token_accuracy,
                "best_valid_f1": result.best_valid_f1,
                "mean_epoch_seconds": result.mean_epoch_seconds,
            }
        )
        if log is not None:
            log(
                f"{switches.label:<14} P={report.precision:.4f} "
                f"R={report.recall:.4f} F1={report.f1:.4f}"
            )
    return rows


def format_ablation_table(rows: list[dict]) -> str:
    lines = [f"{'configuration':<16} {'P':>8} {'R':>8} {'F1':>8}"]
    for row in rows:
        lines.append(
            f"{row['switches']:<16} {row['precision']:8.4f} "
            f"{row['recall']:8.4f} {row['f1']:8.4f}"
        )
    return "\n".join(lines)


def corpus_hash(corpus: LabeledCorpus) -> str:
    """Content hash over sentences, labels, and POS columns."""
    h = hashlib.sha256()
    for sent in corpus.sentences:
        for tok in sent.tokens:
            h.update(f"{tok.surface}\x1f{tok.pos_tag}\x1f{tok.gold_label}\x1e".encode())
        h.update(b"\x1d")
    return h.hexdigest()


def write_run_manifest(
    path: str | Path,
    config: dict,
    switches: AugmentationSwitches,
    dataset_hashes: dict[str, str],
    extra: dict | None = None,
) -> None:
    """Everything needed to replay the run: config, switches, data hashes."""
    manifest = {
        "config": config,
        "switches": switches.label,
        "dataset_hashes": dataset_hashes,
        **(extra or {}),
    }
    Path(path).write_text(json.dumps(manifest, indent=1), encoding="utf-8")
