"""Loading, validation, splitting and indexing of BIO-labeled CTI corpora."""
from __future__ import annotations

import json
import random
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

__all__ = [
    "EntitySpan",
    "Token",
    "Sentence",
    "LabeledCorpus",
    "Vocabulary",
    "CorpusError",
    "DATASET_ENTITY_TYPES",
    "PAD", "UNK",
    "repair_bio",
    "load_conll",
    "split_corpus",
    "build_vocab",
    "extract_entities",
    "spans_to_bio",
    "write_split_manifest",
    "read_split_manifest",
    "write_conll",
    "flatten_malwaretextdb",
]

PAD = "<pad>"
UNK = "<unk>"

_BIO_RE = re.compile(r"^(O|[BI]-\S+)$")

# Expected entity-type inventories for the two supported public corpora.
DATASET_ENTITY_TYPES = {
    "dnrti": {
        "HackOrg", "OffAct", "SamFile", "SecTeam", "Tool", "Time", "Purp",
        "Area", "Idus", "Org", "Way", "Exp", "Features",
    },
    "malwaretextdb": {"Action", "Entity", "Modifier"},
}


class CorpusError(ValueError):
    """Raised for unreadable, empty, or malformed corpus files."""


@dataclass(frozen=True)
class EntitySpan:
    """A typed entity occupying tokens start..end (inclusive)."""

    type: str
    start: int
    end: int
    sentence_id: str = ""

    def __post_init__(self):
        if not (0 <= self.start <= self.end):
            raise ValueError(f"bad span bounds ({self.start}, {self.end})")


@dataclass(frozen=True)
class Token:
    surface: str
    gold_label: str = "O"
    pos_tag: str = ""

    def __post_init__(self):
        if not self.surface:
            raise ValueError("token surface must be non-empty")
        if not _BIO_RE.match(self.gold_label):
            raise ValueError(f"malformed BIO label {self.gold_label!r}")


@dataclass(frozen=True)
class Sentence:
    tokens: tuple[Token, ...]
    id: str

    def __post_init__(self):
        if len(self.tokens) == 0:
            raise ValueError("sentence must contain at least one token")

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def surfaces(self) -> list[str]:
        return [t.surface for t in self.tokens]

    @property
    def labels(self) -> list[str]:
        return [t.gold_label for t in self.tokens]

    @property
    def pos_tags(self) -> list[str]:
        return [t.pos_tag for t in self.tokens]


@dataclass
class LabeledCorpus:
    sentences: list[Sentence]
    label_inventory: set[str]
    split: str = "all"

    def __len__(self) -> int:
        return len(self.sentences)

    def entity_count(self) -> int:
        return sum(len(extract_entities(s.labels, s.id)) for s in self.sentences)

    @property
    def bio_labels(self) -> list[str]:
        """Full BIO label set: O plus B-/I- for every entity type, sorted."""
        labels = ["O"]
        for t in sorted(self.label_inventory):
            labels.append(f"B-{t}")
            labels.append(f"I-{t}")
        return labels


def repair_bio(labels: list[str], strict: bool = False) -> list[str]:
    """Rewrite I-T labels with no legal predecessor to B-T.

    With ``strict=True`` an illegal I-T raises instead. Public CTI corpora
    contain scheme noise, so lenient repair is the default.
    """
    repaired: list[str] = []
    prev = "O"
    for i, lab in enumerate(labels):
        if not _BIO_RE.match(lab):
            raise CorpusError(f"malformed BIO label {lab!r} at position {i}")
        if lab.startswith("I-"):
            etype = lab[2:]
            legal = prev in (f"B-{etype}", f"I-{etype}")
            if not legal:
                if strict:
                    raise CorpusError(
                        f"illegal {lab} at position {i} (follows {prev})"
                    )
                lab = f"B-{etype}"
        repaired.append(lab)
        prev = lab
    return repaired


def load_conll(
    path: str | Path,
    scheme: str = "",
    strict: bool = False,
) -> LabeledCorpus:
    """Load a whitespace-separated CoNLL-style file.

    Each non-blank line holds ``surface [pos ...] label`` (label last, POS
    taken from column 2 when three or more columns are present); blank lines
    separate sentences. ``scheme`` names a known dataset ("dnrti",
    "malwaretextdb") whose entity types are enforced when ``strict`` is set.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise CorpusError(f"cannot read corpus file {path}: {exc}") from exc

    known_types = DATASET_ENTITY_TYPES.get(scheme.lower()) if scheme else None

    sentences: list[Sentence] = []
    inventory: set[str] = set()
    cur_surfaces: list[str] = []
    cur_pos: list[str] = []
    cur_labels: list[str] = []

    def flush():
        if not cur_surfaces:
            return
        labels = repair_bio(cur_labels, strict=strict)
        toks = tuple(
            Token(surface=s, gold_label=l, pos_tag=p)
            for s, l, p in zip(cur_surfaces, labels, cur_pos)
        )
        sentences.append(Sentence(tokens=toks, id=f"s{len(sentences):06d}"))
        cur_surfaces.clear()
        cur_pos.clear()
        cur_labels.clear()

    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped:
            flush()
            continue
        cols = stripped.split()
        if len(cols) < 2:
            raise CorpusError(f"{path}:{lineno}: expected >= 2 columns, got {line!r}")
        surface, label = cols[0], cols[-1]
        pos = cols[1] if len(cols) >= 3 else ""
        if not _BIO_RE.match(label):
            raise CorpusError(f"{path}:{lineno}: malformed label {label!r}")
        if label != "O":
            etype = label[2:]
            if known_types is not None and strict and etype not in known_types:
                raise CorpusError(
                    f"{path}:{lineno}: entity type {etype!r} not in the "
                    f"{scheme} inventory"
                )
            inventory.add(etype)
        cur_surfaces.append(surface)
        cur_pos.append(pos)
        cur_labels.append(label)
    flush()

    if not sentences:
        raise CorpusError(f"no sentences in {path}")
    return LabeledCorpus(sentences=sentences, label_inventory=inventory)


def split_corpus(
    corpus: LabeledCorpus,
    ratios: tuple[float, float, float] = (0.70, 0.15, 0.15),
    seed: int = 0,
) -> tuple[LabeledCorpus, LabeledCorpus, LabeledCorpus]:
    """Random sentence-level partition into (train, valid, test).

    Sizes are floors of ``n * ratio``; leftover sentences go to the parts
    with the largest fractional remainder, ties resolved in train, valid,
    test order. Deterministic for a fixed seed.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {ratios}")
    n = len(corpus.sentences)
    if n < 3:
        raise CorpusError(f"corpus too small to split ({n} sentences)")

    exact = [n * r for r in ratios]
    sizes = [int(x) for x in exact]
    leftovers = n - sum(sizes)
    by_remainder = sorted(range(3), key=lambda i: (-(exact[i] - sizes[i]), i))
    for i in range(leftovers):
        sizes[by_remainder[i % 3]] += 1

    order = list(range(n))
    random.Random(seed).shuffle(order)
    bounds = (sizes[0], sizes[0] + sizes[1])
    picks = (
        sorted(order[: bounds[0]]),
        sorted(order[bounds[0]: bounds[1]]),
        sorted(order[bounds[1]:]),
    )
    names = ("train", "valid", "test")
    return tuple(
        LabeledCorpus(
            sentences=[corpus.sentences[i] for i in pick],
            label_inventory=set(corpus.label_inventory),
            split=name,
        )
        for pick, name in zip(picks, names)
    )


@dataclass
class Vocabulary:
    """Word/char/POS symbol tables with index 0 = padding, index 1 = unknown."""

    word_to_index: dict[str, int] = field(default_factory=dict)
    char_to_index: dict[str, int] = field(default_factory=dict)
    pos_to_index: dict[str, int] = field(default_factory=dict)
    word_counts: Counter = field(default_factory=Counter)

    RESERVED = (PAD, UNK)

    @property
    def n_words(self) -> int:
        return len(self.word_to_index)

    @property
    def n_chars(self) -> int:
        return len(self.char_to_index)

    @property
    def n_pos(self) -> int:
        return len(self.pos_to_index)

    def word_index(self, word: str) -> int:
        return self.word_to_index.get(word, self.word_to_index[UNK])

    def char_index(self, ch: str) -> int:
        return self.char_to_index.get(ch, self.char_to_index[UNK])

    def pos_index(self, tag: str) -> int:
        return self.pos_to_index.get(tag, self.pos_to_index[UNK])

    def to_dict(self) -> dict:
        return {
            "word_to_index": dict(self.word_to_index),
            "char_to_index": dict(self.char_to_index),
            "pos_to_index": dict(self.pos_to_index),
            "word_counts": dict(self.word_counts),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Vocabulary":
        return cls(
            word_to_index=dict(d["word_to_index"]),
            char_to_index=dict(d["char_to_index"]),
            pos_to_index=dict(d["pos_to_index"]),
            word_counts=Counter(d.get("word_counts", {})),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_dict(), ensure_ascii=False, indent=1),
            encoding="utf-8",
        )

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _indexed(symbols: list[str]) -> dict[str, int]:
    table = {PAD: 0, UNK: 1}
    for s in symbols:
        if s not in table:
            table[s] = len(table)
    return table


def build_vocab(train: LabeledCorpus, min_count: int = 1) -> Vocabulary:
    """Index every train word with frequency >= min_count, all chars, all POS."""
    if not train.sentences:
        raise CorpusError("cannot build a vocabulary from an empty corpus")
    counts: Counter = Counter()
    chars: list[str] = []
    pos_tags: list[str] = []
    seen_chars: set[str] = set()
    seen_pos: set[str] = set()
    for sent in train.sentences:
        for tok in sent.tokens:
            counts[tok.surface] += 1
            for ch in tok.surface:
                if ch not in seen_chars:
                    seen_chars.add(ch)
                    chars.append(ch)
            if tok.pos_tag and tok.pos_tag not in seen_pos:
                seen_pos.add(tok.pos_tag)
                pos_tags.append(tok.pos_tag)

    words = [w for w, c in counts.items() if c >= min_count]
    return Vocabulary(
        word_to_index=_indexed(words),
        char_to_index=_indexed(chars),
        pos_to_index=_indexed(pos_tags),
        word_counts=counts,
    )


def extract_entities(labels: list[str], sentence_id: str = "") -> list[EntitySpan]:
    """Extract maximal typed spans from a BIO sequence.

    An I-T that cannot legally continue the running span is treated as B-T
    (the lenient repair applied at load time); a fresh B always starts a new
    span, so adjacent B-T B-T yields two spans.
    """
    spans: list[EntitySpan] = []
    start = -1
    etype = ""
    for i, lab in enumerate(labels):
        if lab == "O":
            if start >= 0:
                spans.append(EntitySpan(etype, start, i - 1, sentence_id))
                start = -1
            continue
        prefix, t = lab[0], lab[2:]
        continues = prefix == "I" and start >= 0 and t == etype
        if not continues:
            if start >= 0:
                spans.append(EntitySpan(etype, start, i - 1, sentence_id))
            start, etype = i, t
    if start >= 0:
        spans.append(EntitySpan(etype, start, len(labels) - 1, sentence_id))
    return spans


def spans_to_bio(spans: list[EntitySpan], length: int) -> list[str]:
    """Encode non-overlapping spans back into a BIO sequence of ``length``."""
    labels = ["O"] * length
    for span in sorted(spans, key=lambda s: s.start):
        if span.end >= length:
            raise ValueError(f"span {span} exceeds sentence length {length}")
        if any(labels[i] != "O" for i in range(span.start, span.end + 1)):
            raise ValueError(f"span {span} overlaps a previous span")
        labels[span.start] = f"B-{span.type}"
        for i in range(span.start + 1, span.end + 1):
            labels[i] = f"I-{span.type}"
    return labels


def write_split_manifest(
    path: str | Path,
    train: LabeledCorpus,
    valid: LabeledCorpus,
    test: LabeledCorpus,
) -> None:
    manifest = {
        split.split: [s.id for s in split.sentences]
        for split in (train, valid, test)
    }
    Path(path).write_text(json.dumps(manifest, indent=1), encoding="utf-8")


def read_split_manifest(
    path: str | Path, corpus: LabeledCorpus
) -> tuple[LabeledCorpus, LabeledCorpus, LabeledCorpus]:
    manifest = json.loads(Path(path).read_text(encoding="utf-8"))
    by_id = {s.id: s for s in corpus.sentences}
    out = []
    for name in ("train", "valid", "test"):
        missing = [i for i in manifest[name] if i not in by_id]
        if missing:
            raise CorpusError(f"manifest ids not in corpus: {missing[:5]}")
        out.append(
            LabeledCorpus(
                sentences=[by_id[i] for i in manifest[name]],
                label_inventory=set(corpus.label_inventory),
                split=name,
            )
        )
    return tuple(out)


def write_conll(corpus: LabeledCorpus, path: str | Path, with_pos: bool = True) -> None:
    """Write the corpus in the whitespace-separated format load_conll reads."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for sent in corpus.sentences:
            for tok in sent.tokens:
                if with_pos and tok.pos_tag:
                    fh.write(f"{tok.surface} {tok.pos_tag} {tok.gold_label}\n")
                else:
                    fh.write(f"{tok.surface} {tok.gold_label}\n")
            fh.write("\n")


def flatten_malwaretextdb(annotation_dir: str | Path, out_path: str | Path) -> None:
    """Convert raw MalwareTextDB brat-style annotations to two-column BIO.

    The released database ships plain-text APT reports with standoff ``.ann``
    files. Flattening proceeds per report: tokenize each sentence on
    whitespace, map every annotated character interval to the covered token
    range, emit B-<type> for the first covered token and I-<type> for the
    rest, O elsewhere, and separate sentences with blank lines. Token
    intervals that cross sentence boundaries are clipped to the sentence.

    Only pre-flattened files are consumed by this package; run the official
    release tooling or apply the recipe above, then load the result with
    ``load_conll(path, scheme="malwaretextdb")``.
    """
    raise NotImplementedError(
        "flattening raw MalwareTextDB annotations is documented here but not "
        "performed; supply a pre-flattened two-column BIO file"
    )
