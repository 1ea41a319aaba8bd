"""Small deterministic synthetic corpus for smoke tests and demos.

Sentences follow CTI-flavored templates with entity slots. Every template
slot cycles through its filler pool on its own counter, so each surface
form recurs in every sentence position it can occupy: the corpus survives
the domain-embedding frequency cutoff and is reliably memorizable.
"""
from __future__ import annotations

import random
from collections import Counter

from .corpus import LabeledCorpus, Sentence, Token
from .features import RuleBasedPosTagger

__all__ = ["smoke_corpus"]

_ORGS = [["APT19"], ["Whitefly"], ["Lazarus", "Group"], ["Turla"]]
_TOOLS = [["Mimikatz"], ["Trojan.Nibatad"], ["custom", "malware"], ["PlugX"]]
_ACTS = [["phishing", "attack"], ["data", "theft"], ["espionage"], ["intrusion"]]

# Templates: literal words, or (slot, entity_type) pairs to fill.
_TEMPLATES = [
    ["researchers", "observed", ("org", "HackOrg"), "deploy", ("tool", "Tool"), "."],
    ["the", ("act", "OffAct"), "was", "attributed", "to", ("org", "HackOrg"), "."],
    [("org", "HackOrg"), "used", ("tool", "Tool"), "during", "the", ("act", "OffAct"), "."],
    ["analysts", "linked", ("tool", "Tool"), "samples", "to", ("org", "HackOrg"), "."],
    ["a", "new", ("act", "OffAct"), "campaign", "relied", "on", ("tool", "Tool"), "."],
]

_POOLS = {"org": _ORGS, "tool": _TOOLS, "act": _ACTS}


def smoke_corpus(n_sentences: int = 30, seed: int = 13) -> LabeledCorpus:
    """Balanced synthetic corpus; the seed only shuffles sentence order."""
    tagger = RuleBasedPosTagger()
    sentences: list[Sentence] = []
    turn: Counter = Counter()
    for i in range(n_sentences):
        template_idx = i % len(_TEMPLATES)
        template = _TEMPLATES[template_idx]
        surfaces: list[str] = []
        labels: list[str] = []
        for piece in template:
            if isinstance(piece, str):
                surfaces.append(piece)
                labels.append("O")
            else:
                slot, etype = piece
                pool = _POOLS[slot]
                # offset by template index so slot pairings vary too
                words = pool[(turn[(template_idx, slot)] + template_idx) % len(pool)]
                turn[(template_idx, slot)] += 1
                for j, word in enumerate(words):
                    surfaces.append(word)
                    labels.append(("B-" if j == 0 else "I-") + etype)
        tags = tagger.tag(surfaces)
        tokens = tuple(
            Token(surface=s, gold_label=l, pos_tag=p)
            for s, l, p in zip(surfaces, labels, tags)
        )
        sentences.append(Sentence(tokens=tokens, id=f"s{i:06d}"))
    random.Random(seed).shuffle(sentences)
    return LabeledCorpus(
        sentences=sentences,
        label_inventory={"HackOrg", "Tool", "OffAct"},
        split="all",
    )
