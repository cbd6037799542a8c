"""Template corpus with planted dictionary errors for denoising experiments.

Gold sentences only mention a subset of the entity names; the rest are only
reachable through the dictionary.  A few ordinary words ("traps") are listed
in the dictionary under an entity type, so every distant sentence containing
one is a false positive.  The generator controls which distant sentences
contain traps, which makes the injected set known.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import Dataset, Example, LabelSet, Sentence, Span, tags_from_spans
from .lexicon import AllowedLattice, Dictionary, PhraseList, annotate_corpus

TYPES = ("PER", "LOC", "ORG")

NAMES = {
    "PER": ["adams", "platt", "jones", "maria", "ivan", "chen", "ali"],
    "LOC": ["england", "moldova", "paris", "oslo", "lima", "cairo", "kyoto"],
    "ORG": ["acme", "globex", "initech", "umbrella", "stark", "wayne", "hooli"],
}
# second token of two-token names
SUFFIX = {"PER": "jr", "LOC": "city", "ORG": "corp"}

CONTEXT = [
    "the", "a", "and", "will", "miss", "said", "met", "visited", "from", "to",
    "on", "sunday", "report", "today", "with", "after", "before", "near",
    "about", "new", "team", "cup", "game", "won", "lost", "talks",
]
# non-entity words that a phrase miner would also propose
PHRASE_NOISE = ["report", "team", "cup", "talks"]
# ordinary words wrongly listed in the dictionary
TRAPS = {"may": "PER", "west": "LOC", "union": "ORG", "march": "PER"}


@dataclass
class SyntheticCorpus:
    labels: LabelSet
    gold: Dataset
    distant: Dataset
    distant_truth: Dataset
    dev: Dataset
    test: Dataset
    dictionary: Dictionary
    injected: frozenset
    phrases: PhraseList | None = None

    @property
    def raw_distant(self) -> list[Sentence]:
        return self.distant.sentences


def _mentions(rng, names):
    etype = TYPES[rng.integers(len(TYPES))]
    pool = names[etype]
    name = pool[rng.integers(len(pool))]
    if rng.random() < 0.25:
        return [name, SUFFIX[etype]], etype
    return [name], etype


def _sentence(rng, names, trap: bool | None, trap_rate: float):
    """Tokens and gold spans for one sentence."""
    n_ctx = int(rng.integers(3, 7))
    n_ent = int(rng.integers(1, 3))
    pieces = [([CONTEXT[rng.integers(len(CONTEXT))]], None) for _ in range(n_ctx)]
    for _ in range(n_ent):
        pos = int(rng.integers(len(pieces) + 1))
        pieces.insert(pos, _mentions(rng, names))
    use_trap = rng.random() < trap_rate if trap is None else trap
    if use_trap:
        words = list(TRAPS)
        pos = int(rng.integers(len(pieces) + 1))
        pieces.insert(pos, ([words[rng.integers(len(words))]], None))
    tokens, spans = [], []
    for toks, etype in pieces:
        if etype is not None:
            spans.append(Span(len(tokens), len(tokens) + len(toks), etype))
        tokens.extend(toks)
    return tokens, spans


def _shuffle_trap_types(data: Dataset, labels: LabelSet, rng) -> Dataset:
    """Relabel every matched trap word with an independently drawn type."""
    out = []
    for ex in data:
        masks = list(ex.lattice)
        for i, tok in enumerate(ex.sentence.tokens):
            if tok in TRAPS:
                etype = TYPES[rng.integers(len(TYPES))]
                tag = "S-" + etype if labels.scheme == "BIOES" else "B-" + etype
                masks[i] = 1 << labels.index(tag)
        out.append(Example(ex.sentence, lattice=AllowedLattice(masks), source=ex.source))
    return Dataset(labels, tuple(out))


def make_corpus(
    seed: int = 0,
    n_gold: int = 200,
    n_distant: int = 400,
    n_dev: int = 100,
    n_test: int = 200,
    fp_rate: float = 0.3,
    seen_fraction: float = 0.5,
    dict_coverage: float = 0.8,
    trap_rate: float = 0.2,
    scheme: str = "BIOES",
    trap_types: str = "random",
    mode: str = "default",
    eval_trap_rate: float | None = None,
    phrase_noise: bool = True,
) -> SyntheticCorpus:
    """Build the corpus; ``injected`` holds the ids of planted distant sentences.

    ``trap_rate`` is the share of gold sentences containing a trap word
    (tagged O there); ``eval_trap_rate`` overrides it for dev and test.  With
    ``trap_types="random"`` every distant trap occurrence gets a random type,
    otherwise the dictionary type.  ``phrase_noise`` adds a few ordinary
    words to the phrase list.
    """
    rng = np.random.default_rng(seed)
    labels = LabelSet(TYPES, scheme)
    seen = {}
    for t, pool in NAMES.items():
        order = rng.permutation(len(pool))
        cut = max(1, int(round(seen_fraction * len(pool))))
        seen[t] = [pool[i] for i in order[:cut]]

    eval_rate = trap_rate if eval_trap_rate is None else eval_trap_rate

    def gold_set(count, names, start, rate):
        exs = []
        for i in range(count):
            toks, spans = _sentence(rng, names, None, rate)
            exs.append(Example(Sentence(tuple(toks), start + i), tags_from_spans(spans, len(toks), labels)))
        return Dataset(labels, tuple(exs))

    gold = gold_set(n_gold, seen, 0, trap_rate)
    dev = gold_set(n_dev, NAMES, 0, eval_rate)
    test = gold_set(n_test, NAMES, 0, eval_rate)

    entries = {}
    for t, pool in NAMES.items():
        for name in pool:
            for form in ((name,), (name, SUFFIX[t])):
                if rng.random() < dict_coverage:
                    entries[form] = t
    for word, t in TRAPS.items():
        entries[(word,)] = t
    dictionary = Dictionary(entries)

    n_fp = int(round(fp_rate * n_distant))
    planted = set(rng.choice(n_distant, size=n_fp, replace=False).tolist()) if n_fp else set()
    truth = []
    for i in range(n_distant):
        toks, spans = _sentence(rng, NAMES, i in planted, 0.0)
        truth.append(Example(Sentence(tuple(toks), i), tags_from_spans(spans, len(toks), labels), source="distant"))
    distant_truth = Dataset(labels, tuple(truth))
    phrases = PhraseList(frozenset(
        [(n,) for pool in NAMES.values() for n in pool]
        + [(n, SUFFIX[t]) for t, pool in NAMES.items() for n in pool]
        + ([(w,) for w in PHRASE_NOISE] if phrase_noise else [])
    ))
    distant = annotate_corpus(distant_truth.sentences, dictionary, labels, phrases if mode == "phrase" else None)
    if trap_types == "random":
        distant = _shuffle_trap_types(distant, labels, rng)
    return SyntheticCorpus(labels, gold, distant, distant_truth, dev, test, dictionary, frozenset(planted), phrases)
