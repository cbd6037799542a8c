"""Dictionary-based distant supervision and partial-annotation lattices."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .corpus import (
    SEPARATOR,
    CorpusError,
    Dataset,
    Example,
    LabelSet,
    Sentence,
    Span,
    _blocks,
    tags_from_spans,
)

log = logging.getLogger(__name__)

ALL_TAGS = "*"


def _normalize(tokens: Iterable[str], casefold: bool) -> tuple[str, ...]:
    return tuple(t.casefold() for t in tokens) if casefold else tuple(tokens)


@dataclass(frozen=True)
class Dictionary:
    """Surface form (token tuple) to entity type."""

    entries: dict = field(default_factory=dict)
    casefold: bool = True
    duplicates: int = 0

    def __post_init__(self):
        lengths = [len(k) for k in self.entries]
        if 0 in lengths:
            raise CorpusError("empty dictionary term")
        object.__setattr__(self, "max_len", max(lengths, default=0))

    def __len__(self):
        return len(self.entries)

    def get(self, tokens: Sequence[str]) -> str | None:
        return self.entries.get(_normalize(tokens, self.casefold))

    def types(self) -> list[str]:
        seen = dict.fromkeys(self.entries.values())
        return list(seen)


def load_dictionary(text: str, casefold: bool = True) -> Dictionary:
    """Read ``term<TAB>type`` lines; the first occurrence of a term wins."""
    entries = {}
    duplicates = 0
    for lineno, line in enumerate(text.split("\n"), start=1):
        line = line.rstrip("\r")
        if not line.strip():
            continue
        cols = line.split(SEPARATOR)
        if len(cols) != 2 or not cols[1].strip():
            raise CorpusError(f"dictionary line {lineno}: expected 'term<TAB>type'")
        term = cols[0].split()
        if not term:
            raise CorpusError(f"dictionary line {lineno}: empty term")
        key = _normalize(term, casefold)
        if key in entries:
            duplicates += 1
            continue
        entries[key] = cols[1].strip()
    if duplicates:
        log.warning("dictionary: %d duplicate terms ignored", duplicates)
    return Dictionary(entries, casefold, duplicates)


@dataclass(frozen=True)
class PhraseList:
    phrases: frozenset = frozenset()
    casefold: bool = True

    def __post_init__(self):
        if any(len(p) == 0 for p in self.phrases):
            raise CorpusError("empty phrase")
        object.__setattr__(self, "max_len", max((len(p) for p in self.phrases), default=0))

    def __len__(self):
        return len(self.phrases)

    def __contains__(self, tokens) -> bool:
        return _normalize(tokens, self.casefold) in self.phrases


def load_phrases(text: str, casefold: bool = True) -> PhraseList:
    phrases = set()
    for line in text.split("\n"):
        toks = line.split()
        if toks:
            phrases.add(_normalize(toks, casefold))
    return PhraseList(frozenset(phrases), casefold)


def _greedy(tokens: Sequence[str], max_len: int, lookup) -> list[tuple[int, int, object]]:
    """Left-to-right longest match; ``lookup`` returns a value or None."""
    out = []
    i = 0
    n = len(tokens)
    while i < n:
        for length in range(min(max_len, n - i), 0, -1):
            value = lookup(tokens[i:i + length])
            if value is not None:
                out.append((i, i + length, value))
                i += length
                break
        else:
            i += 1
    return out


def match_spans(sentence: Sentence, dictionary: Dictionary) -> list[Span]:
    """Non-overlapping dictionary matches, greedy longest-first from the left."""
    hits = _greedy(sentence.tokens, dictionary.max_len, dictionary.get)
    return [Span(s, e, t) for s, e, t in hits]


def match_phrases(sentence: Sentence, phrases: PhraseList) -> list[tuple[int, int]]:
    hits = _greedy(sentence.tokens, phrases.max_len, lambda toks: True if toks in phrases else None)
    return [(s, e) for s, e, _ in hits]


class AllowedLattice(tuple):
    """Per-position bitmask of permitted tag indices.

    A plain tuple of ints so lattices compare and hash by value.
    """

    def __new__(cls, masks: Iterable[int]):
        masks = tuple(int(m) for m in masks)
        if any(m <= 0 for m in masks):
            raise CorpusError("empty allowed set in lattice")
        return super().__new__(cls, masks)

    @classmethod
    def full(cls, n: int, k: int) -> "AllowedLattice":
        return cls([(1 << k) - 1] * n)

    @classmethod
    def from_tags(cls, tag_ids: Iterable[int]) -> "AllowedLattice":
        return cls(1 << t for t in tag_ids)

    @classmethod
    def from_sets(cls, sets: Iterable[Iterable[int]]) -> "AllowedLattice":
        return cls(sum(1 << t for t in set(s)) for s in sets)

    def sets(self) -> list[list[int]]:
        return [[t for t in range(m.bit_length()) if m >> t & 1] for m in self]

    def mask(self, k: int) -> np.ndarray:
        """Boolean ``n x k`` matrix of allowed tags."""
        bits = np.arange(k)
        arr = (np.asarray(self, dtype=np.int64)[:, None] >> bits) & 1
        if (np.asarray(self, dtype=np.int64) >> k).any():
            raise CorpusError(f"lattice refers to tags beyond k={k}")
        return arr.astype(bool)

    def is_singleton(self) -> list[bool]:
        return [m & (m - 1) == 0 for m in self]

    def is_full(self, k: int) -> bool:
        return all(m == (1 << k) - 1 for m in self)


def distant_annotate(
    sentence: Sentence,
    dictionary: Dictionary,
    labels: LabelSet,
    phrases: PhraseList | None = None,
) -> AllowedLattice:
    """Dictionary matches become singleton tag sets.

    Other positions get every tag, or, when ``phrases`` is given, every tag
    only inside phrase matches and ``{O}`` elsewhere.
    """
    n = len(sentence)
    k = len(labels)
    full = (1 << k) - 1
    spans = [s for s in match_spans(sentence, dictionary) if s.type in labels.entity_types]
    tags = tags_from_spans(spans, n, labels)
    covered = [False] * n
    for s in spans:
        for i in range(s.start, s.end):
            covered[i] = True

    if phrases is None:
        open_ = [not c for c in covered]
    else:
        open_ = [False] * n
        for s, e in match_phrases(sentence, phrases):
            for i in range(s, e):
                open_[i] = not covered[i]

    masks = []
    for i in range(n):
        if covered[i]:
            masks.append(1 << labels.index(tags[i]))
        elif open_[i]:
            masks.append(full)
        else:
            masks.append(1 << 0)
    return AllowedLattice(masks)


def annotate_corpus(
    sentences: Sequence[Sentence],
    dictionary: Dictionary,
    labels: LabelSet,
    phrases: PhraseList | None = None,
) -> Dataset:
    examples = tuple(
        Example(s, lattice=distant_annotate(s, dictionary, labels, phrases), source="distant")
        for s in sentences
    )
    return Dataset(labels, examples)


def format_allowed(mask: int, labels: LabelSet) -> str:
    k = len(labels)
    if mask == (1 << k) - 1 and k > 1:
        return ALL_TAGS
    return "|".join(labels.tags[t] for t in range(k) if mask >> t & 1)


def parse_allowed(field_: str, labels: LabelSet) -> int:
    field_ = field_.strip()
    if field_ == ALL_TAGS:
        return (1 << len(labels)) - 1
    mask = 0
    for name in field_.split("|"):
        mask |= 1 << labels.index(name)
    return mask


def write_partial(data: Dataset) -> str:
    """``token<TAB>tagA|tagB`` lines, ``*`` for all tags, blank line between sentences."""
    lines = []
    for ex in sorted(data.examples, key=lambda e: e.id):
        lattice = ex.allowed(data.labels)
        for tok, mask in zip(ex.sentence.tokens, lattice):
            lines.append(f"{tok}{SEPARATOR}{format_allowed(mask, data.labels)}\n")
        lines.append("\n")
    return "".join(lines)


def parse_partial(text: str, labels: LabelSet, source: str = "distant") -> Dataset:
    examples = []
    for sid, block in enumerate(_blocks(text)):
        tokens, masks = [], []
        for lineno, line in block:
            cols = line.split(SEPARATOR)
            if len(cols) != 2 or not cols[0]:
                raise CorpusError(f"line {lineno}: expected 'token<TAB>tags'")
            try:
                masks.append(parse_allowed(cols[1], labels))
            except CorpusError as exc:
                raise CorpusError(f"line {lineno}: {exc}") from None
            tokens.append(cols[0])
        examples.append(Example(Sentence(tuple(tokens), sid), lattice=AllowedLattice(masks), source=source))
    return Dataset(labels, tuple(examples))
