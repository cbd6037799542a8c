"""Sentences, tag schemes, spans and the two-column CoNLL format."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

SCHEMES = ("BIO", "BIOES")
SEPARATOR = "\t"


class CorpusError(ValueError):
    """Malformed corpus input (bad tag, bad line, invalid tag sequence)."""


@dataclass(frozen=True)
class LabelSet:
    """Ordered tag inventory for a list of entity types under one scheme.

    ``"O"`` is always index 0, followed by the prefixed tags of each type in
    order (``B I`` for BIO, ``B I E S`` for BIOES).
    """

    entity_types: tuple[str, ...]
    scheme: str = "BIOES"
    tags: tuple[str, ...] = field(init=False)

    def __post_init__(self):
        scheme = self.scheme.upper()
        if scheme not in SCHEMES:
            raise CorpusError(f"unknown scheme {self.scheme!r}")
        object.__setattr__(self, "scheme", scheme)
        object.__setattr__(self, "entity_types", tuple(self.entity_types))
        if len(set(self.entity_types)) != len(self.entity_types):
            raise CorpusError("duplicate entity type")
        for t in self.entity_types:
            if not t or "-" in t or SEPARATOR in t or "|" in t or t == "*":
                raise CorpusError(f"bad entity type name {t!r}")
        prefixes = "BI" if scheme == "BIO" else "BIES"
        tags = ["O"] + [f"{p}-{t}" for t in self.entity_types for p in prefixes]
        object.__setattr__(self, "tags", tuple(tags))
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(tags)})

    def __len__(self):
        return len(self.tags)

    def index(self, tag: str) -> int:
        try:
            return self._index[tag]
        except KeyError:
            raise CorpusError(f"unknown tag {tag!r}") from None

    def encode(self, tags: Iterable[str]) -> tuple[int, ...]:
        return tuple(self.index(t) for t in tags)

    def decode(self, ids: Iterable[int]) -> tuple[str, ...]:
        return tuple(self.tags[i] for i in ids)

    def with_scheme(self, scheme: str) -> "LabelSet":
        return LabelSet(self.entity_types, scheme)


@dataclass(frozen=True)
class Sentence:
    tokens: tuple[str, ...]
    id: int = 0

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        if not self.tokens:
            raise CorpusError("empty sentence")
        for tok in self.tokens:
            if not tok or any(c in tok for c in "\t\n\r"):
                raise CorpusError(f"bad token {tok!r} in sentence {self.id}")

    def __len__(self):
        return len(self.tokens)


@dataclass(frozen=True, order=True)
class Span:
    """Half-open token range ``[start, end)`` carrying an entity type."""

    start: int
    end: int
    type: str


def split_tag(tag: str) -> tuple[str, str | None]:
    if tag == "O":
        return "O", None
    prefix, sep, etype = tag.partition("-")
    if not sep or prefix not in "BIES" or len(prefix) != 1 or not etype:
        raise CorpusError(f"malformed tag {tag!r}")
    return prefix, etype


def _can_follow(prev: str | None, cur: str | None, scheme: str) -> bool:
    """Whether tag ``cur`` may follow ``prev``; ``None`` stands for BOS/EOS."""
    pp, pt = split_tag(prev) if prev is not None else ("<", None)
    if cur is None:
        # sequence end: nothing may stay open in BIOES
        return scheme == "BIO" or pp in "<OES"
    cp, ct = split_tag(cur)
    if scheme == "BIO":
        if cp in "ES":
            return False
        if cp == "I":
            return pp in "BI" and pt == ct
        return True
    open_ = pp in "BI"
    if cp in "IE":
        return open_ and pt == ct
    # B, S, O start fresh and require no open entity
    return not open_


def is_valid(tags: Sequence[str], scheme: str) -> bool:
    """Check prefix-continuation rules for ``tags`` under ``scheme``."""
    scheme = scheme.upper()
    try:
        prev = None
        for tag in tags:
            if not _can_follow(prev, tag, scheme):
                return False
            prev = tag
        return _can_follow(prev, None, scheme)
    except CorpusError:
        return False


def first_invalid(tags: Sequence[str], scheme: str) -> int | None:
    """Position of the first offending tag, ``len(tags)`` for a bad ending."""
    prev = None
    for i, tag in enumerate(tags):
        try:
            ok = _can_follow(prev, tag, scheme)
        except CorpusError:
            return i
        if not ok:
            return i
        prev = tag
    if not _can_follow(prev, None, scheme):
        return len(tags)
    return None


def _check(tags: Sequence[str], scheme: str):
    if not is_valid(tags, scheme):
        raise CorpusError(f"invalid {scheme} sequence: {' '.join(tags)}")


def to_bioes(tags: Sequence[str]) -> tuple[str, ...]:
    """Convert a valid BIO sequence to BIOES."""
    _check(tags, "BIO")
    out = []
    n = len(tags)
    for i, tag in enumerate(tags):
        prefix, etype = split_tag(tag)
        continues = i + 1 < n and tags[i + 1] == f"I-{etype}"
        if prefix == "B":
            out.append(tag if continues else f"S-{etype}")
        elif prefix == "I":
            out.append(tag if continues else f"E-{etype}")
        else:
            out.append(tag)
    return tuple(out)


def to_bio(tags: Sequence[str]) -> tuple[str, ...]:
    """Convert a valid BIOES sequence to BIO."""
    _check(tags, "BIOES")
    out = []
    for tag in tags:
        prefix, etype = split_tag(tag)
        if prefix == "S":
            out.append(f"B-{etype}")
        elif prefix == "E":
            out.append(f"I-{etype}")
        else:
            out.append(tag)
    return tuple(out)


def spans_from_tags(tags: Sequence[str]) -> list[Span]:
    """Entity spans of a BIO or BIOES sequence, ordered by start.

    Invalid input is read leniently: an ``I-``/``E-`` tag that does not
    continue the open entity starts a new one (an ``E-`` closes it at once).
    """
    spans = []
    start = None
    etype = None
    for i, tag in enumerate(tags):
        prefix, t = split_tag(tag)
        if prefix in "IE" and start is not None and t == etype:
            if prefix == "E":
                spans.append(Span(start, i + 1, etype))
                start = None
            continue
        if start is not None:
            spans.append(Span(start, i, etype))
            start = None
        if prefix in "SE":
            spans.append(Span(i, i + 1, t))
        elif prefix in "BI":
            start, etype = i, t
    if start is not None:
        spans.append(Span(start, len(tags), etype))
    return spans


def tags_from_spans(spans: Iterable[Span], n: int, labels: LabelSet) -> tuple[str, ...]:
    """Inverse of :func:`spans_from_tags` for length ``n`` under ``labels.scheme``."""
    tags = ["O"] * n
    for span in sorted(spans):
        if not 0 <= span.start < span.end <= n:
            raise CorpusError(f"span {span} outside [0, {n})")
        if span.type not in labels.entity_types:
            raise CorpusError(f"unknown entity type {span.type!r}")
        if any(t != "O" for t in tags[span.start:span.end]):
            raise CorpusError(f"overlapping span {span}")
        for i in range(span.start, span.end):
            tags[i] = f"I-{span.type}"
        tags[span.start] = f"B-{span.type}"
        if labels.scheme == "BIOES":
            if span.end - span.start == 1:
                tags[span.start] = f"S-{span.type}"
            else:
                tags[span.end - 1] = f"E-{span.type}"
    return tuple(tags)


@dataclass(frozen=True)
class Example:
    """One sentence with either full ``tags`` or a partial ``lattice``."""

    sentence: Sentence
    tags: tuple[str, ...] | None = None
    lattice: "AllowedLattice | None" = None
    source: str = "gold"

    def __post_init__(self):
        if self.tags is not None:
            object.__setattr__(self, "tags", tuple(self.tags))
            if len(self.tags) != len(self.sentence):
                raise CorpusError(f"tag/token length mismatch in sentence {self.sentence.id}")
        if self.lattice is not None and len(self.lattice) != len(self.sentence):
            raise CorpusError(f"lattice/token length mismatch in sentence {self.sentence.id}")
        if self.source not in ("gold", "distant"):
            raise CorpusError(f"unknown source {self.source!r}")

    @property
    def id(self) -> int:
        return self.sentence.id

    def allowed(self, labels: LabelSet) -> "AllowedLattice":
        """Lattice view: the stored lattice or singleton sets from the tags."""
        from .lexicon import AllowedLattice

        if self.lattice is not None:
            return self.lattice
        if self.tags is None:
            return AllowedLattice.full(len(self.sentence), len(labels))
        return AllowedLattice.from_tags(labels.encode(self.tags))


@dataclass(frozen=True)
class Dataset:
    labels: LabelSet
    examples: tuple[Example, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "examples", tuple(self.examples))
        ids = [ex.id for ex in self.examples]
        if len(set(ids)) != len(ids):
            raise CorpusError("duplicate sentence ids")

    def __len__(self):
        return len(self.examples)

    def __iter__(self):
        return iter(self.examples)

    @property
    def sentences(self) -> list[Sentence]:
        return [ex.sentence for ex in self.examples]

    def ids(self) -> list[int]:
        return [ex.id for ex in self.examples]

    def without(self, ids: Iterable[int]) -> "Dataset":
        drop = set(ids)
        return Dataset(self.labels, tuple(ex for ex in self.examples if ex.id not in drop))

    def renumbered(self, start: int = 0) -> "Dataset":
        exs = []
        for i, ex in enumerate(self.examples):
            sent = Sentence(ex.sentence.tokens, start + i)
            exs.append(Example(sent, ex.tags, ex.lattice, ex.source))
        return Dataset(self.labels, tuple(exs))

    def __add__(self, other: "Dataset") -> "Dataset":
        if other.labels != self.labels:
            raise CorpusError("cannot join datasets with different label sets")
        return Dataset(self.labels, self.examples + other.examples)


def infer_labels(tag_names: Iterable[str], scheme: str | None = None) -> LabelSet:
    types = set()
    prefixes = set()
    for tag in tag_names:
        prefix, etype = split_tag(tag)
        prefixes.add(prefix)
        if etype is not None:
            types.add(etype)
    if scheme is None:
        scheme = "BIOES" if prefixes & {"E", "S"} else "BIO"
    return LabelSet(tuple(sorted(types)), scheme)


def _blocks(text: str):
    """Yield lists of ``(line_number, line)`` for blank-line separated blocks."""
    block = []
    for lineno, line in enumerate(text.split("\n"), start=1):
        line = line.rstrip("\r")
        if not line.strip():
            if block:
                yield block
                block = []
            continue
        block.append((lineno, line))
    if block:
        yield block


def parse_conll(text: str, labels: LabelSet | None = None, source: str = "gold") -> Dataset:
    """Parse ``token<TAB>tag`` lines; blank lines separate sentences.

    When ``labels`` is omitted the label set is inferred from the tags seen
    (types sorted, BIOES if any ``E-``/``S-`` tag occurs).
    """
    raw = []
    for block in _blocks(text):
        tokens, tags, linenos = [], [], []
        for lineno, line in block:
            cols = line.split(SEPARATOR)
            if len(cols) != 2:
                raise CorpusError(f"line {lineno}: expected 'token<TAB>tag'")
            tok, tag = cols
            if not tok:
                raise CorpusError(f"line {lineno}: empty token")
            tokens.append(tok)
            tags.append(tag.strip())
            linenos.append(lineno)
        raw.append((tokens, tags, linenos))

    if labels is None:
        try:
            labels = infer_labels(t for _, tags, _ in raw for t in tags)
        except CorpusError as exc:
            raise CorpusError(f"{exc}") from None

    examples = []
    for sid, (tokens, tags, linenos) in enumerate(raw):
        for tag, lineno in zip(tags, linenos):
            if tag not in labels._index:
                raise CorpusError(f"line {lineno}: unknown tag {tag!r}")
        bad = first_invalid(tags, labels.scheme)
        if bad is not None:
            lineno = linenos[min(bad, len(tags) - 1)]
            raise CorpusError(f"line {lineno}: invalid {labels.scheme} tag sequence")
        examples.append(Example(Sentence(tuple(tokens), sid), tuple(tags), source=source))
    return Dataset(labels, tuple(examples))


def write_conll(data: Dataset) -> str:
    """Serialize tagged sentences, ordered by id, one blank line after each."""
    lines = []
    for ex in sorted(data.examples, key=lambda e: e.id):
        if ex.tags is None:
            raise CorpusError(f"sentence {ex.id} has no tags")
        for tok, tag in zip(ex.sentence.tokens, ex.tags):
            lines.append(f"{tok}{SEPARATOR}{tag}\n")
        lines.append("\n")
    return "".join(lines)


def read_raw(text: str) -> list[Sentence]:
    """Whitespace-tokenized raw text, one sentence per non-blank line."""
    sentences = []
    for line in text.split("\n"):
        toks = line.split()
        if toks:
            sentences.append(Sentence(tuple(toks), len(sentences)))
    return sentences
