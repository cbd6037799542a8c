import pytest
from hypothesis import given, settings, strategies as st

from wsner.corpus import (
    CorpusError,
    Dataset,
    Example,
    LabelSet,
    Sentence,
    Span,
    first_invalid,
    infer_labels,
    is_valid,
    parse_conll,
    read_raw,
    spans_from_tags,
    tags_from_spans,
    to_bio,
    to_bioes,
    write_conll,
)

from oracles import scan_spans
from strategies import TYPES, bio_sequences, tokens


def test_labelset_order():
    ls = LabelSet(("PER", "LOC"), "bioes")
    assert ls.scheme == "BIOES"
    assert ls.tags == ("O", "B-PER", "I-PER", "E-PER", "S-PER", "B-LOC", "I-LOC", "E-LOC", "S-LOC")
    assert ls.index("O") == 0
    assert LabelSet(("PER",), "BIO").tags == ("O", "B-PER", "I-PER")
    assert len(LabelSet((), "BIO")) == 1


@pytest.mark.parametrize("bad", [("A", "A"), ("A-B",), ("",), ("*",)])
def test_labelset_rejects_bad_types(bad):
    with pytest.raises(CorpusError):
        LabelSet(bad)


def test_unknown_tag():
    with pytest.raises(CorpusError):
        LabelSet(("PER",)).index("B-LOC")


def test_conversion_example():
    bio = ["B-PER", "I-PER", "O", "B-LOC", "B-LOC", "I-LOC", "I-LOC"]
    bioes = ["B-PER", "E-PER", "O", "S-LOC", "B-LOC", "I-LOC", "E-LOC"]
    assert to_bioes(bio) == tuple(bioes)
    assert to_bio(bioes) == tuple(bio)


@pytest.mark.parametrize(
    "tags, scheme, pos",
    [
        (["I-PER"], "BIO", 0),
        (["B-PER", "I-LOC"], "BIO", 1),
        (["S-PER"], "BIO", 0),
        (["B-PER"], "BIOES", 1),
        (["B-PER", "O"], "BIOES", 1),
        (["E-PER"], "BIOES", 0),
        (["B-PER", "B-PER", "E-PER"], "BIOES", 1),
        (["O", "Q-X"], "BIO", 1),
    ],
)
def test_invalid_sequences(tags, scheme, pos):
    assert not is_valid(tags, scheme)
    assert first_invalid(tags, scheme) == pos


def test_conversion_rejects_invalid():
    with pytest.raises(CorpusError):
        to_bioes(["I-PER"])
    with pytest.raises(CorpusError):
        to_bio(["B-PER"])


@given(bio_sequences())
@settings(max_examples=300)
def test_scheme_round_trip(tags):
    bioes = to_bioes(tags)
    assert is_valid(bioes, "BIOES")
    assert to_bio(bioes) == tuple(tags)
    assert spans_from_tags(tags) == spans_from_tags(bioes)


@given(bio_sequences())
@settings(max_examples=300)
def test_spans_match_scanner(tags):
    for seq in (tags, to_bioes(tags)):
        got = [(s.start, s.end, s.type) for s in spans_from_tags(seq)]
        assert got == scan_spans(list(seq))


@given(bio_sequences(), st.sampled_from(["BIO", "BIOES"]))
@settings(max_examples=200)
def test_tags_from_spans_inverts(tags, scheme):
    labels = LabelSet(TYPES, scheme)
    spans = spans_from_tags(tags)
    rebuilt = tags_from_spans(spans, len(tags), labels)
    assert is_valid(rebuilt, scheme)
    assert spans_from_tags(rebuilt) == spans


def test_lenient_spans_on_invalid_input():
    assert spans_from_tags(["I-PER", "I-PER", "O"]) == [Span(0, 2, "PER")]
    assert spans_from_tags(["B-PER", "I-LOC"]) == [Span(0, 1, "PER"), Span(1, 2, "LOC")]
    assert spans_from_tags(["O", "E-ORG"]) == [Span(1, 2, "ORG")]


def test_tags_from_spans_errors():
    labels = LabelSet(("PER",))
    with pytest.raises(CorpusError):
        tags_from_spans([Span(0, 3, "PER")], 2, labels)
    with pytest.raises(CorpusError):
        tags_from_spans([Span(0, 2, "PER"), Span(1, 2, "PER")], 3, labels)
    with pytest.raises(CorpusError):
        tags_from_spans([Span(0, 1, "LOC")], 2, labels)


@st.composite
def conll_datasets(draw):
    scheme = draw(st.sampled_from(["BIO", "BIOES"]))
    labels = LabelSet(TYPES, scheme)
    seqs = draw(st.lists(bio_sequences(max_len=6), min_size=1, max_size=5))
    exs = []
    for i, tags in enumerate(seqs):
        toks = draw(st.lists(tokens, min_size=len(tags), max_size=len(tags)))
        tags = to_bioes(tags) if scheme == "BIOES" else tags
        exs.append(Example(Sentence(tuple(toks), i), tuple(tags)))
    return Dataset(labels, tuple(exs))


@given(conll_datasets())
@settings(max_examples=100)
def test_conll_round_trip(data):
    text = write_conll(data)
    again = parse_conll(text, data.labels)
    assert write_conll(again) == text
    assert [ex.tags for ex in again] == [ex.tags for ex in data]


def test_parse_conll_infers_labels():
    text = "John\tS-PER\nin\tO\nNew\tB-LOC\nYork\tE-LOC\n\nhi\tO\n"
    data = parse_conll(text)
    assert data.labels == LabelSet(("LOC", "PER"), "BIOES")
    assert len(data) == 2
    assert data.examples[0].tags == ("S-PER", "O", "B-LOC", "E-LOC")
    assert write_conll(data) == text + "\n"


def test_infer_bio():
    assert infer_labels(["B-X", "I-X", "O"]).scheme == "BIO"


@pytest.mark.parametrize(
    "text, line",
    [
        ("a\tO\nb O\n", 2),
        ("a\tO\n\n\tO\n", 3),
        ("a\tB-PER\nb\tI-LOC\n", 2),
        ("a\tX-PER\n", 1),
    ],
)
def test_parse_conll_errors_name_the_line(text, line):
    labels = LabelSet(("PER", "LOC"), "BIO")
    with pytest.raises(CorpusError, match=f"line {line}"):
        parse_conll(text, labels)


def test_crlf_and_extra_blank_lines():
    data = parse_conll("a\tO\r\n\r\n\r\nb\tO\r\n")
    assert [ex.sentence.tokens for ex in data] == [("a",), ("b",)]


def test_read_raw():
    sents = read_raw("the cat\n\n  sat  down \n")
    assert [s.tokens for s in sents] == [("the", "cat"), ("sat", "down")]
    assert [s.id for s in sents] == [0, 1]


def test_dataset_helpers():
    labels = LabelSet(("PER",))
    exs = [Example(Sentence(("a",), i), ("O",)) for i in (3, 5, 7)]
    data = Dataset(labels, exs)
    assert data.without({5}).ids() == [3, 7]
    assert data.renumbered().ids() == [0, 1, 2]
    with pytest.raises(CorpusError):
        Dataset(labels, exs + exs[:1])
    with pytest.raises(CorpusError):
        Example(Sentence(("a", "b")), ("O",))
    with pytest.raises(CorpusError):
        Sentence(())
