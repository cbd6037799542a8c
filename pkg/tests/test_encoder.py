import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wsner import crf
from wsner import encoder as E
from wsner.lexicon import AllowedLattice

from oracles import central_diff, naive_lstm, rel_err


def tiny_table(rng, dim=3, char_dim=2):
    words = (E.UNK, "ab", "c", "zz")
    chars = (E.UNK, E.SPACE, "a", "b", "c")
    return E.EmbeddingTable(words, rng.normal(size=(len(words), dim)), chars, rng.normal(size=(len(chars), char_dim)))


def perturbed_params(rng, char_only, hidden=4):
    emb = tiny_table(rng)
    p = E.EncoderParams.init(emb, 5, hidden=hidden, char_dim=2, char_hidden=3, char_only=char_only, rng=rng, dtype=np.float64)
    # move biases off zero so every gate path is exercised
    return p.map(lambda a: a + rng.normal(scale=0.3, size=a.shape))


def test_lstm_matches_stepwise_reference():
    rng = np.random.default_rng(0)
    p = E.LstmParams.init(3, 4, rng, np.float64)
    p = E.LstmParams(p.Wx, p.Wh, rng.normal(size=16))
    X = rng.normal(size=(2, 5, 3))
    H, _ = E.lstm_forward(X, p)
    for b in range(2):
        np.testing.assert_allclose(H[b], naive_lstm(X[b], p.Wx, p.Wh, p.b), atol=1e-12)


def test_lstm_cell_agrees_with_forward():
    rng = np.random.default_rng(1)
    p = E.LstmParams.init(2, 3, rng, np.float64)
    x = rng.normal(size=(1, 1, 2))
    H, _ = E.lstm_forward(x, p)
    h, _ = E.lstm_cell(x[0, 0], np.zeros(3), np.zeros(3), p)
    np.testing.assert_allclose(H[0, 0], h)
    with pytest.raises(E.EncoderError):
        E.lstm_cell(np.zeros(5), np.zeros(3), np.zeros(3), p)


def test_lstm_backward_finite_differences():
    rng = np.random.default_rng(2)
    p = E.LstmParams.init(2, 3, rng, np.float64)
    X = rng.normal(size=(2, 4, 2))
    W = rng.normal(size=(2, 4, 3))

    def loss():
        H, _ = E.lstm_forward(X, p)
        return float((H * W).sum())

    H, cache = E.lstm_forward(X, p)
    dX, g = E.lstm_backward(W, cache, p)
    assert rel_err(dX, central_diff(loss, X)) < 1e-7
    for name in ("Wx", "Wh", "b"):
        assert rel_err(getattr(g, name), central_diff(loss, getattr(p, name))) < 1e-7


def test_bidirectional_respects_lengths():
    # padding at the end must not leak into a shorter sequence
    rng = np.random.default_rng(3)
    p = perturbed_params(rng, char_only=False)
    short = E.encode(["ab", "c"], p)
    batch = E.make_batch([E.index_sentence(["ab", "c"], p.emb), E.index_sentence(["zz", "ab", "c", "c"], p.emb)])
    H, _ = E.encode_batch(batch, p)
    np.testing.assert_allclose(H[0, :2], short, atol=1e-12)


@pytest.mark.parametrize("char_only", [False, True])
def test_end_to_end_gradient(char_only):
    rng = np.random.default_rng(4)
    p = perturbed_params(rng, char_only)
    T = rng.normal(size=(7, 7))
    sent = ["ab", "c", "zz"]
    L = AllowedLattice.from_sets([[0, 1], [2], [0, 1, 2, 3, 4]])

    def loss():
        return crf.partial_nll_loss(E.emissions(E.encode(sent, p), p), T, L)

    dP, _ = crf.loss_gradients(E.emissions(E.encode(sent, p), p), T, L)
    g = E.encoder_backward(sent, p, dP)
    for (name, a), (_, ga) in zip(p.named_arrays(), g.named_arrays()):
        assert rel_err(ga, central_diff(loss, a, eps=1e-5)) <= 1e-4, name


def test_embedding_gradient_accumulates_repeated_words():
    rng = np.random.default_rng(5)
    p = perturbed_params(rng, char_only=True)
    dP = rng.normal(size=(2, 5))
    g = E.encoder_backward(["ab", "ab"], p, dP)
    row = p.emb.word_id("ab")
    assert np.abs(g.emb.vectors[row]).sum() > 0
    others = [i for i in range(len(p.emb.words)) if i != row]
    assert np.all(g.emb.vectors[others] == 0)


def test_word_lookup():
    rng = np.random.default_rng(0)
    emb = tiny_table(rng)
    assert emb.word_id("ab") == 1
    assert emb.word_id("AB") == 1
    assert emb.word_id("nope") == 0
    assert emb.char_id("q") == 0
    with pytest.raises(E.EncoderError):
        E.EmbeddingTable(("x",), np.zeros((1, 2)))


def test_load_embeddings_with_and_without_header():
    body = "cat 0.5 1\ndog -1 2.5\n"
    a = E.load_embeddings(body)
    b = E.load_embeddings("2 2\n" + body)
    assert a.words == b.words == (E.UNK, "cat", "dog")
    np.testing.assert_array_equal(a.vectors, b.vectors)
    np.testing.assert_array_equal(a.vectors[0], [0, 0])
    np.testing.assert_allclose(a.vectors[2], [-1, 2.5])
    u = E.load_embeddings(body, unk="uniform", rng=np.random.default_rng(0))
    assert np.all(np.abs(u.vectors[0]) <= 0.25) and np.any(u.vectors[0] != 0)


@pytest.mark.parametrize("text", ["cat 1 2\ndog 1\n", "cat 1 x\n", "3 2\ncat 1 2\n"])
def test_load_embeddings_errors(text):
    with pytest.raises(E.EncoderError):
        E.load_embeddings(text)


@given(st.lists(st.sampled_from(["ab", "c", "zz", "q"]), min_size=1, max_size=6))
@settings(max_examples=30, deadline=None)
def test_encode_shapes_and_finiteness(tokens):
    rng = np.random.default_rng(6)
    p = perturbed_params(rng, char_only=False)
    H = E.encode(tokens, p)
    assert H.shape == (len(tokens), 2 * p.hidden)
    assert np.isfinite(H).all()
    assert np.all(np.abs(H) < 1)


def test_char_stream_layout():
    rng = np.random.default_rng(0)
    emb = tiny_table(rng)
    enc = E.index_sentence(["ab", "c"], emb)
    # " ab c " with boundaries at the spaces
    assert enc.chars.tolist() == [1, 2, 3, 1, 4, 1]
    assert enc.bounds.tolist() == [0, 3, 5]
