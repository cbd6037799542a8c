"""Acceptance suite.  Each test prints one ``criterion N: PASS/FAIL`` line in
the terminal summary (see conftest.py)."""

import itertools
import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wsner import crf, pipeline as pl, policy as pol
from wsner import encoder as E
from wsner.corpus import Dataset, Example, LabelSet, Sentence, is_valid, parse_conll, spans_from_tags, to_bio, to_bioes, write_conll
from wsner.experiment import DenoiseExperiment, run_experiment
from wsner.lexicon import AllowedLattice

from oracles import all_path_scores, central_diff, lse, rel_err, scan_spans
from strategies import TYPES, bio_sequences, tokens
from test_cli import chain, files  # noqa: F401  (fixture)
from test_pipeline import as_distant, separable


def test_criterion_1_lattice_oracle(record):
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        n, k = int(rng.integers(1, 7)), int(rng.integers(1, 6))
        P, T = rng.normal(size=(n, k)), rng.normal(size=(k + 2, k + 2))
        L = AllowedLattice([int(rng.integers(1, 1 << k)) for _ in range(n)])
        y = rng.integers(k, size=n)
        paths, scores = all_path_scores(P, T)
        _, cscores = all_path_scores(P, T, [set(s) for s in L.sets()])
        logZ, logZL = lse(scores), lse(cscores)
        gold = scores[np.all(paths == y, axis=1)][0]
        got = [
            (crf.log_partition(P, T), logZ),
            (crf.constrained_log_partition(P, T, L), logZL),
            (crf.nll_loss(P, T, y), logZ - gold),
            (crf.partial_nll_loss(P, T, L), logZ - logZL),
        ]
        vit = crf.viterbi(P, T)
        order = np.argsort(-scores, kind="stable")
        got.append((vit.score, scores[order[0]]))
        worst = max(worst, *(abs(a - b) for a, b in got))
        unique = len(scores) == 1 or scores[order[0]] - scores[order[1]] > 1e-9
        if unique:
            assert vit.sequence == tuple(paths[order[0]])
    elapsed = time.perf_counter() - start
    record(f"max abs err {worst:.1e}, {elapsed:.1f}s")
    assert worst <= 1e-8
    assert elapsed < 30


def test_criterion_2_reduction_identities(record):
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(200):
        n, k = int(rng.integers(1, 12)), int(rng.integers(1, 8))
        P, T = rng.normal(size=(n, k)), rng.normal(size=(k + 2, k + 2))
        y = rng.integers(k, size=n)
        a = abs(crf.partial_nll_loss(P, T, AllowedLattice.from_tags(y)) - crf.nll_loss(P, T, y))
        b = abs(crf.partial_nll_loss(P, T, AllowedLattice.full(n, k)))
        worst = max(worst, a, b)
    record(f"max deviation {worst:.1e}")
    assert worst <= 1e-12


def test_criterion_3_gradients(record):
    rng = np.random.default_rng(11)
    # (a) CRF layer, n = k = 3
    P, T = rng.normal(size=(3, 3)), rng.normal(size=(5, 5))
    L = AllowedLattice([0b011, 0b110, 0b111])
    dP, dT = crf.loss_gradients(P, T, L)
    loss = lambda: crf.partial_nll_loss(P, T, L)
    err_a = max(rel_err(dP, central_diff(loss, P)), rel_err(dT, central_diff(loss, T)))

    # (b) encoder + CRF end to end, n = 3, d_h = 4
    words, chars = (E.UNK, "ab", "c"), (E.UNK, E.SPACE, "a", "b", "c")
    emb = E.EmbeddingTable(words, rng.normal(size=(3, 3)), chars, rng.normal(size=(5, 2)))
    p = E.EncoderParams.init(emb, 4, hidden=4, char_dim=2, char_hidden=2, rng=rng, dtype=np.float64)
    p = p.map(lambda a: a + rng.normal(scale=0.3, size=a.shape))
    T4 = rng.normal(size=(6, 6))
    sent = ["ab", "c", "ab"]
    L4 = AllowedLattice([0b0011, 0b1111, 0b0100])
    f = lambda: crf.partial_nll_loss(E.emissions(E.encode(sent, p), p), T4, L4)
    g = E.encoder_backward(sent, p, crf.loss_gradients(E.emissions(E.encode(sent, p), p), T4, L4)[0])
    err_b = max(rel_err(ga, central_diff(f, a, eps=1e-5)) for (_, a), (_, ga) in zip(p.named_arrays(), g.named_arrays()))

    # (c) policy log-probability
    theta = pol.PolicyParams.init(6, (5, 4), rng=rng)
    s = rng.normal(size=6)
    err_c = 0.0
    for action in (0, 1):
        grads = pol.log_prob_grad(s[None], np.array([action]), np.ones(1), theta)
        for a, ga in zip(theta.arrays(), grads):
            err_c = max(err_c, rel_err(ga, central_diff(lambda: pol.log_prob(s, action, theta), a)))
    record(f"crf {err_a:.1e}, encoder {err_b:.1e}, policy {err_c:.1e}")
    assert err_a <= 1e-6 and err_b <= 1e-4 and err_c <= 1e-4


def test_criterion_4_schemes(record):
    counter = itertools.count()

    @given(bio_sequences(max_len=15))
    @settings(max_examples=10_000, deadline=None, database=None)
    def scheme_round_trip(tags):
        next(counter)
        bioes = to_bioes(tags)
        assert is_valid(bioes, "BIOES") and to_bio(bioes) == tuple(tags)
        want = scan_spans(list(tags))
        for seq in (tags, bioes):
            assert [(s.start, s.end, s.type) for s in spans_from_tags(seq)] == want

    scheme_round_trip()

    @given(st.lists(bio_sequences(max_len=6), min_size=1, max_size=6), st.data())
    @settings(max_examples=300, deadline=None, database=None)
    def conll_round_trip(seqs, data):
        for scheme in ("BIO", "BIOES"):
            labels = LabelSet(TYPES, scheme)
            exs = []
            for i, tags in enumerate(seqs):
                toks = data.draw(st.lists(tokens, min_size=len(tags), max_size=len(tags)))
                exs.append(Example(Sentence(tuple(toks), i), to_bioes(tags) if scheme == "BIOES" else tuple(tags)))
            text = write_conll(Dataset(labels, tuple(exs)))
            assert write_conll(parse_conll(text, labels)) == text

    conll_round_trip()
    record(f"{next(counter)} BIO sequences round-tripped")


def test_criterion_5_rl_algebra(record):
    @given(st.sets(st.integers(0, 50)), st.sets(st.integers(0, 50)))
    @settings(max_examples=500, database=None)
    def disjoint(cur, prev):
        oc, op = pol.compute_omegas(cur, prev)
        assert not oc & op

    disjoint()

    rng = np.random.default_rng(5)
    theta = pol.PolicyParams.init(5, (4, 3), lr=0.3, rng=rng)

    def cache():
        return {j: pol.Decision(rng.normal(size=5), int(rng.integers(2)), float(rng.random())) for j in range(10)}

    for _ in range(50):
        cur, prev = cache(), cache()
        oc = set(rng.choice(10, size=3, replace=False).tolist())
        op = set(range(10)) - oc - {0}
        same = pol.reinforce_update(theta, oc, op, 0.0, cur, prev)
        assert all(np.array_equal(a, b) for a, b in zip(theta.arrays(), same.arrays()))
        r = float(rng.uniform(0.01, 1))
        up = pol.reinforce_delta(theta, oc, op, r, cur, prev)
        down = pol.reinforce_delta(theta, oc, op, -r, cur, prev)
        assert all(np.array_equal(a, -b) for a, b in zip(up, down))

    gold, dev = separable(20, 0), separable(10, 1)
    cfg = pl.TrainConfig(word_dim=6, hidden=5, char_dim=3, char_hidden=3, lr=0.2, batch_size=4,
                         epochs=5, rl_epochs=6, rl_lr=0.5, policy_hidden=(4, 3))
    model = pl.pretrain(gold, Dataset(gold.labels), cfg, np.random.default_rng(0), dev=dev)
    _, trace = pl.rl_denoise(model, as_distant(separable(16, 7)), gold, dev, cfg, np.random.default_rng(0))
    total = sum(rec.reward for rec in trace[1:])
    record(f"telescoping gap {abs(total - (trace[-1].f1 - trace[0].f1)):.1e}")
    assert abs(total - (trace[-1].f1 - trace[0].f1)) < 1e-12
    assert all(c.reward == c.f1 - p.f1 for p, c in zip(trace, trace[1:]))


def test_criterion_6_synthetic_denoising(record):
    exp = DenoiseExperiment()
    start = time.perf_counter()
    result = run_experiment(exp)
    elapsed = time.perf_counter() - start
    record(
        f"removed {result.median_removed_fraction:.2f} of injected (need >= 0.60), "
        f"F1 gain {100 * result.median_gain:+.2f} pts (need >= 2), {elapsed:.0f}s"
    )
    for line in result.table().splitlines():
        print(line)
    assert result.median_removed_fraction >= 0.60
    assert result.median_gain >= 0.02
    assert elapsed < 600


def test_criterion_7_determinism(files, capsys, record):  # noqa: F811
    a, _ = chain(files, capsys, "run1")
    b, _ = chain(files, capsys, "run2")
    names = ("distant.txt", "pre.bin", "clean.txt", "final.bin", "pred.conll", "metrics.txt")
    diff = [n for n in names if (a / n).read_bytes() != (b / n).read_bytes()]
    record("all artifacts identical" if not diff else f"differ: {diff}")
    assert not diff
