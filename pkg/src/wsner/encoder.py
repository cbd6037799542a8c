"""Character + word BiLSTM encoder with emission layer and manual BPTT.

Gate weights are packed column-wise in the order input, forget, output,
candidate: ``Wx`` is ``d_in x 4h``, ``Wh`` is ``h x 4h``, ``b`` is ``4h``.
Rows are inputs, so a step is ``z = x @ Wx + h_prev @ Wh + b``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from typing import Iterator, Sequence

import numpy as np

from .corpus import Sentence

UNK = "<unk>"
SPACE = " "


class EncoderError(ValueError):
    pass


def sigmoid(x):
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def glorot(rng: np.random.Generator, shape, dtype=np.float32) -> np.ndarray:
    fan_in, fan_out = shape[0], shape[-1]
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


@dataclass
class EmbeddingTable:
    """Word and character lookup tables; row 0 of each is UNK.

    Character row 1 is the word-boundary space.
    """

    words: tuple[str, ...]
    vectors: np.ndarray
    chars: tuple[str, ...] = (UNK, SPACE)
    char_vectors: np.ndarray | None = None

    def __post_init__(self):
        self.words = tuple(self.words)
        self.chars = tuple(self.chars)
        if not self.words or self.words[0] != UNK:
            raise EncoderError("word vocabulary must start with UNK")
        if self.vectors.shape[0] != len(self.words):
            raise EncoderError("embedding rows do not match vocabulary")
        if self.chars[:2] != (UNK, SPACE):
            raise EncoderError("character vocabulary must start with UNK, space")
        if self.char_vectors is not None and self.char_vectors.shape[0] != len(self.chars):
            raise EncoderError("character rows do not match character vocabulary")
        self._word_index = {w: i for i, w in enumerate(self.words)}
        self._char_index = {c: i for i, c in enumerate(self.chars)}

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def word_id(self, word: str) -> int:
        i = self._word_index.get(word)
        if i is None:
            i = self._word_index.get(word.casefold(), 0)
        return i

    def char_id(self, ch: str) -> int:
        return self._char_index.get(ch, 0)


def load_embeddings(text: str, unk: str = "zeros", rng: np.random.Generator | None = None) -> EmbeddingTable:
    """Parse word2vec text format, with or without the ``V d`` header line."""
    lines = [ln for ln in text.split("\n") if ln.strip()]
    words, rows = [], []
    dim = None
    start = 0
    if lines:
        head = lines[0].split()
        if len(head) == 2 and all(tok.isdigit() for tok in head):
            start = 1
            dim = int(head[1])
    for lineno, line in enumerate(lines[start:], start=start + 1):
        cols = line.rstrip().split(" ")
        word, vals = cols[0], cols[1:]
        try:
            vec = [float(v) for v in vals]
        except ValueError:
            raise EncoderError(f"embedding line {lineno}: non-numeric value") from None
        if dim is None:
            dim = len(vec)
        if len(vec) != dim or dim == 0:
            raise EncoderError(f"embedding line {lineno}: expected {dim} values, got {len(vec)}")
        words.append(word)
        rows.append(vec)
    if start and len(words) != int(lines[0].split()[0]):
        raise EncoderError("embedding header count does not match rows")
    dim = dim or 0
    mat = np.asarray(rows, dtype=np.float32).reshape(len(rows), dim)
    if not np.isfinite(mat).all():
        raise EncoderError("non-finite embedding value")
    if unk == "zeros":
        unk_row = np.zeros((1, dim), np.float32)
    else:
        rng = rng or np.random.default_rng(0)
        unk_row = rng.uniform(-0.25, 0.25, size=(1, dim)).astype(np.float32)
    return EmbeddingTable((UNK, *words), np.vstack([unk_row, mat]))


@dataclass
class LstmParams:
    Wx: np.ndarray
    Wh: np.ndarray
    b: np.ndarray

    @property
    def hidden(self) -> int:
        return self.Wh.shape[0]

    @classmethod
    def init(cls, d_in: int, hidden: int, rng: np.random.Generator, dtype=np.float32) -> "LstmParams":
        return cls(
            glorot(rng, (d_in, 4 * hidden), dtype),
            glorot(rng, (hidden, 4 * hidden), dtype),
            np.zeros(4 * hidden, dtype),
        )


def lstm_cell(x, h_prev, c_prev, p: LstmParams):
    """One LSTM step; returns ``(h, c)``."""
    x, h_prev, c_prev = np.asarray(x), np.asarray(h_prev), np.asarray(c_prev)
    hid = p.hidden
    if x.shape[-1] != p.Wx.shape[0] or h_prev.shape[-1] != hid or c_prev.shape[-1] != hid:
        raise EncoderError("lstm_cell: dimension mismatch")
    z = x @ p.Wx + h_prev @ p.Wh + p.b
    i = sigmoid(z[..., :hid])
    f = sigmoid(z[..., hid:2 * hid])
    o = sigmoid(z[..., 2 * hid:3 * hid])
    g = np.tanh(z[..., 3 * hid:])
    c = f * c_prev + i * g
    return o * np.tanh(c), c


def lstm_forward(X: np.ndarray, p: LstmParams):
    """Run over ``X [B, T, d_in]`` from zero state; returns ``(H, cache)``."""
    B, T, _ = X.shape
    hid = p.hidden
    Zx = X @ p.Wx + p.b
    H = np.empty((B, T, hid), X.dtype)
    C = np.empty((B, T, hid), X.dtype)
    G = np.empty((B, T, 4 * hid), X.dtype)
    h = np.zeros((B, hid), X.dtype)
    c = np.zeros((B, hid), X.dtype)
    for t in range(T):
        z = Zx[:, t] + h @ p.Wh
        g = G[:, t]
        g[:, :3 * hid] = sigmoid(z[:, :3 * hid])
        g[:, 3 * hid:] = np.tanh(z[:, 3 * hid:])
        c = g[:, hid:2 * hid] * c + g[:, :hid] * g[:, 3 * hid:]
        h = g[:, 2 * hid:3 * hid] * np.tanh(c)
        C[:, t] = c
        H[:, t] = h
    return H, (X, H, C, G)


def lstm_backward(dH: np.ndarray, cache, p: LstmParams):
    """Gradients ``(dX, LstmParams of grads)`` for upstream ``dH [B, T, h]``."""
    X, H, C, G = cache
    B, T, hid = H.shape
    dZ = np.empty((B, T, 4 * hid), X.dtype)
    dh_next = np.zeros((B, hid), X.dtype)
    dc_next = np.zeros((B, hid), X.dtype)
    WhT = p.Wh.T
    for t in range(T - 1, -1, -1):
        g = G[:, t]
        i, f, o, cand = g[:, :hid], g[:, hid:2 * hid], g[:, 2 * hid:3 * hid], g[:, 3 * hid:]
        tc = np.tanh(C[:, t])
        c_prev = C[:, t - 1] if t > 0 else np.zeros_like(tc)
        dh = dH[:, t] + dh_next
        dc = dc_next + dh * o * (1.0 - tc * tc)
        dz = dZ[:, t]
        dz[:, :hid] = dc * cand * i * (1.0 - i)
        dz[:, hid:2 * hid] = dc * c_prev * f * (1.0 - f)
        dz[:, 2 * hid:3 * hid] = dh * tc * o * (1.0 - o)
        dz[:, 3 * hid:] = dc * i * (1.0 - cand * cand)
        dc_next = dc * f
        dh_next = dz @ WhT
    H_prev = np.concatenate([np.zeros((B, 1, hid), X.dtype), H[:, :-1]], axis=1)
    grads = LstmParams(
        np.einsum("btd,btg->dg", X, dZ),
        np.einsum("bth,btg->hg", H_prev, dZ),
        dZ.sum(axis=(0, 1)),
    )
    return dZ @ p.Wx.T, grads


def _reverse(X: np.ndarray, rev: np.ndarray) -> np.ndarray:
    return np.take_along_axis(X, rev[:, :, None], axis=1)


def bilstm_forward(X, rev, fwd: LstmParams, bwd: LstmParams):
    Hf, cf = lstm_forward(X, fwd)
    Hr, cb = lstm_forward(_reverse(X, rev), bwd)
    return Hf, _reverse(Hr, rev), (cf, cb)


def bilstm_backward(dHf, dHb, rev, cache, fwd: LstmParams, bwd: LstmParams):
    cf, cb = cache
    dXf, gf = lstm_backward(dHf, cf, fwd)
    dXr, gb = lstm_backward(_reverse(dHb, rev), cb, bwd)
    return dXf + _reverse(dXr, rev), gf, gb


@dataclass
class EncoderParams:
    """All encoder weights.

    With ``char_fwd``/``char_bwd`` set to None the model runs in char-only
    mode: the token embedding is the single input to the BiLSTM (tokens are
    expected to be characters).
    """

    emb: EmbeddingTable
    word_fwd: LstmParams
    word_bwd: LstmParams
    W_out: np.ndarray
    b_out: np.ndarray
    char_fwd: LstmParams | None = None
    char_bwd: LstmParams | None = None

    @property
    def char_lstm(self) -> bool:
        return self.char_fwd is not None

    @property
    def hidden(self) -> int:
        return self.word_fwd.hidden

    @property
    def num_tags(self) -> int:
        return self.W_out.shape[0]

    @property
    def dtype(self):
        return self.W_out.dtype

    @classmethod
    def init(
        cls,
        emb: EmbeddingTable,
        num_tags: int,
        hidden: int = 100,
        char_dim: int = 25,
        char_hidden: int = 25,
        char_only: bool = False,
        rng: np.random.Generator | None = None,
        dtype=np.float32,
    ) -> "EncoderParams":
        rng = rng or np.random.default_rng(0)
        d_in = emb.dim
        char_fwd = char_bwd = None
        if not char_only:
            if emb.char_vectors is None:
                cv = glorot(rng, (len(emb.chars), char_dim), dtype)
                cv[0] = 0
                emb = replace(emb, char_vectors=cv)
            cd = emb.char_vectors.shape[1]
            char_fwd = LstmParams.init(cd, char_hidden, rng, dtype)
            char_bwd = LstmParams.init(cd, char_hidden, rng, dtype)
            d_in += 2 * char_hidden
        return cls(
            emb=emb,
            word_fwd=LstmParams.init(d_in, hidden, rng, dtype),
            word_bwd=LstmParams.init(d_in, hidden, rng, dtype),
            W_out=glorot(rng, (num_tags, 2 * hidden), dtype),
            b_out=np.zeros(num_tags, dtype),
            char_fwd=char_fwd,
            char_bwd=char_bwd,
        )

    def named_arrays(self) -> Iterator[tuple[str, np.ndarray]]:
        """Trainable arrays in a fixed order (used for SGD and serialization)."""
        yield "emb.vectors", self.emb.vectors
        if self.char_lstm:
            yield "emb.char_vectors", self.emb.char_vectors
        for name in ("char_fwd", "char_bwd", "word_fwd", "word_bwd"):
            lp = getattr(self, name)
            if lp is None:
                continue
            for f in fields(LstmParams):
                yield f"{name}.{f.name}", getattr(lp, f.name)
        yield "W_out", self.W_out
        yield "b_out", self.b_out

    def map(self, fn) -> "EncoderParams":
        """New params with ``fn`` applied to every trainable array."""
        def lp(p):
            return None if p is None else LstmParams(fn(p.Wx), fn(p.Wh), fn(p.b))

        emb = replace(
            self.emb,
            vectors=fn(self.emb.vectors),
            char_vectors=None if self.emb.char_vectors is None or not self.char_lstm else fn(self.emb.char_vectors),
        )
        return EncoderParams(
            emb, lp(self.word_fwd), lp(self.word_bwd), fn(self.W_out), fn(self.b_out),
            lp(self.char_fwd), lp(self.char_bwd),
        )

    def zeros_like(self) -> "EncoderParams":
        return self.map(np.zeros_like)

    def copy(self) -> "EncoderParams":
        return self.map(np.copy)

    def astype(self, dtype) -> "EncoderParams":
        return self.map(lambda a: a.astype(dtype))


# -- batching ---------------------------------------------------------------

@dataclass
class Encoded:
    """Index arrays for one sentence."""

    words: np.ndarray
    chars: np.ndarray
    bounds: np.ndarray  # positions of the n+1 boundary spaces in ``chars``


def index_sentence(sentence: Sentence | Sequence[str], emb: EmbeddingTable) -> Encoded:
    tokens = sentence.tokens if isinstance(sentence, Sentence) else tuple(sentence)
    words = np.array([emb.word_id(w) for w in tokens], dtype=np.int64)
    chars = [emb.char_id(SPACE)]
    bounds = [0]
    for w in tokens:
        chars.extend(emb.char_id(ch) for ch in w)
        chars.append(emb.char_id(SPACE))
        bounds.append(len(chars) - 1)
    return Encoded(words, np.array(chars, np.int64), np.array(bounds, np.int64))


@dataclass
class Batch:
    words: np.ndarray  # [B, n]
    lengths: np.ndarray  # [B]
    word_rev: np.ndarray  # [B, n]
    chars: np.ndarray  # [B, m]
    char_rev: np.ndarray  # [B, m]
    bounds: np.ndarray  # [B, n+1]

    def __len__(self):
        return len(self.lengths)


def _rev_index(lengths: np.ndarray, width: int) -> np.ndarray:
    t = np.arange(width)[None, :]
    L = lengths[:, None]
    return np.where(t < L, L - 1 - t, t)


def make_batch(items: Sequence[Encoded]) -> Batch:
    B = len(items)
    lengths = np.array([len(e.words) for e in items], np.int64)
    clens = np.array([len(e.chars) for e in items], np.int64)
    n, m = int(lengths.max()), int(clens.max())
    words = np.zeros((B, n), np.int64)
    chars = np.zeros((B, m), np.int64)
    bounds = np.zeros((B, n + 1), np.int64)
    for b, e in enumerate(items):
        words[b, :len(e.words)] = e.words
        chars[b, :len(e.chars)] = e.chars
        bounds[b, :len(e.bounds)] = e.bounds
    return Batch(words, lengths, _rev_index(lengths, n), chars, _rev_index(clens, m), bounds)


def _gather_time(H: np.ndarray, pos: np.ndarray) -> np.ndarray:
    return np.take_along_axis(H, pos[:, :, None], axis=1)


def encode_batch(batch: Batch, p: EncoderParams):
    """Hidden states ``[B, n, 2h]`` and the cache needed for backprop."""
    X = p.emb.vectors[batch.words]
    char_cache = None
    if p.char_lstm:
        CE = p.emb.char_vectors[batch.chars]
        Hf, Hb, cc = bilstm_forward(CE, batch.char_rev, p.char_fwd, p.char_bwd)
        hc = np.concatenate(
            [_gather_time(Hf, batch.bounds[:, 1:]), _gather_time(Hb, batch.bounds[:, :-1])], axis=2
        )
        X = np.concatenate([X, hc], axis=2)
        char_cache = (Hf.shape, cc)
    Hf, Hb, wc = bilstm_forward(X, batch.word_rev, p.word_fwd, p.word_bwd)
    H = np.concatenate([Hf, Hb], axis=2)
    return H, (H, char_cache, wc)


def emissions(H: np.ndarray, p: EncoderParams) -> np.ndarray:
    """``P = H @ W_out.T + b_out`` over the last axis."""
    H = np.asarray(H)
    if H.shape[-1] != p.W_out.shape[1]:
        raise EncoderError(f"hidden dim {H.shape[-1]} != emission input {p.W_out.shape[1]}")
    return H @ p.W_out.T + p.b_out


def backward_batch(batch: Batch, p: EncoderParams, cache, dP: np.ndarray) -> EncoderParams:
    """Parameter gradients for upstream ``dP [B, n, k]`` (zero on padding)."""
    H, char_cache, wc = cache
    dP = dP.astype(p.dtype, copy=False)
    hid = p.hidden
    g_W_out = np.einsum("bnk,bnh->kh", dP, H)
    g_b_out = dP.sum(axis=(0, 1))
    dH = dP @ p.W_out
    dX, g_wf, g_wb = bilstm_backward(dH[..., :hid], dH[..., hid:], batch.word_rev, wc, p.word_fwd, p.word_bwd)

    d = p.emb.dim
    g_vec = np.zeros_like(p.emb.vectors)
    valid = np.arange(batch.words.shape[1])[None, :] < batch.lengths[:, None]
    np.add.at(g_vec, batch.words[valid], dX[..., :d][valid])

    g_cv = g_cf = g_cb = None
    if p.char_lstm:
        shape, cc = char_cache
        ch = p.char_fwd.hidden
        dHf = np.zeros(shape, p.dtype)
        dHb = np.zeros(shape, p.dtype)
        rows = np.broadcast_to(np.arange(len(batch))[:, None], batch.words.shape)
        dhc = dX[..., d:]
        np.add.at(dHf, (rows[valid], batch.bounds[:, 1:][valid]), dhc[..., :ch][valid])
        np.add.at(dHb, (rows[valid], batch.bounds[:, :-1][valid]), dhc[..., ch:][valid])
        dCE, g_cf, g_cb = bilstm_backward(dHf, dHb, batch.char_rev, cc, p.char_fwd, p.char_bwd)
        g_cv = np.zeros_like(p.emb.char_vectors)
        cvalid = np.arange(batch.chars.shape[1])[None, :] < (batch.char_rev[:, :1] + 1)
        np.add.at(g_cv, batch.chars[cvalid], dCE[cvalid])

    emb = replace(p.emb, vectors=g_vec, char_vectors=g_cv if p.char_lstm else p.emb.char_vectors)
    return EncoderParams(emb, g_wf, g_wb, g_W_out, g_b_out, g_cf, g_cb)


# -- single-sentence API ----------------------------------------------------

def encode(sentence: Sentence | Sequence[str], p: EncoderParams) -> np.ndarray:
    """Per-token hidden states ``n x 2h``."""
    batch = make_batch([index_sentence(sentence, p.emb)])
    H, _ = encode_batch(batch, p)
    return H[0]


def encoder_backward(sentence: Sentence | Sequence[str], p: EncoderParams, dP: np.ndarray) -> EncoderParams:
    batch = make_batch([index_sentence(sentence, p.emb)])
    dP = np.asarray(dP)
    if dP.shape != (batch.lengths[0], p.num_tags):
        raise EncoderError(f"dP shape {dP.shape} does not match emissions")
    _, cache = encode_batch(batch, p)
    return backward_batch(batch, p, cache, dP[None])
