"""Pretrain -> RL denoise -> retrain, plus evaluation and model files."""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import crf
from .corpus import Dataset, Example, LabelSet, Sentence, spans_from_tags, tags_from_spans
from .encoder import (
    UNK,
    SPACE,
    EmbeddingTable,
    EncoderParams,
    LstmParams,
    backward_batch,
    emissions,
    encode_batch,
    glorot,
    index_sentence,
    make_batch,
)
from .lexicon import AllowedLattice
from .policy import (
    Decision,
    EpochRecord,
    PolicyParams,
    build_state,
    compute_omegas,
    policy_forward,
    reinforce_update,
    reward,
    state_dim,
)

log = logging.getLogger(__name__)

MAGIC = b"WSNER"
FORMAT_VERSION = 1


class PipelineError(ValueError):
    pass


class ModelFormatError(PipelineError):
    pass


@dataclass
class TrainConfig:
    lr: float = 0.05
    epochs: int = 30
    patience: int = 20
    batch_size: int = 16
    clip: float = 5.0
    rl_epochs: int = 100
    rl_lr: float = 0.01
    rl_retrain_epochs: int = 1
    rl_normalize: str = "block"
    policy_hidden: tuple = (64, 32)
    seed: int = 0
    scheme: str = "BIOES"
    mode: str = "default"
    char_only: bool = False
    word_dim: int = 100
    hidden: int = 100
    char_dim: int = 25
    char_hidden: int = 25
    unk: str = "zeros"

    def __post_init__(self):
        self.policy_hidden = tuple(int(h) for h in self.policy_hidden)
        self.validate()

    def validate(self):
        errors = []
        for name in ("epochs", "batch_size", "rl_retrain_epochs", "word_dim", "hidden", "char_dim", "char_hidden"):
            if getattr(self, name) <= 0:
                errors.append(f"{name} must be positive")
        for name in ("patience", "rl_epochs"):
            if getattr(self, name) < 0:
                errors.append(f"{name} must be non-negative")
        if self.lr <= 0 or self.clip <= 0:
            errors.append("lr and clip must be positive")
        if self.scheme.upper() not in ("BIO", "BIOES"):
            errors.append(f"unknown scheme {self.scheme!r}")
        if self.mode not in ("default", "phrase"):
            errors.append(f"unknown mode {self.mode!r}")
        if self.rl_normalize not in ("none", "zscore", "block"):
            errors.append(f"unknown rl_normalize {self.rl_normalize!r}")
        if self.unk not in ("zeros", "uniform"):
            errors.append(f"unknown unk init {self.unk!r}")
        if len(self.policy_hidden) != 2 or min(self.policy_hidden) <= 0:
            errors.append("policy_hidden must be two positive sizes")
        if errors:
            raise PipelineError("; ".join(errors))


# -- metrics ----------------------------------------------------------------

@dataclass(frozen=True)
class Metrics:
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_counts(cls, tp: int, fp: int, fn: int) -> "Metrics":
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        f = 2 * p * r / (p + r) if p + r else 0.0
        return cls(tp, fp, fn, p, r, f)

    def report(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in asdict(self).items())


def evaluate(pred: Dataset, gold: Dataset) -> Metrics:
    """Micro-averaged exact-match span metrics."""
    if len(pred) != len(gold):
        raise PipelineError(f"{len(pred)} predicted vs {len(gold)} gold sentences")
    tp = fp = fn = 0
    for pe, ge in zip(pred, gold):
        if pe.sentence.tokens != ge.sentence.tokens:
            raise PipelineError(f"sentence mismatch at id {ge.id}")
        if pe.tags is None or ge.tags is None:
            raise PipelineError(f"sentence {ge.id} lacks tags")
        ps = set(spans_from_tags(pe.tags))
        gs = set(spans_from_tags(ge.tags))
        hit = len(ps & gs)
        tp += hit
        fp += len(ps) - hit
        fn += len(gs) - hit
    return Metrics.from_counts(tp, fp, fn)


# -- model ------------------------------------------------------------------

@dataclass
class Model:
    labels: LabelSet
    encoder: EncoderParams
    transitions: np.ndarray
    config: TrainConfig = field(default_factory=TrainConfig)

    def copy(self) -> "Model":
        return Model(self.labels, self.encoder.copy(), self.transitions.copy(), replace(self.config))

    def arrays(self):
        yield from self.encoder.named_arrays()
        yield "transitions", self.transitions


def build_vocab(datasets: Sequence[Dataset], embeddings: EmbeddingTable | None = None):
    words, chars = set(), set()
    for d in datasets:
        for ex in d:
            words.update(ex.sentence.tokens)
            for tok in ex.sentence.tokens:
                chars.update(tok)
    if embeddings is not None:
        words.update(embeddings.words[1:])
    words.discard(UNK)
    chars.discard(SPACE)
    return (UNK, *sorted(words)), (UNK, SPACE, *sorted(chars))


def init_model(
    labels: LabelSet,
    datasets: Sequence[Dataset],
    cfg: TrainConfig,
    rng: np.random.Generator,
    embeddings: EmbeddingTable | None = None,
    dtype=np.float32,
) -> Model:
    words, chars = build_vocab(datasets, embeddings)
    dim = embeddings.dim if embeddings is not None else cfg.word_dim
    vectors = glorot(rng, (len(words), dim), dtype)
    if cfg.unk == "zeros":
        vectors[0] = 0
    else:
        vectors[0] = rng.uniform(-0.25, 0.25, size=dim)
    if embeddings is not None:
        for i, w in enumerate(words):
            j = embeddings.word_id(w)
            if j:
                vectors[i] = embeddings.vectors[j]
    emb = EmbeddingTable(words, vectors, chars)
    enc = EncoderParams.init(
        emb, len(labels), cfg.hidden, cfg.char_dim, cfg.char_hidden, cfg.char_only, rng, dtype
    )
    trans = crf.init_transitions(len(labels), rng).astype(dtype)
    return Model(labels, enc, trans, replace(cfg))


# -- training ---------------------------------------------------------------

@dataclass
class _Prepared:
    index: list
    masks: list
    ids: list


def _prepare(model: Model, data: Dataset) -> _Prepared:
    k = len(model.labels)
    index, masks = [], []
    for ex in data:
        index.append(index_sentence(ex.sentence, model.encoder.emb))
        masks.append(ex.allowed(model.labels).mask(k))
    return _Prepared(index, masks, data.ids())


def _pad_masks(masks, n, k):
    out = np.ones((len(masks), n, k), bool)
    for b, m in enumerate(masks):
        out[b, :len(m)] = m
    return out


def _batch_loss_grad(model: Model, prep: _Prepared, rows: Sequence[int], with_grad: bool = True):
    batch = make_batch([prep.index[r] for r in rows])
    H, cache = encode_batch(batch, model.encoder)
    P = emissions(H, model.encoder)
    mask = _pad_masks([prep.masks[r] for r in rows], P.shape[1], P.shape[2])
    losses, dP, dT = crf.batch_partial_nll(P, model.transitions, mask, batch.lengths, with_grad)
    if not with_grad:
        return losses, None, None
    B = len(rows)
    grads = backward_batch(batch, model.encoder, cache, dP / B)
    return losses, grads, (dT.sum(axis=0) / B).astype(model.transitions.dtype)


def mean_loss(model: Model, data: Dataset, batch_size: int = 64) -> float:
    prep = _prepare(model, data)
    total = 0.0
    for start in range(0, len(data), batch_size):
        rows = range(start, min(start + batch_size, len(data)))
        losses, _, _ = _batch_loss_grad(model, prep, list(rows), with_grad=False)
        total += losses.sum()
    return total / max(len(data), 1)


def _sgd_step(model: Model, grads: EncoderParams, dT: np.ndarray, lr: float, clip: float):
    pairs = [(a, g) for (_, a), (_, g) in zip(model.encoder.named_arrays(), grads.named_arrays())]
    pairs.append((model.transitions, dT))
    norm = np.sqrt(sum(float(np.vdot(g, g)) for _, g in pairs))
    scale = lr * (clip / norm if norm > clip else 1.0)
    for a, g in pairs:
        a -= (scale * g).astype(a.dtype, copy=False)


@dataclass
class TrainHistory:
    losses: list = field(default_factory=list)  # mean epoch loss, index 0 = before training
    dev_f1: list = field(default_factory=list)
    best_epoch: int = 0


def train(
    model: Model,
    data: Dataset,
    cfg: TrainConfig,
    rng: np.random.Generator,
    dev: Dataset | None = None,
    epochs: int | None = None,
    track_loss: bool = False,
) -> tuple[Model, TrainHistory]:
    """Mini-batch SGD on mean partial NLL; updates ``model`` in place.

    With ``dev`` the best-dev-F1 checkpoint is returned and training stops
    after ``cfg.patience`` epochs without improvement.
    """
    if len(data) == 0:
        raise PipelineError("empty training set")
    epochs = cfg.epochs if epochs is None else epochs
    prep = _prepare(model, data)
    hist = TrainHistory()
    if track_loss:
        hist.losses.append(mean_loss(model, data))
    best = model.copy() if dev is not None else None
    best_f1 = -1.0
    stale = 0
    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(data))
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            rows = order[start:start + cfg.batch_size]
            losses, grads, dT = _batch_loss_grad(model, prep, rows)
            total += losses.sum()
            _sgd_step(model, grads, dT, cfg.lr, cfg.clip)
        if track_loss:
            hist.losses.append(total / len(data))
        if dev is None:
            continue
        f1 = evaluate(tag(model, dev.sentences), dev).f1
        hist.dev_f1.append(f1)
        if f1 > best_f1:
            best_f1, best, stale = f1, model.copy(), 0
            hist.best_epoch = epoch
        else:
            stale += 1
            if cfg.patience and stale >= cfg.patience:
                break
        if best_f1 >= 1.0:
            break
    return (best if best is not None else model), hist


def pretrain(
    gold: Dataset,
    distant: Dataset,
    cfg: TrainConfig,
    rng: np.random.Generator,
    dev: Dataset | None = None,
    embeddings: EmbeddingTable | None = None,
    history: list | None = None,
) -> Model:
    """Train NER+PA from scratch on gold (singleton lattices) + distant lattices."""
    data = _union(gold, distant)
    if len(data) == 0:
        raise PipelineError("empty training set")
    extra = [dev] if dev is not None else []
    model = init_model(data.labels, [data, *extra], cfg, rng, embeddings)
    model, hist = train(model, data, cfg, rng, dev)
    if history is not None:
        history.append(hist)
    return model


def retrain(gold: Dataset, cleaned: Dataset, cfg: TrainConfig, rng: np.random.Generator, dev: Dataset | None = None, embeddings=None) -> Model:
    return pretrain(gold, cleaned, cfg, rng, dev, embeddings)


def _union(a: Dataset, b: Dataset) -> Dataset:
    if len(a) and len(b) and a.labels != b.labels:
        raise PipelineError("gold and distant label sets differ")
    labels = a.labels if len(a) or not len(b) else b.labels
    exs = list(a.examples) + list(b.examples)
    # ids only need to be unique inside the training union
    exs = [Example(Sentence(e.sentence.tokens, i), e.tags, e.lattice, e.source) for i, e in enumerate(exs)]
    return Dataset(labels, tuple(exs))


# -- inference --------------------------------------------------------------

def _forward_all(model: Model, sentences: Sequence[Sentence], batch_size: int = 64):
    """Yield (H, P) per sentence, unpadded."""
    idx = [index_sentence(s, model.encoder.emb) for s in sentences]
    for start in range(0, len(idx), batch_size):
        chunk = idx[start:start + batch_size]
        batch = make_batch(chunk)
        H, _ = encode_batch(batch, model.encoder)
        P = emissions(H, model.encoder)
        for b, n in enumerate(batch.lengths):
            yield H[b, :n], P[b, :n]


def tag(model: Model, sentences: Sequence[Sentence], batch_size: int = 64) -> Dataset:
    """Viterbi-decode each sentence; output is repaired to a scheme-valid sequence."""
    labels = model.labels
    examples = []
    idx = [index_sentence(s, model.encoder.emb) for s in sentences]
    for start in range(0, len(idx), batch_size):
        batch = make_batch(idx[start:start + batch_size])
        H, _ = encode_batch(batch, model.encoder)
        P = emissions(H, model.encoder)
        _, paths = crf.batch_viterbi(P, model.transitions, batch.lengths)
        for off, path in enumerate(paths):
            sent = sentences[start + off]
            raw = labels.decode(path)
            tags = tags_from_spans(spans_from_tags(raw), len(raw), labels)
            examples.append(Example(sent, tags))
    return Dataset(labels, tuple(examples))


# -- RL denoising -----------------------------------------------------------

def sentence_states(model: Model, data: Dataset) -> np.ndarray:
    """``s_j`` for every sentence of ``data`` (rows in dataset order)."""
    k = len(model.labels)
    rows = []
    for ex, (H, P) in zip(data, _forward_all(model, data.sentences)):
        rows.append(build_state(H, P, ex.allowed(model.labels).mask(k)))
    return np.stack(rows) if rows else np.zeros((0, state_dim(model.encoder.hidden)))


def normalize_states(states: np.ndarray, how: str = "block") -> np.ndarray:
    """Standardize state features over the distant set.

    ``zscore`` scales every feature to unit variance.  ``block`` additionally
    divides the hidden-state features by the square root of their count, so
    the hidden block and each pooled label score carry comparable variance.
    """
    if how == "none" or len(states) == 0:
        return states
    std = states.std(axis=0)
    out = (states - states.mean(axis=0)) / np.where(std > 1e-8, std, 1.0)
    if how == "block":
        n_hidden = states.shape[1] - 3
        out[:, :n_hidden] /= np.sqrt(n_hidden)
    return out


def rl_denoise(
    model: Model,
    distant: Dataset,
    train_gold: Dataset,
    dev_gold: Dataset,
    cfg: TrainConfig,
    rng: np.random.Generator,
    theta: PolicyParams | None = None,
) -> tuple[Dataset, list[EpochRecord]]:
    """Learn a removal policy over ``distant`` and return the cleaned set.

    Record 0 of the trace is the pretrained reference (nothing removed,
    reward 0).  Epoch ``i`` samples keep/remove for every distant sentence
    from its own generator seeded with ``(cfg.seed, i)``, draws taken in
    dataset order.
    """
    if len(distant) == 0:
        return distant, []
    states = normalize_states(sentence_states(model, distant), cfg.rl_normalize)
    dim = states.shape[1]
    if theta is None:
        theta = PolicyParams.init(2 * dim, cfg.policy_hidden, cfg.rl_lr, rng)
    s_star = np.zeros(dim)
    ids = distant.ids()

    f1_prev = evaluate(tag(model, dev_gold.sentences), dev_gold).f1
    trace = [EpochRecord(0, frozenset(), f1_prev, 0.0, {}, theta.copy())]
    psi_prev: frozenset = frozenset()
    cache_prev: dict = {}
    for epoch in range(1, cfg.rl_epochs + 1):
        full = np.hstack([states, np.broadcast_to(s_star, states.shape)])
        probs = np.atleast_1d(policy_forward(full, theta))
        draws = np.random.default_rng([cfg.seed, epoch]).random(len(ids))
        actions = (draws < probs).astype(int)
        cache = {j: Decision(full[r], int(actions[r]), float(probs[r])) for r, j in enumerate(ids)}
        psi = frozenset(j for j, a in zip(ids, actions) if a == 0)
        if psi:
            s_star = states[actions == 0].mean(axis=0)

        kept = distant.without(psi)
        m_i = model.copy()
        retrain_rng = np.random.default_rng([cfg.seed, 7919])
        m_i, _ = train(m_i, _union(train_gold, kept), cfg, retrain_rng, epochs=cfg.rl_retrain_epochs)
        f1 = evaluate(tag(m_i, dev_gold.sentences), dev_gold).f1

        r = reward(f1, f1_prev)
        omega_cur, omega_prev = compute_omegas(psi, psi_prev)
        theta = reinforce_update(theta, omega_cur, omega_prev, r, cache, cache_prev)
        trace.append(EpochRecord(epoch, psi, f1, r, cache, theta.copy()))
        log.info("rl epoch %d removed=%d f1=%.4f r=%+.4f", epoch, len(psi), f1, r)
        f1_prev, psi_prev, cache_prev = f1, psi, cache

    return distant.without(psi_prev), trace


# -- serialization ----------------------------------------------------------

def _config_dict(cfg: TrainConfig) -> dict:
    d = asdict(cfg)
    d["policy_hidden"] = list(cfg.policy_hidden)
    return d


def save_model(model: Model, path: str | Path):
    named = list(model.arrays())
    header = {
        "labels": {"entity_types": list(model.labels.entity_types), "scheme": model.labels.scheme},
        "config": _config_dict(model.config),
        "words": list(model.encoder.emb.words),
        "chars": list(model.encoder.emb.chars),
        "char_lstm": model.encoder.char_lstm,
        "arrays": [[name, list(a.shape)] for name, a in named],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<HI", FORMAT_VERSION, len(blob)), blob]
    for _, a in named:
        parts.append(np.ascontiguousarray(a, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_model(path: str | Path) -> Model:
    raw = Path(path).read_bytes()
    if raw[:len(MAGIC)] != MAGIC:
        raise ModelFormatError(f"{path}: not a model file (bad magic)")
    pos = len(MAGIC)
    if len(raw) < pos + 6:
        raise ModelFormatError(f"{path}: truncated header")
    version, hlen = struct.unpack_from("<HI", raw, pos)
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    pos += 6
    if len(raw) < pos + hlen:
        raise ModelFormatError(f"{path}: truncated header")
    try:
        header = json.loads(raw[pos:pos + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"{path}: corrupt header ({exc})") from None
    pos += hlen
    arrays = {}
    for name, shape in header["arrays"]:
        count = int(np.prod(shape, dtype=np.int64))
        end = pos + 4 * count
        if end > len(raw):
            raise ModelFormatError(f"{path}: truncated at array {name}")
        arrays[name] = np.frombuffer(raw, dtype="<f4", count=count, offset=pos).astype(np.float32).reshape(shape)
        pos = end
    if pos != len(raw):
        raise ModelFormatError(f"{path}: {len(raw) - pos} trailing bytes")

    cfg_d = header["config"]
    cfg = TrainConfig(**{f.name: cfg_d[f.name] for f in fields(TrainConfig) if f.name in cfg_d})
    labels = LabelSet(tuple(header["labels"]["entity_types"]), header["labels"]["scheme"])

    def lp(prefix):
        if f"{prefix}.Wx" not in arrays:
            return None
        return LstmParams(arrays[f"{prefix}.Wx"], arrays[f"{prefix}.Wh"], arrays[f"{prefix}.b"])

    emb = EmbeddingTable(tuple(header["words"]), arrays["emb.vectors"], tuple(header["chars"]), arrays.get("emb.char_vectors"))
    enc = EncoderParams(emb, lp("word_fwd"), lp("word_bwd"), arrays["W_out"], arrays["b_out"], lp("char_fwd"), lp("char_bwd"))
    return Model(labels, enc, arrays["transitions"], cfg)
