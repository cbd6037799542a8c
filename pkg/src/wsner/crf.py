"""Linear-chain CRF with BOS/EOS transitions and partial-annotation support.

Conventions: ``P`` is ``n x k`` (emission scores), ``T`` is ``(k+2) x (k+2)``
with row/column ``k`` for BOS and ``k+1`` for EOS.  ``T[a, b]`` scores the
transition ``a -> b``.  All dynamic programs run in float64 log space.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .lexicon import AllowedLattice


class CRFError(ValueError):
    pass


def logsumexp(a: np.ndarray, axis: int) -> np.ndarray:
    """Max-shifted log-sum-exp that returns -inf (not nan) for all -inf slices."""
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)) + m
    return np.squeeze(out, axis=axis)


def init_transitions(k: int, rng: np.random.Generator, scale: float = 0.1) -> np.ndarray:
    return rng.uniform(-scale, scale, size=(k + 2, k + 2))


def _check_shapes(P: np.ndarray, T: np.ndarray):
    if P.ndim != 2 or P.shape[0] < 1:
        raise CRFError(f"emission matrix must be n x k with n >= 1, got {P.shape}")
    k = P.shape[1]
    if T.shape != (k + 2, k + 2):
        raise CRFError(f"transition matrix must be {(k + 2, k + 2)}, got {T.shape}")


def _lattice_mask(L, n: int, k: int) -> np.ndarray:
    if isinstance(L, np.ndarray) and L.dtype == bool:
        mask = L
    else:
        mask = AllowedLattice(L).mask(k)
    if mask.shape != (n, k):
        raise CRFError(f"lattice shape {mask.shape} does not match {(n, k)}")
    if not mask.any(axis=1).all():
        raise CRFError("empty allowed set in lattice")
    return mask


def score_sequence(P: np.ndarray, T: np.ndarray, y: Sequence[int]) -> float:
    P = np.asarray(P, dtype=np.float64)
    T = np.asarray(T, dtype=np.float64)
    _check_shapes(P, T)
    n, k = P.shape
    if len(y) != n:
        raise CRFError(f"tag sequence length {len(y)} != {n}")
    y = np.asarray(y, dtype=np.int64)
    bos, eos = k, k + 1
    score = P[np.arange(n), y].sum()
    score += T[bos, y[0]] + T[y[:-1], y[1:]].sum() + T[y[-1], eos]
    return float(score)


# -- batched core -----------------------------------------------------------

def _forward(P, T, mask, lengths):
    """Forward pass; returns (alpha [B, n, k], logZ [B])."""
    B, n, k = P.shape
    bos, eos = k, k + 1
    S = np.where(mask, P, -np.inf)
    trans = T[:k, :k]
    alpha = np.empty((B, n, k))
    alpha[:, 0] = T[bos, :k] + S[:, 0]
    for t in range(1, n):
        new = logsumexp(alpha[:, t - 1, :, None] + trans[None], axis=1) + S[:, t]
        alpha[:, t] = np.where((t < lengths)[:, None], new, alpha[:, t - 1])
    last = alpha[np.arange(B), lengths - 1]
    logZ = logsumexp(last + T[:k, eos], axis=1)
    return alpha, logZ


def _backward(P, T, mask, lengths):
    B, n, k = P.shape
    eos = k + 1
    S = np.where(mask, P, -np.inf)
    trans = T[:k, :k]
    beta = np.empty((B, n, k))
    beta[:, n - 1] = T[:k, eos]
    for t in range(n - 2, -1, -1):
        new = logsumexp(trans[None] + (S[:, t + 1] + beta[:, t + 1])[:, None, :], axis=2)
        beta[:, t] = np.where((t + 1 < lengths)[:, None], new, T[:k, eos])
    return beta


def _marginals(P, T, mask, lengths):
    """log Z, node marginals [B, n, k] and expected transition counts [B, k+2, k+2]."""
    B, n, k = P.shape
    bos, eos = k, k + 1
    alpha, logZ = _forward(P, T, mask, lengths)
    beta = _backward(P, T, mask, lengths)
    valid = np.arange(n)[None, :] < lengths[:, None]
    with np.errstate(invalid="ignore"):
        node = np.exp(alpha + beta - logZ[:, None, None])
    node = np.where(valid[:, :, None] & mask, node, 0.0)

    S = np.where(mask, P, -np.inf)
    counts = np.zeros((B, k + 2, k + 2))
    counts[:, bos, :k] = node[:, 0]
    counts[np.arange(B), :k, eos] = node[np.arange(B), lengths - 1]
    if n > 1:
        # pair (t, t+1) for t < len-1
        log_pair = (
            alpha[:, :-1, :, None]
            + T[None, None, :k, :k]
            + (S[:, 1:] + beta[:, 1:])[:, :, None, :]
            - logZ[:, None, None, None]
        )
        with np.errstate(invalid="ignore"):
            pair = np.exp(log_pair)
        pair_valid = np.arange(n - 1)[None, :] + 1 < lengths[:, None]
        pair = np.where(pair_valid[:, :, None, None], pair, 0.0)
        pair = np.nan_to_num(pair, nan=0.0)
        counts[:, :k, :k] = pair.sum(axis=1)
    return logZ, node, counts


def _batch_gold_score(P, T, tags, lengths):
    B, n, k = P.shape
    bos, eos = k, k + 1
    valid = np.arange(n)[None, :] < lengths[:, None]
    y = np.where(valid, tags, 0)
    emit = np.take_along_axis(P, y[:, :, None], axis=2)[:, :, 0]
    score = (emit * valid).sum(axis=1)
    score += T[bos, y[:, 0]]
    if n > 1:
        pv = valid[:, 1:]
        score += (T[y[:, :-1], y[:, 1:]] * pv).sum(axis=1)
    score += T[y[np.arange(B), lengths - 1], eos]
    return score


def batch_partial_nll(P, T, mask, lengths, with_grad: bool = True):
    """Per-sentence partial NLL on a padded batch.

    ``P`` is ``[B, n, k]``, ``mask`` the boolean allowed-tag tensor of the same
    shape (padding rows are ignored), ``lengths`` the true lengths.  Returns
    ``(losses [B], dP [B, n, k], dT [B, k+2, k+2])`` where the gradients are
    per sentence (not averaged).
    """
    P = np.asarray(P, dtype=np.float64)
    T = np.asarray(T, dtype=np.float64)
    lengths = np.asarray(lengths, dtype=np.int64)
    B, n, k = P.shape
    pad = np.arange(n)[None, :] >= lengths[:, None]
    mask = np.asarray(mask, dtype=bool) | pad[:, :, None]
    full = np.ones_like(mask)
    if not with_grad:
        _, logZ = _forward(P, T, full, lengths)
        _, logZL = _forward(P, T, mask, lengths)
        return logZ - logZL, None, None
    logZ, node, counts = _marginals(P, T, full, lengths)
    logZL, nodeL, countsL = _marginals(P, T, mask, lengths)
    return logZ - logZL, node - nodeL, counts - countsL


def batch_viterbi(P, T, lengths):
    """Best path per padded sentence; returns (scores [B], list of tag lists)."""
    P = np.asarray(P, dtype=np.float64)
    T = np.asarray(T, dtype=np.float64)
    lengths = np.asarray(lengths, dtype=np.int64)
    B, n, k = P.shape
    bos, eos = k, k + 1
    trans = T[:k, :k]
    delta = T[bos, :k] + P[:, 0]
    back = np.zeros((B, n, k), dtype=np.int64)
    for t in range(1, n):
        cand = delta[:, :, None] + trans[None]
        best = np.argmax(cand, axis=1)
        new = np.take_along_axis(cand, best[:, None, :], axis=1)[:, 0] + P[:, t]
        active = (t < lengths)[:, None]
        delta = np.where(active, new, delta)
        back[:, t] = best
    final = delta + T[:k, eos]
    last = np.argmax(final, axis=1)
    scores = final[np.arange(B), last]
    paths = []
    for b in range(B):
        y = [int(last[b])]
        for t in range(lengths[b] - 1, 0, -1):
            y.append(int(back[b, t, y[-1]]))
        paths.append(y[::-1])
    return scores, paths


# -- per-sentence API -------------------------------------------------------

def _one(P, T):
    P = np.asarray(P, dtype=np.float64)
    T = np.asarray(T, dtype=np.float64)
    _check_shapes(P, T)
    return P, T


def log_partition(P, T) -> float:
    """log of the sum of exp(score) over every tag sequence."""
    P, T = _one(P, T)
    n, k = P.shape
    _, logZ = _forward(P[None], T, np.ones((1, n, k), bool), np.array([n]))
    return float(logZ[0])


def constrained_log_partition(P, T, L) -> float:
    """Same sum restricted to sequences inside the lattice ``L``."""
    P, T = _one(P, T)
    n, k = P.shape
    mask = _lattice_mask(L, n, k)
    _, logZ = _forward(P[None], T, mask[None], np.array([n]))
    return float(logZ[0])


def nll_loss(P, T, y: Sequence[int]) -> float:
    return log_partition(P, T) - score_sequence(P, T, y)


def partial_nll_loss(P, T, L) -> float:
    P, T = _one(P, T)
    n, k = P.shape
    mask = _lattice_mask(L, n, k)
    losses, _, _ = batch_partial_nll(P[None], T, mask[None], np.array([n]), with_grad=False)
    return float(losses[0])


@dataclass(frozen=True)
class PathScore:
    score: float
    sequence: tuple[int, ...]


def viterbi(P, T) -> PathScore:
    P, T = _one(P, T)
    scores, paths = batch_viterbi(P[None], T, np.array([P.shape[0]]))
    return PathScore(float(scores[0]), tuple(paths[0]))


def loss_gradients(P, T, target):
    """Gradients ``(dP, dT)`` of the (partial) NLL.

    ``target`` is either a tag-index sequence (full supervision) or an
    :class:`AllowedLattice` / boolean mask.
    """
    P, T = _one(P, T)
    n, k = P.shape
    if isinstance(target, AllowedLattice) or (isinstance(target, np.ndarray) and target.dtype == bool):
        mask = _lattice_mask(target, n, k)
    else:
        if len(target) != n:
            raise CRFError(f"tag sequence length {len(target)} != {n}")
        mask = AllowedLattice.from_tags(target).mask(k)
    _, dP, dT = batch_partial_nll(P[None], T, mask[None], np.array([n]))
    return dP[0], dT[0]
