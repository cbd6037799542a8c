"""REINFORCE sentence selector for removing false-positive distant sentences.

Action 1 keeps a sentence, action 0 removes it.  The policy outputs the keep
probability ``p = sigmoid(out(tanh(W2 tanh(W1 s + b1) + b2)))``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .lexicon import AllowedLattice


class PolicyError(ValueError):
    pass


def state_dim(hidden: int) -> int:
    """Length of ``s_j``: first and last BiLSTM rows plus (mean, min, max)."""
    return 4 * hidden + 3


def build_state(H: np.ndarray, P: np.ndarray, L: AllowedLattice | np.ndarray, s_star: np.ndarray | None = None) -> np.ndarray:
    """State vector for one sentence.

    The label-score part scores each token by its annotated tag when the
    allowed set is a singleton and by the mean over allowed tags otherwise;
    those scores are pooled into (mean, min, max).  ``s_star`` is appended
    when given.
    """
    H = np.asarray(H, dtype=np.float64)
    P = np.asarray(P, dtype=np.float64)
    n, k = P.shape
    if H.shape[0] != n:
        raise PolicyError(f"hidden rows {H.shape[0]} != emission rows {n}")
    mask = L if isinstance(L, np.ndarray) else AllowedLattice(L).mask(k)
    if mask.shape != (n, k):
        raise PolicyError(f"lattice shape {mask.shape} does not match {(n, k)}")
    # singleton rows reduce to the single allowed score
    per_token = (P * mask).sum(axis=1) / mask.sum(axis=1)
    s = np.concatenate([H[0], H[-1], [per_token.mean(), per_token.min(), per_token.max()]])
    if s_star is None:
        return s
    s_star = np.asarray(s_star, dtype=np.float64)
    if s_star.shape != s.shape:
        raise PolicyError(f"s* has shape {s_star.shape}, expected {s.shape}")
    return np.concatenate([s, s_star])


@dataclass
class PolicyParams:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray
    lr: float = 0.01

    NAMES = ("W1", "b1", "W2", "b2", "w3", "b3")

    @classmethod
    def init(cls, dim: int, hidden=(64, 32), lr: float = 0.01, rng: np.random.Generator | None = None) -> "PolicyParams":
        rng = rng or np.random.default_rng(0)
        h1, h2 = hidden

        def u(fi, fo):
            b = np.sqrt(6.0 / (fi + fo))
            return rng.uniform(-b, b, size=(fi, fo))

        return cls(u(dim, h1), np.zeros(h1), u(h1, h2), np.zeros(h2), u(h2, 1)[:, 0], np.zeros(1), lr)

    @classmethod
    def zeros(cls, dim: int, hidden=(64, 32), lr: float = 0.01) -> "PolicyParams":
        h1, h2 = hidden
        return cls(np.zeros((dim, h1)), np.zeros(h1), np.zeros((h1, h2)), np.zeros(h2), np.zeros(h2), np.zeros(1), lr)

    @property
    def dim(self) -> int:
        return self.W1.shape[0]

    def arrays(self) -> list[np.ndarray]:
        return [getattr(self, n) for n in self.NAMES]

    def replace_arrays(self, arrays: Iterable[np.ndarray]) -> "PolicyParams":
        return PolicyParams(*arrays, lr=self.lr)

    def copy(self) -> "PolicyParams":
        return self.replace_arrays(a.copy() for a in self.arrays())


def _forward(S: np.ndarray, theta: PolicyParams):
    a1 = np.tanh(S @ theta.W1 + theta.b1)
    a2 = np.tanh(a1 @ theta.W2 + theta.b2)
    logit = a2 @ theta.w3 + theta.b3[0]
    return a1, a2, logit


def _sigmoid(x):
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def policy_forward(s: np.ndarray, theta: PolicyParams) -> float | np.ndarray:
    """Keep probability for one state (or a batch of row states)."""
    s = np.asarray(s, dtype=np.float64)
    if s.shape[-1] != theta.dim:
        raise PolicyError(f"state dim {s.shape[-1]} != policy input {theta.dim}")
    _, _, logit = _forward(s, theta)
    p = _sigmoid(logit)
    return float(p) if np.ndim(p) == 0 else p


def log_prob(s: np.ndarray, a: int, theta: PolicyParams) -> float:
    """Bernoulli log-probability of action ``a`` computed from the logit."""
    _, _, logit = _forward(np.asarray(s, dtype=np.float64), theta)
    # log sigmoid(z) = -log(1+e^-z)
    return float(-np.logaddexp(0.0, -logit) if a == 1 else -np.logaddexp(0.0, logit))


def log_prob_grad(S: np.ndarray, actions: np.ndarray, weights: np.ndarray, theta: PolicyParams) -> list[np.ndarray]:
    """Gradient of ``sum_j weights_j * log pi(a_j | s_j)`` for row states ``S``."""
    S = np.atleast_2d(np.asarray(S, dtype=np.float64))
    actions = np.asarray(actions, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    a1, a2, logit = _forward(S, theta)
    dlogit = weights * (actions - _sigmoid(logit))
    g_w3 = a2.T @ dlogit
    g_b3 = np.array([dlogit.sum()])
    d2 = np.outer(dlogit, theta.w3) * (1.0 - a2 * a2)
    g_W2 = a1.T @ d2
    g_b2 = d2.sum(axis=0)
    d1 = (d2 @ theta.W2.T) * (1.0 - a1 * a1)
    g_W1 = S.T @ d1
    g_b1 = d1.sum(axis=0)
    return [g_W1, g_b1, g_W2, g_b2, g_w3, g_b3]


def sample_action(p: float, rng: np.random.Generator) -> int:
    """1 (keep) with probability ``p``, else 0 (remove)."""
    return int(rng.random() < p)


def reward(f1_cur: float, f1_prev: float) -> float:
    return f1_cur - f1_prev


def compute_omegas(psi_cur: Iterable, psi_prev: Iterable) -> tuple[set, set]:
    cur, prev = set(psi_cur), set(psi_prev)
    return cur - prev, prev - cur


@dataclass
class Decision:
    """Cached policy decision for one sentence in one epoch."""

    state: np.ndarray
    action: int
    prob: float  # keep probability


def reinforce_delta(
    theta: PolicyParams,
    omega_cur: Iterable,
    omega_prev: Iterable,
    r: float,
    cache_cur: Mapping,
    cache_prev: Mapping,
) -> list[np.ndarray]:
    """Parameter step ``alpha * r * (grad_cur - grad_prev)``.

    Members of ``omega_cur`` are credited with ``+r`` using the decision cached
    in the current epoch; members of ``omega_prev`` with ``-r`` using their
    previous-epoch decision.
    """
    groups = []
    for ids, cache in ((sorted(omega_cur), cache_cur), (sorted(omega_prev), cache_prev)):
        missing = [j for j in ids if j not in cache]
        if missing:
            raise PolicyError(f"no cached decision for sentences {missing[:5]}")
        groups.append([cache[j] for j in ids])

    zero = [np.zeros_like(a) for a in theta.arrays()]
    if r == 0 or not (groups[0] or groups[1]):
        return zero

    def grad(decisions):
        if not decisions:
            return zero
        S = np.stack([d.state for d in decisions])
        acts = np.array([d.action for d in decisions])
        return log_prob_grad(S, acts, np.ones(len(decisions)), theta)

    g_cur, g_prev = grad(groups[0]), grad(groups[1])
    scale = theta.lr * r
    return [scale * (gc - gp) for gc, gp in zip(g_cur, g_prev)]


def reinforce_update(theta, omega_cur, omega_prev, r, cache_cur, cache_prev) -> PolicyParams:
    """One gradient-ascent step of REINFORCE over the two Omega sets."""
    delta = reinforce_delta(theta, omega_cur, omega_prev, r, cache_cur, cache_prev)
    return theta.replace_arrays(a + d for a, d in zip(theta.arrays(), delta))


@dataclass
class EpochRecord:
    epoch: int
    removed: frozenset
    f1: float
    reward: float
    decisions: dict = field(default_factory=dict, repr=False)
    policy: PolicyParams | None = field(default=None, repr=False)

    def to_line(self) -> str:
        return json.dumps(
            {"epoch": self.epoch, "removed": len(self.removed), "f1": self.f1, "reward": self.reward},
            sort_keys=True,
        )


def write_trace(records: Iterable[EpochRecord]) -> str:
    return "".join(r.to_line() + "\n" for r in records)


def read_trace(text: str) -> list[dict]:
    return [json.loads(line) for line in text.splitlines() if line.strip()]
