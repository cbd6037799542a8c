"""Synthetic false-positive denoising experiment.

For each seed: build a template corpus with planted false-positive distant
sentences, pretrain NER+PA, run the RL selector, retrain on gold plus the
cleaned set, and compare test F1 against the pretrained baseline.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import pipeline as pl
from .synthetic import make_corpus


def _corpus_defaults():
    return dict(
        n_gold=200,
        n_distant=400,
        n_dev=100,
        n_test=200,
        fp_rate=0.3,
        trap_rate=0.2,
        eval_trap_rate=0.4,
        trap_types="random",
        mode="phrase",
        phrase_noise=False,
    )


def _train_defaults():
    # small encoder so five seeds fit comfortably on one core
    return dict(
        word_dim=16,
        hidden=16,
        char_dim=8,
        char_hidden=8,
        lr=0.1,
        epochs=30,
        patience=8,
        rl_epochs=100,
        rl_lr=0.1,
    )


@dataclass
class DenoiseExperiment:
    seeds: tuple = (0, 1, 2, 3, 4)
    corpus: dict = field(default_factory=_corpus_defaults)
    train: dict = field(default_factory=_train_defaults)


@dataclass
class SeedResult:
    seed: int
    injected: int
    removed_injected: int
    removed_total: int
    f1_baseline: float
    f1_rl: float
    seconds: float

    @property
    def removed_fraction(self) -> float:
        return self.removed_injected / self.injected if self.injected else 0.0

    @property
    def gain(self) -> float:
        return self.f1_rl - self.f1_baseline


@dataclass
class ExperimentResult:
    seeds: list

    @property
    def median_removed_fraction(self) -> float:
        return float(np.median([s.removed_fraction for s in self.seeds]))

    @property
    def median_gain(self) -> float:
        return float(np.median([s.gain for s in self.seeds]))

    def table(self) -> str:
        lines = ["seed  removed(inj)  removed(all)  F1 NER+PA  F1 +RL   gain    sec"]
        for s in self.seeds:
            lines.append(
                f"{s.seed:>4}  {s.removed_injected:>4}/{s.injected:<4} {s.removed_fraction:5.2f}"
                f"  {s.removed_total:>8}    {s.f1_baseline:8.4f}  {s.f1_rl:7.4f}  {100 * s.gain:+6.2f}  {s.seconds:5.1f}"
            )
        lines.append(f"median removed fraction {self.median_removed_fraction:.3f}, median gain {100 * self.median_gain:+.2f} pts")
        return "\n".join(lines)


def run_seed(seed: int, exp: DenoiseExperiment, log=None) -> SeedResult:
    start = time.perf_counter()
    corpus = make_corpus(seed, **exp.corpus)
    cfg = pl.TrainConfig(seed=seed, **exp.train)
    model = pl.pretrain(corpus.gold, corpus.distant, cfg, np.random.default_rng([seed, 1]), dev=corpus.dev)
    f1_base = pl.evaluate(pl.tag(model, corpus.test.sentences), corpus.test).f1
    cleaned, _ = pl.rl_denoise(model, corpus.distant, corpus.gold, corpus.dev, cfg, np.random.default_rng([seed, 2]))
    final = pl.retrain(corpus.gold, cleaned, cfg, np.random.default_rng([seed, 3]), dev=corpus.dev)
    f1_rl = pl.evaluate(pl.tag(final, corpus.test.sentences), corpus.test).f1
    removed = set(corpus.distant.ids()) - set(cleaned.ids())
    res = SeedResult(
        seed, len(corpus.injected), len(removed & corpus.injected), len(removed),
        f1_base, f1_rl, time.perf_counter() - start,
    )
    if log:
        log(f"seed {seed}: removed {res.removed_injected}/{res.injected} injected "
            f"({res.removed_total} total), F1 {f1_base:.4f} -> {f1_rl:.4f}, {res.seconds:.0f}s")
    return res


def run_experiment(exp: DenoiseExperiment | None = None, log=None) -> ExperimentResult:
    exp = exp or DenoiseExperiment()
    return ExperimentResult([run_seed(s, exp, log) for s in exp.seeds])
