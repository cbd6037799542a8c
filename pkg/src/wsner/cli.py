"""Command-line entry point: annotate, pretrain, denoise, retrain, tag, eval.

Configuration comes from an optional flat ``key = value`` file given with
``--config``; flags on the command line override file values.  Failures print
one JSON line ``{"error": ..., "message": ...}`` on stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import pipeline as pl
from .corpus import CorpusError, Dataset, Example, LabelSet, parse_conll, read_raw, to_bio, to_bioes, write_conll
from .encoder import EncoderError, load_embeddings
from .lexicon import annotate_corpus, load_dictionary, load_phrases, parse_partial, write_partial
from .policy import write_trace

PATH_KEYS = ("raw", "gold", "distant", "dev", "test", "dictionary", "phrases", "embeddings", "model", "output", "trace")
TRAIN_KEYS = {f.name: f for f in fields(pl.TrainConfig)}

# required / optional path keys per subcommand
COMMANDS = {
    "annotate": (("raw", "dictionary", "output"), ("phrases",)),
    "pretrain": (("gold", "distant", "model"), ("dev", "embeddings")),
    "denoise": (("model", "gold", "distant", "dev", "output"), ("trace",)),
    "retrain": (("gold", "distant", "model"), ("dev", "embeddings")),
    "tag": (("model", "raw", "output"), ()),
    "eval": (("model", "test"), ("output",)),
}

HELP = {
    "annotate": "dictionary-match raw text into a partial-annotation file",
    "pretrain": "train NER+PA on gold plus distant data",
    "denoise": "run the RL selector and write the cleaned distant set",
    "retrain": "train NER+PA from scratch on gold plus the cleaned set",
    "tag": "tag raw text with a saved model",
    "eval": "tag a gold file and report span precision/recall/F1",
}


class CliError(Exception):
    def __init__(self, kind: str, message: str, **extra):
        super().__init__(message)
        self.kind = kind
        self.extra = extra


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("usage", message)


def parse_config_file(text: str) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    unknown = []
    for lineno, line in enumerate(text.split("\n"), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError("config", f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in TRAIN_KEYS and key not in PATH_KEYS:
            unknown.append(key)
            continue
        out[key] = value
    if unknown:
        raise CliError("config", f"unknown keys: {', '.join(unknown)}", keys=unknown)
    return out


def _convert(key: str, value):
    if not isinstance(value, str):
        return value
    default = TRAIN_KEYS[key].default
    try:
        if isinstance(default, bool):
            low = value.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
        if isinstance(default, tuple):
            return tuple(int(v) for v in value.replace(",", " ").split())
    except ValueError:
        raise CliError("config", f"bad value for {key}: {value!r}", keys=[key]) from None
    return value


def resolve(command: str, args: argparse.Namespace) -> tuple[pl.TrainConfig, dict]:
    """Merge defaults, config file and flags; check required paths."""
    values = {}
    if args.config:
        values.update(parse_config_file(_read(args.config)))
    for key in (*TRAIN_KEYS, *PATH_KEYS):
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    required, optional = COMMANDS[command]
    missing = [k for k in required if not values.get(k)]
    if missing:
        raise CliError("missing", f"missing required keys for {command}: {', '.join(missing)}", keys=missing)
    train_vals = {k: _convert(k, v) for k, v in values.items() if k in TRAIN_KEYS}
    if "scheme" in train_vals:
        train_vals["scheme"] = str(train_vals["scheme"]).upper()
    try:
        cfg = pl.TrainConfig(**train_vals)
    except pl.PipelineError as exc:
        raise CliError("config", str(exc)) from None
    paths = {k: values.get(k) for k in (*required, *optional)}
    return cfg, paths


def _read(path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CliError("io", f"cannot read {path}: {exc.strerror}", path=str(path)) from None


def _write(path, text: str):
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise CliError("io", f"cannot write {path}: {exc.strerror}", path=str(path)) from None


def _rng(cfg: pl.TrainConfig, stream: int) -> np.random.Generator:
    # one independent stream per subcommand
    return np.random.default_rng([cfg.seed, stream])


def load_gold(path, scheme: str, labels: LabelSet | None = None) -> Dataset:
    """Parse a CoNLL file and convert it to ``scheme``."""
    data = parse_conll(_read(path))
    if data.labels.scheme == scheme:
        convert = tuple
    else:
        convert = to_bioes if scheme == "BIOES" else to_bio
    target = labels or data.labels.with_scheme(scheme)
    missing = set(data.labels.entity_types) - set(target.entity_types)
    if missing:
        raise CliError("labels", f"{path}: entity types {sorted(missing)} not in the model label set")
    exs = tuple(Example(ex.sentence, convert(ex.tags), source=ex.source) for ex in data)
    return Dataset(target, exs)


def _embeddings(paths, cfg):
    if not paths.get("embeddings"):
        return None
    return load_embeddings(_read(paths["embeddings"]), unk=cfg.unk, rng=_rng(cfg, 0))


def _load_model(path) -> pl.Model:
    if not Path(path).is_file():
        raise CliError("io", f"cannot read {path}: no such file", path=str(path))
    return pl.load_model(path)


def cmd_annotate(cfg, paths):
    dictionary = load_dictionary(_read(paths["dictionary"]))
    phrases = load_phrases(_read(paths["phrases"])) if paths.get("phrases") else None
    if cfg.mode == "phrase" and phrases is None:
        raise CliError("missing", "mode = phrase needs a phrase list: phrases", keys=["phrases"])
    labels = LabelSet(tuple(sorted(dictionary.types())), cfg.scheme)
    data = annotate_corpus(read_raw(_read(paths["raw"])), dictionary, labels, phrases)
    _write(paths["output"], write_partial(data))
    return f"annotated {len(data)} sentences"


def _train_sets(cfg, paths):
    gold = load_gold(paths["gold"], cfg.scheme)
    distant = parse_partial(_read(paths["distant"]), gold.labels)
    dev = load_gold(paths["dev"], cfg.scheme, gold.labels) if paths.get("dev") else None
    return gold, distant, dev


def cmd_pretrain(cfg, paths):
    gold, distant, dev = _train_sets(cfg, paths)
    model = pl.pretrain(gold, distant, cfg, _rng(cfg, 1), dev, _embeddings(paths, cfg))
    pl.save_model(model, paths["model"])
    return f"pretrained on {len(gold)} gold + {len(distant)} distant sentences"


def cmd_denoise(cfg, paths):
    model = _load_model(paths["model"])
    gold = load_gold(paths["gold"], model.labels.scheme, model.labels)
    dev = load_gold(paths["dev"], model.labels.scheme, model.labels)
    distant = parse_partial(_read(paths["distant"]), model.labels)
    cleaned, trace = pl.rl_denoise(model, distant, gold, dev, cfg, _rng(cfg, 2))
    _write(paths["output"], write_partial(cleaned))
    if paths.get("trace"):
        _write(paths["trace"], write_trace(trace))
    return f"kept {len(cleaned)} of {len(distant)} distant sentences"


def cmd_retrain(cfg, paths):
    gold, cleaned, dev = _train_sets(cfg, paths)
    model = pl.retrain(gold, cleaned, cfg, _rng(cfg, 3), dev, _embeddings(paths, cfg))
    pl.save_model(model, paths["model"])
    return f"retrained on {len(gold)} gold + {len(cleaned)} cleaned sentences"


def cmd_tag(cfg, paths):
    model = _load_model(paths["model"])
    pred = pl.tag(model, read_raw(_read(paths["raw"])))
    _write(paths["output"], write_conll(pred))
    return f"tagged {len(pred)} sentences"


def cmd_eval(cfg, paths):
    model = _load_model(paths["model"])
    test = load_gold(paths["test"], model.labels.scheme, model.labels)
    metrics = pl.evaluate(pl.tag(model, test.sentences), test)
    report = metrics.report()
    if paths.get("output"):
        _write(paths["output"], report)
    return report.rstrip("\n")


HANDLERS = {
    "annotate": cmd_annotate,
    "pretrain": cmd_pretrain,
    "denoise": cmd_denoise,
    "retrain": cmd_retrain,
    "tag": cmd_tag,
    "eval": cmd_eval,
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="wsner", description="Weakly supervised NER with partial CRF and RL denoising.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, (required, optional) in COMMANDS.items():
        p = sub.add_parser(name, help=HELP[name], description=HELP[name])
        p.add_argument("--config", help="flat 'key = value' file; flags override it")
        paths = p.add_argument_group("paths")
        for key in (*required, *optional):
            tag = "required" if key in required else "optional"
            paths.add_argument(f"--{key}", help=f"{tag} path (config key '{key}')")
        p.add_argument("--seed", type=int, help="random seed (default 0)")
        p.add_argument("--scheme", type=str.upper, choices=["BIO", "BIOES"], help="tagging scheme")
        p.add_argument("--mode", choices=["default", "phrase"], help="annotation mode")
        p.add_argument("--char-only", dest="char_only", action="store_const", const=True,
                       help="drop the character BiLSTM (word features only)")
        p.add_argument("--verbose", action="store_true", help="log progress to stderr")
        hyper = p.add_argument_group("training")
        for key, f in TRAIN_KEYS.items():
            if key in ("seed", "scheme", "mode", "char_only"):
                continue
            hyper.add_argument(f"--{key.replace('_', '-')}", dest=key, metavar=key.upper(),
                               help=f"default {f.default}")
    return parser


def run(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        parser = build_parser()
        args = parser.parse_args(argv)
        if args.verbose:
            logging.basicConfig(level=logging.INFO, format="%(name)s: %(message)s")
        cfg, paths = resolve(args.command, args)
        msg = HANDLERS[args.command](cfg, paths)
    except CliError as exc:
        _fail(exc.kind, str(exc), **exc.extra)
        return 2
    except (CorpusError, EncoderError, pl.PipelineError) as exc:
        _fail(type(exc).__name__, str(exc))
        return 1
    if msg:
        print(msg)
    return 0


def _fail(kind, message, **extra):
    line = {"error": kind, "message": " ".join(message.split()), **extra}
    print(json.dumps(line, sort_keys=True), file=sys.stderr)


def main():
    sys.exit(run())
