"""Run the synthetic false-positive denoising experiment and print a table.

    python3 scripts/run_synthetic_experiment.py --seeds 0 1 2 3 4
    python3 scripts/run_synthetic_experiment.py --set rl_lr=0.05 --corpus trap_types=fixed
"""

import argparse
import ast
import time

from wsner.experiment import DenoiseExperiment, run_experiment


def _pairs(items):
    out = {}
    for item in items or []:
        key, _, value = item.partition("=")
        try:
            out[key] = ast.literal_eval(value)
        except (ValueError, SyntaxError):
            out[key] = value
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--set", nargs="*", metavar="KEY=VALUE", help="training config overrides")
    ap.add_argument("--corpus", nargs="*", metavar="KEY=VALUE", help="corpus generator overrides")
    args = ap.parse_args()

    exp = DenoiseExperiment(seeds=tuple(args.seeds))
    exp.train.update(_pairs(args.set))
    exp.corpus.update(_pairs(args.corpus))
    start = time.perf_counter()
    result = run_experiment(exp, log=print)
    print()
    print(result.table())
    print(f"total {time.perf_counter() - start:.0f}s")


if __name__ == "__main__":
    main()
