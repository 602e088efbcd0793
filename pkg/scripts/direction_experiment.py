"""GROVER vs. its own meta-epoch-0 baseline on the standard synthetic corpus.

Checks the sign of the improvement from random initialisation and the drop
under an excessive noise range.

    python scripts/direction_experiment.py --seeds 5 --noise-ranges 1.0 10.0
"""
import argparse
import json
import time

import numpy as np

from grover.experiment import prepare_data, run, standard_config


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--noise-ranges", type=float, nargs="+", default=[1.0, 10.0])
    p.add_argument("--synthetic", default="standard")
    p.add_argument("--embedding-dim", type=int, default=32)
    p.add_argument("--model", default="textcnn")
    p.add_argument("--out", help="write per-run results as JSON lines")
    args = p.parse_args()

    cfg = standard_config(synthetic=args.synthetic, embedding_dim=args.embedding_dim, model=args.model)
    data = prepare_data(cfg)
    rows = []
    for r in args.noise_ranges:
        base, final = [], []
        for seed in range(args.seeds):
            t0 = time.time()
            result, _ = run(standard_config(synthetic=args.synthetic, embedding_dim=args.embedding_dim,
                                            model=args.model, noise_range=r), data, seed=seed)
            b, g = result.records[0].test_acc, result.best.record.test_acc
            base.append(b)
            final.append(g)
            row = dict(noise_range=r, seed=seed, baseline=b, grover=g,
                       best_meta_epoch=result.best.record.meta_epoch, seconds=round(time.time() - t0, 1))
            rows.append(row)
            print(json.dumps(row), flush=True)
        print(f"noise_range={r}: baseline {np.mean(base) * 100:.2f} grover {np.mean(final) * 100:.2f} "
              f"delta {(np.mean(final) - np.mean(base)) * 100:+.2f}", flush=True)
    if args.out:
        with open(args.out, "w") as fh:
            for row in rows:
                fh.write(json.dumps(row) + "\n")


if __name__ == "__main__":
    main()
