"""Command line: ``grover {train,sweep,analyze,synth}``.

Settings come from built-in defaults, then an optional flat JSON config file
(``--config``), then explicit flags; later sources win.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import analysis
from .controller import load_checkpoint
from .data import SyntheticSpec, generate_synthetic, write_corpus
from .embeddings import load_table
from .errors import GroverError
from .experiment import (
    RunConfig,
    SweepRunner,
    parse_synthetic,
    record_line,
    run,
    summary_line,
    write_effective_config,
    write_outputs,
)

INCOMPLETE = "INCOMPLETE"

# flag -> (RunConfig field, type)
RUN_FLAGS = {
    "--data": ("data", str),
    "--test": ("test", str),
    "--synthetic": ("synthetic", str),
    "--embeddings": ("embeddings", str),
    "--embedding-dim": ("embedding_dim", int),
    "--seq-len": ("seq_len", int),
    "--model": ("model", str),
    "--dropout": ("dropout", float),
    "--word-drop": ("word_drop", float),
    "--step-size": ("step_size", float),
    "--noise-range": ("noise_range", float),
    "--policy": ("policy", str),
    "--noise-distribution": ("noise_distribution", str),
    "--max-meta-epochs": ("max_meta_epochs", int),
    "--patience": ("patience", int),
    "--epochs": ("epochs", int),
    "--batch-size": ("batch_size", int),
    "--lr": ("lr", float),
    "--val-fraction": ("val_fraction", float),
    "--meta-val-fraction": ("meta_val_fraction", float),
    "--seed": ("seed", int),
    "--dtype": ("dtype", str),
    "--out": ("out", str),
}

SWEEP_TYPES = {
    "step_size": float,
    "noise_range": float,
    "policy": str,
    "dropout": float,
    "word_drop": float,
    "patience": int,
    "epochs": int,
    "batch_size": int,
}


class UsageError(Exception):
    pass


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat JSON file whose keys mirror the flag names")
    choices = {"--model": ["textcnn", "bow_linear"], "--policy": ["gradual", "none", "reversed", "both"],
               "--dtype": ["float32", "float64"], "--noise-distribution": ["uniform", "gaussian"]}
    for flag, (dest, typ) in RUN_FLAGS.items():
        p.add_argument(flag, dest=dest, type=typ, default=None, choices=choices.get(flag))


def resolve_config(args) -> RunConfig:
    merged = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            raw = json.load(fh)
        if not isinstance(raw, dict):
            raise UsageError("config file must hold a flat JSON object")
        merged.update({k.lstrip("-").replace("-", "_"): v for k, v in raw.items()})
    for _, (dest, _) in RUN_FLAGS.items():
        value = getattr(args, dest)
        if value is not None:
            merged[dest] = value
    return RunConfig.from_dict(merged)


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    cfg.validate()
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    marker = out / INCOMPLETE
    marker.write_text("run started; outputs are partial until this file is removed\n")
    write_effective_config(out, cfg)
    result, initial = run(cfg, on_record=lambda rec: print(record_line(rec), flush=True))
    if result.cap_reached:
        print(f"warning: stopped at the meta-epoch cap ({cfg.max_meta_epochs}) before every word was masked")
    write_outputs(out, cfg, result, initial)
    marker.unlink()
    print(summary_line(result))
    return 0


def parse_grid(specs) -> dict:
    grid = {}
    for spec in specs or []:
        if "=" not in spec:
            raise UsageError(f"bad --sweep {spec!r}; expected name=v1,v2,...")
        name, values = spec.split("=", 1)
        name = name.strip().replace("-", "_")
        if name not in SWEEP_TYPES:
            raise UsageError(f"cannot sweep {name!r}; sweepable parameters: {', '.join(SWEEP_TYPES)}")
        items = [v.strip() for v in values.split(",")]
        if not values.strip() or any(not v for v in items):
            raise UsageError(f"--sweep {name}: empty value in {values!r}")
        try:
            grid[name] = [SWEEP_TYPES[name](v) for v in items]
        except ValueError as exc:
            raise UsageError(f"--sweep {name}: {exc}") from None
    if not grid:
        raise UsageError("at least one --sweep name=v1,v2,... is required")
    return grid


def cmd_sweep(args) -> int:
    grid = parse_grid(args.sweep)
    cfg = resolve_config(args)
    cfg.validate()
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    marker = out / INCOMPLETE
    marker.write_text("sweep started\n")
    write_effective_config(out, cfg)
    runner = SweepRunner(cfg)
    results = analysis.run_sweep(runner, grid, n_seeds=args.seeds, master_seed=cfg.seed, jobs=args.jobs)
    analysis.write_sweep(results, out / "sweep.jsonl")
    for res in results:
        point = " ".join(f"{k}={v}" for k, v in res.point.items())
        print(
            f"{point} n={res.n} mean={res.mean * 100:.2f} std={res.std * 100:.2f} "
            f"baseline={res.baseline_mean * 100:.2f} failures={len(res.failures)}"
        )
    marker.unlink()
    return 0 if not any(res.failures for res in results) else 1


def cmd_analyze(args) -> int:
    ckpt_dir = Path(args.checkpoint)
    ckpt = load_checkpoint(ckpt_dir)
    initial_path = Path(args.initial) if args.initial else ckpt_dir / "initial.txt"
    initial = load_table(initial_path, ckpt.embeddings.vocab) if initial_path.is_file() else None
    lines, status = [], 0
    for cue in args.cue:
        try:
            report = analysis.nearest_neighbors(ckpt.embeddings, cue, args.k)
        except GroverError as exc:
            print(f"warning: {cue}: {exc}", file=sys.stderr)
            status = 1
            continue
        lines.append("final " + report.format())
        if initial is not None:
            lines.append("initial " + analysis.nearest_neighbors(initial, cue, args.k).format())
            churn = analysis.neighbor_churn(initial, ckpt.embeddings, cue, args.k)
            lines.append(f"{cue}: top-{args.k} jaccard(initial, final)={churn:.4f}")
    if initial is not None:
        lines.append("drift " + json.dumps(analysis.embedding_drift(initial, ckpt.embeddings).summary(), sort_keys=True))
    for line in lines:
        print(line)
    if args.out:
        Path(args.out).write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return status


def cmd_synth(args) -> int:
    spec = parse_synthetic(args.spec) if args.spec else SyntheticSpec()
    overrides = {k: getattr(args, k) for k in ("classes", "vocab_size", "docs_per_class", "signal", "seed",
                                               "test_docs_per_class", "doc_len") if getattr(args, k) is not None}
    if overrides:
        spec = SyntheticSpec(**{**spec.to_dict(), **overrides})
    train, test = generate_synthetic(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_corpus(train, out / "train.csv")
    write_corpus(test, out / "test.csv")
    with open(out / "spec.json", "w", encoding="utf-8") as fh:
        json.dump(spec.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {len(train)} train and {len(test)} test documents to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="grover", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run GROVER meta-training")
    _add_run_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="ablation sweep over GROVER hyperparameters")
    _add_run_flags(p)
    p.add_argument("--sweep", action="append", help="name=v1,v2,... (repeatable, cartesian product)")
    p.add_argument("--seeds", type=int, default=1, help="runs per grid point")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("analyze", help="nearest neighbours and drift of a checkpoint's embeddings")
    p.add_argument("checkpoint")
    p.add_argument("--cue", action="append", required=True)
    p.add_argument("-k", type=int, default=20)
    p.add_argument("--initial", help="embedding table to compare against (default: checkpoint/initial.txt)")
    p.add_argument("--out", help="also write the report here")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("synth", help="write a synthetic train/test corpus")
    p.add_argument("--spec", help="JSON file or inline key=value,... spec")
    p.add_argument("--classes", type=int)
    p.add_argument("--vocab-size", type=int)
    p.add_argument("--docs-per-class", type=int)
    p.add_argument("--test-docs-per-class", type=int)
    p.add_argument("--doc-len", type=int)
    p.add_argument("--signal", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"grover: error: {exc}", file=sys.stderr)
        return 2
    except (GroverError, OSError, json.JSONDecodeError) as exc:
        print(f"grover: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
