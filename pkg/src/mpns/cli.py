"""Command line entry point: ``mpns gen | train | experiment | report``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .harness import ExperimentConfig, compare_modes, format_tables, load_results, run_experiment
from .model import ArchConfig, init_model, save_model
from .synthgen import SynthConfig, generate_dataset, load_jsonl, save_jsonl
from .trainer import TrainConfig, TrainingDiverged, evaluate_accuracy, train

KAPPA_CHOICES = {"sum": "sum", "literal": "literal_product", "literal_product": "literal_product"}


def cmd_gen(args) -> int:
    cfg = SynthConfig(s=args.s, n_samples=args.n, seed=args.seed,
                      kappa_form=KAPPA_CHOICES[args.kappa_form], start_index=args.start_index)
    save_jsonl(generate_dataset(cfg), args.out)
    print(f"wrote {args.n} samples to {args.out}")
    return 0


def cmd_train(args) -> int:
    data = load_jsonl(args.data)
    arch = ArchConfig(input_dim=data.x1.shape[1])
    cfg = TrainConfig(epochs=args.epochs, batch_size=min(args.batch_size, len(data)),
                      learning_rate=args.lr, seed=args.seed, mode=args.mode,
                      log_every=args.log_every)
    try:
        model, history = train(init_model(arch, args.seed), data, cfg)
    except TrainingDiverged as exc:
        print(f"training diverged at step {exc.step}: {json.dumps(exc.terms)}", file=sys.stderr)
        return 2
    save_model(model, args.out_model)
    history.save(args.out_history)
    msg = f"trained {cfg.mode} for {history.steps} steps; train accuracy {evaluate_accuracy(model, data):.4f}"
    if args.eval_data:
        msg += f"; eval accuracy {evaluate_accuracy(model, load_jsonl(args.eval_data)):.4f}"
    print(msg)
    return 0


def cmd_experiment(args) -> int:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    table = run_experiment(cfg, args.out, jobs=args.jobs, resume=args.resume)
    summary = compare_modes(table)
    text = format_tables(table) + "\n" + "\n".join(summary.lines()) + "\n"
    Path(args.out, "tables.txt").write_text(text)
    print(text)
    if table.failures:
        for name, err in table.failures.items():
            print(f"cell {name}: {err}", file=sys.stderr)
        return 1
    return 0


def cmd_report(args) -> int:
    table = load_results(args.table)
    markdown = args.out is not None and Path(args.out).suffix == ".md"
    text = format_tables(table, markdown=markdown)
    summary = compare_modes(table)
    text += "\n" + "\n".join(summary.lines()) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    print(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mpns", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic dataset as JSON lines")
    g.add_argument("--s", type=float, required=True)
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--kappa-form", choices=sorted(KAPPA_CHOICES), default="sum")
    g.add_argument("--start-index", type=int, default=0,
                   help="first sample index; use disjoint ranges for train/eval")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train one model on a JSON-lines dataset")
    t.add_argument("--mode", choices=["net", "mpns_minus_c", "mpns"], required=True)
    t.add_argument("--data", required=True)
    t.add_argument("--seed", type=int, required=True)
    t.add_argument("--out-model", required=True)
    t.add_argument("--out-history", required=True)
    t.add_argument("--eval-data")
    t.add_argument("--epochs", type=int, default=30)
    t.add_argument("--batch-size", type=int, default=128)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--log-every", type=int, default=50)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("experiment", help="run the (mode x s x seed) grid")
    e.add_argument("--config", help="JSON experiment config (defaults: full grid)")
    e.add_argument("--out", required=True)
    e.add_argument("--jobs", type=int, default=1)
    e.add_argument("--resume", action="store_true")
    e.set_defaults(func=cmd_experiment)

    r = sub.add_parser("report", help="print seed-averaged dCor tables from a results CSV")
    r.add_argument("--table", required=True)
    r.add_argument("--out", help="write the report to a .txt or .md file")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
