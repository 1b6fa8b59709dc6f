"""Command line interface.

Subcommands:
  gen-data   simulate a benchmark dataset into a directory
  train      fit the potential networks on a dataset
  track      run the tracker over a dataset, one JSON line per frame
  eval       tracking error table (CSV + SVG) against ground truth
  inspect    compare a pairwise model against the dataset's translations

Errors print a single `error: ...` line on stderr and exit with status 1;
usage problems exit with the standard argparse status 2.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from . import evalreport
from .model import GraphModel
from .potentials import PotentialSet
from .simworld import dataset as ds
from .training import TrainConfig, fit


def _add_common_tracker_args(p):
    p.add_argument("--checkpoint", required=True, help="trained model file")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--particles", type=int, default=200)
    p.add_argument("--passes", type=int, default=2)
    p.add_argument("--unary-samples", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="belieftrack",
        description="particle belief tracking on simulated articulated objects")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="simulate a dataset")
    p.add_argument("--task", choices=("pendulum", "spider"), required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--sequences", type=int, default=32)
    p.add_argument("--frames", type=int, default=20)
    p.add_argument("--size", type=int, default=128,
                   help="frame side length in pixels")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split", choices=("train", "test"), default="train",
                   help="train balances the task's clutter-ratio bins; "
                        "test spreads sequences over clutter-ratio deciles")
    p.add_argument("--no-clutter", action="store_true")

    p = sub.add_parser("train", help="train potentials on a dataset")
    p.add_argument("--data", required=True, help="training dataset directory")
    p.add_argument("--val-data", help="validation dataset directory")
    p.add_argument("--val-fraction", type=float, default=0.1,
                   help="tail fraction of --data held out when --val-data "
                        "is not given")
    p.add_argument("--out", required=True, help="checkpoint file to write")
    p.add_argument("--config", help="key=value training options file")
    p.add_argument("--log", help="JSONL training log file")
    for flag, kind in (("--epochs", int), ("--batch-size", int),
                       ("--particles", int), ("--passes-per-frame", int),
                       ("--unary-samples", int), ("--lr", float),
                       ("--bandwidth", float), ("--seed", int),
                       ("--patience", int), ("--val-particles", int),
                       ("--val-passes", int)):
        p.add_argument(flag, type=kind, default=None)

    p = sub.add_parser("track", help="run the tracker, JSONL output")
    _add_common_tracker_args(p)
    p.add_argument("--out", required=True,
                   help="output JSONL file, or - for stdout")

    p = sub.add_parser("eval", help="error table against ground truth")
    _add_common_tracker_args(p)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("inspect", help="pairwise model inspection plots")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--edge", required=True, help="edge as source-dest ids, "
                   "e.g. 0-1")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    return parser


def _load_model(checkpoint, graph) -> PotentialSet:
    pots = PotentialSet(graph, seed=0)
    pots.load(checkpoint)
    return pots


def _load_records(data_dir):
    manifest, records = ds.load_dataset(data_dir)
    graph = evalreport.graph_for_task(manifest["task"])
    return manifest, records, graph


def cmd_gen_data(args) -> int:
    bins = None
    if args.split == "test":
        bins = ds.TEST_DECILES
    manifest = ds.generate_dataset(
        args.out, args.task, args.sequences, args.frames, args.size,
        args.seed, bins=bins, use_clutter=not args.no_clutter)
    print(f"wrote {args.sequences} sequences to {args.out} "
          f"(task {manifest['task']}, {args.frames} frames at "
          f"{args.size}px)")
    return 0


def cmd_train(args) -> int:
    manifest, records, graph = _load_records(args.data)
    sequences = [ds.to_training_sequence(r) for r in records]

    if args.val_data:
        _, val_records, val_graph = _load_records(args.val_data)
        if val_graph.nodes != graph.nodes:
            raise ValueError("validation dataset task does not match")
        val_sequences = [ds.to_training_sequence(r) for r in val_records]
    else:
        held = int(round(args.val_fraction * len(sequences)))
        held = min(max(held, 1 if args.val_fraction > 0 else 0),
                   len(sequences) - 1)
        if held:
            val_sequences = sequences[-held:]
            sequences = sequences[:-held]
        else:
            val_sequences = []

    config = (TrainConfig.from_file(args.config) if args.config
              else TrainConfig())
    for field in ("epochs", "batch_size", "particles", "passes_per_frame",
                  "unary_samples", "lr", "bandwidth", "seed", "patience",
                  "val_particles", "val_passes"):
        value = getattr(args, field)
        if value is not None:
            setattr(config, field, value)
    config.checkpoint_path = args.out
    if args.log:
        config.log_path = args.log

    pots = PotentialSet(graph, seed=config.seed)
    mean, std = ds.manifest_channel_stats(manifest)
    pots.set_normalization(mean, std)

    history = fit(graph, pots, sequences, val_sequences, config)
    final = history[-1] if history else {}
    print(f"trained {len(history)} epochs on {len(sequences)} sequences; "
          f"checkpoint {args.out}")
    if final.get("val_error") is not None:
        print(f"final validation error {final['val_error']:.5f} "
              "(normalized units)")
    return 0


def cmd_track(args) -> int:
    manifest, records, graph = _load_records(args.data)
    pots = _load_model(args.checkpoint, graph)
    results = evalreport.track_records(
        graph, pots, records, particles=args.particles, passes=args.passes,
        seed=args.seed, unary_samples=args.unary_samples)
    names = [p.stem for p in ds.sequence_paths(args.data)]
    if args.out == "-":
        evalreport.write_track_jsonl(graph, records, results, sys.stdout,
                                     names)
    else:
        with open(args.out, "w") as f:
            evalreport.write_track_jsonl(graph, records, results, f, names)
        print(f"wrote {sum(len(r) for r in records)} frame records "
              f"to {args.out}")
    return 0


def cmd_eval(args) -> int:
    manifest, records, graph = _load_records(args.data)
    pots = _load_model(args.checkpoint, graph)
    results = evalreport.track_records(
        graph, pots, records, particles=args.particles, passes=args.passes,
        seed=args.seed, unary_samples=args.unary_samples)
    size = int(manifest["size"])
    rows = evalreport.error_rows(graph, records, results, size)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    evalreport.write_error_csv(rows, out / "errors.csv")
    evalreport.error_plot(rows, out / "errors.svg")
    overall = (sum(r["mean_error_px"] * r["n"] for r in rows)
               / max(sum(r["n"] for r in rows), 1))
    print(f"mean error {overall:.2f}px over {sum(r['n'] for r in rows)} "
          f"node-frames; table in {out / 'errors.csv'}")
    return 0


def cmd_inspect(args) -> int:
    manifest, records, graph = _load_records(args.data)
    pots = _load_model(args.checkpoint, graph)
    try:
        source, dest = args.edge.split("-", 1)
    except ValueError:
        raise ValueError(f"bad edge {args.edge!r}, expected source-dest")
    paths = evalreport.pairwise_inspection(
        graph, pots, records, source, dest, args.out_dir, seed=args.seed)
    print("wrote " + ", ".join(str(p) for p in paths))
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "track": cmd_track,
    "eval": cmd_eval,
    "inspect": cmd_inspect,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except Exception as err:   # contract: single error line, exit status 1
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
