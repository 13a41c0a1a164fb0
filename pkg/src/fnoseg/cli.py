"""Command-line surface: dataset generation, training, evaluation,
gradient checking, parameter counting, and the resolution-robustness
experiment.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure (non-finite loss), 5 gradient-check failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

from . import data as data_mod
from . import experiment as exp_mod
from . import gradcheck as gradcheck_mod
from . import model as model_mod
from . import perf
from . import tensor
from . import train as train_mod
from .errors import (
    FnosegError,
    GradCheckError,
    InvalidConfigError,
    NumericalError,
    ScheduleRangeError,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4
EXIT_GRADCHECK = 5


def _parse_triple(text):
    parts = [int(p) for p in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected three comma-separated ints, got {text!r}")
    return tuple(parts)


def _parse_int_list(text):
    return [int(p) for p in text.split(",")]


def _parse_str_list(text):
    return [p.strip() for p in text.split(",") if p.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fnoseg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("synth-gen", help="generate a synthetic nested-region dataset")
    g.add_argument("--out", required=True, help="output directory for volumes + manifest")
    g.add_argument("--spec", help="JSON file with SyntheticSpec overrides")
    g.add_argument("--grid", type=_parse_triple, help="grid size, e.g. 64,64,64")
    g.add_argument("--samples", type=int, help="training-pool size (split 90/10)")
    g.add_argument("--test", type=int, help="held-out test samples")
    g.add_argument("--noise", type=float, help="additive noise sigma")
    g.add_argument("--seed", type=int, default=0)

    def add_run_config_args(p, with_factor=True):
        p.add_argument("--config", help="run-config JSON (flags override its fields)")
        p.add_argument("--manifest", help="dataset manifest path")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--precision", choices=sorted(exp_mod.PRECISIONS))
        p.add_argument("--epochs", type=int)
        p.add_argument("--loss", choices=sorted(train_mod.LOSSES))
        p.add_argument("--variant", choices=model_mod.VARIANTS)
        p.add_argument("--width", type=int)
        p.add_argument("--layers", type=int)
        p.add_argument("--kmax", type=_parse_triple)
        p.add_argument("--total-epochs", type=int, help="schedule length")
        if with_factor:
            p.add_argument("--factor", type=int, help="training downsampling factor")

    t = sub.add_parser("train", help="train one model variant")
    add_run_config_args(t)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a manifest split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--manifest", required=True)
    e.add_argument("--split", default="test", choices=("train", "val", "test"))
    e.add_argument("--factor", type=int, default=1, help="evaluation resolution factor (1 = native)")
    e.add_argument("--out", help="directory for eval.json / eval.csv")

    c = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    c.add_argument("--ops", action="store_true", help="check every op")
    c.add_argument("--model", action="store_true", help="check tiny end-to-end models")

    p = sub.add_parser("param-count", help="exact parameter count and per-block breakdown")
    p.add_argument("--variant", default="fnoseg3d", choices=model_mod.VARIANTS)
    p.add_argument("--width", type=int)
    p.add_argument("--layers", type=int)
    p.add_argument("--kmax", type=_parse_triple)
    p.add_argument("--json", action="store_true", help="emit JSON instead of text")

    x = sub.add_parser("experiment-resolution", help="train-per-factor, evaluate-native robustness matrix")
    add_run_config_args(x, with_factor=False)
    x.add_argument("--factors", type=_parse_int_list, default=[1, 2], help="training downsampling factors")
    x.add_argument(
        "--variants",
        type=_parse_str_list,
        default=["fnoseg3d", "fno_shared", "fno_original", "baseline_cnn"],
    )
    x.add_argument("--threads", type=int, default=1, help="parallel cell processes")
    return parser


def _resolve_run_config(args, require_manifest=True) -> exp_mod.RunConfig:
    if args.config:
        run = exp_mod.RunConfig.from_json(args.config)
    else:
        run = exp_mod.desk_run_config(manifest="", out_dir="runs/out")
    updates = {}
    for flag, attr in (("manifest", "manifest"), ("out", "out_dir"), ("seed", "seed"), ("precision", "precision"), ("epochs", "epochs"), ("loss", "loss"), ("variant", "variant")):
        value = getattr(args, flag, None)
        if value is not None:
            updates[attr] = value
    if getattr(args, "factor", None) is not None:
        updates["downsample_factor"] = args.factor
    model_updates = {}
    for flag, attr in (("width", "width"), ("layers", "n_layers"), ("kmax", "k_max")):
        value = getattr(args, flag, None)
        if value is not None:
            model_updates[attr] = value
    if model_updates:
        updates["model"] = dataclasses.replace(run.model, **model_updates)
    if getattr(args, "total_epochs", None) is not None:
        updates["schedule"] = dataclasses.replace(run.schedule, total_epochs=args.total_epochs)
    if updates:
        run = dataclasses.replace(run, **updates)
    if require_manifest and not run.manifest:
        raise InvalidConfigError("no dataset manifest given (use --manifest or --config)")
    return run


def cmd_synth_gen(args) -> int:
    overrides = {}
    if args.spec:
        overrides = json.loads(Path(args.spec).read_text())
    for flag, key in (("grid", "grid"), ("samples", "num_samples"), ("test", "num_test"), ("noise", "noise")):
        value = getattr(args, flag)
        if value is not None:
            overrides[key] = value
    if "grid" in overrides:
        overrides["grid"] = tuple(overrides["grid"])
    if "contrast" in overrides:
        overrides["contrast"] = tuple(tuple(row) for row in overrides["contrast"])
    try:
        spec = data_mod.SyntheticSpec(**overrides)
    except TypeError as exc:
        raise InvalidConfigError(f"bad synthetic spec: {exc}") from exc
    manifest = data_mod.generate_synthetic(spec, seed=args.seed, out_dir=args.out)
    counts = {split: len(manifest.paths(split)) for split in ("train", "val", "test")}
    print(f"wrote {sum(counts.values())} volumes to {args.out} (splits: {counts}), spec hash {manifest.spec_hash}")
    return EXIT_OK


def cmd_train(args) -> int:
    run = _resolve_run_config(args)
    result = exp_mod.run_training(run, log=print)
    summary = result.summary()
    print(f"done: best epoch {summary['best_epoch']}, mean val dice {summary['best_mean_val_dice']:.4f}")
    print(f"outputs in {run.out_dir}: checkpoint.ckpt, history.csv, summary.json")
    return EXIT_OK


def cmd_eval(args) -> int:
    report = exp_mod.evaluate_checkpoint(args.checkpoint, args.manifest, split=args.split, factor=args.factor)
    for name, value in report["dice"].items():
        print(f"dice_{name}: {value:.4f}")
    print(f"dice_mean: {report['dice_mean']:.4f}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "eval.json").write_text(data_mod.canonical_json(report) + "\n")
        with open(out / "eval.csv", "w") as fh:
            fh.write("id," + ",".join(train_mod.REGION_LABELS) + "\n")
            for row in report["per_sample"]:
                fh.write(row["id"] + "," + ",".join(repr(row[r]) for r in train_mod.REGION_LABELS) + "\n")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    do_ops = args.ops or not (args.ops or args.model)
    do_model = args.model or not (args.ops or args.model)
    reports = []
    if do_ops:
        reports.extend(gradcheck_mod.run_op_suite())
    if do_model:
        reports.extend(gradcheck_mod.run_model_suite())
    failed = [r for r in reports if not r.passed]
    for r in reports:
        print(r)
    if failed:
        raise GradCheckError(f"{len(failed)} gradient check(s) failed")
    print(f"all {len(reports)} gradient checks passed")
    return EXIT_OK


def cmd_param_count(args) -> int:
    overrides = {}
    if args.width is not None:
        overrides["width"] = args.width
    if args.layers is not None:
        overrides["n_layers"] = args.layers
    if args.kmax is not None:
        overrides["k_max"] = args.kmax
    cfg = model_mod.variant_config(args.variant, **overrides)
    total = model_mod.count_from_config(cfg)
    # breakdown via a real build when affordable, analytic total either way
    if total <= 2_000_000:
        breakdown = model_mod.param_count_breakdown(model_mod.build(cfg))
        assert sum(breakdown.values()) == total
    else:
        breakdown = None
    if breakdown:
        grouped = {}
        for key, size in breakdown.items():
            family = key.rstrip("0123456789")
            count, subtotal = grouped.get(family, (0, 0))
            grouped[family] = (count + 1, subtotal + size)
        breakdown = {f"{fam} (x{n})" if n > 1 else fam: size for fam, (n, size) in sorted(grouped.items())}
    if args.json:
        print(data_mod.canonical_json({"variant": args.variant, "total": total, "breakdown": breakdown}))
    else:
        print(f"{args.variant}: {total:,} parameters")
        for key, size in (breakdown or {}).items():
            print(f"  {key:16s} {size:,}")
        if breakdown is None:
            print("  (breakdown skipped: model too large to materialize; total is analytic)")
    return EXIT_OK


def cmd_experiment_resolution(args) -> int:
    run = _resolve_run_config(args)
    table = exp_mod.experiment_resolution(run, args.factors, args.variants, threads=args.threads, log=print)
    print(f"{'factor':>6s} " + " ".join(f"{v:>14s}" for v in table["variants"]))
    for factor in table["factors"]:
        row = [f"{factor:>6d}"]
        for variant in table["variants"]:
            cell = table["cells"][f"{variant}@f{factor}"]
            row.append(f"{cell['dice_mean']:>14.4f}" if cell["status"] == "ok" else f"{'failed':>14s}")
        print(" ".join(row))
    print(f"outputs in {run.out_dir}: robustness_table.csv, results.json")
    failed = [k for k, c in table["cells"].items() if c["status"] != "ok"]
    if failed:
        print(f"warning: {len(failed)} cell(s) failed: {failed}", file=sys.stderr)
    return EXIT_OK


COMMANDS = {
    "synth-gen": cmd_synth_gen,
    "train": cmd_train,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "param-count": cmd_param_count,
    "experiment-resolution": cmd_experiment_resolution,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    perf.tune_allocator()
    tensor.set_fft_workers(min(2, os.cpu_count() or 1))
    try:
        return COMMANDS[args.command](args)
    except GradCheckError as exc:
        print(f"gradcheck failure: {exc}", file=sys.stderr)
        return EXIT_GRADCHECK
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (InvalidConfigError, ScheduleRangeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FnosegError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
