"""Run configuration and the resolution-robustness experiment.

The experiment trains each requested model variant on volumes
downsampled by each requested factor, always evaluates on the held-out
test split at native resolution, and emits a factor x variant Dice table
(CSV and JSON). Failures of individual cells are recorded in the table
and do not abort the remaining cells. Every cell derives its own named
seed, so the matrix gives identical results whether cells run
sequentially or as parallel processes.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import data as data_mod
from . import model as model_mod
from . import train as train_mod
from .errors import InvalidConfigError
from .seeding import derive_rng

PRECISIONS = {"f32": np.float32, "f64": np.float64}


@dataclass(frozen=True)
class RunConfig:
    """Everything one training run needs, loadable from one JSON file."""

    manifest: str = ""
    out_dir: str = "runs/out"
    seed: int = 0
    precision: str = "f32"
    epochs: int | None = None  # defaults to schedule.total_epochs
    downsample_factor: int = 1
    loss: str = "pcc"
    variant: str = "fnoseg3d"
    model: model_mod.ModelConfig = field(default_factory=model_mod.ModelConfig)
    schedule: train_mod.ScheduleConfig = field(default_factory=train_mod.ScheduleConfig)
    augment: train_mod.AugmentConfig = field(default_factory=train_mod.AugmentConfig)

    def validate(self):
        if self.precision not in PRECISIONS:
            raise InvalidConfigError(f"precision must be one of {sorted(PRECISIONS)}, got {self.precision!r}")
        if self.downsample_factor < 1:
            raise InvalidConfigError("downsample_factor must be >= 1")
        if self.loss not in train_mod.LOSSES:
            raise InvalidConfigError(f"unknown loss {self.loss!r}")
        if self.variant not in model_mod.VARIANTS:
            raise InvalidConfigError(f"unknown variant {self.variant!r}")
        self.model.validate()
        self.schedule.validate()

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["model"] = self.model.to_dict()
        return d

    @staticmethod
    def from_dict(d: dict) -> "RunConfig":
        d = dict(d)
        if "model" in d:
            d["model"] = model_mod.ModelConfig.from_dict(d["model"])
        if "schedule" in d:
            d["schedule"] = train_mod.ScheduleConfig(**d["schedule"])
        if "augment" in d:
            aug = dict(d["augment"])
            if "scale_range" in aug:
                aug["scale_range"] = tuple(aug["scale_range"])
            d["augment"] = train_mod.AugmentConfig(**aug)
        return RunConfig(**d)

    @staticmethod
    def from_json(path) -> "RunConfig":
        try:
            return RunConfig.from_dict(json.loads(Path(path).read_text()))
        except (TypeError, ValueError, KeyError) as exc:
            raise InvalidConfigError(f"bad run config {path}: {exc}") from exc


def desk_run_config(manifest: str, out_dir: str, **overrides) -> RunConfig:
    """Desk-scale defaults: a matrix of these runs completes on a laptop
    CPU (the paper-scale model config stays available for counting and
    small forward tests)."""
    model_kw = dict(width=8, n_layers=8, k_max=(7, 7, 7), ds_tap_stride=4)
    model_kw.update(overrides.pop("model_overrides", {}))
    cfg = model_mod.ModelConfig(**model_kw)
    defaults = dict(
        manifest=manifest,
        out_dir=out_dir,
        model=cfg,
        schedule=train_mod.ScheduleConfig(total_epochs=50),
        augment=train_mod.AugmentConfig(),
    )
    defaults.update(overrides)
    return RunConfig(**defaults)


def variant_model_config(run: RunConfig, variant: str, seed: int) -> model_mod.ModelConfig:
    """The run's model shape with one variant's flag preset applied."""
    base = run.model
    return model_mod.variant_config(
        variant,
        in_channels=base.in_channels,
        out_labels=base.out_labels,
        width=base.width,
        n_layers=base.n_layers,
        k_max=base.k_max,
        ds_tap_stride=base.ds_tap_stride,
        seed=seed,
    )


def run_training(run: RunConfig, log=None) -> train_mod.TrainResult:
    """Execute one training run; the resolved config is serialized into
    the output directory before anything else happens."""
    from . import tensor

    tensor.set_fft_workers(2)
    run.validate()
    out_dir = Path(run.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(data_mod.canonical_json(run.to_dict()) + "\n")
    manifest = data_mod.load_manifest(run.manifest)
    cfg = variant_model_config(run, run.variant, seed=run.seed)
    params = model_mod.build(cfg, dtype=PRECISIONS[run.precision])
    return train_mod.train_loop(
        params,
        manifest,
        run.schedule,
        run.augment,
        seed=run.seed,
        epochs=run.epochs,
        downsample_factor=run.downsample_factor,
        loss=run.loss,
        out_dir=out_dir,
        log=log,
    )


def evaluate_checkpoint(checkpoint_path, manifest_path, split="test", factor=1) -> dict:
    """Per-region Dice of a trained model on one split, evaluated at the
    requested resolution (factor 1 = native)."""
    params = model_mod.load_checkpoint(checkpoint_path)
    manifest = data_mod.load_manifest(manifest_path)
    samples = data_mod.read_split(manifest, split)
    if factor != 1:
        samples = [train_mod.downsample_sample(s, factor) for s in samples]
    per_sample = []
    for s in samples:
        pred = train_mod.predict_labels(params, train_mod.normalize_modality(s.image))
        scores = train_mod.region_dice(pred, s.labels)
        per_sample.append({"id": s.sample_id, **scores})
    mean = {name: float(np.mean([r[name] for r in per_sample])) for name in train_mod.REGION_LABELS}
    return {
        "split": split,
        "factor": factor,
        "dice": mean,
        "dice_mean": float(np.mean(list(mean.values()))),
        "per_sample": per_sample,
    }


# ---------------------------------------------------------------------------
# resolution-robustness matrix


def _cell_seed(seed: int, variant: str, factor: int) -> int:
    return int(derive_rng(seed, "cell", variant, factor).integers(0, 2**63 - 1))


def run_cell(run_dict: dict, variant: str, factor: int) -> dict:
    """One experiment cell: train `variant` at downsampling `factor`,
    evaluate on the test split at native resolution. Exceptions are
    captured into the cell result so sibling cells keep running."""
    from . import perf, tensor

    perf.tune_allocator()
    tensor.set_fft_workers(2)
    run = RunConfig.from_dict(run_dict)
    cell_dir = Path(run.out_dir) / "cells" / f"{variant}_f{factor}"
    cell_seed = _cell_seed(run.seed, variant, factor)
    cell_run = dataclasses.replace(
        run,
        variant=variant,
        downsample_factor=factor,
        out_dir=str(cell_dir),
        seed=cell_seed,
    )
    try:
        result = run_training(cell_run)
        evaluation = evaluate_checkpoint(cell_dir / "checkpoint.ckpt", run.manifest, split="test", factor=1)
        return {
            "variant": variant,
            "factor": factor,
            "status": "ok",
            "dice": evaluation["dice"],
            "dice_mean": evaluation["dice_mean"],
            "best_epoch": result.best_epoch,
            "best_val_dice": result.history[result.best_epoch].mean_val_dice,
        }
    except Exception as exc:  # cell failures must not kill the matrix
        return {
            "variant": variant,
            "factor": factor,
            "status": "failed",
            "error": f"{type(exc).__name__}: {exc}",
            "trace": traceback.format_exc(limit=5),
        }


def experiment_resolution(run: RunConfig, factors, variants, threads: int = 1, log=None) -> dict:
    """Train every (factor, variant) cell and evaluate at native
    resolution; write robustness_table.csv and results.json under the
    run's output directory."""
    run.validate()
    factors = [int(f) for f in factors]
    variants = list(variants)
    for v in variants:
        if v not in model_mod.VARIANTS:
            raise InvalidConfigError(f"unknown variant {v!r}")
    out_dir = Path(run.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(data_mod.canonical_json(run.to_dict()) + "\n")

    jobs = [(variant, factor) for factor in factors for variant in variants]
    run_dict = run.to_dict()
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(run_cell, run_dict, v, f) for v, f in jobs]
            cells = [f.result() for f in futures]
    else:
        cells = []
        for v, f in jobs:
            if log:
                log(f"cell {v} @ factor {f} ...")
            cells.append(run_cell(run_dict, v, f))
            if log:
                last = cells[-1]
                log(f"  -> {last['status']} {last.get('dice_mean', last.get('error', ''))}")

    table = {
        "factors": factors,
        "variants": variants,
        "cells": {f"{c['variant']}@f{c['factor']}": c for c in cells},
    }
    write_robustness_csv(cells, out_dir / "robustness_table.csv")
    (out_dir / "results.json").write_text(data_mod.canonical_json(table) + "\n")
    return table


def write_robustness_csv(cells, path) -> None:
    fields = ["factor", "variant", "status", "dice_whole", "dice_core", "dice_inner", "dice_mean"]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for c in sorted(cells, key=lambda c: (c["factor"], c["variant"])):
            row = {"factor": c["factor"], "variant": c["variant"], "status": c["status"]}
            if c["status"] == "ok":
                row.update({f"dice_{k}": repr(v) for k, v in c["dice"].items()})
                row["dice_mean"] = repr(c["dice_mean"])
            writer.writerow(row)


def dice_drop(table: dict, variant: str, from_factor: int = 1, to_factor: int = 2) -> float:
    """Native-resolution Dice drop between two training factors."""
    a = table["cells"][f"{variant}@f{from_factor}"]
    b = table["cells"][f"{variant}@f{to_factor}"]
    if a["status"] != "ok" or b["status"] != "ok":
        raise InvalidConfigError(f"cannot compute drop for {variant}: cell failed")
    return a["dice_mean"] - b["dice_mean"]
