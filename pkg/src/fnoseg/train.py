"""Losses, metrics, optimization, augmentation, and the training loop.

The primary loss maps the per-label Pearson correlation between
prediction scores and one-hot truth into [0, 1]: 0 is perfect agreement,
0.5 is uncorrelated (e.g. any constant prediction), 1 is total
disagreement. Because the correlation subtracts the means over all
voxels, background and foreground must both be classified well for the
loss to approach 0. Dice and weighted cross-entropy are available behind
the same (value, gradient) interface for comparison runs.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import data as data_mod
from . import model as model_mod
from . import perf
from .errors import (
    DatasetError,
    InvalidConfigError,
    NumericalError,
    OptimizerOrderError,
    ScheduleRangeError,
    ShapeMismatchError,
)
from .ops import Tape
from .seeding import derive_rng

PCC_EPS = 1e-7
DICE_SMOOTH = 1e-7
NORM_EPS = 1e-12


# ---------------------------------------------------------------------------
# losses: fn(pred_scores, one_hot_truth) -> (scalar, d(loss)/d(pred))


def _truth_moments(truth: np.ndarray):
    """(y_bar, centered sum of squares) per label; reusable across the
    multiple outputs scored against one ground truth."""
    n_labels = truth.shape[0]
    y = truth.reshape(n_labels, -1)
    n = y.shape[1]
    sy = y.sum(axis=1, dtype=np.float64)
    syy = np.einsum("li,li->l", y, y, dtype=np.float64)
    y_bar = sy / n
    return y_bar, syy - n * y_bar**2


def pcc_loss(pred: np.ndarray, truth: np.ndarray, truth_moments=None):
    """Correlation loss over all voxels of every label, with its analytic
    gradient with respect to the prediction scores.

    Per label: r = sum((p-pbar)(y-ybar)) / sqrt(sum((p-pbar)^2) *
    sum((y-ybar)^2) + eps); the loss is the label average of
    0.5 * (1 - r), which lives in [0, 1].
    """
    if pred.shape != truth.shape:
        raise ShapeMismatchError(f"pcc_loss shapes differ: {pred.shape} vs {truth.shape}")
    n_labels = pred.shape[0]
    p = pred.reshape(n_labels, -1)
    y = truth.reshape(n_labels, -1)
    n = p.shape[1]
    # raw moments with float64 accumulation (no float64 copies of p, y)
    sp = p.sum(axis=1, dtype=np.float64)
    spy = np.einsum("li,li->l", p, y, dtype=np.float64)
    spp = np.einsum("li,li->l", p, p, dtype=np.float64)
    y_bar, b = _truth_moments(truth) if truth_moments is None else truth_moments
    p_bar = sp / n
    num = spy - n * p_bar * y_bar
    a = spp - n * p_bar**2
    den = np.sqrt(a * b + PCC_EPS)
    r = num / den
    loss = float(np.mean(0.5 * (1.0 - r)))
    # dloss/dp = -(0.5/L) * ((y - ybar)/den - num*b/den^3 * (p - pbar)),
    # expanded so the centered arrays are never materialized
    c1 = (0.5 / n_labels) / den
    c2 = (0.5 / n_labels) * num * b / den**3
    const = (c1 * y_bar - c2 * p_bar).astype(pred.dtype)
    grad = p * c2[:, None].astype(pred.dtype)
    grad -= y * c1[:, None].astype(pred.dtype)
    grad += const[:, None]
    return loss, grad.reshape(pred.shape)


def dice_loss(pred: np.ndarray, truth: np.ndarray):
    """Soft Dice loss averaged over labels: 1 - (2*sum(p*y)+s) /
    (sum(p^2)+sum(y^2)+s)."""
    if pred.shape != truth.shape:
        raise ShapeMismatchError(f"dice_loss shapes differ: {pred.shape} vs {truth.shape}")
    n_labels = pred.shape[0]
    p = pred.reshape(n_labels, -1).astype(np.float64)
    y = truth.reshape(n_labels, -1).astype(np.float64)
    num = 2.0 * (p * y).sum(axis=1) + DICE_SMOOTH
    den = (p**2).sum(axis=1) + (y**2).sum(axis=1) + DICE_SMOOTH
    loss = float(np.mean(1.0 - num / den))
    grad = (-(2.0 * y * den[:, None] - num[:, None] * 2.0 * p) / den[:, None] ** 2) / n_labels
    return loss, grad.reshape(pred.shape).astype(pred.dtype)


def weighted_cross_entropy(pred: np.ndarray, truth: np.ndarray):
    """Cross-entropy with inverse-frequency label weights normalized to
    mean 1 over the present labels."""
    if pred.shape != truth.shape:
        raise ShapeMismatchError(f"weighted_cross_entropy shapes differ: {pred.shape} vs {truth.shape}")
    n_labels = pred.shape[0]
    p = pred.reshape(n_labels, -1).astype(np.float64)
    y = truth.reshape(n_labels, -1).astype(np.float64)
    n_vox = p.shape[1]
    counts = y.sum(axis=1)
    present = counts > 0
    w = np.zeros(n_labels)
    w[present] = 1.0 / counts[present]
    w *= present.sum() / w.sum()  # mean weight 1 over present labels
    p_safe = np.clip(p, 1e-12, None)
    loss = float(-(w[:, None] * y * np.log(p_safe)).sum() / n_vox)
    grad = -(w[:, None] * y / p_safe) / n_vox
    return loss, grad.reshape(pred.shape).astype(pred.dtype)


LOSSES = {"pcc": pcc_loss, "dice": dice_loss, "wce": weighted_cross_entropy}


# ---------------------------------------------------------------------------
# evaluation metric


def dice_metric(pred_labels: np.ndarray, truth_labels: np.ndarray, region) -> float:
    """Dice overlap 2|A&B|/(|A|+|B|) of the union-of-labels region; 1.0
    when both region masks are empty."""
    if pred_labels.shape != truth_labels.shape:
        raise ShapeMismatchError(f"dice_metric shapes differ: {pred_labels.shape} vs {truth_labels.shape}")
    region = np.asarray(sorted(region))
    a = np.isin(pred_labels, region)
    b = np.isin(truth_labels, region)
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int((a & b).sum()) / total


REGION_LABELS = {"whole": (1, 2, 3), "core": (2, 3), "inner": (3,)}


def region_dice(pred_labels: np.ndarray, truth_labels: np.ndarray) -> dict:
    """Dice per nested evaluation region (whole / core / inner)."""
    return {name: dice_metric(pred_labels, truth_labels, labels) for name, labels in REGION_LABELS.items()}


# ---------------------------------------------------------------------------
# optimizer and schedule


@dataclass
class AdamaxState:
    """First-moment and infinity-norm accumulators per parameter."""

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    u: dict = field(default_factory=dict)
    gradients_ready: bool = False

    def mark_gradients_ready(self):
        self.gradients_ready = True


def adamax_step(params: model_mod.ModelParams, state: AdamaxState, lr: float) -> None:
    """One infinity-norm Adam update:
    m <- b1*m + (1-b1)*g; u <- max(b2*u, |g|);
    theta <- theta - (lr/(1-b1^t)) * m/(u+eps)."""
    if not state.gradients_ready:
        raise OptimizerOrderError("adamax_step called before backward populated gradients")
    state.gradients_ready = False
    state.t += 1
    scale = lr / (1.0 - state.beta1**state.t)
    for name, p in params.params.items():
        g = p.grad
        if name not in state.m:
            state.m[name] = np.zeros_like(p.value)
            state.u[name] = np.zeros_like(p.value)
        m = state.m[name]
        u = state.u[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        np.maximum(state.beta2 * u, np.abs(g), out=u)
        p.value -= scale * m / (u + state.eps)


@dataclass(frozen=True)
class ScheduleConfig:
    lr_max: float = 1e-2
    lr_min: float = 1e-3
    total_epochs: int = 100

    def validate(self):
        if not (self.lr_max > self.lr_min > 0):
            raise InvalidConfigError(f"need lr_max > lr_min > 0, got {self.lr_max}, {self.lr_min}")
        if self.total_epochs < 1:
            raise InvalidConfigError("total_epochs must be >= 1")


def cosine_lr(epoch: int, sched: ScheduleConfig) -> float:
    """Cosine annealing without restarts: lr_max at epoch 0 down to
    lr_min at epoch total_epochs.

    Written as a convex combination so both endpoints are exact in
    floating point (the cosine weight is exactly 1 at 0 and 0 at T).
    """
    sched.validate()
    if not 0 <= epoch <= sched.total_epochs:
        raise ScheduleRangeError(f"epoch {epoch} outside [0, {sched.total_epochs}]")
    w = 0.5 * (1.0 + np.cos(np.pi * epoch / sched.total_epochs))
    return float(w * sched.lr_max + (1.0 - w) * sched.lr_min)


# ---------------------------------------------------------------------------
# preprocessing and augmentation


def normalize_modality(volume: np.ndarray) -> np.ndarray:
    """Per-channel z-score over the whole spatial volume (variance
    epsilon-guarded, so constant channels map to zero)."""
    v = np.asarray(volume)
    flat = v.reshape(v.shape[0], -1).astype(np.float64)
    mean = flat.mean(axis=1)
    std = np.sqrt(flat.var(axis=1) + NORM_EPS)
    out = (flat - mean[:, None]) / std[:, None]
    return out.reshape(v.shape).astype(v.dtype)


@dataclass(frozen=True)
class AugmentConfig:
    rotation_deg: float = 30.0  # axial rotation (about the z axis)
    shift_frac: float = 0.2  # per-axis, fraction of axis length
    scale_range: tuple = (0.8, 1.2)  # isotropic
    probability: float = 0.8


def _affine_inverse(theta, scale, shift, spatial):
    """Pull-back matrix and offset for out(x) = in(A^-1 x), where A
    rotates about z by theta around the volume center, scales
    isotropically, then shifts."""
    c, s = np.cos(theta), np.sin(theta)
    rot_inv = np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])
    m = rot_inv / scale
    center = (np.asarray(spatial, dtype=np.float64) - 1.0) / 2.0
    offset = center - m @ (center + shift)
    return m, offset


def augment(sample: data_mod.VolumeSample, cfg: AugmentConfig, rng) -> data_mod.VolumeSample:
    """With probability cfg.probability apply one composed affine
    (rotate, scale, shift), trilinear for image channels and
    nearest-neighbor for labels, zero padding outside; otherwise return
    the sample unchanged. Deterministic given the rng state (fixed draw
    order: gate, angle, scale, shifts)."""
    if rng.uniform() >= cfg.probability:
        return sample
    theta = np.deg2rad(rng.uniform(-cfg.rotation_deg, cfg.rotation_deg))
    scale = rng.uniform(*cfg.scale_range)
    spatial = sample.labels.shape
    shift = np.array([rng.uniform(-cfg.shift_frac, cfg.shift_frac) * n for n in spatial])
    m, offset = _affine_inverse(theta, scale, shift, spatial)
    image = np.stack(
        [ndimage.affine_transform(ch, m, offset=offset, order=1, mode="constant", cval=0.0) for ch in sample.image]
    )
    labels = ndimage.affine_transform(sample.labels, m, offset=offset, order=0, mode="constant", cval=0)
    return data_mod.VolumeSample(image=image, labels=labels, sample_id=sample.sample_id, spacing=sample.spacing)


def _resample_coords(src_shape, dst_shape):
    axes = [(np.arange(m) + 0.5) * (n / m) - 0.5 for n, m in zip(src_shape, dst_shape)]
    return np.meshgrid(*axes, indexing="ij")


def downsample_volume(volume: np.ndarray, factor: int, order: int = 1) -> np.ndarray:
    """Resample a Field to ceil(n/factor) per axis (trilinear by default;
    pass order=0 for label volumes)."""
    if factor < 1:
        raise InvalidConfigError(f"downsample factor must be >= 1, got {factor}")
    if factor == 1:
        return volume.copy()
    src = volume.shape[1:]
    dst = tuple(int(np.ceil(n / factor)) for n in src)
    coords = np.stack(_resample_coords(src, dst))
    out = np.stack([ndimage.map_coordinates(ch, coords, order=order, mode="nearest") for ch in volume])
    return out.astype(volume.dtype)


def downsample_sample(sample: data_mod.VolumeSample, factor: int) -> data_mod.VolumeSample:
    if factor == 1:
        return sample
    image = downsample_volume(sample.image, factor, order=1)
    labels = downsample_volume(sample.labels[None], factor, order=0)[0]
    return data_mod.VolumeSample(image=image, labels=labels, sample_id=sample.sample_id, spacing=sample.spacing)


# ---------------------------------------------------------------------------
# training loop


@dataclass
class EpochReport:
    epoch: int
    lr: float
    train_loss: float
    val_loss: float
    val_dice: dict  # region -> float

    @property
    def mean_val_dice(self) -> float:
        return float(np.mean(list(self.val_dice.values())))

    def row(self):
        return {
            "epoch": self.epoch,
            "lr": repr(self.lr),
            "train_loss": repr(self.train_loss),
            "val_loss": repr(self.val_loss),
            **{f"val_dice_{k}": repr(v) for k, v in self.val_dice.items()},
        }


@dataclass
class TrainResult:
    params: model_mod.ModelParams  # best-validation parameters
    history: list
    best_epoch: int

    def summary(self) -> dict:
        best = self.history[self.best_epoch]
        return {
            "epochs": len(self.history),
            "best_epoch": self.best_epoch,
            "best_val_dice": {k: best.val_dice[k] for k in sorted(best.val_dice)},
            "best_mean_val_dice": best.mean_val_dice,
            "final_train_loss": self.history[-1].train_loss,
        }


def write_history_csv(history, path) -> None:
    rows = [r.row() for r in history]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)


def _loss_over_outputs(outputs, truth, loss_fn):
    """Equal-weight average of the loss over main and auxiliary outputs;
    returns (total, seeds for backward)."""
    k = len(outputs)
    total = 0.0
    seeds = []
    kwargs = {}
    if loss_fn is pcc_loss:
        kwargs["truth_moments"] = _truth_moments(truth)
    for node in outputs:
        value, grad = loss_fn(node.value, truth, **kwargs)
        total += value / k
        grad *= 1.0 / k
        seeds.append((node, grad))
    return total, seeds


def predict_labels(params: model_mod.ModelParams, volume: np.ndarray) -> np.ndarray:
    """Argmax segmentation at the volume's own resolution."""
    out = model_mod.forward(params, volume, training=False)
    return np.argmax(out.scores, axis=0).astype(np.uint8)


def evaluate_dice(params: model_mod.ModelParams, samples) -> dict:
    """Mean per-region Dice over samples (each image z-scored first)."""
    totals = {name: 0.0 for name in REGION_LABELS}
    for sample in samples:
        pred = predict_labels(params, normalize_modality(sample.image))
        for name, value in region_dice(pred, sample.labels).items():
            totals[name] += value
    return {name: totals[name] / len(samples) for name in totals}


def train_loop(
    params: model_mod.ModelParams,
    manifest: data_mod.DatasetManifest,
    schedule: ScheduleConfig,
    augment_cfg: AugmentConfig,
    seed: int,
    epochs: int | None = None,
    downsample_factor: int = 1,
    loss: str = "pcc",
    out_dir=None,
    log=None,
) -> TrainResult:
    """Batch-size-1 optimization of `params` on the manifest's train
    split, validating per epoch on the val split at the training
    resolution and retaining the best-mean-Dice parameters.

    Fully deterministic given `seed`: epoch shuffles and per-sample
    augmentation streams are derived by name, independent of wall clock
    or execution interleaving. Raises NumericalError (with epoch/sample
    diagnostics) if the loss goes non-finite.
    """
    schedule.validate()
    perf.tune_allocator()
    if loss not in LOSSES:
        raise InvalidConfigError(f"unknown loss {loss!r}, expected one of {sorted(LOSSES)}")
    loss_fn = LOSSES[loss]
    epochs = schedule.total_epochs if epochs is None else epochs
    if epochs < 1 or epochs > schedule.total_epochs:
        raise InvalidConfigError(f"epochs {epochs} outside [1, {schedule.total_epochs}]")

    train_samples = data_mod.read_split(manifest, "train")
    val_samples = data_mod.read_split(manifest, "val")
    if not train_samples:
        raise DatasetError("empty training split")

    dtype = next(iter(params.parameters())).value.dtype
    n_labels = params.config.out_labels

    def prepared(sample, factor=1):
        ready = data_mod.VolumeSample(
            image=normalize_modality(sample.image.astype(dtype)), labels=sample.labels, sample_id=sample.sample_id
        )
        return downsample_sample(ready, factor)

    # normalization is deterministic per sample: hoist it out of the loop,
    # replacing the raw volumes in place to keep one copy resident
    normalized = train_samples
    for i in range(len(normalized)):
        normalized[i] = prepared(normalized[i])
    val_ready = [prepared(s, downsample_factor) for s in val_samples]
    del val_samples

    state = AdamaxState()
    history = []
    best_epoch = -1
    best_dice = -1.0
    best_values = None
    for epoch in range(epochs):
        lr = cosine_lr(epoch, schedule)
        order = derive_rng(seed, "shuffle", epoch).permutation(len(normalized))
        epoch_loss = 0.0
        for idx in order:
            sample = augment(normalized[idx], augment_cfg, derive_rng(seed, "augment", epoch, int(idx)))
            sample = downsample_sample(sample, downsample_factor)
            truth = data_mod.one_hot(sample.labels, n_labels, dtype=dtype)
            tape = Tape()
            out = model_mod.forward(params, sample.image, training=True, tape=tape)
            total, seeds = _loss_over_outputs(out.all_outputs(), truth, loss_fn)
            if not np.isfinite(total):
                raise NumericalError(f"non-finite loss {total} at epoch {epoch}, sample {sample.sample_id}")
            params.zero_grads()
            tape.backward(seeds)
            state.mark_gradients_ready()
            adamax_step(params, state, lr)
            epoch_loss += total
        epoch_loss /= len(normalized)

        val_loss = 0.0
        dice_tot = {name: 0.0 for name in REGION_LABELS}
        for sample in val_ready:
            out = model_mod.forward(params, sample.image, training=False)
            truth = data_mod.one_hot(sample.labels, n_labels, dtype=dtype)
            val_loss += loss_fn(out.scores, truth)[0]
            pred = np.argmax(out.scores, axis=0).astype(np.uint8)
            for name, value in region_dice(pred, sample.labels).items():
                dice_tot[name] += value
        val_loss /= len(val_ready)
        val_dice = {name: dice_tot[name] / len(val_ready) for name in REGION_LABELS}
        report = EpochReport(epoch=epoch, lr=float(lr), train_loss=epoch_loss, val_loss=val_loss, val_dice=val_dice)
        history.append(report)
        if log:
            log(f"epoch {epoch:3d} lr {lr:.5f} train {epoch_loss:.4f} val {val_loss:.4f} dice {report.mean_val_dice:.4f}")
        if report.mean_val_dice > best_dice:
            best_dice = report.mean_val_dice
            best_epoch = epoch
            best_values = {name: p.value.copy() for name, p in params.params.items()}

    for name, value in best_values.items():
        params.params[name].value = value
    result = TrainResult(params=params, history=history, best_epoch=best_epoch)

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        model_mod.save_checkpoint(params, out_dir / "checkpoint.ckpt")
        write_history_csv(history, out_dir / "history.csv")
        (out_dir / "summary.json").write_text(data_mod.canonical_json(result.summary()) + "\n")
    return result
