"""Finite-difference verification suites: every differentiable op on
small shapes, and the full tiny models end to end through the loss."""

from __future__ import annotations

import numpy as np

from . import model as model_mod
from . import ops
from . import train as train_mod
from .data import one_hot
from .ops import GradCheckReport, ModeMask, Tape

OP_TOLERANCE = 1e-5
MODEL_TOLERANCE = 1e-4
FD_STEP = 1e-5


def _op_cases():
    rng = np.random.default_rng(2024)
    mask = ModeMask((1, 1, 1))
    v = rng.standard_normal((2, 4, 4, 4))
    return [
        (
            "pointwise_linear",
            lambda t, v, w, b: ops.pointwise_linear(t, v, w, b),
            {"v": v, "w": rng.standard_normal((3, 2)), "b": rng.standard_normal(3)},
        ),
        (
            "spectral_conv_shared",
            lambda t, v, rr, ri: ops.spectral_conv_shared(t, v, rr, ri, mask),
            {"v": rng.standard_normal((2, 4, 5, 4)), "rr": rng.standard_normal((2, 2)), "ri": rng.standard_normal((2, 2))},
        ),
        (
            "spectral_conv_permode",
            lambda t, v, rr, ri: ops.spectral_conv_permode(t, v, rr, ri, mask),
            {"v": rng.standard_normal((2, 4, 4, 4)), "rr": rng.standard_normal((3, 3, 3, 2, 2)), "ri": rng.standard_normal((3, 3, 3, 2, 2))},
        ),
        (
            "conv3_down",
            lambda t, v, k, b: ops.conv3_down(t, v, k, b),
            {"v": rng.standard_normal((2, 5, 4, 5)), "k": rng.standard_normal((3, 2, 2, 2, 2)), "b": rng.standard_normal(3)},
        ),
        (
            "tconv3_up",
            lambda t, v, k, b: ops.tconv3_up(t, v, k, b, target=(6, 5, 6)),
            {"v": rng.standard_normal((2, 3, 3, 3)), "k": rng.standard_normal((2, 3, 2, 2, 2)), "b": rng.standard_normal(3)},
        ),
        (
            "conv3_same",
            lambda t, v, k, b: ops.conv3_same(t, v, k, b),
            {"v": rng.standard_normal((2, 4, 3, 4)), "k": rng.standard_normal((2, 2, 3, 3, 3)), "b": rng.standard_normal(2)},
        ),
        ("avg_pool_down2", lambda t, v: ops.avg_pool_down2(t, v), {"v": rng.standard_normal((2, 5, 4, 4))}),
        ("nearest_up2", lambda t, v: ops.nearest_up2(t, v, target=(5, 6, 6)), {"v": rng.standard_normal((2, 3, 3, 3))}),
        (
            "layer_norm",
            lambda t, v, g, b: ops.layer_norm(t, v, g, b),
            {"v": v, "g": rng.standard_normal(2), "b": rng.standard_normal(2)},
        ),
        ("selu", lambda t, v: ops.selu(t, v), {"v": rng.standard_normal((2, 4, 4, 4))}),
        ("softmax_channels", lambda t, v: ops.softmax_channels(t, v), {"v": rng.standard_normal((3, 3, 3, 3))}),
        (
            "residual_add",
            lambda t, a, b: ops.residual_add(t, a, b),
            {"a": rng.standard_normal((2, 3, 3, 3)), "b": rng.standard_normal((2, 3, 3, 3))},
        ),
    ]


def run_op_suite(tolerance=OP_TOLERANCE, h=FD_STEP):
    """Finite-difference check of every differentiable op (parameter and
    input gradients alike) on shapes <= 2x6x6x6."""
    return [ops.grad_check(name, fn, inputs, tolerance=tolerance, h=h) for name, fn, inputs in _op_cases()]


def _model_case(variant: str):
    if variant == "baseline_cnn":
        cfg = model_mod.variant_config("baseline_cnn", width=2, n_layers=1, in_channels=2, out_labels=3, seed=11)
    else:
        cfg = model_mod.variant_config(variant, width=2, n_layers=2, k_max=(2, 2, 2), in_channels=2, out_labels=3, seed=11)
    params = model_mod.build(cfg, dtype=np.float64)
    rng = np.random.default_rng(7)
    volume = rng.standard_normal((2, 6, 6, 6))
    truth = one_hot(rng.integers(0, 3, size=(6, 6, 6)), 3)
    return params, volume, truth


def _model_loss(params, volume, truth):
    out = model_mod.forward(params, volume, training=True)
    total = 0.0
    outputs = out.all_outputs()
    for node in outputs:
        total += train_mod.pcc_loss(node.value, truth)[0] / len(outputs)
    return total


def model_grad_check(variant="fnoseg3d", tolerance=MODEL_TOLERANCE, h=FD_STEP) -> GradCheckReport:
    """End-to-end check: the tiny model's training loss (deep supervision
    included) against central differences for every parameter
    coordinate."""
    params, volume, truth = _model_case(variant)
    tape = Tape()
    out = model_mod.forward(params, volume, training=True, tape=tape)
    outputs = out.all_outputs()
    seeds = []
    for node in outputs:
        _, grad = train_mod.pcc_loss(node.value, truth)
        seeds.append((node, grad / len(outputs)))
    params.zero_grads()
    tape.backward(seeds)

    per_input = {}
    for name, p in params.params.items():
        flat = p.value.reshape(-1)
        num = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = _model_loss(params, volume, truth)
            flat[i] = orig - h
            dn = _model_loss(params, volume, truth)
            flat[i] = orig
            num[i] = (up - dn) / (2 * h)
        ana = p.grad.reshape(-1)
        denom = max(float(np.abs(num).max()), float(np.abs(ana).max()), 1e-8)
        per_input[name] = float(np.abs(ana - num).max()) / denom
    worst = max(per_input.values())
    return GradCheckReport(name=f"model:{variant}", tolerance=tolerance, max_rel_error=worst, per_input=per_input)


def run_model_suite(tolerance=MODEL_TOLERANCE, h=FD_STEP):
    return [model_grad_check(v, tolerance=tolerance, h=h) for v in ("fnoseg3d", "fno_original", "baseline_cnn")]
