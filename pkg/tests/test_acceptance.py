"""Acceptance gate: one test per criterion, each printing a pass/fail
line (run with `pytest -v -s` to see them live).

Criteria 7 and 8 train real desk-scale models and together take on the
order of 1.5 hours on two CPU cores; everything else finishes in under a
minute. Deselect the heavy ones with `-m "not slow"`.
"""

import dataclasses
import json
import time
from pathlib import Path

import numpy as np
import pytest

from fnoseg import data, experiment, gradcheck, model, ops, tensor, train
from fnoseg.ops import ModeMask, Node, Parameter
from fnoseg.seeding import derive_rng
from oracles import pcc_direct, permode_oracle, shared_conv_oracle

REPO_ROOT = Path(__file__).resolve().parent.parent
CONFIG_DIR = REPO_ROOT / "configs"
DATASET_SEED = 1234  # frozen dataset seed documented in the README


def report(criterion, passed, detail):
    marker = "PASS" if passed else "FAIL"
    print(f"\nACCEPTANCE {criterion} [{marker}] {detail}")
    assert passed, f"criterion {criterion}: {detail}"


# ---------------------------------------------------------------------------
# 1. gradient suite


def test_criterion_1_gradient_suite():
    t0 = time.perf_counter()
    reports = gradcheck.run_op_suite(tolerance=1e-5, h=1e-5)
    reports += gradcheck.run_model_suite(tolerance=1e-4, h=1e-5)
    elapsed = time.perf_counter() - t0
    worst = max(reports, key=lambda r: r.max_rel_error / r.tolerance)
    ok = all(r.passed for r in reports) and elapsed <= 120
    report(
        1,
        ok,
        f"gradients: {len(reports)} checks, worst {worst.name} at {worst.max_rel_error:.2e} "
        f"(tol {worst.tolerance:.0e}), {elapsed:.1f}s (limit 120s)",
    )


# ---------------------------------------------------------------------------
# 2. FFT invariants


def test_criterion_2_fft_invariants():
    t0 = time.perf_counter()
    rng = np.random.default_rng(42)
    shapes = [(5, 6, 7), (15, 15, 10)]
    while len(shapes) < 100:
        shapes.append(tuple(int(s) for s in rng.integers(2, 17, size=3)))
    worst_rt = worst_pv = 0.0
    for i, shape in enumerate(shapes):
        f = rng.standard_normal((2,) + shape)
        spec = tensor.fft3(f)
        back = tensor.ifft3(spec, nz=shape[2])
        worst_rt = max(worst_rt, float(np.abs(back - f).max() / np.abs(f).max()))
        n = int(np.prod(shape))
        w = tensor.parseval_weights(*shape)
        ex = float((f**2).sum())
        ek = float(n * (w * np.abs(spec) ** 2).sum())
        worst_pv = max(worst_pv, abs(ex - ek) / ex)
    elapsed = time.perf_counter() - t0
    ok = worst_rt <= 1e-10 and worst_pv <= 1e-10 and elapsed <= 10
    report(
        2,
        ok,
        f"fft invariants on 100 fields: round-trip {worst_rt:.2e} (tol 1e-10), "
        f"Parseval {worst_pv:.2e} (tol 1e-10), {elapsed:.1f}s (limit 10s)",
    )


# ---------------------------------------------------------------------------
# 3. spectral-conv oracle


def test_criterion_3_spectral_oracles():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    worst = 0.0
    for k_max in [(2, 2, 2), (1, 1, 1)]:
        v = rng.standard_normal((2, 4, 4, 4))
        rr, ri = rng.standard_normal((2, 2)), rng.standard_normal((2, 2))
        got = ops.spectral_conv_shared(None, Node(v), Parameter("rr", rr), Parameter("ri", ri), ModeMask(k_max)).value
        want = shared_conv_oracle(v, rr + 1j * ri, k_max)
        worst = max(worst, float(np.abs(got - want).max()))

        shape = tuple(2 * k + 1 for k in k_max) + (2, 2)
        prr, pri = rng.standard_normal(shape), rng.standard_normal(shape)
        got = ops.spectral_conv_permode(None, Node(v), Parameter("rr", prr), Parameter("ri", pri), ModeMask(k_max)).value
        want = permode_oracle(v, prr, pri, k_max)
        worst = max(worst, float(np.abs(got - want).max()))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-9 and elapsed <= 10
    report(3, ok, f"spectral convs vs brute-force oracles on 4^3: max gap {worst:.2e} (tol 1e-9), {elapsed:.1f}s (limit 10s)")


# ---------------------------------------------------------------------------
# 4. PCC loss endpoints


def test_criterion_4_pcc_endpoints():
    rng = np.random.default_rng(3)
    labels = rng.integers(0, 4, size=(3, 3, 3))
    truth = data.one_hot(labels, 4)
    perfect = train.pcc_loss(truth.copy(), truth)[0]
    inverted = train.pcc_loss(1.0 - truth, truth)[0]
    constant = train.pcc_loss(np.full(truth.shape, 0.25), truth)[0]
    worst_oracle = 0.0
    for seed in range(5):
        r = np.random.default_rng(seed)
        logits = r.standard_normal((4, 3, 3, 3))
        pred = np.exp(logits - logits.max(axis=0))
        pred /= pred.sum(axis=0)
        t = data.one_hot(r.integers(0, 4, size=(3, 3, 3)), 4)
        worst_oracle = max(worst_oracle, abs(train.pcc_loss(pred, t)[0] - pcc_direct(pred, t)))
    ok = abs(perfect) <= 1e-8 and abs(inverted - 1) <= 1e-8 and constant == 0.5 and worst_oracle <= 1e-12
    report(
        4,
        ok,
        f"pcc endpoints: perfect {perfect:.2e}, inverted 1{inverted - 1:+.2e}, constant {constant}, "
        f"oracle gap {worst_oracle:.2e} (tol 1e-12)",
    )


# ---------------------------------------------------------------------------
# 5. parameter counts


def test_criterion_5_parameter_counts():
    achieved = {v: model.count_from_config(model.variant_config(v)) for v in model.VARIANTS}
    reference = {"fnoseg3d": 29800, "fno_shared": 17200, "fno_original": 165_900_000}
    gaps = {v: (achieved[v] - reference[v]) / reference[v] for v in reference}
    # cross-check the analytic counter against materialized models where affordable
    for v in ("fnoseg3d", "fno_shared", "baseline_cnn"):
        built = model.param_count(model.build(model.variant_config(v)))
        assert built == achieved[v], v

    payload = {
        "achieved": achieved,
        "reference": reference,
        "relative_gap": {v: round(g, 4) for v, g in gaps.items()},
        "notes": {
            "fno_original": "per-mode weights on the symmetric signed-frequency slot grid "
            "(31x31x21 complex matrices per layer); exceeds the 1e8 floor and the "
            "reference size by the reported gap",
            "baseline_cnn": "within 2x of the fnoseg3d default by construction",
        },
    }
    reports_dir = REPO_ROOT / "reports"
    reports_dir.mkdir(exist_ok=True)
    (reports_dir / "param_counts.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")

    ok = (
        abs(gaps["fnoseg3d"]) <= 0.15
        and abs(gaps["fno_shared"]) <= 0.15
        and achieved["fno_original"] >= 1e8
    )
    report(
        5,
        ok,
        f"param counts: fnoseg3d {achieved['fnoseg3d']:,} ({gaps['fnoseg3d']:+.1%} vs 29.8k), "
        f"fno_shared {achieved['fno_shared']:,} ({gaps['fno_shared']:+.1%} vs 17.2k), "
        f"fno_original {achieved['fno_original']:,} (>= 1e8; {gaps['fno_original']:+.1%} vs 165.9M); "
        f"report written to reports/param_counts.json",
    )


# ---------------------------------------------------------------------------
# 6. schedule and optimizer oracles


def test_criterion_6_schedule_and_adamax():
    sched = train.ScheduleConfig(lr_max=1e-2, lr_min=1e-3, total_epochs=100)
    lr0 = train.cosine_lr(0, sched)
    lrT = train.cosine_lr(100, sched)

    cfg = model.ModelConfig(in_channels=1, out_labels=2, width=1, n_layers=1, k_max=(0, 0, 0))
    params = model.ModelParams(config=cfg, params={"w": Parameter("w", np.array([0.5]))})
    state = train.AdamaxState()
    theta, m, u = 0.5, 0.0, 0.0
    lr, b1, b2, eps = 0.01, 0.9, 0.999, 1e-8
    worst = 0.0
    for t, g in enumerate([0.3, -1.2, 0.7], start=1):
        m = b1 * m + (1 - b1) * g
        u = max(b2 * u, abs(g))
        theta = theta - (lr / (1 - b1**t)) * m / (u + eps)
        params["w"].zero_grad()
        params["w"].grad[:] = g
        state.mark_gradients_ready()
        train.adamax_step(params, state, lr=lr)
        worst = max(worst, abs(float(params["w"].value[0]) - theta))
    ok = lr0 == 1e-2 and lrT == 1e-3 and worst <= 1e-15
    report(
        6,
        ok,
        f"schedule endpoints lr(0)={lr0}, lr(T)={lrT} (exact); 3-step adamax vs hand oracle {worst:.2e} (tol 1e-15)",
    )


# ---------------------------------------------------------------------------
# 9. zero-shot super-resolution mechanics (fast; before the slow runs)


def test_criterion_9_zero_shot_mechanics():
    rng = np.random.default_rng(5)
    d = 3
    rr = Parameter("rr", rng.standard_normal((d, d)) / d)
    ri = Parameter("ri", rng.standard_normal((d, d)) / d)
    mask = ModeMask((5, 5, 5))
    terms = [((1, 2, 0), 0.8, 0.4), ((3, 0, 2), -0.5, 1.2), ((2, 2, 3), 0.3, -0.7), ((0, 1, 1), 1.1, 0.0)]

    def signal(n):
        out = np.zeros((d, n, n, n))
        for c in range(d):
            for freq, amp, ph in terms:
                out[c] += tensor.sample_cosine((n, n, n), freq, amp, ph + 0.17 * c)
        return out

    coarse = ops.spectral_conv_shared(None, Node(signal(16)), rr, ri, mask).value
    fine = ops.spectral_conv_shared(None, Node(signal(32)), rr, ri, mask).value
    gap = float(np.abs(fine[:, ::2, ::2, ::2] - coarse).max())
    ok = gap <= 1e-8
    report(9, ok, f"fixed shared-weight layer at 16^3 vs 32^3: max gap at shared points {gap:.2e} (tol 1e-8)")


# ---------------------------------------------------------------------------
# 10. determinism and I/O


def test_criterion_10_determinism_and_io(tmp_path):
    spec = data.SyntheticSpec(grid=(16, 16, 16), num_samples=4, num_test=1, noise=0.05)
    manifest = data.generate_synthetic(spec, seed=3, out_dir=tmp_path / "ds")

    histories = []
    for tag in ("a", "b"):
        cfg = model.variant_config("fnoseg3d", width=2, n_layers=2, k_max=(3, 3, 3), seed=5)
        params = model.build(cfg, dtype=np.float32)
        train.train_loop(
            params,
            manifest,
            train.ScheduleConfig(total_epochs=2),
            train.AugmentConfig(),
            seed=11,
            out_dir=tmp_path / tag,
        )
        histories.append((tmp_path / tag / "history.csv").read_bytes())
    identical_runs = histories[0] == histories[1]
    identical_ckpt = (tmp_path / "a" / "checkpoint.ckpt").read_bytes() == (tmp_path / "b" / "checkpoint.ckpt").read_bytes()

    loaded = model.load_checkpoint(tmp_path / "a" / "checkpoint.ckpt")
    reread = model.load_checkpoint(tmp_path / "a" / "checkpoint.ckpt")
    ckpt_roundtrip = all(
        np.array_equal(loaded[name].value, reread[name].value) for name in loaded.params
    )

    sample = data.read_volume(manifest.paths("train")[0])
    data.write_volume(sample, tmp_path / "copy.fnv")
    vol_roundtrip = (tmp_path / "copy.fnv").read_bytes() == Path(manifest.paths("train")[0]).read_bytes()

    ok = identical_runs and identical_ckpt and ckpt_roundtrip and vol_roundtrip
    report(
        10,
        ok,
        f"determinism/io: histories identical {identical_runs}, checkpoints identical {identical_ckpt}, "
        f"checkpoint round-trip {ckpt_roundtrip}, volume round-trip bit-exact {vol_roundtrip}",
    )


# ---------------------------------------------------------------------------
# 7 and 8: desk-scale training runs


@pytest.fixture(scope="session")
def desk_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("desk64")
    spec = data.SyntheticSpec()  # the frozen default: 200 + 20 samples at 64^3
    manifest = data.generate_synthetic(spec, seed=DATASET_SEED, out_dir=out)
    return out / "manifest.json", manifest.spec_hash


@pytest.mark.slow
def test_criterion_7_desk_learnability(desk_dataset, tmp_path):
    manifest_path, spec_hash = desk_dataset
    run = experiment.RunConfig.from_json(CONFIG_DIR / "desk_train.json")
    run = dataclasses.replace(run, manifest=str(manifest_path), out_dir=str(tmp_path / "train"))
    assert run.schedule.total_epochs == 50 and run.model.width == 8 and run.model.n_layers == 8

    t0 = time.perf_counter()
    experiment.run_training(run)
    evaluation = experiment.evaluate_checkpoint(
        tmp_path / "train" / "checkpoint.ckpt", manifest_path, split="test", factor=1
    )
    elapsed = time.perf_counter() - t0
    mean_dice = evaluation["dice_mean"]
    ok = mean_dice >= 0.80 and elapsed <= 3600
    report(
        7,
        ok,
        f"desk learnability (dataset {spec_hash}): held-out mean region dice {mean_dice:.4f} "
        f"(floor 0.80; per region {({k: round(v, 3) for k, v in evaluation['dice'].items()})}), "
        f"runtime {elapsed / 60:.1f} min (limit 60)",
    )


@pytest.mark.slow
def test_criterion_8_resolution_robustness_trend(desk_dataset, tmp_path):
    manifest_path, spec_hash = desk_dataset
    run = experiment.RunConfig.from_json(CONFIG_DIR / "desk_experiment.json")
    run = dataclasses.replace(run, manifest=str(manifest_path), out_dir=str(tmp_path / "exp"))
    variants = ["fnoseg3d", "fno_shared", "baseline_cnn"]
    table = experiment.experiment_resolution(run, factors=[1, 2], variants=variants, threads=2)

    failures = [key for key, cell in table["cells"].items() if cell["status"] != "ok"]
    assert not failures, f"experiment cells failed: {failures}"
    drops = {v: experiment.dice_drop(table, v, 1, 2) for v in variants}
    f1 = {v: table["cells"][f"{v}@f1"]["dice_mean"] for v in variants}
    ok = (
        drops["fnoseg3d"] <= 0.10
        and drops["fnoseg3d"] < drops["baseline_cnn"]
        and drops["fno_shared"] < drops["baseline_cnn"]
    )
    report(
        8,
        ok,
        f"robustness trend (dataset {spec_hash}): native-eval dice at factor 1 "
        f"{({v: round(x, 3) for v, x in f1.items()})}; drops to factor 2 "
        f"{({v: round(x, 4) for v, x in drops.items()})} "
        f"(need fnoseg3d <= 0.10 and fnoseg3d, fno_shared < baseline_cnn)",
    )
