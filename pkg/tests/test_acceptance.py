"""Acceptance suite: every criterion at its stated tolerance.

Each test prints one PASS/FAIL line (run with ``-s`` to see them inline).
Runtime-gated criteria measure process CPU time, which is the stable
measure on shared machines and the unit criterion 8 is stated in.

Criteria 8-11 share one full default-plan matrix (3 seeds, 11 regimes);
that fixture is the expensive part of the suite.
"""

import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from salbench.attribution import SgConfig, smoothgrad, vanilla_gradient
from salbench.autodiff import LossSelector, backward, cross_entropy_loss, forward
from salbench.cli import main as cli_main
from salbench.data import Dataset, generate_synthetic
from salbench.harness import run_matrix
from salbench.metrics import (
    RoadConfig,
    gini,
    imputation_residual,
    noisy_linear_imputation,
    road_curve,
)
from salbench.model import cnn_descriptor, init_model, reference_cnn
from salbench.plan import ExperimentPlan
from salbench.pruning import mask_global, round_half_up
from salbench.training import PgdConfig, TrainConfig, fine_tune, pgd_attack

from oracles import (
    bottom_k_bruteforce,
    central_difference,
    dense_imputation_solve,
    gini_mad,
    max_relative_error,
    stride_coords,
)


def report(criterion: int, ok: bool, detail: str) -> None:
    print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}")
    assert ok, f"criterion {criterion}: {detail}"


# ---------------------------------------------------------------------------
# 1. Gradient oracle
# ---------------------------------------------------------------------------


def test_criterion_1_gradient_oracle():
    # FD coordinates are stride-sampled deterministically (32 input, 32 per
    # parameter tensor): enough to expose any systematic gradient defect
    # while honoring the one-minute runtime gate.
    started = time.process_time()
    worst = 0.0
    for config_seed in range(20):
        rng = np.random.default_rng(1000 + config_seed)
        desc = cnn_descriptor(
            input_shape=(int(rng.integers(1, 4)), 8, 8),
            conv_filters=(int(rng.integers(2, 6)), int(rng.integers(2, 6))),
            dense_units=(int(rng.integers(3, 9)),),
            num_classes=int(rng.integers(2, 6)),
        )
        model = init_model(desc, config_seed)
        x = rng.random((2,) + desc.input_shape)
        labels = rng.integers(0, desc.num_classes, size=2)
        _, tape = forward(model, x)
        grads = backward(tape, LossSelector(labels))

        def loss_of_input(xv):
            logits, _ = forward(model, xv)
            return cross_entropy_loss(logits, labels)

        coords = stride_coords(x.size, 32)
        fd = central_difference(loss_of_input, x.copy(), h=1e-3, coords=coords)
        worst = max(worst, max_relative_error(
            grads.input_gradient.ravel()[coords], fd.ravel()[coords]))
        for name, p in model.parameters.items():
            def loss_of_param(pv, name=name):
                trial = model.copy()
                trial.parameters[name] = pv
                logits, _ = forward(trial, x)
                return cross_entropy_loss(logits, labels)

            coords = stride_coords(p.size, 32)
            fd = central_difference(loss_of_param, p.copy(), h=1e-3, coords=coords)
            worst = max(worst, max_relative_error(
                grads.parameter_gradients[name].ravel()[coords], fd.ravel()[coords]))
    elapsed = time.process_time() - started
    report(1, worst < 1e-4 and elapsed < 60,
           f"20 configs, max relative error {worst:.2e} (<1e-4), {elapsed:.1f}s CPU (<60s)")


# ---------------------------------------------------------------------------
# 2. Integrated-gradients completeness
# ---------------------------------------------------------------------------


def test_criterion_2_ig_completeness():
    from salbench.attribution import IgConfig, integrated_gradients

    started = time.process_time()
    test_set = generate_synthetic(8, 4, seed=0, split="test")  # 32 images
    model = init_model(reference_cnn(8), 0)
    worst = 0.0
    for image in test_set.images:
        attr = integrated_gradients(model, image, cfg=IgConfig(steps=256))
        k = attr.target_class
        fx, _ = forward(model, image[None])
        f0, _ = forward(model, np.zeros_like(image)[None])
        gap = float(fx[0, k] - f0[0, k])
        violation = abs(attr.raw.sum() - gap) / max(1.0, abs(gap))
        worst = max(worst, violation)
    elapsed = time.process_time() - started
    report(2, worst <= 0.01 and elapsed < 60,
           f"32 images at m=256, worst completeness gap {worst:.4%} (<=1%), "
           f"{elapsed:.1f}s CPU (<60s)")


# ---------------------------------------------------------------------------
# 3. SmoothGrad degeneracy
# ---------------------------------------------------------------------------


def test_criterion_3_smoothgrad_degeneracy():
    model = init_model(reference_cnn(8), 1)
    image = np.random.default_rng(1).random((3, 32, 32))
    vg = vanilla_gradient(model, image, target=2)
    worst = 0.0
    for n in (1, 25):
        sg = smoothgrad(model, image, target=2, cfg=SgConfig(samples=n, sigma=0.0))
        worst = max(worst, float(np.max(np.abs(sg.raw - vg.raw))))
    report(3, worst < 1e-12, f"sigma=0 vs vanilla gradient, max gap {worst:.2e} (<1e-12)")


# ---------------------------------------------------------------------------
# 4. Gini exactness
# ---------------------------------------------------------------------------


def test_criterion_4_gini_exactness():
    ok = abs(gini(np.full(64, 3.3))) <= 1e-12
    ok &= gini(np.array([0.0, 0.0, 0.0, 5.0])) == 0.75
    ok &= abs(gini(np.array([1.0, 2.0, 3.0, 4.0])) - 0.25) <= 1e-12
    ok &= abs(gini_mad([1, 2, 3, 4]) - 0.25) <= 1e-12  # hand-derived cross-check
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(1000):
        d = int(rng.integers(2, 48))
        phi = rng.normal(size=d)
        if np.abs(phi).sum() == 0:
            continue
        g = gini(phi)
        scale = float(rng.uniform(0.01, 100.0))
        worst = max(worst, abs(gini(scale * phi) - g))
        worst = max(worst, abs(gini(rng.permutation(phi)) - g))
    ok &= worst <= 1e-12
    report(4, ok, f"closed forms exact; invariance worst gap {worst:.2e} (<=1e-12) "
                  f"over 1000 random vectors")


# ---------------------------------------------------------------------------
# 5. Pruning accounting
# ---------------------------------------------------------------------------


def test_criterion_5_pruning_accounting():
    # exact count at the default global rate on the reference model
    model = init_model(reference_cnn(8), 2)
    names = model.weight_names()
    pool = sum(model.parameters[n].size for n in names)
    masks = mask_global(model, rate=0.2)
    masked = sum(int((masks[n] == 0).sum()) for n in names)
    ok = masked == round_half_up(0.2 * pool)
    detail = [f"global 0.2 masks {masked} == round_half_up(0.2*{pool})"]

    # brute-force oracle equivalence on <=100-weight toys
    agree = True
    for seed in range(10):
        rng = np.random.default_rng(seed)
        desc = cnn_descriptor(input_shape=(1, 4, 4), conv_filters=(3,),
                              dense_units=(4,), num_classes=2, kernel=1)
        toy = init_model(desc, seed)
        for n in toy.weight_names():
            toy.parameters[n] = rng.normal(size=toy.parameters[n].shape)
        toy_names = toy.weight_names()
        total = sum(toy.parameters[n].size for n in toy_names)
        assert total <= 100
        rate = float(rng.uniform(0, 0.9))
        toy_masks = mask_global(toy, rate=rate)
        actual = {(l, i) for l, n in enumerate(toy_names)
                  for i in np.flatnonzero(toy_masks[n].ravel() == 0)}
        agree &= actual == bottom_k_bruteforce(
            [toy.parameters[n] for n in toy_names], round_half_up(rate * total))
    ok &= agree
    detail.append(f"brute-force bottom-k equivalence on 10 toys: {agree}")

    # masked entries stay exactly zero through 50 fine-tune epochs
    ds = generate_synthetic(2, 8, seed=5)
    pruned = init_model(reference_cnn(2), 5).with_masks(
        mask_global(init_model(reference_cnn(2), 5), rate=0.2))
    tuned = fine_tune(pruned, ds, TrainConfig(epochs=50, seed=5))
    still_zero = all(
        np.all(tuned.parameters[n][tuned.masks[n] == 0] == 0.0) for n in tuned.parameters
    )
    ok &= still_zero
    detail.append(f"masked entries exactly 0 after 50 FT epochs: {still_zero}")
    report(5, ok, "; ".join(detail))


# ---------------------------------------------------------------------------
# 6. Imputer exactness
# ---------------------------------------------------------------------------


def test_criterion_6_imputer_exactness():
    img = np.zeros((3, 5, 5))
    img[:, 1, 2], img[:, 3, 2], img[:, 2, 1], img[:, 2, 3] = 0.2, 0.4, 0.6, 0.8
    single = np.zeros((5, 5), bool)
    single[2, 2] = True
    got = noisy_linear_imputation(img, single, RoadConfig(noise=0.0))
    ok = abs(got[0, 2, 2] - 0.5) <= 1e-9
    oracle = dense_imputation_solve(img, single)
    ok &= np.max(np.abs(got - oracle)) <= 1e-9

    ys, xs = np.mgrid[0:8, 0:8]
    ramp = ((2 * ys + xs) / 21.0)[None].repeat(3, axis=0) * 0.8
    block = np.zeros((8, 8), bool)
    block[3:5, 3:5] = True
    got_block = noisy_linear_imputation(ramp, block, RoadConfig(noise=0.0))
    gap_block = float(np.max(np.abs(got_block - dense_imputation_solve(ramp, block))))
    ok &= gap_block <= 1e-9

    worst_residual = 0.0
    rng = np.random.default_rng(6)
    for fraction in (0.05, 0.3, 0.6, 0.9, 0.99, 1.0):
        image = rng.random((3, 32, 32))
        n = round_half_up(fraction * 1024)
        mask = np.zeros(1024, bool)
        mask[rng.permutation(1024)[:n]] = True
        mask = mask.reshape(32, 32)
        out = noisy_linear_imputation(image, mask, RoadConfig(noise=0.0))
        worst_residual = max(worst_residual, imputation_residual(image, mask, out[:, mask]))
    ok &= worst_residual <= 1e-6
    report(6, ok, f"single-pixel/2x2 match dense solves (block gap {gap_block:.1e} <= 1e-9); "
                  f"worst residual {worst_residual:.1e} (<=1e-6) incl >1000-unknown path")


# ---------------------------------------------------------------------------
# 7. ROAD planted-feature oracle
# ---------------------------------------------------------------------------


def test_criterion_7_road_planted_feature():
    started = time.process_time()
    rng = np.random.default_rng(7)
    n, side, patch = 60, 32, 4
    images = rng.uniform(0.3, 0.7, size=(n, 3, side, side))
    labels = np.zeros(n, dtype=np.int64)
    for i in range(n):
        bright = i % 2 == 0
        images[i][:, 10:10 + patch, 14:14 + patch] = 0.95 if bright else 0.05
        labels[i] = int(bright)
    ds = Dataset(images, labels, ["dark", "bright"], "test", 7)

    def predict(batch):
        return (batch[:, :, 10:10 + patch, 14:14 + patch].mean(axis=(1, 2, 3)) > 0.5
                ).astype(np.int64)

    from salbench.attribution import Attribution

    gt = np.zeros((3, side, side))
    gt[:, 10:10 + patch, 14:14 + patch] = 1.0
    attrs = [Attribution(gt.copy(), int(l), "oracle") for l in labels]
    rev = [Attribution(1.0 - gt, int(l), "oracle") for l in labels]

    cfg = RoadConfig(step=0.05)
    morf = road_curve(predict, ds, attrs, cfg, seed=7)
    early = morf.accuracies[(morf.fractions > 0) & (morf.fractions <= 0.10)]
    collapsed = float(early.min()) <= 0.5 + 0.05

    lerf = road_curve(predict, ds, rev, cfg, seed=7)
    held = lerf.accuracies[lerf.fractions <= 0.80]
    persisted = float(held.min()) >= 0.95 * float(lerf.accuracies[0])
    elapsed = time.process_time() - started
    report(7, collapsed and persisted and elapsed < 120,
           f"ground truth collapses to {early.min():.2f} (<=0.55) within 10%; reversed holds "
           f">= {held.min():.2f} through 80%; {elapsed:.1f}s CPU (<120s)")


# ---------------------------------------------------------------------------
# 8-11. Default-plan matrix trends
# ---------------------------------------------------------------------------


@pytest.fixture(scope="session")
def default_matrix(tmp_path_factory):
    plan = ExperimentPlan(run_id="acceptance")
    out = tmp_path_factory.mktemp("acceptance-matrix")
    started = time.process_time()
    manifest = run_matrix(plan, out, workers=1)
    cpu_minutes = (time.process_time() - started) / 60.0
    return plan, manifest, cpu_minutes


def test_criterion_8_faithfulness_trend(default_matrix):
    plan, manifest, cpu_minutes = default_matrix
    wins = 0
    aucs = []
    for seed in plan.seeds:
        pruned = manifest.cell(seed, "global_post_ft")["road_auc"]["vanilla_gradient"]
        natural = manifest.cell(seed, "natural")["road_auc"]["vanilla_gradient"]
        aucs.append((seed, pruned, natural))
        wins += pruned <= natural
    report(8, wins >= 2 and cpu_minutes < 30,
           f"VG ROAD AUC global_post_ft <= natural in {wins}/3 seeds "
           f"{[(s, round(p, 3), round(n, 3)) for s, p, n in aucs]}; "
           f"matrix took {cpu_minutes:.1f} CPU-minutes (<30)")


def test_criterion_9_accuracy_retention(default_matrix):
    plan, manifest, _ = default_matrix
    nat_ok = all(
        manifest.cell(seed, "natural")["clean_accuracy"] >= 0.90 for seed in plan.seeds
    )
    details = [f"natural >= 90% in all seeds: {nat_ok}"]
    retention_ok = True
    for regime in ("l1_post_ft", "global_post_ft", "layered_post_ft"):
        wins = 0
        for seed in plan.seeds:
            pruned = manifest.cell(seed, regime)["clean_accuracy"]
            natural = manifest.cell(seed, "natural")["clean_accuracy"]
            wins += pruned >= natural - 0.03
        retention_ok &= wins >= 2
        details.append(f"{regime} within 3 points in {wins}/3")
    report(9, nat_ok and retention_ok, "; ".join(details))


def test_criterion_10_gradient_norm_trend(default_matrix):
    # "pruned+FT" names no single method (criterion 8 says "global" where it
    # means global), so the check covers the post-train+FT family: per seed,
    # the family's mean input-gradient norm against the natural model's.
    plan, manifest, _ = default_matrix
    family = ("l1_post_ft", "global_post_ft", "layered_post_ft")
    wins = 0
    norms = []
    for seed in plan.seeds:
        pruned = float(np.mean(
            [manifest.cell(seed, r)["gradient_norm_mean"] for r in family]
        ))
        natural = manifest.cell(seed, "natural")["gradient_norm_mean"]
        norms.append((seed, round(pruned, 4), round(natural, 4)))
        wins += pruned < natural
    per_method = {
        r: sum(
            manifest.cell(s, r)["gradient_norm_mean"]
            < manifest.cell(s, "natural")["gradient_norm_mean"]
            for s in plan.seeds
        )
        for r in family
    }
    report(10, wins >= 2,
           f"pruned+FT family mean input-gradient norm < natural in {wins}/3 seeds "
           f"{norms}; per-method seed wins {per_method}")


def test_criterion_11_pgd_contract(default_matrix):
    plan, manifest, _ = default_matrix
    # projection contract on fresh batches
    ds = generate_synthetic(4, 6, seed=11)
    model = init_model(reference_cnn(4), 11)
    contract_ok = True
    for eps in (0.01, 0.1):
        adv = pgd_attack(model, ds.images, ds.labels, PgdConfig(epsilon=eps, iterations=10))
        contract_ok &= float(np.max(np.abs(adv - ds.images))) <= eps + 1e-15
        contract_ok &= adv.min() >= 0.0 and adv.max() <= 1.0
    identity = pgd_attack(model, ds.images, ds.labels, PgdConfig(epsilon=0.0))
    contract_ok &= identity.tobytes() == ds.images.tobytes()

    wins = 0
    accs = []
    for seed in plan.seeds:
        adv_acc = manifest.cell(seed, "adv_eps0.01")["pgd_accuracy"]
        nat_acc = manifest.cell(seed, "natural")["pgd_accuracy"]
        accs.append((seed, adv_acc, nat_acc))
        wins += adv_acc > nat_acc
    report(11, contract_ok and wins >= 2,
           f"projection/identity contracts hold; adversarial beats natural under "
           f"PGD(0.01) in {wins}/3 seeds {accs}")


# ---------------------------------------------------------------------------
# 12. End-to-end determinism
# ---------------------------------------------------------------------------


def test_criterion_12_end_to_end_determinism(tmp_path):
    cfg_text = """
[dataset]
kind = synthetic
classes = 3
train_per_class = 8
test_per_class = 4

[train]
epochs = 3

[adversarial]
pgd_iterations = 5

[pruning]
methods = global
fine_tune_epochs = 3

[attribution]
ig_steps = 8
sg_samples = 4

[metrics]
explain_samples = 6
saliency_samples = 2
road_step = 0.25

[run]
seeds = 0, 1
run_id = determinism
"""
    cfg = tmp_path / "plan.cfg"
    cfg.write_text(cfg_text)
    assert cli_main(["run", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
    assert cli_main(["run", "--config", str(cfg), "--out", str(tmp_path / "b")]) == 0

    def csv_bytes(root: Path) -> dict:
        return {
            p.relative_to(root): p.read_bytes()
            for p in sorted(root.rglob("*.csv"))
        }

    a = csv_bytes(tmp_path / "a")
    b = csv_bytes(tmp_path / "b")
    same = a.keys() == b.keys() and all(a[k] == b[k] for k in a)
    report(12, same and len(a) > 0,
           f"two `run` invocations produced byte-identical CSVs ({len(a)} files)")
