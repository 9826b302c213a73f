"""Plan parsing, matrix orchestration, report rendering, CLI contract."""

import json
from pathlib import Path

import numpy as np
import pytest

from salbench.cli import main as cli_main
from salbench.data import load_image_folder
from salbench.errors import PlanError
from salbench.harness import read_manifest, run_matrix
from salbench.plan import ExperimentPlan, parse_plan
from salbench.reports import render_reports

TINY = """
[dataset]
kind = synthetic
classes = 2
train_per_class = 6
test_per_class = 3

[train]
epochs = 2

[adversarial]
pgd_iterations = 3

[pruning]
methods = global
phases = post_train, post_train_ft
fine_tune_epochs = 2

[attribution]
methods = vanilla_gradient
ig_steps = 4
sg_samples = 3

[metrics]
explain_samples = 4
saliency_samples = 2
road_step = 0.5

[run]
seeds = 0
run_id = tiny
"""


def write_plan(tmp_path, text=TINY, name="plan.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return path


# ---------------------------------------------------------------------------
# parse_plan
# ---------------------------------------------------------------------------


def test_empty_file_requires_dataset(tmp_path):
    path = write_plan(tmp_path, "")
    with pytest.raises(PlanError) as err:
        parse_plan(path)
    assert "dataset required" in str(err.value)


def test_minimal_plan_gets_documented_defaults(tmp_path):
    path = write_plan(tmp_path, "[dataset]\nkind = synthetic\n\n[run]\nseeds = 0, 1, 2\n")
    plan = parse_plan(path)
    defaults = ExperimentPlan()
    assert plan == defaults
    assert plan.epochs == 30
    assert plan.pgd_epsilon == (0.01,)
    assert plan.fine_tune_epochs == 50
    assert plan.sg_samples == 25
    assert plan.road_step == 0.05


def test_negative_epsilon_rejected_with_line(tmp_path):
    path = write_plan(tmp_path, "[dataset]\nkind = synthetic\n[adversarial]\npgd_epsilon = -1\n")
    with pytest.raises(PlanError) as err:
        parse_plan(path)
    assert f"{path}:4" in str(err.value)


def test_unknown_key_rejected_with_line(tmp_path):
    path = write_plan(tmp_path, "[dataset]\nkind = synthetic\nbogus = 1\n")
    with pytest.raises(PlanError) as err:
        parse_plan(path)
    assert f"{path}:3" in str(err.value)
    assert "bogus" in str(err.value)


def test_unknown_section_rejected(tmp_path):
    path = write_plan(tmp_path, "[dataset]\nkind = synthetic\n[nope]\nx = 1\n")
    with pytest.raises(PlanError) as err:
        parse_plan(path)
    assert f"{path}:3" in str(err.value)


def test_type_mismatch_rejected_with_line(tmp_path):
    path = write_plan(tmp_path, "[dataset]\nkind = synthetic\nclasses = many\n")
    with pytest.raises(PlanError) as err:
        parse_plan(path)
    assert f"{path}:3" in str(err.value)


def test_default_matrix_has_eleven_regimes():
    regimes = ExperimentPlan().regimes()
    assert len(regimes) == 11
    assert regimes[0].name == "natural"
    names = [r.name for r in regimes]
    assert "adv_eps0.01" in names
    assert "global_post_ft" in names
    assert "layered_pre" in names


def test_natural_always_first_even_without_pruning():
    plan = ExperimentPlan(adversarial=False, prune_methods=())
    assert [r.name for r in plan.regimes()] == ["natural"]


# ---------------------------------------------------------------------------
# run_matrix
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("tinyrun")
    plan = parse_plan(write_plan(tmp))
    manifest = run_matrix(plan, tmp / "out")
    return plan, tmp / "out", manifest


def test_matrix_manifest_covers_every_cell_once(tiny_run):
    plan, out, manifest = tiny_run
    expected = [(s, r.name) for s in plan.seeds for r in plan.regimes()]
    actual = [(c["seed"], c["regime"]) for c in manifest.cells]
    assert actual == expected
    assert not manifest.failures
    for cell in manifest.cells:
        assert Path(cell["checkpoint"]).exists()
        for path in cell["road_csv"].values():
            assert Path(path).exists()


def test_matrix_run_is_reproducible_byte_for_byte(tiny_run, tmp_path):
    plan, out, manifest = tiny_run
    rerun = run_matrix(plan, tmp_path / "out2")
    for cell, cell2 in zip(manifest.cells, rerun.cells):
        a = Path(cell["road_csv"]["vanilla_gradient"]).read_bytes()
        b = Path(cell2["road_csv"]["vanilla_gradient"]).read_bytes()
        assert a == b
        assert cell["clean_accuracy"] == cell2["clean_accuracy"]
        assert cell["mean_gini"] == cell2["mean_gini"]


def test_matrix_resume_from_checkpoints_identical(tiny_run):
    plan, out, manifest = tiny_run
    again = run_matrix(plan, out)  # loads existing checkpoints
    for cell, cell2 in zip(manifest.cells, again.cells):
        assert cell["clean_accuracy"] == cell2["clean_accuracy"]
        assert cell["road_auc"] == cell2["road_auc"]


def test_matrix_rejects_conflicting_run_id(tiny_run, tmp_path):
    plan, out, manifest = tiny_run
    from dataclasses import replace

    conflicting = replace(plan, epochs=3)
    with pytest.raises(PlanError):
        run_matrix(conflicting, out)


def test_manifest_records_cell_failures_without_aborting(tmp_path):
    plan = parse_plan(write_plan(tmp_path))
    out = tmp_path / "out"
    # corrupt pre-seeded checkpoint file for one cell
    bad = out / plan.run_id / "checkpoints" / "seed0_natural.ckpt"
    bad.parent.mkdir(parents=True)
    bad.write_bytes(b"garbage")
    manifest = run_matrix(plan, out)
    failed = [c["regime"] for c in manifest.failures]
    assert "natural" in failed
    done = [c for c in manifest.cells if not c.get("error")]
    assert done  # other cells still ran
    assert len(manifest.cells) == len(plan.regimes())


def test_manifest_written_atomically(tiny_run):
    plan, out, manifest = tiny_run
    run_dir = out / plan.run_id
    assert (run_dir / "manifest.json").exists()
    assert not (run_dir / "manifest.json.tmp").exists()
    raw = json.loads((run_dir / "manifest.json").read_text())
    assert raw["config_hash"] == manifest.config_hash


def test_workers_do_not_change_results(tmp_path):
    text = TINY.replace("seeds = 0", "seeds = 0, 1").replace("run_id = tiny", "run_id = par")
    plan = parse_plan(write_plan(tmp_path, text))
    seq = run_matrix(plan, tmp_path / "seq", workers=1)
    par = run_matrix(plan, tmp_path / "par", workers=2)
    for a, b in zip(seq.cells, par.cells):
        assert (a["seed"], a["regime"]) == (b["seed"], b["regime"])
        assert a["clean_accuracy"] == b["clean_accuracy"]
        assert a["mean_gini"] == b["mean_gini"]


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


def test_reports_render_all_artifacts(tiny_run):
    plan, out, manifest = tiny_run
    run_dir = out / plan.run_id
    reports = render_reports(manifest, run_dir)
    acc = (reports / "accuracy.csv").read_text().splitlines()
    assert acc[0].startswith("seed,regime,clean_accuracy")
    assert len(acc) == 1 + len(manifest.cells)
    spars = (reports / "sparsity.csv").read_text().splitlines()
    assert "natural" not in spars[0]  # deltas are versus natural
    assert (reports / "road_vanilla_gradient.svg").exists()
    assert (reports / "report.md").exists()
    assert (reports / "grids" / "vanilla_gradient" / "sample_0.pgm").exists()


def test_reports_list_gaps_for_missing_artifacts(tmp_path):
    text = TINY.replace("run_id = tiny", "run_id = gappy")
    plan = parse_plan(write_plan(tmp_path, text))
    out = tmp_path / "out"
    manifest = run_matrix(plan, out)
    victim = Path(manifest.cells[0]["road_csv"]["vanilla_gradient"])
    victim.unlink()
    reports = render_reports(manifest, out / plan.run_id)
    report = (reports / "report.md").read_text()
    assert "ROAD curve missing" in report


def test_natural_only_plan_single_line_plot(tmp_path):
    text = """
[dataset]
kind = synthetic
classes = 2
train_per_class = 4
test_per_class = 2

[train]
epochs = 1

[adversarial]
enabled = false

[pruning]
methods =

[attribution]
methods = vanilla_gradient

[metrics]
explain_samples = 2
saliency_samples = 0
road_step = 0.5

[run]
seeds = 0
run_id = natonly
"""
    plan = parse_plan(write_plan(tmp_path, text))
    assert [r.name for r in plan.regimes()] == ["natural"]
    out = tmp_path / "out"
    manifest = run_matrix(plan, out)
    reports = render_reports(manifest, out / plan.run_id)
    svg = (reports / "road_vanilla_gradient.svg").read_text()
    assert svg.count("<polyline") == 1


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------


def test_cli_run_and_report_exit_zero(tmp_path, capsys):
    text = TINY.replace("run_id = tiny", "run_id = cli")
    cfg = write_plan(tmp_path, text)
    assert cli_main(["run", "--config", str(cfg), "--out", str(tmp_path / "out")]) == 0
    out = capsys.readouterr().out
    assert "11/11" not in out  # tiny plan has 4 regimes, not the default 11
    assert "cells completed" in out
    assert cli_main(["report", "--config", str(cfg), "--out", str(tmp_path / "out")]) == 0


def test_cli_validation_error_exits_one(tmp_path):
    cfg = write_plan(tmp_path, "[dataset]\nkind = synthetic\nclasses = 99\n")
    assert cli_main(["run", "--config", str(cfg), "--out", str(tmp_path / "out")]) == 1


def test_cli_cell_failure_exits_two(tmp_path):
    cfg = write_plan(tmp_path)
    bad = tmp_path / "out" / "tiny" / "checkpoints" / "seed0_natural.ckpt"
    bad.parent.mkdir(parents=True)
    bad.write_bytes(b"garbage")
    assert cli_main(["train", "--config", str(cfg), "--out", str(tmp_path / "out")]) == 2


def test_cli_gen_data_roundtrips_through_folder_loader(tmp_path):
    cfg = write_plan(tmp_path)
    assert cli_main(["gen-data", "--config", str(cfg), "--out", str(tmp_path / "out")]) == 0
    data_dir = tmp_path / "out" / "tiny" / "data" / "train"
    ds = load_image_folder(data_dir, data_dir / "labels.txt")
    assert len(ds) == 12
    from salbench.data import generate_synthetic

    original = generate_synthetic(2, 6, 0, "train")
    # u8 quantization: loaded pixels within half a step of the originals
    assert np.max(np.abs(ds.images - original.images)) <= 0.5 / 255.0 + 1e-12
    assert np.array_equal(ds.labels, original.labels)


def test_cli_seed_override_runs_single_seed(tmp_path):
    text = TINY.replace("seeds = 0", "seeds = 0, 1").replace("run_id = tiny", "run_id = ov")
    cfg = write_plan(tmp_path, text)
    assert cli_main(["train", "--config", str(cfg), "--out", str(tmp_path / "out"),
                     "--seed", "1"]) == 0
    manifest = read_manifest(tmp_path / "out" / "ov")
    assert {c["seed"] for c in manifest.cells} == {1}
