"""Report rendering: CSV tables, SVG line plots, saliency grids, summary.

Outputs land under ``<run_dir>/reports``:

* ``accuracy.csv`` — one row per (seed, regime) with clean/attacked accuracy
  and the model sparsity accounting;
* ``sparsity.csv`` — attribution-sparsity deltas versus the natural model,
  methods x regimes, rounded to two decimals;
* ``road_<method>.svg`` — accuracy-vs-removal curves, one line per regime,
  averaged over seeds;
* ``grids/<method>/sample_<i>.pgm`` — saliency strips, one column per regime;
* ``report.md`` — trend checks and any gaps.

All outputs are deterministic functions of the manifest and metric files.
"""

from __future__ import annotations

import csv
import logging
from pathlib import Path

import numpy as np

from .harness import RunManifest
from .imgio import read_pnm, write_pgm

log = logging.getLogger(__name__)

_PALETTE = (
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
    "#e377c2", "#7f7f7f", "#bcbd22", "#17becf", "#000000", "#66c2a5",
)


def _svg_line_plot(path: Path, series: list[tuple[str, np.ndarray, np.ndarray]],
                   title: str, xlabel: str, ylabel: str) -> None:
    """Minimal multi-line SVG plot; axes fixed to [0,1] x [0,1]."""
    width, height = 640, 420
    ml, mr, mt, mb = 60, 160, 40, 50
    pw, ph = width - ml - mr, height - mt - mb

    def sx(x):
        return ml + x * pw

    def sy(y):
        return mt + (1.0 - y) * ph

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<text x="{ml + pw / 2:.1f}" y="24" text-anchor="middle" font-size="15" '
        f'font-family="sans-serif">{title}</text>',
    ]
    # axes and ticks
    parts.append(
        f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>'
    )
    for i in range(6):
        v = i / 5
        parts.append(
            f'<line x1="{sx(v):.1f}" y1="{mt + ph}" x2="{sx(v):.1f}" y2="{mt + ph + 5}" stroke="black"/>'
            f'<text x="{sx(v):.1f}" y="{mt + ph + 18}" text-anchor="middle" font-size="11" '
            f'font-family="sans-serif">{v:.1f}</text>'
        )
        parts.append(
            f'<line x1="{ml - 5}" y1="{sy(v):.1f}" x2="{ml}" y2="{sy(v):.1f}" stroke="black"/>'
            f'<text x="{ml - 8}" y="{sy(v) + 4:.1f}" text-anchor="end" font-size="11" '
            f'font-family="sans-serif">{v:.1f}</text>'
        )
    parts.append(
        f'<text x="{ml + pw / 2:.1f}" y="{height - 12}" text-anchor="middle" font-size="12" '
        f'font-family="sans-serif">{xlabel}</text>'
    )
    parts.append(
        f'<text x="18" y="{mt + ph / 2:.1f}" text-anchor="middle" font-size="12" '
        f'font-family="sans-serif" transform="rotate(-90 18 {mt + ph / 2:.1f})">{ylabel}</text>'
    )
    for i, (name, xs, ys) in enumerate(series):
        color = _PALETTE[i % len(_PALETTE)]
        pts = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(xs, ys))
        parts.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.8"/>'
        )
        ly = mt + 14 + i * 16
        parts.append(
            f'<line x1="{ml + pw + 10}" y1="{ly - 4}" x2="{ml + pw + 30}" y2="{ly - 4}" '
            f'stroke="{color}" stroke-width="2"/>'
            f'<text x="{ml + pw + 35}" y="{ly}" font-size="11" font-family="sans-serif">{name}</text>'
        )
    parts.append("</svg>")
    path.write_text("\n".join(parts) + "\n")


def _read_road_csv(path: Path) -> tuple[np.ndarray, np.ndarray]:
    rows = list(csv.reader(path.open()))
    data = np.array([[float(a), float(b)] for a, b in rows[1:]])
    return data[:, 0], data[:, 1]


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def render_reports(manifest: RunManifest, run_dir) -> Path:
    """Write all report artifacts; missing inputs become gaps, not failures."""
    run_dir = Path(run_dir)
    reports = run_dir / "reports"
    reports.mkdir(parents=True, exist_ok=True)
    gaps: list[str] = []

    plan = manifest.plan
    seeds = plan["seeds"]
    regime_names = [c["regime"] for c in manifest.cells if c["seed"] == seeds[0]]
    methods = plan["attribution_methods"]

    done = [c for c in manifest.cells if not c.get("error")]
    if not done:
        gaps.append("no completed cells; reports are empty")

    # ---- accuracy.csv -----------------------------------------------------
    acc_path = reports / "accuracy.csv"
    with acc_path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(
            ["seed", "regime", "clean_accuracy", "pgd_accuracy",
             "sparsity_masked", "sparsity_total", "sparsity"]
        )
        for cell in manifest.cells:
            if cell.get("error"):
                gaps.append(f"cell ({cell['seed']}, {cell['regime']}): {cell['error']}")
                continue
            total = cell["sparsity_total"] or 1
            w.writerow(
                [cell["seed"], cell["regime"], _fmt(cell["clean_accuracy"]),
                 _fmt(cell["pgd_accuracy"]), cell["sparsity_masked"],
                 cell["sparsity_total"], _fmt(cell["sparsity_masked"] / total)]
            )

    # ---- sparsity.csv (methods x regimes, deltas vs natural) --------------
    method_label = {"vanilla_gradient": "VG", "integrated_gradients": "IG", "smoothgrad": "SG"}
    spars_path = reports / "sparsity.csv"
    with spars_path.open("w", newline="") as fh:
        w = csv.writer(fh)
        others = [r for r in regime_names if r != "natural"]
        w.writerow(["method"] + others)
        for method in methods:
            row = [method_label.get(method, method)]
            for regime in others:
                deltas = []
                for seed in seeds:
                    cell = manifest.cell(seed, regime)
                    base = manifest.cell(seed, "natural")
                    if (cell and base and not cell.get("error") and not base.get("error")
                            and method in cell["mean_gini"] and method in base["mean_gini"]):
                        deltas.append(cell["mean_gini"][method] - base["mean_gini"][method])
                if deltas:
                    value = round(float(np.mean(deltas)), 2) + 0.0  # avoid "-0.00"
                    row.append(f"{value:.2f}")
                else:
                    row.append("")
                    gaps.append(f"sparsity delta unavailable for ({regime}, {method})")
            w.writerow(row)

    # ---- ROAD plots -------------------------------------------------------
    for method in methods:
        series = []
        for regime in regime_names:
            curves = []
            for seed in seeds:
                cell = manifest.cell(seed, regime)
                if cell and not cell.get("error") and method in cell.get("road_csv", {}):
                    path = Path(cell["road_csv"][method])
                    if path.exists():
                        curves.append(_read_road_csv(path))
            if curves:
                xs = curves[0][0]
                ys = np.mean([c[1] for c in curves], axis=0)
                series.append((regime, xs, ys))
            else:
                gaps.append(f"ROAD curve missing for ({regime}, {method})")
        if series:
            _svg_line_plot(
                reports / f"road_{method}.svg", series,
                f"ROAD (MoRF) - {method}", "fraction of pixels removed", "accuracy",
            )

    # ---- saliency grids: one column per regime ----------------------------
    first_seed_cells = {c["regime"]: c for c in manifest.cells if c["seed"] == seeds[0]}
    for method in methods:
        grid_dir = reports / "grids" / method
        for i in range(plan["saliency_samples"]):
            columns = []
            for regime in regime_names:
                cell = first_seed_cells.get(regime)
                if not cell or cell.get("error") or method not in cell.get("saliency_dir", {}):
                    columns = []
                    break
                tile = Path(cell["saliency_dir"][method]) / f"{i}.pgm"
                if not tile.exists():
                    columns = []
                    break
                columns.append(read_pnm(tile))
            if not columns:
                gaps.append(f"saliency grid incomplete for sample {i}, {method}")
                continue
            sep = np.full((columns[0].shape[0], 2), 255, dtype=np.uint8)
            strip = columns[0]
            for col in columns[1:]:
                strip = np.hstack([strip, sep, col])
            grid_dir.mkdir(parents=True, exist_ok=True)
            write_pgm(grid_dir / f"sample_{i}.pgm", strip)

    # ---- report.md --------------------------------------------------------
    lines = ["# Run report", "", f"- run_id: {plan['run_id']}",
             f"- seeds: {', '.join(str(s) for s in seeds)}",
             f"- config hash: {manifest.config_hash}", ""]

    lines.append("## Trend checks")
    lines.append("")
    target = "global_post_ft"
    for method in methods:
        wins = []
        for seed in seeds:
            cell = manifest.cell(seed, target)
            base = manifest.cell(seed, "natural")
            if (cell and base and not cell.get("error") and not base.get("error")
                    and method in cell.get("road_auc", {}) and method in base.get("road_auc", {})):
                wins.append(cell["road_auc"][method] <= base["road_auc"][method])
        if wins:
            lines.append(
                f"- ROAD AUC {target} <= natural ({method_label.get(method, method)}): "
                f"{sum(wins)}/{len(wins)} seeds"
            )
    ft_family = [r for r in regime_names if r.endswith("_post_ft")]
    norm_wins = []
    for seed in seeds:
        base = manifest.cell(seed, "natural")
        cells = [manifest.cell(seed, r) for r in ft_family]
        if (base and not base.get("error") and cells
                and all(c and not c.get("error") and c.get("gradient_norm_mean") is not None
                        for c in cells)
                and base.get("gradient_norm_mean") is not None):
            family_mean = float(np.mean([c["gradient_norm_mean"] for c in cells]))
            norm_wins.append(family_mean < base["gradient_norm_mean"])
    if norm_wins:
        lines.append(
            f"- input-gradient norm pruned+FT family < natural: "
            f"{sum(norm_wins)}/{len(norm_wins)} seeds"
        )
    adv_regimes = [r for r in regime_names if r.startswith("adv_")]
    for adv in adv_regimes:
        robust_wins = []
        for seed in seeds:
            cell = manifest.cell(seed, adv)
            base = manifest.cell(seed, "natural")
            if (cell and base and cell.get("pgd_accuracy") is not None
                    and base.get("pgd_accuracy") is not None):
                robust_wins.append(cell["pgd_accuracy"] > base["pgd_accuracy"])
        if robust_wins:
            lines.append(
                f"- attacked accuracy {adv} > natural: {sum(robust_wins)}/{len(robust_wins)} seeds"
            )

    lines.append("")
    lines.append("## Gaps")
    lines.append("")
    if gaps:
        lines += [f"- {g}" for g in gaps]
    else:
        lines.append("- none")
    (reports / "report.md").write_text("\n".join(lines) + "\n")
    log.info("reports written to %s", reports)
    return reports
