"""Cross-run evaluation: reads persisted results, aggregates the metric
suite, and renders delimited reports.

Runs are grouped by (dataset, regime); within a group each method needs at
least two seeds.  Budget-curve area and final Dice are reported per method
with their across-seed spread.  The foreground-efficiency rate is fitted
once per method on the pooled (all seeds x all post-start loops) point
cloud; the anchors are the mean starting point across seeds and a
full-data reference that is either supplied, computed, or estimated from
the best observed Dice (flagged as such).  The pairwise penalty matrix and
win/lose counts pool every (dataset, regime, budget) cell.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import DegenerateFit, RaggedResults
from .metrics import BudgetCurve, FgEffInput, aubc, fit_fg_eff, kendall_tau, ppm

CSV_HEADER = "method,dataset,regime,seed,loop,budget_patches,fg_voxels_annotated,mean_dice"


def discover_runs(paths) -> list[dict]:
    """Load every results.json found under the given directories."""
    runs = []
    for path in paths:
        root = Path(path)
        if root.is_file() and root.name == "results.json":
            candidates = [root]
        else:
            candidates = sorted(root.rglob("results.json"))
        for item in candidates:
            runs.append(json.loads(item.read_text()))
    if not runs:
        raise RaggedResults(f"no results.json found under {list(map(str, paths))}")
    return runs


def _group_runs(runs) -> dict:
    groups: dict[tuple[str, str], dict[str, dict[int, dict]]] = {}
    for run in runs:
        key = (run["dataset"], run["regime"])
        method = run["method"]
        seed = int(run["seed"])
        groups.setdefault(key, {}).setdefault(method, {})[seed] = run
    return groups


def _method_summary(seed_runs: dict[int, dict]) -> dict:
    aubcs, finals = [], []
    dice_by_budget: dict[str, list[float]] = {}
    for seed in sorted(seed_runs):
        records = seed_runs[seed]["loops"]
        curve = BudgetCurve(
            tuple((r["budget_patches"], r["mean_dice"]) for r in records),
            seed_id=seed,
        )
        aubcs.append(aubc(curve))
        finals.append(records[-1]["mean_dice"])
        for r in records:
            dice_by_budget.setdefault(str(r["budget_patches"]), []).append(
                float(r["mean_dice"])
            )
    return {
        "seeds": sorted(seed_runs),
        "aubc_mean": float(np.mean(aubcs)),
        "aubc_std": float(np.std(aubcs)),
        "aubc_per_seed": [float(v) for v in aubcs],
        "final_dice_mean": float(np.mean(finals)),
        "final_dice_std": float(np.std(finals)),
        "final_dice_per_seed": [float(v) for v in finals],
        "dice_by_budget": dice_by_budget,
    }


def _fg_eff_entry(seed_runs: dict[int, dict], y_full: float) -> dict:
    seeds = sorted(seed_runs)
    t0 = float(np.mean([seed_runs[s]["loops"][0]["fg_fraction_annotated"] for s in seeds]))
    y0 = float(np.mean([seed_runs[s]["loops"][0]["mean_dice"] for s in seeds]))
    pooled = []
    per_seed = []
    for seed in seeds:
        records = seed_runs[seed]["loops"]
        points = [
            (r["fg_fraction_annotated"], r["mean_dice"]) for r in records[1:]
        ]
        pooled.extend(points)
        try:
            per_seed.append(
                fit_fg_eff(FgEffInput(tuple(points), t0, y0, y_full))
            )
        except DegenerateFit:
            per_seed.append(None)
    entry = {
        "t0_hat": t0,
        "y0_hat": y0,
        "yfull_hat": y_full,
        "points": [[float(t), float(y)] for t, y in pooled],
    }
    try:
        entry["gamma"] = fit_fg_eff(FgEffInput(tuple(pooled), t0, y0, y_full))
    except DegenerateFit:
        entry["gamma"] = None
    fitted = [g for g in per_seed if g is not None]
    entry["gamma_seed_std"] = float(np.std(fitted)) if fitted else None
    return entry


def _budget_cells(methods: dict[str, dict[int, dict]]) -> dict[int, dict[str, list[float]]]:
    """Per-budget samples, keyed by budget, for the methods of one group."""
    budget_sets = []
    for method, seed_runs in methods.items():
        for run in seed_runs.values():
            budget_sets.append({r["budget_patches"] for r in run["loops"]})
    common = set.intersection(*budget_sets)
    if not common:
        raise RaggedResults("runs share no common budgets")
    cells: dict[int, dict[str, list[float]]] = {b: {} for b in sorted(common)}
    for method, seed_runs in methods.items():
        for budget in cells:
            samples = []
            for seed in sorted(seed_runs):
                by_budget = {
                    r["budget_patches"]: r["mean_dice"]
                    for r in seed_runs[seed]["loops"]
                }
                samples.append(by_budget[budget])
            cells[budget][method] = samples
    return cells


def build_report(
    runs: list[dict],
    alpha: float = 0.05,
    y_full: float | None = None,
    tau_pairs: tuple[tuple[str, str], ...] = (),
) -> dict:
    """Aggregate the metric suite over a set of runs into one report dict."""
    groups = _group_runs(runs)
    for (dataset, regime), methods in groups.items():
        for method, seed_runs in methods.items():
            if len(seed_runs) < 2:
                raise RaggedResults(
                    f"method {method!r} in ({dataset}, {regime}) has fewer than 2 seeds"
                )

    if y_full is None:
        observed = [
            r["mean_dice"] for run in runs for r in run["loops"]
        ]
        y_full_value = float(max(observed))
        y_full_source = "estimated-max-observed"
    else:
        y_full_value = float(y_full)
        y_full_source = "provided"

    report_groups = {}
    ppm_cells: dict[tuple, dict[str, list[float]]] = {}
    all_methods: set[str] = set()
    for (dataset, regime), methods in sorted(groups.items()):
        all_methods.update(methods)
        entry = {"dataset": dataset, "regime": regime, "methods": {}}
        for method in sorted(methods):
            summary = _method_summary(methods[method])
            summary["fg_eff"] = _fg_eff_entry(methods[method], y_full_value)
            entry["methods"][method] = summary
        cells = _budget_cells(methods)
        entry["budgets"] = sorted(cells)
        for budget, per_method in cells.items():
            ppm_cells[(dataset, regime, budget)] = per_method
        report_groups[f"{dataset}/{regime}"] = entry

    shared = sorted(
        m for m in all_methods
        if all(m in cell for cell in ppm_cells.values())
    )
    if not shared:
        raise RaggedResults("no method is present in every cell")
    ppm_input = {
        key: {m: cell[m] for m in shared} for key, cell in ppm_cells.items()
    }
    ppm_result = ppm(ppm_input, alpha=alpha)

    win_lose = {}
    for i, mi in enumerate(ppm_result.methods):
        for j, mj in enumerate(ppm_result.methods):
            if i >= j:
                continue
            win_lose[f"{mi} vs {mj}"] = {
                "wins": int(ppm_result.wins[i, j]),
                "losses": int(ppm_result.wins[j, i]),
            }

    report = {
        "alpha": alpha,
        "y_full": {"value": y_full_value, "source": y_full_source},
        "groups": report_groups,
        "ppm": {
            "methods": list(ppm_result.methods),
            "matrix": [[float(v) for v in row] for row in ppm_result.matrix],
            "wins": [[int(v) for v in row] for row in ppm_result.wins],
            "num_cells": ppm_result.num_cells,
        },
        "win_lose": win_lose,
    }

    if tau_pairs:
        report["kendall_tau"] = {
            f"{a} vs {b}": _tau_between_columns(report, a, b)
            for a, b in tau_pairs
        }
    return report


_RANKABLE = {"aubc", "final_dice", "fg_eff"}


def _method_metric(report: dict, method: str, column: str) -> float:
    values = []
    for group in report["groups"].values():
        if method not in group["methods"]:
            continue
        summary = group["methods"][method]
        if column == "aubc":
            values.append(summary["aubc_mean"])
        elif column == "final_dice":
            values.append(summary["final_dice_mean"])
        else:
            gamma = summary["fg_eff"]["gamma"]
            if gamma is not None:
                values.append(gamma)
    return float(np.mean(values)) if values else float("-inf")


def _tau_between_columns(report: dict, col_a: str, col_b: str) -> dict:
    """Kendall's tau between method rankings induced by two metric columns."""
    for col in (col_a, col_b):
        if col not in _RANKABLE:
            raise ValueError(f"unknown ranking column {col!r}; expected {_RANKABLE}")
    methods = sorted(
        {m for group in report["groups"].values() for m in group["methods"]}
    )
    rank_a = sorted(methods, key=lambda m: (-_method_metric(report, m, col_a), m))
    rank_b = sorted(methods, key=lambda m: (-_method_metric(report, m, col_b), m))
    tau, p = kendall_tau(rank_a, rank_b)
    return {"tau": tau, "p_two_sided": p, "ranking_a": rank_a, "ranking_b": rank_b}


def csv_rows(runs: list[dict]) -> list[str]:
    """Flat per-loop rows in the report CSV schema."""
    rows = []
    for run in runs:
        for record in run["loops"]:
            rows.append(
                ",".join(
                    str(v)
                    for v in (
                        run["method"],
                        run["dataset"],
                        run["regime"],
                        run["seed"],
                        record["loop"],
                        record["budget_patches"],
                        record["fg_voxels_annotated"],
                        repr(float(record["mean_dice"])),
                    )
                )
            )
    rows.sort()
    return [CSV_HEADER] + rows


def render_markdown(report: dict) -> str:
    """Human-readable summary tables for the report."""
    lines = ["# Evaluation report", ""]
    y_full = report["y_full"]
    lines.append(
        f"Full-data reference Dice: {y_full['value']:.4f} ({y_full['source']})"
    )
    lines.append("")
    for key in sorted(report["groups"]):
        group = report["groups"][key]
        lines.append(f"## {key}")
        lines.append("")
        lines.append("| Method | AUBC | Final Dice | FG-Eff |")
        lines.append("| --- | --- | --- | --- |")
        for method in sorted(group["methods"]):
            s = group["methods"][method]
            gamma = s["fg_eff"]["gamma"]
            gamma_txt = "n/a" if gamma is None else f"{gamma:.3f}"
            lines.append(
                f"| {method} "
                f"| {s['aubc_mean']:.4f} ± {s['aubc_std']:.4f} "
                f"| {s['final_dice_mean']:.4f} ± {s['final_dice_std']:.4f} "
                f"| {gamma_txt} |"
            )
        lines.append("")
    ppm_block = report["ppm"]
    lines.append("## Pairwise penalty matrix")
    lines.append("")
    lines.append(f"Cells compared: {ppm_block['num_cells']} (alpha = {report['alpha']})")
    lines.append("")
    header = "| beats -> | " + " | ".join(ppm_block["methods"]) + " |"
    lines.append(header)
    lines.append("| --- |" + " --- |" * len(ppm_block["methods"]))
    for i, method in enumerate(ppm_block["methods"]):
        row = " | ".join(f"{v:.2f}" for v in ppm_block["matrix"][i])
        lines.append(f"| {method} | {row} |")
    lines.append("")
    if "kendall_tau" in report:
        lines.append("## Ranking correlations")
        lines.append("")
        for key in sorted(report["kendall_tau"]):
            entry = report["kendall_tau"][key]
            lines.append(
                f"- {key}: tau = {entry['tau']:.3f}, p = {entry['p_two_sided']:.4f}"
            )
        lines.append("")
    return "\n".join(lines)


def write_report(
    report: dict,
    runs: list[dict],
    out_dir,
    figures: bool = True,
) -> list[Path]:
    """Write report.json, results.csv, report.md, and (optionally) figures.

    Regenerating from the same inputs produces identical bytes for the
    delimited outputs.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    json_path = out / "report.json"
    json_path.write_text(json.dumps(report, sort_keys=True, indent=2) + "\n")
    written.append(json_path)

    csv_path = out / "results.csv"
    csv_path.write_text("\n".join(csv_rows(runs)) + "\n")
    written.append(csv_path)

    md_path = out / "report.md"
    md_path.write_text(render_markdown(report) + "\n")
    written.append(md_path)

    if figures:
        from . import figures as _figures

        written.extend(_figures.render_all(report, out))
    return written
