"""Command-line interface.

Subcommands:

    gen-data  render a synthetic dataset directory from a spec JSON
    run       execute seeded active-learning runs from a config JSON
    eval      aggregate run directories into a report (figures + CSV/JSON/MD)
    report    emit one report format to stdout or a file
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import ExperimentConfig
from .errors import PatchalError
from .evaluation import (
    build_report,
    csv_rows,
    discover_runs,
    render_markdown,
    write_report,
)
from .experiment import full_training_reference, run_experiment, split_dataset
from .simlab import SyntheticSpec, generate_dataset, write_dataset


def _cmd_gen_data(args) -> int:
    spec = SyntheticSpec.from_dict(json.loads(Path(args.spec).read_text()))
    dataset = generate_dataset(spec)
    split_seed = spec.seed if args.split_seed is None else args.split_seed
    split = split_dataset(dataset.ids, split_seed)
    write_dataset(dataset, args.out, split)
    print(
        f"wrote {len(dataset.ids)} images to {args.out} "
        f"(foreground fraction {dataset.fg_fraction_actual:.4f}, "
        f"trainpool {len(split['trainpool'])}, test {len(split['test'])})"
    )
    return 0


def _cmd_run(args) -> int:
    cfg = ExperimentConfig.from_json(args.config)
    seeds = [args.seed] if args.seed is not None else list(cfg.seeds)
    for seed in seeds:
        results = run_experiment(cfg, seed)
        final = results["loops"][-1]["mean_dice"]
        print(f"{cfg.method} seed {seed}: final mean Dice {final:.4f}")
    return 0


def _parse_tau_pairs(raw) -> tuple[tuple[str, str], ...]:
    pairs = []
    for item in raw or ():
        parts = item.split(",")
        if len(parts) != 2:
            raise PatchalError(f"--tau expects 'col_a,col_b', got {item!r}")
        pairs.append((parts[0].strip(), parts[1].strip()))
    return tuple(pairs)


def _resolve_y_full(args, runs) -> float | None:
    if args.y_full is not None:
        return args.y_full
    if getattr(args, "compute_full", False):
        cfg = ExperimentConfig.from_dict(runs[0]["config"])
        seeds = sorted({int(r["seed"]) for r in runs})
        values = [full_training_reference(cfg, seed) for seed in seeds]
        return sum(values) / len(values)
    return None


def _cmd_eval(args) -> int:
    runs = discover_runs(args.runs)
    report = build_report(
        runs,
        alpha=args.alpha,
        y_full=_resolve_y_full(args, runs),
        tau_pairs=_parse_tau_pairs(args.tau),
    )
    written = write_report(report, runs, args.out, figures=not args.no_figures)
    for path in written:
        print(f"wrote {path}")
    return 0


def _cmd_report(args) -> int:
    runs = discover_runs(args.runs)
    if args.format == "csv":
        text = "\n".join(csv_rows(runs)) + "\n"
    else:
        report = build_report(
            runs,
            alpha=args.alpha,
            y_full=_resolve_y_full(args, runs),
            tau_pairs=_parse_tau_pairs(args.tau),
        )
        if args.format == "json":
            text = json.dumps(report, sort_keys=True, indent=2) + "\n"
        else:
            text = render_markdown(report) + "\n"
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="patchal",
        description="Patch-based active learning on 3D volumes.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", help="generate a synthetic dataset directory")
    gen.add_argument("--spec", required=True, help="synthetic spec JSON file")
    gen.add_argument("--out", required=True, help="output dataset directory")
    gen.add_argument(
        "--split-seed", type=int, default=None,
        help="seed for the trainpool/test split (defaults to the spec seed)",
    )
    gen.set_defaults(func=_cmd_gen_data)

    run = sub.add_parser("run", help="execute seeded active-learning runs")
    run.add_argument("--config", required=True, help="experiment config JSON file")
    run.add_argument(
        "--seed", type=int, default=None,
        help="run only this seed (default: every seed in the config)",
    )
    run.set_defaults(func=_cmd_run)

    def _common_eval_args(cmd):
        cmd.add_argument("--runs", nargs="+", required=True, help="run directories")
        cmd.add_argument("--alpha", type=float, default=0.05)
        cmd.add_argument(
            "--y-full", type=float, default=None,
            help="full-data reference Dice for the efficiency fit",
        )
        cmd.add_argument(
            "--compute-full", action="store_true",
            help="train on the fully annotated pool to obtain the reference Dice",
        )
        cmd.add_argument(
            "--tau", action="append", default=None, metavar="COL_A,COL_B",
            help="rank correlation between two of: aubc, final_dice, fg_eff",
        )

    ev = sub.add_parser("eval", help="aggregate runs into a report directory")
    _common_eval_args(ev)
    ev.add_argument("--out", required=True, help="report output directory")
    ev.add_argument("--no-figures", action="store_true", help="skip figure rendering")
    ev.set_defaults(func=_cmd_eval)

    rep = sub.add_parser("report", help="emit a single report format")
    _common_eval_args(rep)
    rep.add_argument("--format", choices=("csv", "json", "md"), default="md")
    rep.add_argument("--out", default=None, help="output file (default: stdout)")
    rep.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except PatchalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
