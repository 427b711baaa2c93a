"""
compare: NExt tegen de lineaire baselines, gemeten tegen ground truth

Ground truth komt uit dynamics.json (analytische trajectories) of, met
--holdout-tail, uit de laatste k checkpoints die dan niet als input dienen.

Usage:
    python -m nextrap.cli.main compare --traj runs/traj --bundle runs/bundle/bundle.safetensors \
        --alpha 1.0 --out runs/compare
"""

from pathlib import Path

import numpy as np

from nextrap.src.checkpoint_store import load_manifest, read_trajectory, write_json_document
from nextrap.src.diagnostics import frobenius_errors
from nextrap.src.errors import InsufficientCheckpoints, UsageError
from nextrap.src.extrapolation import ComparisonTable, extrapolate_checkpoint, linear_extrapolate, write_comparison_csv
from nextrap.src.predictor import load_bundle
from nextrap.src.tracing import trace_run

from .common import add_global_flags, manifest_for
from .run_extrapolate import load_truth

METHODS = ("next", "linear-full", "linear-rank1")


def add_parser(subparsers):
    parser = subparsers.add_parser("compare", help="Foutvergelijking tegen ground truth")
    parser.add_argument("--traj", type=Path, required=True, help="Trajectory map of manifest")
    parser.add_argument("--bundle", type=Path, help="Predictor bundle; zonder alleen de baselines")
    parser.add_argument("--alpha", type=float, default=1.0)
    parser.add_argument("--k", type=int, help="Extrapolatie afstand (default: k van de bundle)")
    parser.add_argument("--holdout-tail", action="store_true",
                        help="Gebruik het checkpoint k stappen voor het einde als laatste input")
    add_global_flags(parser)
    parser.set_defaults(handler=run_compare)
    return parser


def _wins(table: ComparisonTable, method: str, baseline: str, alpha: float) -> float:
    mine = table.errors(method, alpha)
    theirs = table.errors(baseline, alpha)
    return float(np.mean([mine[n] < theirs[n] for n in mine])) if mine else float("nan")


@trace_run("compare")
def run_compare(args) -> dict:
    manifest = manifest_for(args.traj)
    traj = read_trajectory(load_manifest(manifest))
    bundle = load_bundle(args.bundle) if args.bundle else None
    k = args.k if args.k is not None else (bundle.k if bundle else None)
    if k is None:
        raise UsageError("--k is verplicht zonder --bundle")

    if args.holdout_tail:
        if len(traj) - 1 - k < 1:
            raise InsufficientCheckpoints(f"te weinig checkpoints om {k} als holdout te gebruiken")
        truth = traj[-1]
        traj = traj[:-k]
        source = "holdout-tail"
    else:
        truth = load_truth(manifest, traj, k)
        if truth is None:
            raise UsageError("geen analytische ground truth; gebruik --holdout-tail")
        source = "analytic"

    table = ComparisonTable()
    if bundle is not None:
        ckpt, _ = extrapolate_checkpoint(traj, bundle, args.alpha, k)
        table.add("next", args.alpha, frobenius_errors(ckpt, truth))
    table.add("linear-full", args.alpha, frobenius_errors(linear_extrapolate(traj, args.alpha, k, "full"), truth))
    table.add("linear-rank1", args.alpha, frobenius_errors(linear_extrapolate(traj, args.alpha, k, "rank1"), truth))

    out = Path(args.out)
    write_comparison_csv(table, out / "compare.csv")
    summary = {"alpha": args.alpha, "k": k, "truth": source, "mean_error": {},
               "baselines": "approximation"}
    print(f"📊 vergelijking (α={args.alpha:g}, k={k}, truth: {source})")
    for method in METHODS:
        errors = table.errors(method)
        if not errors:
            continue
        mean = float(np.mean(list(errors.values())))
        summary["mean_error"][method] = mean
        print(f"  {method:<13} gemiddelde ‖Ŵ − W‖_F {mean:.6g}")
    if bundle is not None:
        summary["next_win_rate"] = _wins(table, "next", "linear-full", args.alpha)
        print(f"🎯 NExt beter dan linear-full op {summary['next_win_rate']:.1%} van de parameters")
    write_json_document(summary, out / "compare_summary.json")
    print(f"💾 {out / 'compare.csv'}")
    return summary
