"""
diagnose: energy ratio series, lineaire R² en ICER

Usage:
    python -m nextrap.cli.main diagnose energy --traj runs/traj --out runs/diag
    python -m nextrap.cli.main diagnose r2 --traj runs/traj --fit 10 --predict 5 --out runs/diag
    python -m nextrap.cli.main diagnose icer --steps 250 --baseline 19.1 --new 24.2
"""

from pathlib import Path

from nextrap.src.checkpoint_store import write_json_document
from nextrap.src.diagnostics import (
    energy_ratio_series,
    icer,
    linear_r2,
    step_reduction,
    write_energy_csv,
    write_r2_csv,
)
from nextrap.src.tracing import trace_run

from .common import add_global_flags, manifest_for


def add_parser(subparsers):
    parser = subparsers.add_parser("diagnose", help="Trajectory diagnostiek")
    inner = parser.add_subparsers(dest="diagnostic", required=True)

    energy = inner.add_parser("energy", help="E₁(Δ^G_i) per parameter")
    energy.add_argument("--traj", type=Path, required=True)
    add_global_flags(energy)
    energy.set_defaults(handler=run_energy, subcommand_name="diagnose energy")

    r2 = inner.add_parser("r2", help="R² van een affiene fit op de rank-1 update")
    r2.add_argument("--traj", type=Path, required=True)
    r2.add_argument("--fit", type=int, default=10, help="Fit venster (checkpoints 1..fit)")
    r2.add_argument("--predict", type=int, default=5, help="Voorspel venster erna")
    add_global_flags(r2)
    r2.set_defaults(handler=run_r2, subcommand_name="diagnose r2")

    cost = inner.add_parser("icer", help="Steps per procentpunt verbetering")
    cost.add_argument("--steps", type=int, required=True, help="Extra trainingsstappen")
    cost.add_argument("--baseline", type=float, required=True, help="Baseline gemiddelde (punten)")
    cost.add_argument("--new", type=float, required=True, help="Nieuw gemiddelde (punten)")
    cost.add_argument("--baseline-steps", type=int, help="Baseline steps voor step reduction")
    add_global_flags(cost, out_required=False)
    cost.set_defaults(handler=run_icer, subcommand_name="diagnose icer")
    return parser


@trace_run("diagnose_energy")
def run_energy(args) -> dict:
    series = energy_ratio_series(manifest_for(args.traj))
    path = Path(args.out) / "energy_ratio.csv"
    write_energy_csv(series, path)
    means = [s.mean for s in series if s.points]
    overall = sum(means) / len(means) if means else float("nan")
    gaps = sum(len(s.gaps) for s in series)
    print(f"📊 {len(series)} parameters, gemiddelde E₁ {overall:.4f}, {gaps} gaps")
    print(f"💾 {path}")
    return {"parameters": len(series), "mean_energy_ratio": overall, "gaps": gaps}


@trace_run("diagnose_r2")
def run_r2(args) -> dict:
    report = linear_r2(manifest_for(args.traj), fit_window=args.fit, predict_window=args.predict)
    path = Path(args.out) / "r2.csv"
    write_r2_csv(report, path)
    summary = report.summary()
    print(f"📊 {summary['parameters']} parameters, gemiddelde R² {summary['mean_r2']}")
    for label, count in report.histogram.items():
        print(f"  {label:<12} {count}")
    print(f"💾 {path}")
    return summary


@trace_run("diagnose_icer")
def run_icer(args) -> dict:
    result = {"steps": args.steps, "baseline": args.baseline, "new": args.new,
              "icer": icer(args.steps, args.baseline, args.new)}
    if args.baseline_steps is not None:
        result["step_reduction"] = step_reduction(args.baseline_steps, args.steps)
    print(f"📊 ICER: {result['icer']:.1f} steps per punt")
    if "step_reduction" in result:
        print(f"📊 Step reduction: {result['step_reduction']:.1%}")
    if args.out is not None:
        path = Path(args.out) / "icer.json"
        write_json_document(result, path)
        print(f"💾 {path}")
    return result
