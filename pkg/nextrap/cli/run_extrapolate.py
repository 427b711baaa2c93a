"""
extrapolate / sweep: predict-extend op het laatste checkpoint

Usage:
    python -m nextrap.cli.main extrapolate --traj runs/traj --bundle runs/bundle/bundle.safetensors \
        --alpha 1.5 --out runs/next
    python -m nextrap.cli.main sweep --traj runs/traj --bundle runs/bundle/bundle.safetensors \
        --alphas 0.5,1.0,1.5,2.0,2.5,3.0,3.5,4.0 --out runs/sweep
"""

from pathlib import Path
from typing import Optional

from nextrap.src.checkpoint_store import load_manifest, read_trajectory, save_checkpoint
from nextrap.src.diagnostics import frobenius_errors
from nextrap.src.extrapolation import (
    ComparisonTable,
    apply_deltas,
    build_report,
    extrapolate_checkpoint,
    linear_extrapolate,
    output_step,
    predict_deltas,
    write_comparison_csv,
    write_report_jsonl,
)
from nextrap.src.predictor import load_bundle, warn_k_mismatch
from nextrap.src.tracing import trace_run
from nextrap.src.trajectory_lab import load_lab_record

from .common import DEFAULT_ALPHAS, add_global_flags, alpha_label, manifest_for, parse_alphas

CHECKPOINT_NAME = "extrapolated.safetensors"
REPORT_NAME = "report.jsonl"


def _common_flags(parser):
    parser.add_argument("--traj", type=Path, required=True, help="Trajectory map of manifest")
    parser.add_argument("--bundle", type=Path, required=True, help="Predictor bundle (.safetensors)")
    parser.add_argument("--k", type=int, help="Extrapolatie afstand (default: k van de bundle)")
    parser.add_argument("--dtype", choices=["F32", "F64"], default="F32", help="Opslag dtype van de output")
    add_global_flags(parser)


def add_parsers(subparsers):
    single = subparsers.add_parser("extrapolate", help="Eén extrapolatie met coëfficiënt α")
    single.add_argument("--alpha", type=float, default=1.5, help="Extending coëfficiënt (default 1.5)")
    _common_flags(single)
    single.set_defaults(handler=run_extrapolate)

    sweep = subparsers.add_parser("sweep", help="Extrapolatie over een lijst α waarden")
    sweep.add_argument("--alphas", default=",".join(f"{a:g}" for a in DEFAULT_ALPHAS),
                       help="Komma-gescheiden α waarden")
    _common_flags(sweep)
    sweep.set_defaults(handler=run_sweep)


def load_truth(manifest: Path, traj, k: int):
    """Analytische W(c+k) uit dynamics.json, of None als die er niet is"""
    record = load_lab_record(manifest.parent)
    if record is None or record.generator != "analytic":
        return None
    return record.ground_truth(len(traj) - 1 + k)


@trace_run("extrapolate")
def run_extrapolate(args) -> dict:
    traj = read_trajectory(load_manifest(manifest_for(args.traj)))
    bundle = load_bundle(args.bundle)
    k = args.k if args.k is not None else bundle.k
    print(f"🔄 extrapolatie α={args.alpha:g}, k={k} vanaf step {traj[-1].step}")

    ckpt, report = extrapolate_checkpoint(traj, bundle, args.alpha, args.k)
    out = Path(args.out)
    save_checkpoint(ckpt, out / CHECKPOINT_NAME, args.dtype)
    write_report_jsonl(report, out / REPORT_NAME)

    print(f"✅ {len(report.records)} parameters, {report.n_skipped} overgeslagen, output step {ckpt.step}")
    print(f"💾 {out / CHECKPOINT_NAME}")
    return {"alpha": args.alpha, "k": k, "step": ckpt.step, "parameters": len(report.records),
            "skipped": report.n_skipped}


@trace_run("sweep")
def run_sweep(args) -> dict:
    alphas = parse_alphas(args.alphas)
    manifest = manifest_for(args.traj)
    traj = read_trajectory(load_manifest(manifest))
    bundle = load_bundle(args.bundle)
    k: Optional[int] = args.k
    if k is None:
        k = bundle.k
    else:
        warn_k_mismatch(bundle, k)

    predictions = predict_deltas(traj, bundle)
    step = output_step(traj, k)
    truth = load_truth(manifest, traj, k)
    table = ComparisonTable()
    out = Path(args.out)

    print(f"🔄 sweep over {len(alphas)} α waarden (k={k})")
    for alpha in alphas:
        ckpt = apply_deltas(traj[-1], predictions, alpha, step)
        report = build_report(predictions, alpha, k, bundle.bundle_id, step)
        target = out / alpha_label(alpha)
        save_checkpoint(ckpt, target / CHECKPOINT_NAME, args.dtype)
        write_report_jsonl(report, target / REPORT_NAME)
        line = f"  α={alpha:g}: {target}"
        if truth is not None:
            errors = frobenius_errors(ckpt, truth)
            table.add("next", alpha, errors)
            table.add("linear-full", alpha, frobenius_errors(linear_extrapolate(traj, alpha, k), truth))
            line += f"  gemiddelde fout {sum(errors.values()) / len(errors):.6g}"
        print(line)

    summary = {"alphas": alphas, "k": k, "step": step, "ground_truth": truth is not None}
    if truth is not None:
        write_comparison_csv(table, out / "sweep_errors.csv")
        print(f"💾 {out / 'sweep_errors.csv'}")
    else:
        print("⚠️ Geen analytische ground truth, geen foutmeting")
    return summary
