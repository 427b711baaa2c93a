"""
inspect: namen, shapes en normen van een checkpoint of de laatste van een trajectory

Usage:
    python -m nextrap.cli.main inspect --traj runs/traj
    python -m nextrap.cli.main inspect --checkpoint runs/traj/ckpt_00150.safetensors --out runs/inspect
"""

from pathlib import Path

import numpy as np
import pandas as pd

from nextrap.src.checkpoint_store import load_checkpoint, load_manifest, read_trajectory
from nextrap.src.diagnostics import write_frame_csv
from nextrap.src.linalg_core import frobenius_norm
from nextrap.src.tracing import trace_run

from .common import add_global_flags, manifest_for

INSPECT_COLUMNS = ["param", "kind", "shape", "norm"]


def add_parser(subparsers):
    parser = subparsers.add_parser("inspect", help="Checkpoint samenvatting")
    source = parser.add_mutually_exclusive_group(required=True)
    source.add_argument("--traj", type=Path, help="Trajectory map of manifest (laatste checkpoint)")
    source.add_argument("--checkpoint", type=Path, help="Los checkpoint bestand")
    add_global_flags(parser, out_required=False)
    parser.set_defaults(handler=run_inspect)
    return parser


def summarize(ckpt) -> pd.DataFrame:
    rows = []
    for name, arr in ckpt.tensors.items():
        rows.append({"param": name, "kind": "tensor", "shape": "x".join(map(str, arr.shape)),
                     "norm": frobenius_norm(arr)})
    for name, arr in ckpt.passthrough.items():
        rows.append({"param": name, "kind": "passthrough", "shape": "x".join(map(str, arr.shape)),
                     "norm": float(np.linalg.norm(arr.ravel()))})
    return pd.DataFrame(rows, columns=INSPECT_COLUMNS)


@trace_run("inspect")
def run_inspect(args) -> dict:
    if args.checkpoint is not None:
        ckpt = load_checkpoint(args.checkpoint)
        n_checkpoints = 1
    else:
        traj = read_trajectory(load_manifest(manifest_for(args.traj)))
        ckpt = traj[-1]
        n_checkpoints = len(traj) - 1

    df = summarize(ckpt)
    print(f"📊 step {ckpt.step}: {len(ckpt.tensors)} tensors, {len(ckpt.passthrough)} passthrough")
    for row in df.itertuples(index=False):
        print(f"  {row.param:<28} {row.kind:<12} {row.shape:>10}  ‖·‖={row.norm:.6g}")

    if args.out is not None:
        write_frame_csv(df, Path(args.out) / "inspect.csv")
        print(f"💾 {Path(args.out) / 'inspect.csv'}")
    return {"step": ckpt.step, "tensors": len(ckpt.tensors), "checkpoints": n_checkpoints}
