"""
dataset: (s^G, s^L, s^T) trainingsvoorbeelden uit een trajectory

Usage:
    python -m nextrap.cli.main dataset --traj runs/traj --k 5 --out runs/data
"""

from pathlib import Path

from nextrap.src.delta_extraction import SIGMA_TRANSFORMS, extract_dataset, save_dataset
from nextrap.src.tracing import trace_run

from .common import add_global_flags, manifest_for

DATASET_NAME = "dataset.safetensors"


def add_parser(subparsers):
    parser = subparsers.add_parser("dataset", help="Bouw de predictor dataset")
    parser.add_argument("--traj", type=Path, required=True, help="Trajectory map of manifest")
    parser.add_argument("--k", type=int, default=5, help="Extrapolatie afstand in checkpoints")
    parser.add_argument("--sigma-transform", choices=list(SIGMA_TRANSFORMS), default="none",
                        help="Transformatie van σ features")
    add_global_flags(parser)
    parser.set_defaults(handler=run_dataset)
    return parser


@trace_run("dataset")
def run_dataset(args) -> dict:
    print(f"🔄 dataset uit {args.traj} (k={args.k})")
    dataset = extract_dataset(manifest_for(args.traj), args.k, sigma_transform=args.sigma_transform)
    path = Path(args.out) / DATASET_NAME
    save_dataset(dataset, path)
    for group in dataset.groups:
        print(f"  ({group.field}, {group.dim}): {len(group.examples)} voorbeelden")
    if dataset.skipped:
        print(f"⚠️ {dataset.skipped} degenerate (parameter, checkpoint) paren overgeslagen")
    print(f"✅ {dataset.n_examples} voorbeelden in {len(dataset.groups)} groepen")
    print(f"💾 {path}")
    return {"examples": dataset.n_examples, "groups": len(dataset.groups),
            "skipped": dataset.skipped, "k": dataset.k, "c": dataset.c}
