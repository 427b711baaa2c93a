"""
train: één encoder-decoder predictor per (field, dimensie)

Usage:
    python -m nextrap.cli.main train --dataset runs/data/dataset.safetensors \
        --hidden 256 --epochs 200 --lr 1e-3 --out runs/bundle
"""

from pathlib import Path

import pandas as pd

from nextrap.src.delta_extraction import load_dataset
from nextrap.src.diagnostics import write_frame_csv
from nextrap.src.predictor import LR_SCHEDULES, save_bundle, train
from nextrap.src.tracing import trace_run

from .common import add_global_flags

BUNDLE_NAME = "bundle.safetensors"
LOSS_COLUMNS = ["field", "dim", "epoch", "train_loss", "holdout_loss"]


def add_parser(subparsers):
    parser = subparsers.add_parser("train", help="Train de predictor bundle")
    parser.add_argument("--dataset", type=Path, required=True, help="Dataset bestand (.safetensors)")
    parser.add_argument("--hidden", type=int, default=256, help="Hidden breedte h")
    parser.add_argument("--encoder-layers", type=int, default=2)
    parser.add_argument("--decoder-layers", type=int, default=2)
    parser.add_argument("--epochs", type=int, default=200)
    parser.add_argument("--lr", type=float, default=1e-3)
    parser.add_argument("--lr-schedule", choices=list(LR_SCHEDULES), default="cosine")
    parser.add_argument("--batch-size", type=int, default=64)
    parser.add_argument("--holdout", type=float, default=0.1, help="Fractie parameters in de holdout")
    parser.add_argument("--ablation", choices=["none", "no_global", "no_local"], default="none",
                        help="Zet de global of local input op nul")
    add_global_flags(parser)
    parser.set_defaults(handler=run_train)
    return parser


def loss_frame(bundle) -> pd.DataFrame:
    rows = []
    for fld, dim in bundle.sorted_keys():
        entry = bundle.entries[(fld, dim)]
        for epoch, (tr, ho) in enumerate(zip(entry.train_loss, entry.holdout_loss)):
            rows.append({"field": fld, "dim": dim, "epoch": epoch, "train_loss": tr, "holdout_loss": ho})
    return pd.DataFrame(rows, columns=LOSS_COLUMNS)


@trace_run("train")
def run_train(args) -> dict:
    dataset = load_dataset(args.dataset)
    print(f"📄 Dataset: {dataset.n_examples} voorbeelden, {len(dataset.groups)} groepen (k={dataset.k})")
    print(f"🔄 Training ({args.epochs} epochs, lr {args.lr}, h={args.hidden})...")
    bundle = train(
        dataset,
        hidden_dim=args.hidden,
        encoder_layers=args.encoder_layers,
        decoder_layers=args.decoder_layers,
        seed=args.seed,
        epochs=args.epochs,
        lr=args.lr,
        holdout_fraction=args.holdout,
        batch_size=args.batch_size,
        lr_schedule=args.lr_schedule,
        input_ablation=args.ablation,
    )
    out = Path(args.out)
    save_bundle(bundle, out / BUNDLE_NAME)
    write_frame_csv(loss_frame(bundle), out / "train_loss.csv")

    final = {}
    for fld, dim in bundle.sorted_keys():
        entry = bundle.entries[(fld, dim)]
        final[f"{fld}/{dim}"] = entry.train_loss[-1]
        holdout = entry.holdout_loss[-1]
        holdout_text = "n.v.t." if holdout is None else f"{holdout:.4g}"
        print(f"  ({fld}, {dim}): train L1 {entry.train_loss[0]:.4g} -> {entry.train_loss[-1]:.4g}, "
              f"holdout {holdout_text}")
    print(f"💾 Bundle: {out / BUNDLE_NAME}")
    return {"predictors": len(bundle.entries), "final_train_loss": final, "k": bundle.k}
