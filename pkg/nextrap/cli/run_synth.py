"""
synth: genereer een trajectory met bekende ground truth

Usage:
    python -m nextrap.cli.main synth --kind saturating --shapes 64x48,32x32 \
        --params 200 --checkpoints 15 --noise 0.01 --out runs/traj
    python -m nextrap.cli.main synth --kind toy --mode lora:4 --steps 150 --out runs/toy
"""

from nextrap.src.errors import UsageError
from nextrap.src.tracing import trace_run
from nextrap.src.trajectory_lab import (
    DEFAULT_STEP_INTERVAL,
    DynamicsSpec,
    ToyTrainSpec,
    gen_analytic_trajectory,
    gen_toy_training_trajectory,
    load_spec_file,
)

from .common import add_global_flags, parse_mode, parse_shapes

DEFAULT_ANALYTIC_SHAPES = "64x48,48x32,32x32"


def add_parser(subparsers):
    parser = subparsers.add_parser("synth", help="Genereer een analytische of toy trajectory")
    parser.add_argument("--kind", required=True, choices=["linear", "saturating", "logistic", "toy"],
                        help="Dynamiek familie, of toy voor een echt getraind netwerk")
    parser.add_argument("--shapes", help="Parameter shapes, bv. 64x48,32x32 (toy: (out)x(in) per laag)")
    parser.add_argument("--params", type=int, help="Aantal parameters; shapes worden herhaald (analytisch)")
    parser.add_argument("--checkpoints", type=int, default=15, help="Aantal checkpoints c (analytisch)")
    parser.add_argument("--interval", type=int, default=DEFAULT_STEP_INTERVAL, help="Steps tussen checkpoints")
    parser.add_argument("--noise", type=float, default=0.0, help="Ruis std per entry (analytisch)")
    parser.add_argument("--amplitude", type=float, default=1.0)
    parser.add_argument("--timescale", type=float, default=5.0)
    parser.add_argument("--horizon", type=float, help="Normaliserende horizon T (default: --checkpoints)")
    parser.add_argument("--mode", default="full", help="toy: full of lora:R")
    parser.add_argument("--lora-alpha", type=float, help="toy LoRA alpha (default: rank)")
    parser.add_argument("--steps", type=int, default=150, help="toy: optimizer steps")
    parser.add_argument("--lr", type=float, default=0.05, help="toy: learning rate")
    parser.add_argument("--dtype", choices=["F32", "F64"], default="F32", help="Opslag dtype")
    parser.add_argument("--spec", help="JSON DynamicsSpec / ToyTrainSpec; vervangt de losse flags")
    add_global_flags(parser)
    parser.set_defaults(handler=run_synth)
    return parser


def _analytic(args):
    if args.mode != "full":
        raise UsageError("--mode lora kan alleen met --kind toy")
    if args.spec:
        spec = load_spec_file(args.spec, DynamicsSpec)
    else:
        spec = DynamicsSpec(kind=args.kind, amplitude=args.amplitude, timescale=args.timescale,
                            noise_std=args.noise, seed=args.seed, horizon=args.horizon)
    shapes = parse_shapes(args.shapes or DEFAULT_ANALYTIC_SHAPES)
    if args.params is not None:
        if args.params < 1:
            raise UsageError("--params moet >= 1 zijn")
        shapes = [shapes[j % len(shapes)] for j in range(args.params)]
    if args.checkpoints < 3:
        raise UsageError("--checkpoints moet >= 3 zijn")
    man = gen_analytic_trajectory(spec, shapes, args.checkpoints, args.out,
                                  step_interval=args.interval, dtype=args.dtype)
    return {"generator": "analytic", "kind": spec.kind, "parameters": len(shapes),
            "checkpoints": len(man.entries)}


def _toy(args):
    if args.spec:
        spec = load_spec_file(args.spec, ToyTrainSpec)
    else:
        mode, rank = parse_mode(args.mode)
        fields = dict(task_seed=args.seed, steps=args.steps, save_interval=args.interval,
                      learning_rate=args.lr, mode=mode, lora_rank=rank, lora_alpha=args.lora_alpha,
                      dtype=args.dtype)
        if args.shapes:
            fields["layer_shapes"] = parse_shapes(args.shapes)
        try:
            spec = ToyTrainSpec(**fields)
        except ValueError as e:
            raise UsageError(f"ongeldige toy configuratie: {e}")
    man = gen_toy_training_trajectory(spec, args.out)
    return {"generator": "toy", "mode": spec.mode, "parameters": len(spec.layer_shapes),
            "checkpoints": len(man.entries)}


@trace_run("synth")
def run_synth(args) -> dict:
    print(f"🔄 synth ({args.kind}) -> {args.out}")
    summary = _toy(args) if args.kind == "toy" else _analytic(args)
    print(f"✅ {summary['parameters']} parameters, {summary['checkpoints']} checkpoints")
    print(f"💾 Manifest: {args.out}/manifest.json")
    return summary
