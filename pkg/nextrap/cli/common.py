"""
Gedeelde CLI helpers: parser, flag parsing, config echo en trajectory paden
"""

import argparse
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict

from nextrap.src.checkpoint_store import write_json_document
from nextrap.src.errors import UsageError
from nextrap.src.trajectory_lab import MANIFEST_NAME

RUN_CONFIG_NAME = "run_config.json"
DEFAULT_SEED = 17
DEFAULT_ALPHAS = (0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0)


class CliParser(argparse.ArgumentParser):
    """ArgumentParser die bij foute flags UsageError gooit in plaats van sys.exit(2)"""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def add_global_flags(parser: argparse.ArgumentParser, out_required: bool = True) -> None:
    parser.add_argument("--seed", type=int, default=DEFAULT_SEED,
                        help="Seed voor alle deterministische generators (default 17)")
    parser.add_argument("--out", type=Path, required=out_required,
                        help="Output map")


class RunConfig(BaseModel):
    """Config echo: alle resolved flags van één run; de enige plek met een timestamp"""
    model_config = ConfigDict(extra="forbid")

    subcommand: str
    seed: int
    out: Optional[str]
    flags: Dict[str, Any]
    created_at: str


def _plain(value: Any) -> Any:
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def run_config_from_args(args: argparse.Namespace) -> RunConfig:
    flags = {k: _plain(v) for k, v in sorted(vars(args).items()) if k != "handler"}
    return RunConfig(
        subcommand=args.subcommand_name,
        seed=args.seed,
        out=str(args.out) if args.out is not None else None,
        flags=flags,
        created_at=datetime.now(timezone.utc).isoformat(timespec="seconds"),
    )


def write_run_config(args: argparse.Namespace) -> Path:
    path = Path(args.out) / RUN_CONFIG_NAME
    write_json_document(run_config_from_args(args).model_dump(mode="json"), path)
    return path


def parse_shapes(text: str) -> List[Tuple[int, int]]:
    """"64x48,32x32" -> [(64, 48), (32, 32)]"""
    shapes = []
    for part in text.split(","):
        part = part.strip().lower()
        if not part:
            continue
        try:
            m, n = (int(x) for x in part.split("x"))
        except ValueError:
            raise UsageError(f"ongeldige shape {part!r}, verwacht bv. 64x48")
        if m < 1 or n < 1:
            raise UsageError(f"shape {part!r} moet positieve dimensies hebben")
        shapes.append((m, n))
    if not shapes:
        raise UsageError("--shapes is leeg")
    return shapes


def parse_alphas(text: str) -> List[float]:
    try:
        alphas = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"ongeldige --alphas {text!r}")
    if not alphas:
        raise UsageError("--alphas is leeg")
    return alphas


def parse_mode(text: str) -> Tuple[str, Optional[int]]:
    """"full" of "lora:R" """
    if text == "full":
        return "full", None
    if text.startswith("lora:"):
        try:
            rank = int(text.split(":", 1)[1])
        except ValueError:
            raise UsageError(f"ongeldige --mode {text!r}, verwacht lora:R")
        if rank < 1:
            raise UsageError("lora rank moet >= 1 zijn")
        return "lora", rank
    raise UsageError(f"ongeldige --mode {text!r}, kies full of lora:R")


def manifest_for(traj: Path) -> Path:
    """--traj mag een map of een manifest bestand zijn"""
    traj = Path(traj)
    return traj / MANIFEST_NAME if traj.is_dir() else traj


def alpha_label(alpha: float) -> str:
    return f"alpha_{alpha:g}"
