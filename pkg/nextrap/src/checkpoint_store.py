"""
Checkpoint opslag: checkpoints, LoRA adapters en trajectory manifests

Bevat:
- save_checkpoint / load_checkpoint (safetensors container, F32 of F64 payloads)
- save_adapter / load_adapter + merge_lora (W = W0 + scale·B·A)
- load_manifest / save_manifest / read_trajectory
- JSON document validatie tegen nextrap/schemas

In memory is alles float64; de opslag dtype is een bestandskwestie.
"""

import hashlib
import json
import logging
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Union

import numpy as np
from jsonschema import ValidationError, validate
from safetensors import SafetensorError, safe_open
from safetensors.numpy import save as save_bytes

from .errors import (
    CheckpointIOError,
    FormatError,
    MissingTarget,
    NonMonotonicSteps,
    SchemaMismatch,
    ShapeMismatch,
)
from .linalg_core import as_matrix
from .settings import map_ordered

logger = logging.getLogger(__name__)

PathLike = Union[str, os.PathLike]

SCHEMA_DIR = Path(__file__).resolve().parent.parent / "schemas"

STORAGE_DTYPES = {"F32": np.float32, "F64": np.float64}
LORA_A_SUFFIX = ".lora_A"
LORA_B_SUFFIX = ".lora_B"


# ---------------------------------------------------------------------------
# JSON documenten
# ---------------------------------------------------------------------------

def load_schema(name: str) -> Dict[str, Any]:
    with open(SCHEMA_DIR / f"{name}.json", "r", encoding="utf-8") as f:
        return json.load(f)


def validate_document(doc: Any, schema_name: str, source: str = "document") -> Dict[str, Any]:
    """Valideer een JSON document; schema overtredingen worden FormatError"""
    try:
        validate(instance=doc, schema=load_schema(schema_name))
    except ValidationError as e:
        raise FormatError(f"{source}: ongeldig {schema_name} document: {e.message}") from e
    return doc


def read_json_document(path: PathLike, schema_name: str) -> Dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise CheckpointIOError(f"Bestand niet gevonden: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: geen geldige JSON ({e})") from e
    except OSError as e:
        raise CheckpointIOError(f"{path}: {e}") from e
    return validate_document(doc, schema_name, str(path))


def write_json_document(doc: Dict[str, Any], path: PathLike) -> None:
    """Gesorteerde keys, vaste indent: identieke documenten geven identieke bytes"""
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    atomic_write_bytes(Path(path), text.encode("utf-8"))


def atomic_write_bytes(path: Path, payload: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(tmp, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except OSError as e:
        raise CheckpointIOError(f"Schrijven naar {path} mislukt: {e}") from e


def file_digest(path: PathLike) -> str:
    """SHA-256 van een bestand in chunks"""
    hasher = hashlib.sha256()
    try:
        with Path(path).open("rb") as fh:
            for chunk in iter(lambda: fh.read(8192), b""):
                hasher.update(chunk)
    except OSError as e:
        raise CheckpointIOError(f"{path}: {e}") from e
    return hasher.hexdigest()


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def _readonly(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=np.float64, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Checkpoint:
    """Named-tensor snapshot op een optimizer step"""
    step: int
    tensors: Mapping[str, np.ndarray]
    passthrough: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.step < 0:
            raise ValueError(f"step moet >= 0 zijn, kreeg {self.step}")
        tensors = {}
        for name in sorted(self.tensors):
            arr = np.asarray(self.tensors[name])
            if arr.ndim != 2:
                raise ValueError(f"{name}: tensors moeten 2-D zijn (non-2-D hoort in passthrough)")
            tensors[name] = _readonly(as_matrix(arr))
        passthrough = {}
        for name in sorted(self.passthrough):
            arr = np.asarray(self.passthrough[name])
            if arr.ndim == 2:
                raise ValueError(f"{name}: 2-D arrays horen in tensors")
            passthrough[name] = _readonly(arr)
        overlap = set(tensors) & set(passthrough)
        if overlap:
            raise ValueError(f"Dubbele namen in tensors en passthrough: {sorted(overlap)}")
        object.__setattr__(self, "step", int(self.step))
        object.__setattr__(self, "tensors", tensors)
        object.__setattr__(self, "passthrough", passthrough)

    @property
    def names(self) -> List[str]:
        return list(self.tensors)

    def signature(self):
        """(naam, shape) paren van alle arrays, voor schema checks"""
        return (
            tuple((n, a.shape) for n, a in self.tensors.items()),
            tuple((n, a.shape) for n, a in self.passthrough.items()),
        )

    def with_tensors(self, tensors: Mapping[str, np.ndarray], step: Optional[int] = None) -> "Checkpoint":
        return Checkpoint(self.step if step is None else step, tensors, self.passthrough)

    def equals(self, other: "Checkpoint") -> bool:
        """Bit-exacte vergelijking van step, namen en payloads"""
        if self.step != other.step or self.signature() != other.signature():
            return False
        for mine, theirs in ((self.tensors, other.tensors), (self.passthrough, other.passthrough)):
            for name, arr in mine.items():
                if arr.tobytes() != theirs[name].tobytes():
                    return False
        return True


def encode_arrays(arrays: Mapping[str, np.ndarray], dtype: str) -> Dict[str, np.ndarray]:
    if dtype not in STORAGE_DTYPES:
        raise ValueError(f"Onbekende opslag dtype {dtype!r}, kies uit {sorted(STORAGE_DTYPES)}")
    np_dtype = STORAGE_DTYPES[dtype]
    return {name: np.ascontiguousarray(arr, dtype=np_dtype) for name, arr in arrays.items()}


def write_container(arrays: Dict[str, np.ndarray], path: PathLike, metadata: Optional[Dict[str, str]]) -> None:
    payload = save_bytes(arrays, metadata=metadata)
    atomic_write_bytes(Path(path), payload)


def read_container(path: PathLike):
    """(arrays, metadata) uit een safetensors bestand; alle decode fouten worden FormatError"""
    path = Path(path)
    if not path.is_file():
        raise CheckpointIOError(f"Bestand niet gevonden: {path}")
    arrays: Dict[str, np.ndarray] = {}
    try:
        with safe_open(str(path), framework="numpy") as f:
            metadata = f.metadata() or {}
            for key in f.keys():
                arrays[key] = f.get_tensor(key)
    except PermissionError as e:
        raise CheckpointIOError(f"{path}: {e}") from e
    except (SafetensorError, ValueError, TypeError, KeyError, OSError) as e:
        raise FormatError(f"{path}: ongeldige container ({e})") from e
    for key, arr in arrays.items():
        if arr.dtype not in (np.float32, np.float64):
            raise FormatError(f"{path}: tensor {key!r} heeft niet-ondersteunde dtype {arr.dtype}")
        if not np.all(np.isfinite(arr)):
            raise FormatError(f"{path}: tensor {key!r} bevat NaN of Inf")
    return arrays, metadata


def save_checkpoint(c: Checkpoint, path: PathLike, dtype: str = "F32") -> None:
    """Schrijf een checkpoint als safetensors container met {"step": ...} metadata"""
    arrays = encode_arrays({**c.tensors, **c.passthrough}, dtype)
    write_container(arrays, path, {"step": str(c.step)})
    logger.debug("checkpoint step %d geschreven naar %s (%s)", c.step, path, dtype)


def _parse_step(metadata: Mapping[str, str], path: PathLike) -> Optional[int]:
    raw = metadata.get("step")
    if raw is None or raw == "":
        return None
    try:
        step = int(raw)
    except ValueError as e:
        raise FormatError(f"{path}: step metadata {raw!r} is geen integer") from e
    if step < 0:
        raise FormatError(f"{path}: negatieve step {step}")
    return step


def load_checkpoint(path: PathLike) -> Checkpoint:
    arrays, metadata = read_container(path)
    step = _parse_step(metadata, path)
    tensors = {k: a for k, a in arrays.items() if a.ndim == 2}
    passthrough = {k: a for k, a in arrays.items() if a.ndim != 2}
    try:
        return Checkpoint(step or 0, tensors, passthrough)
    except ValueError as e:
        raise FormatError(f"{path}: ongeldige tensor ({e})") from e


# ---------------------------------------------------------------------------
# LoRA adapters
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LoraEntry:
    """A: r×n, B: m×r voor target parameter m×n"""
    name: str
    a: np.ndarray
    b: np.ndarray
    scale: float

    def __post_init__(self):
        a = as_matrix(self.a)
        b = as_matrix(self.b)
        if a.shape[0] != b.shape[1]:
            raise ShapeMismatch(
                f"{self.name}: A heeft {a.shape[0]} rijen maar B heeft {b.shape[1]} kolommen"
            )
        if not self.scale > 0:
            raise ValueError(f"{self.name}: scale moet positief zijn, kreeg {self.scale}")
        object.__setattr__(self, "a", _readonly(a))
        object.__setattr__(self, "b", _readonly(b))
        object.__setattr__(self, "scale", float(self.scale))

    @property
    def rank(self) -> int:
        return self.a.shape[0]

    @property
    def target_shape(self):
        return (self.b.shape[0], self.a.shape[1])

    def delta(self) -> np.ndarray:
        return self.scale * (self.b @ self.a)


@dataclass(frozen=True)
class LoraAdapter:
    entries: Mapping[str, LoraEntry]
    rank: int
    alpha: float
    step: Optional[int] = None

    def __post_init__(self):
        entries = {name: self.entries[name] for name in sorted(self.entries)}
        for name, entry in entries.items():
            if entry.rank != self.rank:
                raise ShapeMismatch(f"{name}: rank {entry.rank} wijkt af van adapter rank {self.rank}")
        object.__setattr__(self, "entries", entries)

    @property
    def scale(self) -> float:
        return self.alpha / self.rank

    @classmethod
    def from_factors(cls, factors: Mapping[str, tuple], rank: int, alpha: float,
                     step: Optional[int] = None) -> "LoraAdapter":
        """factors: naam -> (A, B); scale = alpha / rank"""
        scale = alpha / rank
        entries = {name: LoraEntry(name, a, b, scale) for name, (a, b) in factors.items()}
        return cls(entries, rank, alpha, step)


def adapter_sidecar_path(path: PathLike) -> Path:
    return Path(path).with_suffix(".json")


def save_adapter(adapter: LoraAdapter, path: PathLike, dtype: str = "F32") -> None:
    arrays = {}
    for name, entry in adapter.entries.items():
        arrays[name + LORA_A_SUFFIX] = entry.a
        arrays[name + LORA_B_SUFFIX] = entry.b
    write_container(encode_arrays(arrays, dtype), path, None)
    write_json_document(
        {"rank": adapter.rank, "alpha": adapter.alpha, "step": adapter.step},
        adapter_sidecar_path(path),
    )


def load_adapter(path: PathLike) -> LoraAdapter:
    sidecar = read_json_document(adapter_sidecar_path(path), "lora_sidecar")
    arrays, _ = read_container(path)
    factors: Dict[str, Dict[str, np.ndarray]] = {}
    for key, arr in arrays.items():
        if key.endswith(LORA_A_SUFFIX):
            factors.setdefault(key[: -len(LORA_A_SUFFIX)], {})["a"] = arr
        elif key.endswith(LORA_B_SUFFIX):
            factors.setdefault(key[: -len(LORA_B_SUFFIX)], {})["b"] = arr
        else:
            raise FormatError(f"{path}: onverwachte adapter key {key!r}")
    pairs = {}
    for name, parts in factors.items():
        if set(parts) != {"a", "b"}:
            raise FormatError(f"{path}: {name} mist lora_A of lora_B")
        if parts["a"].ndim != 2 or parts["b"].ndim != 2:
            raise FormatError(f"{path}: {name} adapter factoren moeten 2-D zijn")
        pairs[name] = (parts["a"], parts["b"])
    rank = int(sidecar["rank"])
    try:
        return LoraAdapter.from_factors(pairs, rank, float(sidecar["alpha"]), sidecar.get("step"))
    except ShapeMismatch as e:
        raise FormatError(f"{path}: {e}") from e


def merge_lora(base: Checkpoint, adapter: LoraAdapter) -> Checkpoint:
    """W = W0 + scale·(B·A) per target; overige tensors ongewijzigd"""
    tensors = dict(base.tensors)
    for name, entry in adapter.entries.items():
        if name not in tensors:
            raise MissingTarget(f"Adapter target {name!r} bestaat niet in het base checkpoint")
        if entry.target_shape != tensors[name].shape:
            raise ShapeMismatch(
                f"{name}: adapter vormt {entry.target_shape}, base heeft {tensors[name].shape}"
            )
        tensors[name] = tensors[name] + entry.delta()
    step = adapter.step if adapter.step is not None else base.step
    return base.with_tensors(tensors, step=step)


# ---------------------------------------------------------------------------
# Manifests en trajectories
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ManifestEntry:
    step: int
    path: str


@dataclass(frozen=True)
class TrajectoryManifest:
    """Paden zijn zoals opgeslagen; root is de map waartegen relatieve paden oplossen"""
    base_path: Optional[str]
    entries: Sequence[ManifestEntry]
    lora_paths: Optional[Sequence[str]] = None
    root: Path = Path(".")

    def resolve(self, p: str) -> Path:
        path = Path(p)
        return path if path.is_absolute() else self.root / path

    @property
    def steps(self) -> List[int]:
        return [e.step for e in self.entries]

    def to_document(self) -> Dict[str, Any]:
        return {
            "base": self.base_path,
            "checkpoints": [{"step": e.step, "path": e.path} for e in self.entries],
            "lora": list(self.lora_paths) if self.lora_paths is not None else None,
        }


def _check_manifest(man: TrajectoryManifest, source: str) -> None:
    if not man.entries:
        raise FormatError(f"{source}: manifest zonder checkpoints")
    steps = man.steps
    for prev, curr in zip(steps, steps[1:]):
        if curr <= prev:
            raise NonMonotonicSteps(f"{source}: steps niet strikt stijgend ({prev} -> {curr})")
    if man.lora_paths is not None:
        if man.base_path is None:
            raise FormatError(f"{source}: lora paden vereisen een base checkpoint")
        if len(man.lora_paths) != len(man.entries):
            raise FormatError(
                f"{source}: {len(man.lora_paths)} lora paden voor {len(man.entries)} checkpoints"
            )


def load_manifest(path: PathLike) -> TrajectoryManifest:
    path = Path(path)
    doc = read_json_document(path, "manifest")
    man = TrajectoryManifest(
        base_path=doc.get("base"),
        entries=[ManifestEntry(int(e["step"]), e["path"]) for e in doc["checkpoints"]],
        lora_paths=doc.get("lora"),
        root=path.parent,
    )
    _check_manifest(man, str(path))
    return man


def save_manifest(man: TrajectoryManifest, path: PathLike) -> None:
    _check_manifest(man, str(path))
    doc = validate_document(man.to_document(), "manifest", str(path))
    write_json_document(doc, path)


def _check_schema(traj: Sequence[Checkpoint]) -> None:
    reference = traj[0].signature()
    for ckpt in traj[1:]:
        if ckpt.signature() != reference:
            raise SchemaMismatch(
                f"Checkpoint step {ckpt.step} heeft andere tensor namen/shapes dan step {traj[0].step}"
            )


def read_trajectory(man: TrajectoryManifest, threads: Optional[int] = None) -> List[Checkpoint]:
    """[W0, M1, …, Mc] in step volgorde; zonder base is de eerste entry W0"""
    if man.lora_paths is not None:
        base = load_checkpoint(man.resolve(man.base_path))
        adapters = map_ordered(lambda p: load_adapter(man.resolve(p)), man.lora_paths, threads)
        merged = [
            replace(merge_lora(base, adapter), step=entry.step)
            for adapter, entry in zip(adapters, man.entries)
        ]
        traj = [base] + merged
    else:
        paths = [man.resolve(e.path) for e in man.entries]
        loaded = map_ordered(load_checkpoint, paths, threads)
        loaded = [replace(c, step=e.step) for c, e in zip(loaded, man.entries)]
        if man.base_path is not None:
            traj = [load_checkpoint(man.resolve(man.base_path))] + loaded
        else:
            traj = loaded
    _check_schema(traj)
    logger.info("trajectory geladen: base + %d checkpoints, %d parameters",
                len(traj) - 1, len(traj[0].tensors))
    return traj


def as_trajectory(source: Union[PathLike, TrajectoryManifest, Sequence[Checkpoint]],
                  threads: Optional[int] = None) -> List[Checkpoint]:
    """Manifest, manifest pad of lijst checkpoints -> gevalideerde trajectory"""
    if isinstance(source, TrajectoryManifest):
        return read_trajectory(source, threads)
    if isinstance(source, (str, os.PathLike)):
        return read_trajectory(load_manifest(source), threads)
    traj = list(source)
    if traj:
        _check_schema(traj)
    return traj
