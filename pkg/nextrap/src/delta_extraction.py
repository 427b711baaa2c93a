"""
Delta extractie: global/local/target deltas en hun rank-1 factoren

Per parameter en checkpoint i:
- Δ^G_i = W_i − W_0   (global)
- Δ^L_i = W_i − W_{i−1} (local)
- Δ^T_i = W_{i+k} − W_i (target, alleen als i+k ≤ c)

Factoren worden temporeel sign-aligned per delta soort; daarna worden
(s^G, s^L, s^T) voorbeelden per (field, dimensie) gegroepeerd.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np

from .checkpoint_store import (
    Checkpoint,
    PathLike,
    as_trajectory,
    encode_arrays,
    read_container,
    write_container,
    read_json_document,
    validate_document,
    write_json_document,
)
from .errors import FormatError, IndexOutOfRange, InsufficientCheckpoints, SchemaMismatch
from .linalg_core import Rank1Factor, top_singular_triplet
from .settings import map_ordered

logger = logging.getLogger(__name__)

DeltaKind = Literal["G", "L", "T"]
FIELDS = ("u", "v", "sigma")
SIGMA_TRANSFORMS = ("none", "log1p")


@dataclass(frozen=True)
class DeltaSet:
    """Ruwe delta matrices van één parameter op checkpoint i"""
    g: np.ndarray
    l: np.ndarray
    t: Optional[np.ndarray] = None

    def of_kind(self, kind: DeltaKind) -> np.ndarray:
        m = {"G": self.g, "L": self.l, "T": self.t}[kind]
        if m is None:
            raise IndexOutOfRange("target delta valt buiten de trajectory")
        return m


@dataclass(frozen=True)
class DeltaTriple:
    param_name: str
    checkpoint_index: int
    g: Rank1Factor
    l: Rank1Factor
    t: Optional[Rank1Factor] = None

    @property
    def degenerate(self) -> bool:
        return any(f is not None and f.degenerate for f in (self.g, self.l, self.t))


@dataclass(frozen=True)
class TrainingExample:
    param_name: str
    checkpoint_index: int
    field: str
    s_g: np.ndarray
    s_l: np.ndarray
    s_t: np.ndarray

    @property
    def dim(self) -> int:
        return self.s_g.shape[0]


@dataclass
class DatasetGroup:
    """Alle voorbeelden met dezelfde (field, dimensie), in parameter/checkpoint volgorde"""
    field: str
    dim: int
    examples: List[TrainingExample] = field(default_factory=list)

    @property
    def key(self) -> Tuple[str, int]:
        return (self.field, self.dim)

    def stacked(self):
        """(S_G, S_L, S_T) als (N, d) arrays"""
        sg = np.stack([e.s_g for e in self.examples])
        sl = np.stack([e.s_l for e in self.examples])
        st = np.stack([e.s_t for e in self.examples])
        return sg, sl, st

    @property
    def param_names(self) -> List[str]:
        return sorted({e.param_name for e in self.examples})


@dataclass
class TrajectoryDataset:
    groups: List[DatasetGroup]
    k: int
    c: int
    sigma_transform: str = "none"
    skipped: int = 0

    @property
    def n_examples(self) -> int:
        return sum(len(g.examples) for g in self.groups)

    def group(self, fld: str, dim: int) -> Optional[DatasetGroup]:
        for g in self.groups:
            if g.key == (fld, dim):
                return g
        return None

    def metadata(self) -> Dict:
        return {
            "k": self.k,
            "c": self.c,
            "fields": list(FIELDS),
            "sign_alignment": "temporal",
            "sigma_transform": self.sigma_transform,
            "skipped": self.skipped,
        }


def _check_index(traj: Sequence[Checkpoint], i: int, k: int) -> int:
    c = len(traj) - 1
    if k < 1:
        raise IndexOutOfRange(f"k moet >= 1 zijn, kreeg {k}")
    if not 1 <= i <= c:
        raise IndexOutOfRange(f"checkpoint index {i} buiten [1, {c}]")
    return c


def compute_deltas(traj: Sequence[Checkpoint], i: int, k: int) -> Dict[str, DeltaSet]:
    """Exacte elementgewijze verschillen; traj[0] is de base W0"""
    c = _check_index(traj, i, k)
    names = list(traj[0].tensors)
    for j in (i - 1, i) + ((i + k,) if i + k <= c else ()):
        if traj[j].signature()[0] != traj[0].signature()[0]:
            raise SchemaMismatch(f"checkpoint {j} wijkt af van de base tensor namen/shapes")
    return {name: _param_deltas(traj, name, i, k, c) for name in names}


def _param_deltas(traj: Sequence[Checkpoint], name: str, i: int, k: int, c: int) -> DeltaSet:
    w_i = traj[i].tensors[name]
    return DeltaSet(
        g=w_i - traj[0].tensors[name],
        l=w_i - traj[i - 1].tensors[name],
        t=traj[i + k].tensors[name] - w_i if i + k <= c else None,
    )


def align_sign(curr: Rank1Factor, ref: Rank1Factor) -> Rank1Factor:
    """Flip (u, v) samen als ⟨curr.u, ref.u⟩ < 0; bij 0 blijft curr ongewijzigd"""
    if curr.u.shape != ref.u.shape:
        raise ValueError(f"u lengtes verschillen: {curr.u.shape} vs {ref.u.shape}")
    if float(np.dot(curr.u, ref.u)) < 0.0:
        return curr.negated()
    return curr


def sign_chain(traj: Sequence[Checkpoint], name: str, kind: DeltaKind, upto: int,
               k: int = 1) -> List[Rank1Factor]:
    """Temporeel aligned factoren voor i = 1..upto (index 0 van de lijst is i = 1)

    Elke factor wordt aligned aan de vorige niet-degenerate factor van dezelfde
    soort; de eerste houdt de canonieke sign conventie.
    """
    c = len(traj) - 1
    chain: List[Rank1Factor] = []
    ref: Optional[Rank1Factor] = None
    for i in range(1, upto + 1):
        _check_index(traj, i, k)
        f = top_singular_triplet(_param_deltas(traj, name, i, k, c).of_kind(kind))
        if not f.degenerate:
            if ref is not None:
                f = align_sign(f, ref)
            ref = f
        chain.append(f)
    return chain


def sigma_feature(sigma: float, transform: str) -> float:
    return float(np.log1p(sigma)) if transform == "log1p" else float(sigma)


def _examples_for_param(traj: Sequence[Checkpoint], name: str, k: int,
                        sigma_transform: str) -> Tuple[List[TrainingExample], int]:
    c = len(traj) - 1
    last = c - k
    chain_g = sign_chain(traj, name, "G", last)
    chain_l = sign_chain(traj, name, "L", last)
    chain_t = sign_chain(traj, name, "T", last, k)
    examples, skipped = [], 0
    for i in range(1, last + 1):
        triple = DeltaTriple(name, i, chain_g[i - 1], chain_l[i - 1], chain_t[i - 1])
        if triple.degenerate:
            skipped += 1
            continue
        fg, fl, ft = triple.g, triple.l, triple.t
        examples.append(TrainingExample(name, i, "u", fg.u, fl.u, ft.u))
        examples.append(TrainingExample(name, i, "v", fg.v, fl.v, ft.v))
        examples.append(TrainingExample(
            name, i, "sigma",
            np.array([sigma_feature(fg.sigma, sigma_transform)]),
            np.array([sigma_feature(fl.sigma, sigma_transform)]),
            np.array([sigma_feature(ft.sigma, sigma_transform)]),
        ))
    return examples, skipped


def extract_dataset(traj: Sequence[Checkpoint], k: int, sigma_transform: str = "none",
                    threads: Optional[int] = None) -> TrajectoryDataset:
    """Voorbeelden voor alle parameters en i in [1, c−k], gegroepeerd per (field, d)"""
    if sigma_transform not in SIGMA_TRANSFORMS:
        raise ValueError(f"sigma_transform moet een van {SIGMA_TRANSFORMS} zijn")
    traj = as_trajectory(traj, threads)
    if k < 1:
        raise IndexOutOfRange(f"k moet >= 1 zijn, kreeg {k}")
    c = len(traj) - 1
    if c < k + 2:
        raise InsufficientCheckpoints(f"{c} checkpoints, minimaal k+2 = {k + 2} nodig")

    names = list(traj[0].tensors)
    results = map_ordered(lambda n: _examples_for_param(traj, n, k, sigma_transform), names, threads)

    groups: Dict[Tuple[str, int], DatasetGroup] = {}
    skipped = 0
    for examples, n_skipped in results:
        skipped += n_skipped
        for ex in examples:
            key = (ex.field, ex.dim)
            if key not in groups:
                groups[key] = DatasetGroup(ex.field, ex.dim)
            groups[key].examples.append(ex)

    if skipped:
        logger.warning("%d (parameter, checkpoint) paren overgeslagen wegens degenerate delta", skipped)
    ordered = [groups[key] for key in sorted(groups, key=lambda kd: (FIELDS.index(kd[0]), kd[1]))]
    dataset = TrajectoryDataset(ordered, k, c, sigma_transform, skipped)
    logger.info("dataset: %d voorbeelden in %d groepen (k=%d, c=%d)",
                dataset.n_examples, len(ordered), k, c)
    return dataset


# ---------------------------------------------------------------------------
# Dataset bestanden
# ---------------------------------------------------------------------------

def dataset_sidecar_path(path: PathLike) -> Path:
    return Path(path).with_suffix(".json")


def save_dataset(dataset: TrajectoryDataset, path: PathLike) -> None:
    """Keys "<param>/<i>/<field>/<G|L|T>", elk een 1×d rij in F64"""
    arrays = {}
    for group in dataset.groups:
        for ex in group.examples:
            prefix = f"{ex.param_name}/{ex.checkpoint_index}/{ex.field}"
            arrays[f"{prefix}/G"] = ex.s_g.reshape(1, -1)
            arrays[f"{prefix}/L"] = ex.s_l.reshape(1, -1)
            arrays[f"{prefix}/T"] = ex.s_t.reshape(1, -1)
    write_container(encode_arrays(arrays, "F64"), path, None)
    meta = validate_document(dataset.metadata(), "dataset_sidecar", str(path))
    write_json_document(meta, dataset_sidecar_path(path))


def load_dataset(path: PathLike) -> TrajectoryDataset:
    meta = read_json_document(dataset_sidecar_path(path), "dataset_sidecar")
    arrays, _ = read_container(path)

    parts: Dict[Tuple[str, int, str], Dict[str, np.ndarray]] = {}
    for key, arr in arrays.items():
        pieces = key.rsplit("/", 3)
        if len(pieces) != 4 or pieces[3] not in ("G", "L", "T") or pieces[2] not in FIELDS:
            raise FormatError(f"{path}: onverwachte dataset key {key!r}")
        name, idx, fld, which = pieces
        try:
            i = int(idx)
        except ValueError as e:
            raise FormatError(f"{path}: checkpoint index in {key!r} is geen integer") from e
        if arr.ndim != 2 or arr.shape[0] != 1:
            raise FormatError(f"{path}: {key!r} moet een 1×d rij zijn")
        parts.setdefault((name, i, fld), {})[which] = arr[0].astype(np.float64)

    groups: Dict[Tuple[str, int], DatasetGroup] = {}
    for (name, i, fld) in sorted(parts, key=lambda t: (t[0], t[1], FIELDS.index(t[2]))):
        triple = parts[(name, i, fld)]
        if set(triple) != {"G", "L", "T"}:
            raise FormatError(f"{path}: {name}/{i}/{fld} mist G, L of T")
        dims = {a.shape[0] for a in triple.values()}
        if len(dims) != 1:
            raise FormatError(f"{path}: {name}/{i}/{fld} heeft ongelijke dimensies {sorted(dims)}")
        ex = TrainingExample(name, i, fld, triple["G"], triple["L"], triple["T"])
        groups.setdefault((fld, ex.dim), DatasetGroup(fld, ex.dim)).examples.append(ex)

    ordered = [groups[key] for key in sorted(groups, key=lambda kd: (FIELDS.index(kd[0]), kd[1]))]
    return TrajectoryDataset(ordered, int(meta["k"]), int(meta["c"]), meta["sigma_transform"],
                             int(meta.get("skipped", 0)))
