"""
Trajectory predictor: encoder-decoder MLPs die (s^G, s^L) -> s^T leren

Bevat:
- PredictorConfig / PredictorParams / init_uniform
- forward, l1_loss, backward (handmatige backprop, subgradient 0 op knikken)
- train: één predictor per (field, dimensie), Adam op mini-batches
- PredictorBundle + save_bundle / load_bundle

Architectuur: h^G = E^G(s^G), h^L = E^L(s^L), ŝ^T = D([h^G, h^L]).
ReLU na elke laag behalve de laatste decoder laag. Gewichten zijn (out, in),
een laag rekent x @ Wᵀ + b.
"""

import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .checkpoint_store import (
    PathLike,
    encode_arrays,
    file_digest,
    read_container,
    read_json_document,
    validate_document,
    write_container,
    write_json_document,
)
from .delta_extraction import FIELDS, DatasetGroup, TrajectoryDataset
from .errors import DimensionMismatch, DivergedTraining, EmptyGroup, FormatError, KMismatchWarning, MissingPredictor
from .settings import map_ordered

logger = logging.getLogger(__name__)

Layer = Tuple[np.ndarray, np.ndarray]

BLOCKS = ("enc_g", "enc_l", "dec")
LOSS_CONVENTION = "l1_mean_examples_sum_components"
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
LR_SCHEDULES = ("constant", "cosine")


class PredictorConfig(BaseModel):
    """Architectuur van één predictor; decoder input is 2h (concat van beide encodings)"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    field: Literal["u", "v", "sigma"]
    input_dim: int = Field(gt=0)
    hidden_dim: int = Field(256, gt=0)
    encoder_layers: int = Field(2, ge=1)
    decoder_layers: int = Field(2, ge=1)
    activation: Literal["relu"] = "relu"
    input_ablation: Literal["none", "no_global", "no_local"] = "none"

    def encoder_widths(self) -> List[int]:
        return [self.input_dim] + [self.hidden_dim] * self.encoder_layers

    def decoder_widths(self) -> List[int]:
        return [2 * self.hidden_dim] + [self.hidden_dim] * (self.decoder_layers - 1) + [self.input_dim]


def _layer_shapes(widths: Sequence[int]) -> List[Tuple[int, int]]:
    return [(out, inp) for inp, out in zip(widths, widths[1:])]


@dataclass
class PredictorParams:
    config: PredictorConfig
    enc_g: List[Layer]
    enc_l: List[Layer]
    dec: List[Layer]

    def __post_init__(self):
        expected = {
            "enc_g": _layer_shapes(self.config.encoder_widths()),
            "enc_l": _layer_shapes(self.config.encoder_widths()),
            "dec": _layer_shapes(self.config.decoder_widths()),
        }
        for block, shapes in expected.items():
            layers = getattr(self, block)
            if len(layers) != len(shapes):
                raise DimensionMismatch(f"{block}: {len(layers)} lagen, verwacht {len(shapes)}")
            for idx, ((w, b), shape) in enumerate(zip(layers, shapes)):
                if w.shape != shape or b.shape != (shape[0],):
                    raise DimensionMismatch(
                        f"{block}.{idx}: w {w.shape} / b {b.shape}, verwacht {shape} / ({shape[0]},)"
                    )

    def blocks(self) -> Dict[str, List[Layer]]:
        return {"enc_g": self.enc_g, "enc_l": self.enc_l, "dec": self.dec}

    def named_arrays(self) -> Dict[str, np.ndarray]:
        """"<block>.<layer>.w" / ".b" -> array, in vaste volgorde"""
        out = {}
        for block, layers in self.blocks().items():
            for idx, (w, b) in enumerate(layers):
                out[f"{block}.{idx}.w"] = w
                out[f"{block}.{idx}.b"] = b
        return out

    def flat(self) -> List[np.ndarray]:
        return list(self.named_arrays().values())

    def copy(self) -> "PredictorParams":
        def dup(layers):
            return [(w.copy(), b.copy()) for w, b in layers]
        return PredictorParams(self.config, dup(self.enc_g), dup(self.enc_l), dup(self.dec))


def init_uniform(cfg: PredictorConfig, seed: int) -> PredictorParams:
    """Gewichten i.i.d. U[−1/√fan_in, 1/√fan_in], biases nul"""
    rng = np.random.default_rng(seed)

    def block(widths):
        layers = []
        for out, inp in _layer_shapes(widths):
            bound = 1.0 / math.sqrt(inp)
            layers.append((rng.uniform(-bound, bound, size=(out, inp)), np.zeros(out)))
        return layers

    enc_g = block(cfg.encoder_widths())
    enc_l = block(cfg.encoder_widths())
    dec = block(cfg.decoder_widths())
    return PredictorParams(cfg, enc_g, enc_l, dec)


# ---------------------------------------------------------------------------
# Forward / loss / backward
# ---------------------------------------------------------------------------

@dataclass
class _Trace:
    """Tussenresultaten van een forward pass, nodig voor backward"""
    g_z: List[np.ndarray]
    g_h: List[np.ndarray]
    l_z: List[np.ndarray]
    l_h: List[np.ndarray]
    d_z: List[np.ndarray]
    d_h: List[np.ndarray]

    @property
    def output(self) -> np.ndarray:
        return self.d_h[-1]


def _inputs(p: PredictorParams, s_g, s_l):
    g = np.asarray(s_g, dtype=np.float64)
    l = np.asarray(s_l, dtype=np.float64)
    single = g.ndim == 1
    if g.shape != l.shape or g.ndim not in (1, 2):
        raise DimensionMismatch(f"s^G {g.shape} en s^L {l.shape} passen niet bij elkaar")
    g = np.atleast_2d(g)
    l = np.atleast_2d(l)
    if g.shape[1] != p.config.input_dim:
        raise DimensionMismatch(f"input dimensie {g.shape[1]}, predictor verwacht {p.config.input_dim}")
    if p.config.input_ablation == "no_global":
        g = np.zeros_like(g)
    elif p.config.input_ablation == "no_local":
        l = np.zeros_like(l)
    return g, l, single


def _mlp(layers: Sequence[Layer], x: np.ndarray, relu_last: bool):
    zs, hs = [], [x]
    last = len(layers) - 1
    for idx, (w, b) in enumerate(layers):
        z = x @ w.T + b
        zs.append(z)
        x = np.maximum(z, 0.0) if (relu_last or idx < last) else z
        hs.append(x)
    return zs, hs


def _run(p: PredictorParams, g: np.ndarray, l: np.ndarray) -> _Trace:
    g_z, g_h = _mlp(p.enc_g, g, relu_last=True)
    l_z, l_h = _mlp(p.enc_l, l, relu_last=True)
    d_z, d_h = _mlp(p.dec, np.concatenate([g_h[-1], l_h[-1]], axis=1), relu_last=False)
    return _Trace(g_z, g_h, l_z, l_h, d_z, d_h)


def forward(p: PredictorParams, s_g, s_l) -> np.ndarray:
    """ŝ^T voor één voorbeeld (vector) of een batch (N×d)"""
    g, l, single = _inputs(p, s_g, s_l)
    out = _run(p, g, l).output
    return out[0] if single else out


def l1_loss(pred, target) -> float:
    """Vector: Σ|r|. Batch: gemiddelde over voorbeelden van Σ_componenten |r|"""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DimensionMismatch(f"pred {pred.shape} vs target {target.shape}")
    resid = np.abs(pred - target)
    if pred.ndim <= 1:
        return float(np.sum(resid))
    return float(np.sum(resid)) / pred.shape[0]


def _mlp_backward(layers: Sequence[Layer], zs, hs, delta: np.ndarray, relu_last: bool):
    grads: List[Layer] = [None] * len(layers)
    last = len(layers) - 1
    for idx in range(last, -1, -1):
        if relu_last or idx < last:
            # afgeleide 0 op de knik z = 0
            delta = delta * (zs[idx] > 0.0)
        w, _ = layers[idx]
        grads[idx] = (delta.T @ hs[idx], delta.sum(axis=0))
        delta = delta @ w
    return grads, delta


def _loss_and_grads(p: PredictorParams, g: np.ndarray, l: np.ndarray, target: np.ndarray):
    trace = _run(p, g, l)
    pred = trace.output
    if target.shape != pred.shape:
        raise DimensionMismatch(f"target {target.shape} vs output {pred.shape}")
    loss = l1_loss(pred, target)
    # np.sign(0) == 0: subgradient 0 op de L1 knik
    delta = np.sign(pred - target) / pred.shape[0]
    dec_grads, d_in = _mlp_backward(p.dec, trace.d_z, trace.d_h, delta, relu_last=False)
    h = p.config.hidden_dim
    g_grads, _ = _mlp_backward(p.enc_g, trace.g_z, trace.g_h, d_in[:, :h], relu_last=True)
    l_grads, _ = _mlp_backward(p.enc_l, trace.l_z, trace.l_h, d_in[:, h:], relu_last=True)
    return loss, PredictorParams(p.config, g_grads, l_grads, dec_grads)


def backward(p: PredictorParams, s_g, s_l, target) -> PredictorParams:
    """Gradiënten van l1_loss(forward(p, s_g, s_l), target), in de vorm van p"""
    g, l, _ = _inputs(p, s_g, s_l)
    target = np.atleast_2d(np.asarray(target, dtype=np.float64))
    _, grads = _loss_and_grads(p, g, l, target)
    return grads


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

class _Adam:
    def __init__(self, params: List[np.ndarray]):
        self.m = [np.zeros_like(a) for a in params]
        self.v = [np.zeros_like(a) for a in params]
        self.t = 0

    def step(self, params: List[np.ndarray], grads: List[np.ndarray], lr: float) -> None:
        self.t += 1
        c1 = 1.0 - ADAM_BETA1 ** self.t
        c2 = 1.0 - ADAM_BETA2 ** self.t
        for a, g, m, v in zip(params, grads, self.m, self.v):
            m *= ADAM_BETA1
            m += (1.0 - ADAM_BETA1) * g
            v *= ADAM_BETA2
            v += (1.0 - ADAM_BETA2) * g * g
            a -= lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)


def _scheduled_lr(lr: float, schedule: str, step: int, total: int) -> float:
    if schedule == "constant" or total <= 0:
        return lr
    return lr * 0.5 * (1.0 + math.cos(math.pi * step / total))


@dataclass
class BundleEntry:
    config: PredictorConfig
    params: PredictorParams
    train_loss: List[float] = field(default_factory=list)
    holdout_loss: List[Optional[float]] = field(default_factory=list)
    n_train: int = 0
    n_holdout: int = 0


@dataclass
class PredictorBundle:
    """(field, d) -> BundleEntry plus trainingsmetadata"""
    entries: Dict[Tuple[str, int], BundleEntry]
    metadata: Dict[str, Any]
    bundle_id: Optional[str] = None

    @property
    def k(self) -> int:
        return int(self.metadata["k"])

    @property
    def sigma_transform(self) -> str:
        return self.metadata.get("sigma_transform", "none")

    def get(self, fld: str, dim: int) -> BundleEntry:
        entry = self.entries.get((fld, dim))
        if entry is None:
            raise MissingPredictor(f"geen predictor voor ({fld}, {dim})")
        return entry

    def sorted_keys(self) -> List[Tuple[str, int]]:
        return sorted(self.entries, key=lambda kd: (FIELDS.index(kd[0]), kd[1]))


def _holdout_split(names: List[str], fraction: float, rng: np.random.Generator):
    """Hele parameters gaan naar de holdout; minimaal één parameter blijft in training"""
    n_hold = int(math.floor(fraction * len(names) + 0.5))
    n_hold = max(0, min(n_hold, len(names) - 1))
    order = rng.permutation(len(names))
    return {names[i] for i in order[:n_hold]}


def _train_group(group: DatasetGroup, cfg: PredictorConfig, seed: int, epochs: int, lr: float,
                 batch_size: int, lr_schedule: str, holdout_fraction: float) -> BundleEntry:
    if not group.examples:
        raise EmptyGroup(f"groep ({group.field}, {group.dim}) heeft geen voorbeelden")
    rng = np.random.default_rng(np.random.SeedSequence([seed, FIELDS.index(group.field), group.dim]))
    held = _holdout_split(group.param_names, holdout_fraction, rng)
    params = init_uniform(cfg, int(rng.integers(0, 2 ** 32)))

    sg, sl, st = group.stacked()
    in_train = np.array([e.param_name not in held for e in group.examples])
    tr_idx = np.flatnonzero(in_train)
    ho_idx = np.flatnonzero(~in_train)

    def evaluate(idx):
        if idx.size == 0:
            return None
        g, l, _ = _inputs(params, sg[idx], sl[idx])
        return l1_loss(_run(params, g, l).output, st[idx])

    train_hist = [evaluate(tr_idx)]
    hold_hist = [evaluate(ho_idx)]

    flat = params.flat()
    adam = _Adam(flat)
    n_batches = math.ceil(tr_idx.size / batch_size)
    total = epochs * n_batches
    step = 0
    for epoch in range(1, epochs + 1):
        perm = tr_idx[rng.permutation(tr_idx.size)]
        for start in range(0, perm.size, batch_size):
            batch = perm[start:start + batch_size]
            g, l, _ = _inputs(params, sg[batch], sl[batch])
            loss, grads = _loss_and_grads(params, g, l, st[batch])
            if not math.isfinite(loss):
                raise DivergedTraining(
                    f"predictor ({group.field}, {group.dim}): niet-eindige loss in epoch {epoch}"
                )
            adam.step(flat, grads.flat(), _scheduled_lr(lr, lr_schedule, step, total))
            step += 1
        train_loss = evaluate(tr_idx)
        if not math.isfinite(train_loss):
            raise DivergedTraining(
                f"predictor ({group.field}, {group.dim}): niet-eindige loss na epoch {epoch}"
            )
        train_hist.append(train_loss)
        hold_hist.append(evaluate(ho_idx))

    logger.info("predictor (%s, %d): train L1 %.4g -> %.4g over %d epochs",
                group.field, group.dim, train_hist[0], train_hist[-1], epochs)
    return BundleEntry(cfg, params, train_hist, hold_hist, int(tr_idx.size), int(ho_idx.size))


def train(data: Union[TrajectoryDataset, Sequence[DatasetGroup]], *, k: Optional[int] = None,
          sigma_transform: Optional[str] = None, hidden_dim: int = 256, encoder_layers: int = 2,
          decoder_layers: int = 2, seed: int = 17, epochs: int = 200, lr: float = 1e-3,
          holdout_fraction: float = 0.1, batch_size: int = 64, lr_schedule: str = "cosine",
          input_ablation: str = "none", threads: Optional[int] = None) -> PredictorBundle:
    """Train één predictor per (field, dimensie) groep; groepen lopen parallel"""
    if isinstance(data, TrajectoryDataset):
        groups = list(data.groups)
        k = data.k if k is None else k
        sigma_transform = data.sigma_transform if sigma_transform is None else sigma_transform
    else:
        groups = list(data)
    if k is None:
        raise ValueError("k is verplicht als er losse groepen worden meegegeven")
    sigma_transform = sigma_transform or "none"
    if epochs < 0 or not lr > 0 or batch_size < 1:
        raise ValueError("epochs >= 0, lr > 0 en batch_size >= 1 vereist")
    if not 0.0 <= holdout_fraction < 1.0:
        raise ValueError(f"holdout_fraction moet in [0, 1) liggen, kreeg {holdout_fraction}")
    if lr_schedule not in LR_SCHEDULES:
        raise ValueError(f"lr_schedule moet een van {LR_SCHEDULES} zijn")
    if not groups:
        raise EmptyGroup("geen dataset groepen om op te trainen")
    for g in groups:
        if not g.examples:
            raise EmptyGroup(f"groep ({g.field}, {g.dim}) heeft geen voorbeelden")

    def run(group: DatasetGroup) -> BundleEntry:
        cfg = PredictorConfig(field=group.field, input_dim=group.dim, hidden_dim=hidden_dim,
                              encoder_layers=encoder_layers, decoder_layers=decoder_layers,
                              input_ablation=input_ablation)
        return _train_group(group, cfg, seed, epochs, lr, batch_size, lr_schedule, holdout_fraction)

    trained = map_ordered(run, groups, threads)
    metadata = {
        "k": int(k),
        "seed": int(seed),
        "epochs": int(epochs),
        "lr": float(lr),
        "lr_schedule": lr_schedule,
        "batch_size": int(batch_size),
        "holdout_fraction": float(holdout_fraction),
        "sigma_transform": sigma_transform,
        "loss": LOSS_CONVENTION,
        "optimizer": {"name": "adam", "beta1": ADAM_BETA1, "beta2": ADAM_BETA2, "eps": ADAM_EPS},
    }
    return PredictorBundle({g.key: e for g, e in zip(groups, trained)}, metadata)


# ---------------------------------------------------------------------------
# Bundle bestanden
# ---------------------------------------------------------------------------

def bundle_sidecar_path(path: PathLike) -> Path:
    return Path(path).with_suffix(".json")


def _sidecar(bundle: PredictorBundle) -> Dict[str, Any]:
    entries = []
    for key in bundle.sorted_keys():
        e = bundle.entries[key]
        entries.append({
            "field": key[0],
            "dim": key[1],
            "config": e.config.model_dump(mode="json"),
            "n_train": e.n_train,
            "n_holdout": e.n_holdout,
            "train_loss": [float(x) for x in e.train_loss],
            "holdout_loss": [None if x is None else float(x) for x in e.holdout_loss],
        })
    return {**bundle.metadata, "entries": entries}


def save_bundle(bundle: PredictorBundle, path: PathLike) -> None:
    """Keys "<field>/<d>/<block>.<layer>.{w,b}" in F64; config + metadata in de JSON sidecar"""
    arrays = {}
    for fld, dim in bundle.sorted_keys():
        for name, arr in bundle.entries[(fld, dim)].params.named_arrays().items():
            arrays[f"{fld}/{dim}/{name}"] = arr
    write_container(encode_arrays(arrays, "F64"), path, None)
    doc = validate_document(_sidecar(bundle), "bundle_sidecar", str(path))
    write_json_document(doc, bundle_sidecar_path(path))
    logger.info("bundle geschreven: %s (%d predictors)", path, len(bundle.entries))


def _layers_from(arrays: Dict[str, np.ndarray], prefix: str, widths: Sequence[int],
                 used: set, path: PathLike) -> List[Layer]:
    layers = []
    for idx, (out, inp) in enumerate(_layer_shapes(widths)):
        w_key, b_key = f"{prefix}.{idx}.w", f"{prefix}.{idx}.b"
        if w_key not in arrays or b_key not in arrays:
            raise FormatError(f"{path}: bundle mist {w_key} of {b_key}")
        w, b = arrays[w_key], arrays[b_key]
        if w.shape != (out, inp) or b.shape != (out,):
            raise FormatError(f"{path}: {w_key} heeft shape {w.shape}/{b.shape}, verwacht ({out}, {inp})")
        used.update((w_key, b_key))
        layers.append((np.array(w, dtype=np.float64), np.array(b, dtype=np.float64)))
    return layers


def warn_k_mismatch(bundle: PredictorBundle, k: int) -> bool:
    """Waarschuw (en log) als de bundle met een andere k is getraind"""
    if bundle.k == k:
        return False
    message = f"bundle getraind met k={bundle.k}, extrapolatie vraagt k={k}"
    logger.warning(message)
    warnings.warn(message, KMismatchWarning, stacklevel=3)
    return True


def load_bundle(path: PathLike, expected_k: Optional[int] = None) -> PredictorBundle:
    meta = read_json_document(bundle_sidecar_path(path), "bundle_sidecar")
    arrays, _ = read_container(path)

    entries: Dict[Tuple[str, int], BundleEntry] = {}
    used: set = set()
    for doc in meta["entries"]:
        fld, dim = doc["field"], int(doc["dim"])
        try:
            cfg = PredictorConfig.model_validate(doc["config"])
        except ValidationError as e:
            raise FormatError(f"{path}: ongeldige predictor config voor ({fld}, {dim})") from e
        if (cfg.field, cfg.input_dim) != (fld, dim):
            raise FormatError(f"{path}: config ({cfg.field}, {cfg.input_dim}) hoort niet bij ({fld}, {dim})")
        if (fld, dim) in entries:
            raise FormatError(f"{path}: dubbele entry ({fld}, {dim})")
        prefix = f"{fld}/{dim}"
        params = PredictorParams(
            cfg,
            _layers_from(arrays, f"{prefix}/enc_g", cfg.encoder_widths(), used, path),
            _layers_from(arrays, f"{prefix}/enc_l", cfg.encoder_widths(), used, path),
            _layers_from(arrays, f"{prefix}/dec", cfg.decoder_widths(), used, path),
        )
        entries[(fld, dim)] = BundleEntry(
            cfg, params, list(doc["train_loss"]), list(doc["holdout_loss"]),
            int(doc.get("n_train", 0)), int(doc.get("n_holdout", 0)),
        )
    extra = sorted(set(arrays) - used)
    if extra:
        raise FormatError(f"{path}: onbekende bundle keys {extra[:3]}")

    metadata = {key: value for key, value in meta.items() if key != "entries"}
    bundle = PredictorBundle(entries, metadata, bundle_id=file_digest(path))
    if expected_k is not None:
        warn_k_mismatch(bundle, expected_k)
    return bundle
