"""
Extrapolatie engine: predict-extend op het laatste checkpoint

Bevat:
- predict_target_factor / predict_target_delta: bundle -> σ̂·û·v̂ᵀ
- predict_extend: Ŵ = W + α·ΔŴ
- predict_deltas + apply_deltas: voorspellingen één keer, daarna elke α
- extrapolate_checkpoint: volledige pipeline met ExtrapolationReport
- linear_extrapolate: lineaire baselines (full / rank1, slope last / global)
"""

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .checkpoint_store import Checkpoint, PathLike, as_trajectory, atomic_write_bytes
from .delta_extraction import sigma_feature, sign_chain
from .diagnostics import write_frame_csv
from .errors import EmptyTrajectory, InsufficientCheckpoints, MissingPredictor, ShapeMismatch, ZeroNormPrediction
from .linalg_core import Rank1Factor, frobenius_norm, rank1_reconstruct, top_singular_triplet
from .predictor import PredictorBundle, forward, warn_k_mismatch
from .settings import map_ordered

logger = logging.getLogger(__name__)

PREDICTION_MIN_NORM = 1e-12
COMPARISON_COLUMNS = ["method", "alpha", "param", "frobenius_error"]


def _unit(out: np.ndarray, fld: str) -> np.ndarray:
    norm = float(np.linalg.norm(out))
    if norm < PREDICTION_MIN_NORM:
        raise ZeroNormPrediction(f"{fld} predictor gaf een (bijna) nulvector, normalisatie ongedefinieerd")
    return out / norm


def predict_target_factor(bundle: PredictorBundle, g_factor: Rank1Factor, l_factor: Rank1Factor,
                          field_dims: Tuple[int, int]) -> Rank1Factor:
    """(σ̂, û, v̂) met û, v̂ genormaliseerd en σ̂ = max(·, 0)"""
    m, n = field_dims
    if g_factor.shape != (m, n) or l_factor.shape != (m, n):
        raise ShapeMismatch(f"factoren {g_factor.shape}/{l_factor.shape} passen niet bij ({m}, {n})")
    u_entry = bundle.get("u", m)
    v_entry = bundle.get("v", n)
    s_entry = bundle.get("sigma", 1)

    u_hat = _unit(forward(u_entry.params, g_factor.u, l_factor.u), "u")
    v_hat = _unit(forward(v_entry.params, g_factor.v, l_factor.v), "v")

    transform = bundle.sigma_transform
    s_out = forward(
        s_entry.params,
        np.array([sigma_feature(g_factor.sigma, transform)]),
        np.array([sigma_feature(l_factor.sigma, transform)]),
    )[0]
    sigma_hat = float(np.expm1(s_out)) if transform == "log1p" else float(s_out)
    return Rank1Factor(max(sigma_hat, 0.0), u_hat, v_hat)


def predict_target_delta(bundle: PredictorBundle, g_factor: Rank1Factor, l_factor: Rank1Factor,
                         field_dims: Tuple[int, int]) -> np.ndarray:
    return rank1_reconstruct(predict_target_factor(bundle, g_factor, l_factor, field_dims))


def predict_extend(w: np.ndarray, delta_hat: np.ndarray, alpha: float) -> np.ndarray:
    """Ŵ = W + α·ΔŴ; α = 0 geeft een bit-exacte kopie van W"""
    w = np.asarray(w, dtype=np.float64)
    delta_hat = np.asarray(delta_hat, dtype=np.float64)
    if w.shape != delta_hat.shape:
        raise ShapeMismatch(f"W {w.shape} vs ΔŴ {delta_hat.shape}")
    if alpha == 0:
        return w.copy()
    return w + alpha * delta_hat


# ---------------------------------------------------------------------------
# Volledige extrapolatie
# ---------------------------------------------------------------------------

@dataclass
class ParamPrediction:
    param_name: str
    factor: Optional[Rank1Factor] = None
    skipped: bool = False
    reason: Optional[str] = None

    @property
    def delta(self) -> Optional[np.ndarray]:
        return None if self.factor is None else rank1_reconstruct(self.factor)


@dataclass
class ParamRecord:
    param_name: str
    predicted_sigma: Optional[float]
    alpha: float
    delta_frobenius: float
    skipped: bool = False
    reason: Optional[str] = None


@dataclass
class ExtrapolationReport:
    """Eén record per 2-D parameter plus globale metadata"""
    records: List[ParamRecord]
    k: int
    alpha: float
    bundle_id: Optional[str] = None
    step: Optional[int] = None

    @property
    def n_skipped(self) -> int:
        return sum(r.skipped for r in self.records)

    def metadata(self) -> Dict:
        return {"k": self.k, "alpha": self.alpha, "bundle_id": self.bundle_id, "step": self.step}


def _predict_param(traj: Sequence[Checkpoint], bundle: PredictorBundle, name: str) -> ParamPrediction:
    c = len(traj) - 1
    # de alignment referenties worden deterministisch opnieuw uit de trajectory afgeleid
    f_g = sign_chain(traj, name, "G", c)[-1]
    f_l = sign_chain(traj, name, "L", c)[-1]
    if f_g.degenerate or f_l.degenerate:
        return ParamPrediction(name, skipped=True, reason="degenerate_delta")
    try:
        factor = predict_target_factor(bundle, f_g, f_l, traj[c].tensors[name].shape)
    except MissingPredictor as e:
        return ParamPrediction(name, skipped=True, reason=f"missing_predictor: {e}")
    return ParamPrediction(name, factor=factor)


def predict_deltas(traj, bundle: PredictorBundle, threads: Optional[int] = None) -> List[ParamPrediction]:
    """Voorspelde rank-1 deltas voor elke 2-D parameter van M_c, in lexicografische volgorde"""
    traj = as_trajectory(traj, threads)
    if not traj:
        raise EmptyTrajectory("lege trajectory")
    if len(traj) < 2:
        raise InsufficientCheckpoints("extrapolatie vereist base + minimaal 1 checkpoint")
    names = list(traj[-1].tensors)
    predictions = map_ordered(lambda n: _predict_param(traj, bundle, n), names, threads)
    skipped = [p for p in predictions if p.skipped]
    if skipped:
        logger.warning("%d parameters ongewijzigd gekopieerd (%s)", len(skipped),
                       ", ".join(sorted({p.reason.split(':')[0] for p in skipped})))
    return predictions


def apply_deltas(last: Checkpoint, predictions: Sequence[ParamPrediction], alpha: float,
                 step: Optional[int] = None) -> Checkpoint:
    """Pas voorspellingen toe met coëfficiënt α; overgeslagen parameters blijven gelijk"""
    by_name = {p.param_name: p for p in predictions}
    tensors = {}
    for name, w in last.tensors.items():
        pred = by_name.get(name)
        if pred is None or pred.factor is None:
            tensors[name] = w.copy()
        else:
            tensors[name] = predict_extend(w, pred.delta, alpha)
    return last.with_tensors(tensors, step=step)


def output_step(traj: Sequence[Checkpoint], k: int) -> int:
    """step_c + k × mediane stride tussen opeenvolgende checkpoints"""
    steps = [c.step for c in traj]
    if len(steps) < 2:
        return steps[-1]
    stride = float(np.median(np.diff(steps)))
    return int(steps[-1] + round(k * stride))


def build_report(predictions: Sequence[ParamPrediction], alpha: float, k: int,
                 bundle_id: Optional[str], step: Optional[int]) -> ExtrapolationReport:
    records = []
    for p in predictions:
        if p.factor is None:
            records.append(ParamRecord(p.param_name, None, float(alpha), 0.0, True, p.reason))
        else:
            # ‖σ̂·û·v̂ᵀ‖_F = σ̂ voor eenheidsvectoren
            records.append(ParamRecord(p.param_name, p.factor.sigma, float(alpha),
                                       frobenius_norm(p.delta), False, None))
    return ExtrapolationReport(records, int(k), float(alpha), bundle_id, step)


def extrapolate_checkpoint(traj, bundle: PredictorBundle, alpha: float, k: Optional[int] = None,
                           threads: Optional[int] = None) -> Tuple[Checkpoint, ExtrapolationReport]:
    traj = as_trajectory(traj, threads)
    if not traj:
        raise EmptyTrajectory("lege trajectory")
    if k is None:
        k = bundle.k
    else:
        warn_k_mismatch(bundle, k)
    predictions = predict_deltas(traj, bundle, threads)
    step = output_step(traj, k)
    ckpt = apply_deltas(traj[-1], predictions, alpha, step)
    report = build_report(predictions, alpha, k, bundle.bundle_id, step)
    logger.info("extrapolatie α=%g, k=%d: %d parameters, %d overgeslagen",
                alpha, k, len(report.records), report.n_skipped)
    return ckpt, report


# ---------------------------------------------------------------------------
# Lineaire baselines
# ---------------------------------------------------------------------------

LINEAR_VARIANTS = ("full", "rank1")
LINEAR_SLOPES = ("last", "global")


def linear_extrapolate(traj, alpha: float, k: int, variant: str = "full", slope: str = "last",
                       threads: Optional[int] = None) -> Checkpoint:
    """last: W_c + α·k·(W_c − W_{c−1}); global: W_c + α·(W_c − W₀)

    Variant rank1 past alleen de rank-1 benadering van de slope delta toe.
    """
    if variant not in LINEAR_VARIANTS:
        raise ValueError(f"variant moet een van {LINEAR_VARIANTS} zijn")
    if slope not in LINEAR_SLOPES:
        raise ValueError(f"slope moet een van {LINEAR_SLOPES} zijn")
    traj = as_trajectory(traj, threads)
    if len(traj) < 2:
        raise InsufficientCheckpoints("lineaire extrapolatie vereist minimaal 2 checkpoints")
    last = traj[-1]
    ref = traj[-2] if slope == "last" else traj[0]
    scale = alpha * k if slope == "last" else alpha

    def extend(name: str) -> np.ndarray:
        delta = last.tensors[name] - ref.tensors[name]
        if variant == "rank1":
            delta = rank1_reconstruct(top_singular_triplet(delta))
        return predict_extend(last.tensors[name], delta, scale)

    names = list(last.tensors)
    tensors = dict(zip(names, map_ordered(extend, names, threads)))
    return last.with_tensors(tensors, step=output_step(traj, k))


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------

def write_report_jsonl(report: ExtrapolationReport, path: PathLike) -> None:
    """JSON lines, één record per parameter, metadata in elk record"""
    meta = report.metadata()
    lines = [json.dumps({**asdict(r), **meta}, sort_keys=True) for r in report.records]
    atomic_write_bytes(Path(path), ("\n".join(lines) + "\n").encode("utf-8"))


@dataclass
class ComparisonTable:
    rows: List[Dict] = field(default_factory=list)

    def add(self, method: str, alpha: float, errors: Dict[str, float]) -> None:
        for name in sorted(errors):
            self.rows.append({"method": method, "alpha": float(alpha), "param": name,
                              "frobenius_error": float(errors[name])})

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=COMPARISON_COLUMNS)

    def errors(self, method: str, alpha: Optional[float] = None) -> Dict[str, float]:
        return {
            r["param"]: r["frobenius_error"]
            for r in self.rows
            if r["method"] == method and (alpha is None or r["alpha"] == alpha)
        }


def write_comparison_csv(table: ComparisonTable, path: PathLike) -> None:
    write_frame_csv(table.frame(), path)
