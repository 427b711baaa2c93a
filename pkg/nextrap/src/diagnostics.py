"""
Trajectory diagnostiek

Bevat:
- energy_ratio_series: E₁(Δ^G_i) per parameter over de trajectory
- linear_r2: hoe goed een affiene least-squares fit de rank-1 update voorspelt
- icer / step_reduction: efficiëntie metrics
- CSV writers (pandas, '.' decimalen, '\\n' regeleindes)
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .checkpoint_store import Checkpoint, PathLike, as_trajectory
from .errors import CheckpointIOError, InsufficientCheckpoints, NonPositiveImprovement, ShapeMismatch
from .linalg_core import energy_ratio, frobenius_norm, rank1_reconstruct, top_singular_triplet
from .settings import map_ordered

logger = logging.getLogger(__name__)

DEFAULT_R2_EDGES = (-0.5, 0.0, 0.5)
REGRESSED_QUANTITY = "rank1_reconstruction"


@dataclass
class EnergySeries:
    param_name: str
    points: List[Tuple[int, float]] = field(default_factory=list)
    gaps: List[int] = field(default_factory=list)

    @property
    def mean(self) -> float:
        if not self.points:
            return float("nan")
        return float(np.mean([e for _, e in self.points]))


@dataclass
class R2Report:
    r2: Dict[str, float]
    histogram: Dict[str, int]
    fit_window: int
    predict_window: int
    edges: Tuple[float, ...] = DEFAULT_R2_EDGES
    regressed: str = REGRESSED_QUANTITY

    def summary(self) -> Dict:
        finite = [v for v in self.r2.values() if math.isfinite(v)]
        return {
            "parameters": len(self.r2),
            "mean_r2": float(np.mean(finite)) if finite else None,
            "histogram": dict(self.histogram),
            "fit_window": self.fit_window,
            "predict_window": self.predict_window,
            "regressed": self.regressed,
        }


# ---------------------------------------------------------------------------
# Energy ratio
# ---------------------------------------------------------------------------

def _energy_for_param(traj: Sequence[Checkpoint], name: str) -> EnergySeries:
    series = EnergySeries(name)
    w0 = traj[0].tensors[name]
    for i in range(1, len(traj)):
        delta = traj[i].tensors[name] - w0
        if frobenius_norm(delta) == 0.0:
            series.gaps.append(i)
            continue
        series.points.append((i, energy_ratio(delta)))
    return series


def energy_ratio_series(traj, threads: Optional[int] = None) -> List[EnergySeries]:
    """E₁(Δ^G_i) voor i ≥ 1; nul-deltas worden gaps, geen nullen"""
    traj = as_trajectory(traj, threads)
    if len(traj) < 2:
        raise InsufficientCheckpoints("energy ratio series vereist minimaal 2 checkpoints")
    names = list(traj[0].tensors)
    return map_ordered(lambda n: _energy_for_param(traj, n), names, threads)


# ---------------------------------------------------------------------------
# R² van lineaire extrapolatie
# ---------------------------------------------------------------------------

def bucket_labels(edges: Sequence[float]) -> List[str]:
    def fmt(x: float) -> str:
        return f"{x:g}"
    labels = [f"(-inf,{fmt(edges[0])})"]
    labels += [f"[{fmt(lo)},{fmt(hi)})" for lo, hi in zip(edges, edges[1:])]
    labels.append(f"[{fmt(edges[-1])},1]")
    return labels


def bucket_counts(values: Sequence[float], edges: Sequence[float] = DEFAULT_R2_EDGES) -> Dict[str, int]:
    """Histogram over (−∞, e₀), [e₀, e₁), …, [e_last, 1]; −∞ valt in de eerste bucket"""
    edges = list(edges)
    if any(b <= a for a, b in zip(edges, edges[1:])):
        raise ValueError(f"bucket grenzen moeten strikt stijgen: {edges}")
    labels = bucket_labels(edges)
    counts = {label: 0 for label in labels}
    for value in values:
        idx = int(np.searchsorted(edges, value, side="right"))
        counts[labels[idx]] += 1
    return counts


def r2_score(truth: np.ndarray, pred: np.ndarray) -> float:
    """1 − SS_res/SS_tot over alle entries samen, SS_tot rond het scalaire gemiddelde"""
    truth = np.asarray(truth, dtype=np.float64).ravel()
    pred = np.asarray(pred, dtype=np.float64).ravel()
    ss_res = float(np.sum((truth - pred) ** 2))
    ss_tot = float(np.sum((truth - truth.mean()) ** 2))
    if ss_tot == 0.0:
        return 1.0 if ss_res == 0.0 else float("-inf")
    return 1.0 - ss_res / ss_tot


def affine_fit_predict(y: np.ndarray, fit_t: np.ndarray, predict_t: np.ndarray) -> np.ndarray:
    """Least squares y ≈ a + b·t per kolom van y, geëvalueerd op predict_t"""
    design = np.column_stack([np.ones(len(fit_t)), fit_t])
    coef = np.linalg.lstsq(design, y, rcond=None)[0]
    return np.column_stack([np.ones(len(predict_t)), predict_t]) @ coef


def _r2_for_param(traj: Sequence[Checkpoint], name: str, fit_window: int, predict_window: int) -> float:
    w0 = traj[0].tensors[name]
    rows = [
        rank1_reconstruct(top_singular_triplet(traj[i].tensors[name] - w0)).ravel()
        for i in range(1, fit_window + predict_window + 1)
    ]
    y = np.stack(rows)
    t = np.arange(1, fit_window + predict_window + 1, dtype=np.float64)
    pred = affine_fit_predict(y[:fit_window], t[:fit_window], t[fit_window:])
    return r2_score(y[fit_window:], pred)


def linear_r2(traj, fit_window: int = 10, predict_window: int = 5,
              edges: Sequence[float] = DEFAULT_R2_EDGES, threads: Optional[int] = None) -> R2Report:
    """Fit de rank-1 reconstructie van Δ^G_i (i ≤ fit_window) affien in i, voorspel het venster erna"""
    if fit_window < 2 or predict_window < 1:
        raise ValueError("fit_window moet >= 2 en predict_window >= 1 zijn")
    traj = as_trajectory(traj, threads)
    c = len(traj) - 1
    if c < fit_window + predict_window:
        raise InsufficientCheckpoints(
            f"{c} checkpoints, fit {fit_window} + predict {predict_window} nodig"
        )
    names = list(traj[0].tensors)
    values = map_ordered(lambda n: _r2_for_param(traj, n, fit_window, predict_window), names, threads)
    r2 = dict(zip(names, values))
    return R2Report(r2, bucket_counts(values, edges), fit_window, predict_window, tuple(edges))


# ---------------------------------------------------------------------------
# Efficiëntie metrics
# ---------------------------------------------------------------------------

def icer(steps: int, baseline_avg: float, new_avg: float) -> float:
    """#Step / Improvement, met gemiddelden in procentpunten; lager is beter"""
    if steps <= 0:
        raise ValueError(f"steps moet positief zijn, kreeg {steps}")
    improvement = new_avg - baseline_avg
    if not improvement > 0:
        raise NonPositiveImprovement(
            f"geen verbetering: baseline {baseline_avg} -> nieuw {new_avg}"
        )
    return steps / improvement


def step_reduction(baseline_steps: int, method_steps: int) -> float:
    """Fractie bespaarde trainingsstappen (400 → 250 is 0.375)"""
    if baseline_steps <= 0 or method_steps < 0:
        raise ValueError("baseline_steps moet positief en method_steps niet-negatief zijn")
    return (baseline_steps - method_steps) / baseline_steps


def frobenius_errors(pred: Checkpoint, truth: Checkpoint) -> Dict[str, float]:
    """‖pred − truth‖_F per 2-D parameter"""
    if set(pred.tensors) != set(truth.tensors):
        raise ShapeMismatch("voorspelling en ground truth hebben andere parameters")
    out = {}
    for name, w in pred.tensors.items():
        if w.shape != truth.tensors[name].shape:
            raise ShapeMismatch(f"{name}: {w.shape} vs {truth.tensors[name].shape}")
        out[name] = frobenius_norm(w - truth.tensors[name])
    return out


# ---------------------------------------------------------------------------
# CSV output
# ---------------------------------------------------------------------------

def write_frame_csv(df: pd.DataFrame, path: PathLike) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        df.to_csv(path, index=False, lineterminator="\n", na_rep="")
    except OSError as e:
        raise CheckpointIOError(f"Schrijven naar {path} mislukt: {e}") from e
    logger.info("CSV geschreven: %s (%d rijen)", path, len(df))


def write_energy_csv(series: Sequence[EnergySeries], path: PathLike) -> None:
    """(param, checkpoint, energy_ratio); gaps krijgen een lege energy_ratio"""
    rows = []
    for s in series:
        values = dict(s.points)
        for i in sorted(set(values) | set(s.gaps)):
            rows.append({"param": s.param_name, "checkpoint": i, "energy_ratio": values.get(i)})
    write_frame_csv(pd.DataFrame(rows, columns=["param", "checkpoint", "energy_ratio"]), path)


def write_r2_csv(report: R2Report, path: PathLike) -> None:
    """(param, r2) per parameter plus een bucket-summary rij"""
    rows = [{"param": name, "r2": value} for name, value in report.r2.items()]
    summary = ";".join(f"{label}={count}" for label, count in report.histogram.items())
    rows.append({"param": "__buckets__", "r2": summary})
    write_frame_csv(pd.DataFrame(rows, columns=["param", "r2"]), path)
