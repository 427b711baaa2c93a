"""
Deterministische dense lineaire algebra voor delta analyse

Bevat:
- full_svd: volledig singulier spectrum (voor energy ratio)
- top_singular_triplet: rank-1 factor via alternerende power iteratie
- rank1_reconstruct / energy_ratio / frobenius_norm

Alle rekenwerk gebeurt in float64, ook als de opslag float32 is.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.typing import NDArray

from .errors import DegenerateMatrix, NonFiniteMatrix, NotConverged, SizeExceeded
from .settings import get_settings

logger = logging.getLogger(__name__)

Matrix = NDArray[np.float64]
Vector = NDArray[np.float64]

ZERO_NORM = 1e-300
SIGN_EPS = 1e-12


def as_matrix(m) -> Matrix:
    """Converteer naar een 2-D float64 array; weigert NaN/Inf"""
    arr = np.asarray(m, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"Matrix moet 2-D en niet-leeg zijn, kreeg shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteMatrix("Matrix bevat NaN of Inf")
    return arr


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=np.float64, copy=True)
    arr.setflags(write=False)
    return arr


def _unit(size: int) -> Vector:
    e = np.zeros(size)
    e[0] = 1.0
    return e


@dataclass(frozen=True)
class Rank1Factor:
    """(σ, u, v) met σ·u·vᵀ ≈ bronmatrix"""
    sigma: float
    u: Vector
    v: Vector
    degenerate: bool = False

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError(f"sigma moet >= 0 zijn, kreeg {self.sigma}")
        object.__setattr__(self, "sigma", float(self.sigma))
        object.__setattr__(self, "u", _frozen(self.u))
        object.__setattr__(self, "v", _frozen(self.v))

    @property
    def shape(self):
        return (self.u.shape[0], self.v.shape[0])

    def negated(self) -> "Rank1Factor":
        """Flip u en v samen; σ·u·vᵀ blijft gelijk"""
        return Rank1Factor(self.sigma, -self.u, -self.v, self.degenerate)

    @classmethod
    def zero(cls, rows: int, cols: int) -> "Rank1Factor":
        return cls(0.0, _unit(rows), _unit(cols), degenerate=True)


@dataclass(frozen=True)
class SpectrumSummary:
    singular_values: Vector

    def __post_init__(self):
        object.__setattr__(self, "singular_values", _frozen(self.singular_values))

    @property
    def sigma1(self) -> float:
        return float(self.singular_values[0])

    @property
    def nuclear_norm(self) -> float:
        return float(np.sum(self.singular_values))

    def tail_energy(self) -> float:
        """Σ_{i≥2} σᵢ², de residu-energie van de beste rank-1 benadering"""
        return float(np.sum(self.singular_values[1:] ** 2))


def frobenius_norm(m) -> float:
    m = as_matrix(m)
    return float(np.sqrt(np.sum(m * m)))


def full_svd(m, max_elements: Optional[int] = None) -> SpectrumSummary:
    """Alle min(rows, cols) singuliere waarden, aflopend gesorteerd"""
    m = as_matrix(m)
    cap = max_elements if max_elements is not None else get_settings().svd_max_elements
    if m.size > cap:
        raise SizeExceeded(f"Matrix {m.shape[0]}x{m.shape[1]} groter dan full_svd limiet ({cap} elementen)")
    s = np.linalg.svd(m, compute_uv=False)
    return SpectrumSummary(np.sort(s)[::-1])


def apply_sign_convention(u: Vector, v: Vector):
    """Eerste component van u met |x| > 1e-12 wordt positief (u en v flippen samen)"""
    idx = np.flatnonzero(np.abs(u) > SIGN_EPS)
    if idx.size and u[idx[0]] < 0:
        return -u, -v
    return u, v


def _start_vector(m: Matrix, fro: float):
    cols = m.shape[1]
    v = np.full(cols, 1.0 / np.sqrt(cols))
    mv = m @ v
    if np.linalg.norm(mv) >= ZERO_NORM * fro:
        return v, mv
    v = v.copy()
    v[0] += 1e-6
    v /= np.linalg.norm(v)
    mv = m @ v
    if np.linalg.norm(mv) >= ZERO_NORM * fro:
        return v, mv
    # nog steeds in de nulruimte: start op de zwaarste kolom
    v = np.zeros(cols)
    v[int(np.argmax(np.sum(m * m, axis=0)))] = 1.0
    return v, m @ v


def top_singular_triplet(m, tol: float = 1e-10, max_iter: int = 1000) -> Rank1Factor:
    """Grootste singuliere triplet via v ← normalize(Mᵀ(Mv)), u ← Mv/‖Mv‖"""
    m = as_matrix(m)
    rows, cols = m.shape
    fro = frobenius_norm(m)
    if fro < ZERO_NORM:
        return Rank1Factor.zero(rows, cols)

    v, mv = _start_vector(m, fro)
    sigma = float(np.linalg.norm(mv))
    converged = False
    for _ in range(max_iter):
        w = m.T @ (mv / sigma)
        v = w / np.linalg.norm(w)
        mv = m @ v
        sigma_new = float(np.linalg.norm(mv))
        delta = abs(sigma_new - sigma)
        sigma = sigma_new
        if delta <= tol * sigma:
            converged = True
            break

    u = mv / sigma
    if not converged:
        residual = float(np.linalg.norm(m.T @ u - sigma * v))
        if residual > 1e-6 * sigma:
            raise NotConverged(
                f"Power iteratie niet geconvergeerd na {max_iter} iteraties (residu {residual:.3e})"
            )
        logger.debug("sigma niet stabiel na %d iteraties, triplet wel consistent", max_iter)

    u, v = apply_sign_convention(u, v)
    return Rank1Factor(sigma, u, v)


def rank1_reconstruct(f: Rank1Factor) -> Matrix:
    return f.sigma * np.outer(f.u, f.v)


def energy_ratio(m) -> float:
    """E₁ = σ₁ / Σσᵢ over het exacte spectrum"""
    m = as_matrix(m)
    if frobenius_norm(m) == 0.0:
        raise DegenerateMatrix("energy ratio ongedefinieerd voor een nulmatrix")
    spectrum = full_svd(m)
    return spectrum.sigma1 / spectrum.nuclear_norm
