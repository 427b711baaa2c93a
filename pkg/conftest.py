"""
Gedeelde pytest fixtures: geseede matrices en kleine trajectories
"""

import numpy as np
import pytest

import nextrap.src.tracing as tracing
from nextrap.src.checkpoint_store import Checkpoint
from nextrap.src.trajectory_lab import DynamicsSpec, analytic_ground_truth

SMALL_SHAPES = [(12, 8), (10, 10), (6, 9)]


@pytest.fixture(autouse=True)
def no_tracing(monkeypatch):
    """Tests draaien nooit tegen LangFuse"""
    for key in ("LANGFUSE_PUBLIC_KEY", "LANGFUSE_SECRET_KEY", "LANGFUSE_HOST"):
        monkeypatch.delenv(key, raising=False)
    monkeypatch.setattr(tracing, "_manager", None)
    yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def memory_trajectory(kind: str, shapes=SMALL_SHAPES, c: int = 15, seed: int = 17,
                      interval: int = 10, **kw):
    """Ruisvrije in-memory trajectory [W0, M1..Mc] uit de gesloten vorm, plus de spec"""
    spec = DynamicsSpec(kind=kind, seed=seed, **kw).resolved(c)
    traj = [analytic_ground_truth(spec, shapes, t, step=t * interval) for t in range(c + 1)]
    return traj, spec


@pytest.fixture
def linear_traj():
    return memory_trajectory("linear")


@pytest.fixture
def saturating_traj():
    return memory_trajectory("saturating")


def quadratic_trajectory(shape=(7, 5), c: int = 15, seed: int = 3):
    """W_i = W0 + (i/c)²·σ·u·vᵀ: niet-lineair in i, exact rank-1 deltas"""
    rng = np.random.default_rng(seed)
    w0 = rng.standard_normal(shape)
    u = rng.standard_normal(shape[0])
    v = rng.standard_normal(shape[1])
    direction = np.outer(u / np.linalg.norm(u), v / np.linalg.norm(v)) * 4.0
    return [Checkpoint(10 * i, {"layers.000.weight": w0 + (i / c) ** 2 * direction}) for i in range(c + 1)]
