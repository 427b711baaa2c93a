#!/usr/bin/env python3
"""
Integratietest: saturating benchmark van trajectory tot extrapolatie

synth (200 parameters, c=15, ruis 0.01) -> dataset (k=5) -> train -> extrapolate
en vergelijking met de lineaire baseline tegen de gesloten-vorm W(c+k).
"""

import numpy as np
import pytest

from nextrap.src.checkpoint_store import as_trajectory
from nextrap.src.delta_extraction import extract_dataset
from nextrap.src.diagnostics import frobenius_errors
from nextrap.src.extrapolation import extrapolate_checkpoint, linear_extrapolate
from nextrap.src.predictor import train
from nextrap.src.trajectory_lab import DynamicsSpec, gen_analytic_trajectory, load_lab_record, manifest_path

BENCHMARK_SHAPES = [(24, 16), (32, 24), (16, 16)]
N_PARAMS = 200
C = 15
K = 5


@pytest.fixture(scope="module")
def benchmark(tmp_path_factory):
    out = tmp_path_factory.mktemp("saturating")
    spec = DynamicsSpec(kind="saturating", noise_std=0.01, seed=17)
    shapes = [BENCHMARK_SHAPES[j % len(BENCHMARK_SHAPES)] for j in range(N_PARAMS)]
    gen_analytic_trajectory(spec, shapes, C, out, dtype="F64")
    traj = as_trajectory(manifest_path(out))
    truth = load_lab_record(out).ground_truth(C + K)

    dataset = extract_dataset(traj, k=K)
    bundle = train(dataset, hidden_dim=64, epochs=120, lr=3e-3, batch_size=64, seed=17)
    return traj, truth, dataset, bundle


def test_benchmark_dataset_shape(benchmark):
    _, _, dataset, bundle = benchmark
    assert dataset.n_examples == 3 * N_PARAMS * (C - K)
    assert bundle.sorted_keys() == [("u", 16), ("u", 24), ("u", 32), ("v", 16), ("v", 24), ("sigma", 1)]


def test_predictors_learn(benchmark):
    _, _, _, bundle = benchmark
    for key in bundle.sorted_keys():
        entry = bundle.entries[key]
        assert entry.train_loss[-1] < entry.train_loss[0], key
    sigma = bundle.get("sigma", 1)
    assert sigma.n_holdout > 0
    assert sigma.holdout_loss[-1] < 0.5 * sigma.holdout_loss[0]


def test_next_beats_linear_extrapolation(benchmark):
    traj, truth, _, bundle = benchmark
    ckpt, report = extrapolate_checkpoint(traj, bundle, alpha=1.0)
    assert report.n_skipped == 0
    assert ckpt.step == C * 10 + K * 10

    next_errors = frobenius_errors(ckpt, truth)
    linear_errors = frobenius_errors(linear_extrapolate(traj, alpha=1.0, k=K), truth)
    wins = [next_errors[name] < linear_errors[name] for name in next_errors]

    print(f"📊 NExt beter op {np.mean(wins):.1%} van {len(wins)} parameters")
    print(f"📊 Gemiddelde fout: NExt {np.mean(list(next_errors.values())):.4f}, "
          f"linear {np.mean(list(linear_errors.values())):.4f}")
    assert np.mean(wins) >= 0.8
    assert np.mean(list(next_errors.values())) < np.mean(list(linear_errors.values()))
