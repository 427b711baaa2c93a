"""
Tests voor trajectory_lab: analytische dynamiek en toy training
"""

import math

import numpy as np
import pytest
from pydantic import ValidationError

from nextrap.src.checkpoint_store import file_digest, load_manifest, read_trajectory
from nextrap.src.diagnostics import energy_ratio_series
from nextrap.src.errors import FormatError
from nextrap.src.linalg_core import full_svd
from nextrap.src.trajectory_lab import (
    DynamicsSpec,
    ToyTrainSpec,
    analytic_ground_truth,
    gen_analytic_trajectory,
    gen_toy_training_trajectory,
    load_lab_record,
    manifest_path,
    planted_direction,
)

SHAPES = [(8, 6), (5, 5)]


def test_dynamics_families():
    sat = DynamicsSpec(kind="saturating", amplitude=2.0, timescale=4.0)
    assert sat.f(4.0) == pytest.approx(2.0 * (1 - math.exp(-1.0)))
    lin = DynamicsSpec(kind="linear").resolved(10)
    assert lin.horizon == 10.0
    assert lin.f(5) == pytest.approx(0.5)
    log = DynamicsSpec(kind="logistic", timescale=1.0).resolved(10)
    assert log.f(5) == pytest.approx(0.5)
    with pytest.raises(ValidationError):
        DynamicsSpec(kind="cubic")
    with pytest.raises(ValidationError):
        DynamicsSpec(kind="linear", timescale=0.0)


def test_noiseless_trajectory_matches_closed_form(tmp_path):
    spec = DynamicsSpec(kind="saturating", seed=5)
    gen_analytic_trajectory(spec, SHAPES, 6, tmp_path, dtype="F64")
    traj = read_trajectory(load_manifest(manifest_path(tmp_path)))
    record = load_lab_record(tmp_path)
    assert record.generator == "analytic"
    assert len(traj) == 7
    for t, ckpt in enumerate(traj):
        truth = record.ground_truth(t)
        for name, w in ckpt.tensors.items():
            np.testing.assert_allclose(w, truth.tensors[name], atol=1e-12)
        for name, b in ckpt.passthrough.items():
            np.testing.assert_array_equal(b, truth.passthrough[name])


def test_planted_direction_carries_the_delta():
    spec = DynamicsSpec(kind="linear", seed=3).resolved(10)
    w0 = analytic_ground_truth(spec, SHAPES, 0)
    w4 = analytic_ground_truth(spec, SHAPES, 4)
    sigma, u, v = planted_direction(spec, 1, SHAPES[1])
    delta = w4.tensors["layers.001.weight"] - w0.tensors["layers.001.weight"]
    np.testing.assert_allclose(delta, 0.4 * sigma * np.outer(u, v), atol=1e-12)
    assert u[np.flatnonzero(np.abs(u) > 1e-12)[0]] > 0


def test_generation_is_deterministic(tmp_path):
    spec = DynamicsSpec(kind="logistic", noise_std=0.05, seed=9)
    gen_analytic_trajectory(spec, SHAPES, 5, tmp_path / "a")
    gen_analytic_trajectory(spec, SHAPES, 5, tmp_path / "b")
    for name in ("manifest.json", "dynamics.json", "base.safetensors", "ckpt_00050.safetensors"):
        assert file_digest(tmp_path / "a" / name) == file_digest(tmp_path / "b" / name)


def test_noise_changes_checkpoints_but_not_base(tmp_path):
    gen_analytic_trajectory(DynamicsSpec(kind="linear", seed=1), SHAPES, 4, tmp_path / "clean", dtype="F64")
    gen_analytic_trajectory(DynamicsSpec(kind="linear", seed=1, noise_std=0.1), SHAPES, 4, tmp_path / "noisy",
                            dtype="F64")
    clean = read_trajectory(load_manifest(tmp_path / "clean" / "manifest.json"))
    noisy = read_trajectory(load_manifest(tmp_path / "noisy" / "manifest.json"))
    assert clean[0].equals(noisy[0])
    assert not np.allclose(clean[2].tensors["layers.000.weight"], noisy[2].tensors["layers.000.weight"])


def test_toy_spec_validation():
    with pytest.raises(ValidationError):
        ToyTrainSpec(mode="lora")
    with pytest.raises(ValidationError):
        ToyTrainSpec(mode="lora", lora_rank=9, layer_shapes=[(8, 4), (2, 8)])
    with pytest.raises(ValidationError):
        ToyTrainSpec(layer_shapes=[(8, 4), (2, 7)])
    with pytest.raises(ValidationError):
        ToyTrainSpec(steps=15, save_interval=10)
    with pytest.raises(ValidationError):
        ToyTrainSpec(lora_rank=2)


def test_toy_training_reduces_loss(tmp_path):
    spec = ToyTrainSpec(steps=60, save_interval=10)
    man = gen_toy_training_trajectory(spec, tmp_path)
    assert man.steps == [10, 20, 30, 40, 50, 60]
    record = load_lab_record(tmp_path)
    assert record.generator == "toy"
    assert record.final_loss is not None and math.isfinite(record.final_loss)
    with pytest.raises(FormatError):
        record.ground_truth(1)


def test_lora_rank1_deltas_are_rank1(tmp_path):
    spec = ToyTrainSpec(mode="lora", lora_rank=1, steps=50)
    assert spec.dtype == "F32"
    man = gen_toy_training_trajectory(spec, tmp_path)
    assert man.lora_paths == [f"adapter_{s:05d}.safetensors" for s in (10, 20, 30, 40, 50)]
    for series in energy_ratio_series(manifest_path(tmp_path)):
        for _, ratio in series.points:
            assert ratio == pytest.approx(1.0, abs=1e-6)


def test_lora_rank4_spectrum_is_truncated(tmp_path):
    spec = ToyTrainSpec(mode="lora", lora_rank=4, steps=50)
    gen_toy_training_trajectory(spec, tmp_path)
    traj = read_trajectory(load_manifest(manifest_path(tmp_path)))
    assert len(traj) == 6
    for ckpt in traj[1:]:
        for name, w in ckpt.tensors.items():
            s = full_svd(w - traj[0].tensors[name]).singular_values
            assert np.all(s[4:] <= 1e-6 * s[0])


def _mean_energy(tmp_path, spec):
    gen_toy_training_trajectory(spec, tmp_path)
    series = energy_ratio_series(manifest_path(tmp_path))
    return float(np.mean([s.mean for s in series]))


def test_lora_is_more_rank1_than_full_finetuning(tmp_path):
    """Voor elk van vijf task seeds liggen LoRA deltas dichter bij rank-1"""
    for seed in range(1, 6):
        full = _mean_energy(tmp_path / f"full_{seed}", ToyTrainSpec(task_seed=seed, mode="full"))
        lora = _mean_energy(tmp_path / f"lora_{seed}", ToyTrainSpec(task_seed=seed, mode="lora", lora_rank=4))
        assert lora > full, seed
