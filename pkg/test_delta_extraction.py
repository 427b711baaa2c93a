"""
Tests voor delta_extraction: deltas, sign alignment en datasets
"""

import numpy as np
import pytest

from conftest import SMALL_SHAPES, memory_trajectory
from nextrap.src.checkpoint_store import Checkpoint
from nextrap.src.delta_extraction import (
    align_sign,
    compute_deltas,
    extract_dataset,
    load_dataset,
    save_dataset,
    sign_chain,
)
from nextrap.src.errors import IndexOutOfRange, InsufficientCheckpoints
from nextrap.src.linalg_core import Rank1Factor, top_singular_triplet
from nextrap.src.trajectory_lab import planted_direction


def test_global_delta_telescopes_over_local_deltas(saturating_traj):
    traj, _ = saturating_traj
    running = {name: np.zeros_like(w) for name, w in traj[0].tensors.items()}
    for i in range(1, len(traj)):
        deltas = compute_deltas(traj, i, 5)
        for name, d in deltas.items():
            running[name] = running[name] + d.l
            np.testing.assert_allclose(d.g, running[name], atol=1e-11)


def test_target_delta_only_inside_trajectory(linear_traj):
    traj, _ = linear_traj
    assert compute_deltas(traj, 10, 5)["layers.000.weight"].t is not None
    assert compute_deltas(traj, 12, 5)["layers.000.weight"].t is None
    d = compute_deltas(traj, 3, 2)["layers.001.weight"]
    np.testing.assert_array_equal(d.t, traj[5].tensors["layers.001.weight"] - traj[3].tensors["layers.001.weight"])


def test_index_out_of_range(linear_traj):
    traj, _ = linear_traj
    for i, k in ((0, 5), (16, 5), (3, 0)):
        with pytest.raises(IndexOutOfRange):
            compute_deltas(traj, i, k)


def test_align_sign():
    ref = Rank1Factor(1.0, np.array([1.0, 0.0]), np.array([0.0, 1.0]))
    flipped = align_sign(Rank1Factor(2.0, np.array([-1.0, 0.0]), np.array([0.0, 1.0])), ref)
    np.testing.assert_array_equal(flipped.u, [1.0, 0.0])
    np.testing.assert_array_equal(flipped.v, [0.0, -1.0])
    assert flipped.sigma == 2.0
    orthogonal = Rank1Factor(1.0, np.array([0.0, -1.0]), np.array([1.0]))
    assert align_sign(orthogonal, ref) is orthogonal
    with pytest.raises(ValueError):
        align_sign(Rank1Factor(1.0, np.ones(3), np.ones(1)), ref)


def test_sign_chain_follows_planted_direction(saturating_traj):
    traj, spec = saturating_traj
    for j, shape in enumerate(SMALL_SHAPES):
        _, u, v = planted_direction(spec, j, shape)
        for kind in ("G", "L"):
            chain = sign_chain(traj, f"layers.{j:03d}.weight", kind, 15)
            assert len(chain) == 15
            for f in chain:
                np.testing.assert_allclose(f.u, u, atol=1e-8)
                np.testing.assert_allclose(f.v, v, atol=1e-8)


def test_target_sign_chain_is_continuous():
    traj, _ = memory_trajectory("logistic")
    chain = sign_chain(traj, "layers.002.weight", "T", 10, k=5)
    for prev, curr in zip(chain, chain[1:]):
        assert float(np.dot(prev.u, curr.u)) >= 0.0


def test_sign_chain_uses_compute_deltas(saturating_traj):
    traj, _ = saturating_traj
    name = "layers.001.weight"
    for kind, attr in (("G", "g"), ("L", "l"), ("T", "t")):
        chain = sign_chain(traj, name, kind, 10, k=5)
        for i, f in enumerate(chain, start=1):
            expected = top_singular_triplet(getattr(compute_deltas(traj, i, 5)[name], attr))
            assert f.sigma == pytest.approx(expected.sigma, rel=1e-12)


def test_target_sign_chain_stops_at_trajectory_end(saturating_traj):
    traj, _ = saturating_traj
    with pytest.raises(IndexOutOfRange):
        sign_chain(traj, "layers.000.weight", "T", 11, k=5)


def test_dataset_cardinality(saturating_traj):
    traj, _ = saturating_traj
    data = extract_dataset(traj, k=5)
    assert data.c == 15 and data.k == 5
    assert data.skipped == 0
    assert data.n_examples == 3 * len(SMALL_SHAPES) * (15 - 5)
    keys = [g.key for g in data.groups]
    assert keys == [("u", 6), ("u", 10), ("u", 12), ("v", 8), ("v", 9), ("v", 10), ("sigma", 1)]
    sg, sl, st = data.group("sigma", 1).stacked()
    assert sg.shape == sl.shape == st.shape == (30, 1)
    assert np.all(sg > 0)


def test_degenerate_parameter_is_skipped(saturating_traj):
    traj, _ = saturating_traj
    constant = np.ones((4, 4))
    traj = [Checkpoint(c.step, {**c.tensors, "layers.009.weight": constant}, c.passthrough) for c in traj]
    data = extract_dataset(traj, k=5)
    assert data.skipped == 10
    assert data.group("u", 4) is None
    assert all("layers.009.weight" not in g.param_names for g in data.groups)
    assert data.n_examples == 3 * len(SMALL_SHAPES) * 10


def test_insufficient_checkpoints(linear_traj):
    traj, _ = linear_traj
    with pytest.raises(InsufficientCheckpoints):
        extract_dataset(traj[:7], k=5)
    with pytest.raises(ValueError):
        extract_dataset(traj, k=5, sigma_transform="sqrt")


def test_log1p_sigma_features(linear_traj):
    traj, _ = linear_traj
    plain = extract_dataset(traj, k=3)
    logged = extract_dataset(traj, k=3, sigma_transform="log1p")
    for a, b in zip(plain.group("sigma", 1).stacked(), logged.group("sigma", 1).stacked()):
        np.testing.assert_allclose(np.log1p(a), b, atol=1e-12)
    np.testing.assert_array_equal(plain.group("u", 12).stacked()[0], logged.group("u", 12).stacked()[0])


def test_dataset_file_round_trip(tmp_path, saturating_traj):
    traj, _ = saturating_traj
    data = extract_dataset(traj, k=4, sigma_transform="log1p")
    save_dataset(data, tmp_path / "dataset.safetensors")
    loaded = load_dataset(tmp_path / "dataset.safetensors")
    assert loaded.metadata() == data.metadata()
    assert [g.key for g in loaded.groups] == [g.key for g in data.groups]
    for mine, theirs in zip(data.groups, loaded.groups):
        for a, b in zip(mine.stacked(), theirs.stacked()):
            np.testing.assert_array_equal(a, b)
    save_dataset(loaded, tmp_path / "again.safetensors")
    assert (tmp_path / "dataset.safetensors").read_bytes() == (tmp_path / "again.safetensors").read_bytes()
