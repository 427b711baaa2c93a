"""
Tests voor de extrapolatie engine en de lineaire baselines
"""

import json

import numpy as np
import pandas as pd
import pytest

from conftest import SMALL_SHAPES, memory_trajectory
from nextrap.src.checkpoint_store import Checkpoint
from nextrap.src.errors import EmptyTrajectory, InsufficientCheckpoints, KMismatchWarning, ShapeMismatch, ZeroNormPrediction
from nextrap.src.extrapolation import (
    ComparisonTable,
    apply_deltas,
    extrapolate_checkpoint,
    linear_extrapolate,
    output_step,
    predict_deltas,
    predict_extend,
    predict_target_factor,
    write_comparison_csv,
    write_report_jsonl,
)
from nextrap.src.linalg_core import top_singular_triplet
from nextrap.src.predictor import BundleEntry, PredictorBundle, PredictorConfig, PredictorParams
from nextrap.src.trajectory_lab import analytic_ground_truth, planted_direction


def passthrough_params(fld: str, d: int) -> PredictorParams:
    """Predictor die s^G letterlijk doorgeeft: [I; −I] encoder, [I, −I, 0, 0] decoder"""
    cfg = PredictorConfig(field=fld, input_dim=d, hidden_dim=2 * d, encoder_layers=1, decoder_layers=1)
    eye = np.eye(d)
    enc_g = [(np.vstack([eye, -eye]), np.zeros(2 * d))]
    enc_l = [(np.zeros((2 * d, d)), np.zeros(2 * d))]
    dec = [(np.hstack([eye, -eye, np.zeros((d, 2 * d))]), np.zeros(d))]
    return PredictorParams(cfg, enc_g, enc_l, dec)


def constant_params(fld: str, d: int, value: float) -> PredictorParams:
    p = passthrough_params(fld, d)
    for layers in p.blocks().values():
        for w, _ in layers:
            w[...] = 0.0
    p.dec[-1][1][...] = value
    return p


def make_bundle(shapes=SMALL_SHAPES, k=5, skip_u=(), sigma=None, zero_u=()):
    entries = {}
    for m in {s[0] for s in shapes} - set(skip_u):
        p = constant_params("u", m, 0.0) if m in zero_u else passthrough_params("u", m)
        entries[("u", m)] = BundleEntry(p.config, p)
    for n in {s[1] for s in shapes}:
        p = passthrough_params("v", n)
        entries[("v", n)] = BundleEntry(p.config, p)
    p = passthrough_params("sigma", 1) if sigma is None else constant_params("sigma", 1, sigma)
    entries[("sigma", 1)] = BundleEntry(p.config, p)
    return PredictorBundle(entries, {"k": k, "sigma_transform": "none"}, bundle_id="test-bundle")


# ---------------------------------------------------------------------------
# predict_extend
# ---------------------------------------------------------------------------

def test_predict_extend_examples():
    w = np.array([[-0.0, 1.0], [2.0, 3.0]])
    same = predict_extend(w, np.ones((2, 2)), 0.0)
    assert same.tobytes() == w.tobytes()
    assert np.signbit(same[0, 0])
    np.testing.assert_array_equal(predict_extend(np.zeros((2, 2)), np.eye(2), 1.5), 1.5 * np.eye(2))
    with pytest.raises(ShapeMismatch):
        predict_extend(w, np.ones((2, 3)), 1.0)


def test_predict_extend_is_linear_in_alpha():
    rng = np.random.default_rng(4)
    w, d = rng.standard_normal((5, 4)), rng.standard_normal((5, 4))
    a, b = 0.7, 1.9
    lhs = predict_extend(w, d, a + b) - w
    rhs = (predict_extend(w, d, a) - w) + (predict_extend(w, d, b) - w)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


# ---------------------------------------------------------------------------
# Bundle voorspellingen
# ---------------------------------------------------------------------------

def test_passthrough_prediction_recovers_planted_direction(linear_traj):
    traj, spec = linear_traj
    bundle = make_bundle()
    for j, shape in enumerate(SMALL_SHAPES):
        name = f"layers.{j:03d}.weight"
        f_g = top_singular_triplet(traj[-1].tensors[name] - traj[0].tensors[name])
        f_l = top_singular_triplet(traj[-1].tensors[name] - traj[-2].tensors[name])
        factor = predict_target_factor(bundle, f_g, f_l, shape)
        sigma, u, v = planted_direction(spec, j, shape)
        np.testing.assert_allclose(factor.u, u, atol=1e-6)
        np.testing.assert_allclose(factor.v, v, atol=1e-6)
        assert factor.sigma == pytest.approx(sigma, rel=1e-9)


def test_predict_target_factor_shape_check(linear_traj):
    traj, _ = linear_traj
    f = top_singular_triplet(traj[-1].tensors["layers.000.weight"] - traj[0].tensors["layers.000.weight"])
    with pytest.raises(ShapeMismatch):
        predict_target_factor(make_bundle(), f, f, (10, 10))


def test_negative_sigma_is_clamped(linear_traj):
    traj, _ = linear_traj
    ckpt, report = extrapolate_checkpoint(traj, make_bundle(sigma=-0.3), alpha=2.0)
    for name, w in ckpt.tensors.items():
        np.testing.assert_array_equal(w, traj[-1].tensors[name])
    assert all(r.predicted_sigma == 0.0 and r.delta_frobenius == 0.0 for r in report.records)


def test_zero_direction_prediction_raises(linear_traj):
    traj, _ = linear_traj
    with pytest.raises(ZeroNormPrediction):
        extrapolate_checkpoint(traj, make_bundle(zero_u=(12,)), alpha=1.0)


def test_missing_predictor_copies_parameter(linear_traj):
    traj, _ = linear_traj
    ckpt, report = extrapolate_checkpoint(traj, make_bundle(skip_u=(6,)), alpha=1.0)
    np.testing.assert_array_equal(ckpt.tensors["layers.002.weight"], traj[-1].tensors["layers.002.weight"])
    skipped = [r for r in report.records if r.skipped]
    assert [r.param_name for r in skipped] == ["layers.002.weight"]
    assert skipped[0].reason.startswith("missing_predictor")
    assert not np.array_equal(ckpt.tensors["layers.000.weight"], traj[-1].tensors["layers.000.weight"])


def test_degenerate_parameter_is_copied(linear_traj):
    traj, _ = linear_traj
    traj = [Checkpoint(c.step, {**c.tensors, "layers.009.weight": np.ones((3, 3))}, c.passthrough) for c in traj]
    ckpt, report = extrapolate_checkpoint(traj, make_bundle(), alpha=1.0)
    np.testing.assert_array_equal(ckpt.tensors["layers.009.weight"], np.ones((3, 3)))
    record = next(r for r in report.records if r.param_name == "layers.009.weight")
    assert record.skipped and record.reason == "degenerate_delta"


# ---------------------------------------------------------------------------
# extrapolate_checkpoint
# ---------------------------------------------------------------------------

def test_alpha_zero_reproduces_last_checkpoint(saturating_traj):
    traj, _ = saturating_traj
    ckpt, report = extrapolate_checkpoint(traj, make_bundle(), alpha=0.0)
    assert ckpt.step == 150 + 5 * 10
    assert report.step == ckpt.step and report.bundle_id == "test-bundle"
    for name, w in traj[-1].tensors.items():
        assert ckpt.tensors[name].tobytes() == w.tobytes()
    for name, b in traj[-1].passthrough.items():
        np.testing.assert_array_equal(ckpt.passthrough[name], b)


def test_extrapolation_is_affine_in_alpha(saturating_traj):
    traj, _ = saturating_traj
    bundle = make_bundle()
    one, _ = extrapolate_checkpoint(traj, bundle, alpha=1.0)
    two, _ = extrapolate_checkpoint(traj, bundle, alpha=2.0)
    for name, w in traj[-1].tensors.items():
        np.testing.assert_allclose(two.tensors[name] - w, 2.0 * (one.tensors[name] - w), atol=1e-12)


def test_passthrough_extrapolation_adds_global_delta(linear_traj):
    traj, _ = linear_traj
    ckpt, report = extrapolate_checkpoint(traj, make_bundle(), alpha=1.0)
    for name, w in traj[-1].tensors.items():
        np.testing.assert_allclose(ckpt.tensors[name], w + (w - traj[0].tensors[name]), atol=1e-8)
    for r in report.records:
        assert r.delta_frobenius == pytest.approx(r.predicted_sigma, rel=1e-12)


def test_predictions_are_reused_across_alphas(saturating_traj):
    traj, _ = saturating_traj
    bundle = make_bundle()
    predictions = predict_deltas(traj, bundle)
    for alpha in (0.5, 3.0):
        via_apply = apply_deltas(traj[-1], predictions, alpha)
        direct, _ = extrapolate_checkpoint(traj, bundle, alpha=alpha)
        for name in direct.tensors:
            np.testing.assert_array_equal(via_apply.tensors[name], direct.tensors[name])


def test_k_mismatch_warns_and_moves_step(linear_traj):
    traj, _ = linear_traj
    with pytest.warns(KMismatchWarning):
        ckpt, report = extrapolate_checkpoint(traj, make_bundle(k=5), alpha=1.0, k=3)
    assert ckpt.step == 180 and report.k == 3


def test_empty_and_short_trajectories(linear_traj):
    traj, _ = linear_traj
    with pytest.raises(EmptyTrajectory):
        extrapolate_checkpoint([], make_bundle(), alpha=1.0)
    with pytest.raises(InsufficientCheckpoints):
        predict_deltas(traj[:1], make_bundle())


def test_output_step_uses_median_stride():
    traj = [Checkpoint(s, {"w": np.zeros((1, 1))}) for s in (0, 10, 20, 40)]
    assert output_step(traj, 5) == 90


def test_report_jsonl(tmp_path, saturating_traj):
    traj, _ = saturating_traj
    _, report = extrapolate_checkpoint(traj, make_bundle(), alpha=1.5)
    write_report_jsonl(report, tmp_path / "report.jsonl")
    lines = (tmp_path / "report.jsonl").read_text().splitlines()
    assert len(lines) == len(SMALL_SHAPES)
    first = json.loads(lines[0])
    assert first["param_name"] == "layers.000.weight"
    assert first["alpha"] == 1.5 and first["k"] == 5 and first["step"] == 200
    assert first["bundle_id"] == "test-bundle"
    assert first["skipped"] is False


# ---------------------------------------------------------------------------
# Lineaire baselines
# ---------------------------------------------------------------------------

def test_linear_baseline_is_exact_on_linear_dynamics(linear_traj):
    traj, spec = linear_traj
    truth = analytic_ground_truth(spec, SMALL_SHAPES, 20)
    last = linear_extrapolate(traj, alpha=1.0, k=5, slope="last")
    glob = linear_extrapolate(traj, alpha=5 / 15, k=5, slope="global")
    assert last.step == 200
    for name, w in truth.tensors.items():
        np.testing.assert_allclose(last.tensors[name], w, atol=1e-9)
        np.testing.assert_allclose(glob.tensors[name], w, atol=1e-9)


def test_linear_baseline_overshoots_saturating_dynamics():
    traj, spec = memory_trajectory("saturating", timescale=4.0)
    truth = analytic_ground_truth(spec, SMALL_SHAPES, 20)
    lin = linear_extrapolate(traj, alpha=1.0, k=5)
    for j in range(len(SMALL_SHAPES)):
        name = f"layers.{j:03d}.weight"
        w_c = traj[-1].tensors[name]
        assert np.linalg.norm(lin.tensors[name] - w_c) > np.linalg.norm(truth.tensors[name] - w_c)


def test_rank1_variant_equals_full_on_rank1_deltas(saturating_traj):
    traj, _ = saturating_traj
    full = linear_extrapolate(traj, alpha=1.0, k=5, variant="full")
    rank1 = linear_extrapolate(traj, alpha=1.0, k=5, variant="rank1")
    for name in full.tensors:
        np.testing.assert_allclose(rank1.tensors[name], full.tensors[name], atol=1e-9)
    with pytest.raises(ValueError):
        linear_extrapolate(traj, alpha=1.0, k=5, variant="rank2")


def test_comparison_table(tmp_path):
    table = ComparisonTable()
    table.add("next", 1.0, {"b": 2.0, "a": 1.0})
    table.add("linear-full", 1.0, {"a": 3.0, "b": 4.0})
    assert table.errors("next", 1.0) == {"a": 1.0, "b": 2.0}
    assert table.errors("linear-full", 2.0) == {}
    write_comparison_csv(table, tmp_path / "compare.csv")
    df = pd.read_csv(tmp_path / "compare.csv")
    assert list(df.columns) == ["method", "alpha", "param", "frobenius_error"]
    assert df["param"].tolist() == ["a", "b", "a", "b"]
