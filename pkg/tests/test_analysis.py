import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from recdyn import analysis, cells, training
from recdyn.connectivity import LowRankSparseFactors
from recdyn.numcore import make_rng, spectral_norm, spectral_radius
from recdyn.training import TrajectoryLog


def rnn_cell(w, n_in=2, inp=None, bias=None):
    h = w.shape[0]
    f = LowRankSparseFactors(np.array(w, dtype=float), None, np.ones((h, h)), None, 0.0)
    inp = np.zeros((1, h, n_in)) if inp is None else inp
    bias = np.zeros((1, h)) if bias is None else bias
    return cells.CellParams("rnn", [f], inp, bias)


def test_fresh_orthogonal_full_report():
    cell = cells.init_cell("gru", 8, 64, None, 0.0, "orthogonal", make_rng(0, "a"))
    rep = analysis.spectral_report(cell)
    assert rep.spectral_radius == pytest.approx(1.0, abs=1e-8)
    assert rep.spectral_norm == pytest.approx(1.0, abs=1e-8)
    assert rep.gate_averaged
    assert rep.normalized_singulars[0] == 1.0
    assert np.all(np.diff(rep.normalized_singulars) <= 1e-15)
    assert np.all(np.diff(rep.eigen_magnitudes) <= 1e-15)


def test_rank16_orthogonal_radius_over_seeds():
    radii = [
        analysis.spectral_report(cells.init_cell("rnn", 4, 64, 16, 0.0, "orthogonal", make_rng(s, "r16"))).spectral_radius
        for s in range(10)
    ]
    assert np.mean(radii) == pytest.approx(0.5, abs=0.06)


def test_single_gate_matches_direct_computation():
    cell = cells.init_cell("rnn", 4, 16, 5, 0.3, "glorot_uniform", make_rng(0, "single"))
    rep = analysis.spectral_report(cell)
    w = cell.effective()[0]
    assert not rep.gate_averaged
    assert rep.spectral_radius == spectral_radius(w)
    assert rep.spectral_norm == spectral_norm(w)
    np.testing.assert_allclose(rep.normalized_singulars, np.linalg.svd(w, compute_uv=False) / spectral_norm(w), atol=1e-12)


def test_input_report_on_glorot_input():
    cell = cells.init_cell("rnn", 256, 64, None, 0.0, "orthogonal", make_rng(0, "inp"))
    rep = analysis.input_spectral_report(cell)
    assert rep.spectral_norm == pytest.approx(np.linalg.norm(cell.inp[0], 2), rel=1e-10)
    assert math.isnan(rep.spectral_radius) and rep.eigen_magnitudes.size == 0
    assert len(rep.normalized_singulars) == 64


def test_gradient_decay_single_step():
    cell = rnn_cell(0.5 * np.eye(3))
    curve = analysis.gradient_decay(cell, np.zeros((1, 2)))
    assert list(curve.values) == [0.0]


def test_gradient_decay_linear_slope():
    alpha = 0.5
    cell = rnn_cell(alpha * np.eye(4))
    curve = analysis.gradient_decay(cell, np.zeros((30, 2)))
    assert curve.values[0] == 0.0
    np.testing.assert_allclose(np.diff(curve.values), math.log(alpha), atol=1e-12)


def test_gradient_decay_underflow_truncates():
    cell = rnn_cell(1e-160 * np.eye(3))
    curve = analysis.gradient_decay(cell, np.zeros((10, 2)))
    assert curve.truncated_at == 2 and len(curve.values) == 1


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["rnn", "lstm", "gru", "cfc"]), st.sampled_from([None, 2, 6]))
def test_gradient_decay_submultiplicative(seed, kind, rank):
    rng = make_rng(seed, "submult")
    cell = cells.init_cell(kind, 3, 6, rank, 0.2, "glorot_uniform", rng)
    cell.bias[:] = rng.normal(size=cell.bias.shape)
    curve = analysis.gradient_decay(cell, rng.normal(size=(12, 3)))
    n = len(curve.values)
    assert curve.values[0] == 0.0
    for t in range(n - 1):
        assert curve.log_norms[t + 1] <= curve.log_norms[t] + curve.step_log_norms[t] + 1e-12


def test_contractive_rnn_bound():
    rng = make_rng(1, "contract")
    w = rng.normal(size=(8, 8))
    w *= 0.9 / np.linalg.norm(w, 2)
    cell = rnn_cell(w, 3, rng.normal(size=(1, 8, 3)))
    curve = analysis.gradient_decay(cell, rng.normal(size=(40, 3)), norm="spectral")
    norm = spectral_norm(w)
    for t, v in enumerate(curve.log_norms, start=1):
        assert v <= t * math.log(norm) + 1e-12


def synthetic_log(h_rows, rec=None, inp=None, gates=None, kind="rnn"):
    h_rows = np.asarray(h_rows, dtype=float)
    T, n = h_rows.shape
    rec = h_rows[:, None, :] if rec is None else rec
    inp = h_rows[:, None, :] if inp is None else inp
    gates = np.zeros((T, 1, n)) if gates is None else gates
    return TrajectoryLog(h_rows, rec, inp, gates, kind)


def test_constant_hidden_state_is_fully_explained():
    rep = analysis.effective_dimensionality(synthetic_log(np.ones((20, 8))))
    assert rep.full_ev5 == 1.0


def test_known_covariances():
    rng = np.random.default_rng(0)
    z = rng.normal(size=(20000, 10)) * np.sqrt([4, 1, 1, 1, 1, 0, 0, 0, 0, 0])
    assert analysis.effective_dimensionality(synthetic_log(z)).full_ev5 == pytest.approx(1.0, abs=1e-12)
    q, _ = np.linalg.qr(rng.normal(size=(10, 6)))
    six = rng.normal(size=(20000, 6)) @ q.T
    assert analysis.effective_dimensionality(synthetic_log(six)).full_ev5 == pytest.approx(5 / 6, abs=0.02)


@pytest.mark.parametrize("kind", ["rnn", "lstm", "gru", "cfc"])
def test_rank_one_recurrent_drive_is_one_dimensional(kind):
    rng = make_rng(3, "rank1", kind)
    m = training.init_model(kind, 6, 2, 1, 0.0, "orthogonal", rng, 16, 32)
    _, log = training.forward_sequence(m, rng.normal(size=(4, 30, 6)))
    rep = analysis.effective_dimensionality(log)
    assert rep.recurrent_ev5 == pytest.approx(1.0, abs=1e-9)
    assert 0.0 <= rep.input_ev5 <= 1.0 and 0.0 <= rep.full_ev5 <= 1.0


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_dimensionality_is_order_invariant(seed):
    rng = np.random.default_rng(seed)
    h = rng.normal(size=(40, 7)) @ rng.normal(size=(7, 7))
    rec = rng.normal(size=(40, 2, 7))
    log = synthetic_log(h, rec, rec[:, ::-1])
    perm = rng.permutation(40)
    shuffled = synthetic_log(h[perm], rec[perm], rec[perm, ::-1])
    a = analysis.effective_dimensionality(log)
    b = analysis.effective_dimensionality(shuffled)
    assert a.full_ev5 == pytest.approx(b.full_ev5, abs=1e-12)
    assert a.recurrent_ev5 == pytest.approx(b.recurrent_ev5, abs=1e-12)
    assert a.input_ev5 == pytest.approx(b.input_ev5, abs=1e-12)


def cfc_gate_log(values):
    g = np.zeros((len(values), 3, 1))
    g[:, 0, 0] = values
    return TrajectoryLog(np.zeros((len(values), 1)), g, g, g, "cfc")


def test_time_constant_deviation():
    cell = cells.init_cell("cfc", 3, 4, None, 0.0, "orthogonal", make_rng(0, "tc"))
    assert analysis.time_constant_deviation(cell, cfc_gate_log([0.5] * 6)) == 0.0
    assert analysis.time_constant_deviation(cell, cfc_gate_log([0.0, 1.0, 0.5])) == pytest.approx(1 / 3)
    m = training.init_model("cfc", 2, 1, None, 0.0, "orthogonal", make_rng(0, "m"), 4, 8)
    m.cell.bias[0] = 50.0
    _, log = training.forward_sequence(m, np.ones((5, 2)))
    assert analysis.time_constant_deviation(m, log) == pytest.approx(0.5, abs=1e-12)
    rnn = cells.init_cell("rnn", 3, 4, None, 0.0, "orthogonal", make_rng(0, "r"))
    with pytest.raises(ValueError):
        analysis.time_constant_deviation(rnn, cfc_gate_log([0.5]))


def test_task_dimension():
    cell = cells.init_cell("lstm", 3, 5, 2, 0.4, "orthogonal", make_rng(0, "td"))
    same = analysis.task_dimension(cell, cell.copy())
    assert same.delta_total == 0.0 and same.w0_total > 0
    edited = cell.copy()
    edited.recurrent[2].w1[0, 0] += 1.0
    td = analysis.task_dimension(cell, edited)
    direct = np.linalg.norm(edited.effective()[2] - cell.effective()[2])
    assert td.per_gate["o"][1] == pytest.approx(direct, rel=1e-14)
    assert td.per_gate["i"][1] == 0.0
