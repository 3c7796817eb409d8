import numpy as np
import pytest

from recdyn import cells
from recdyn.cells import CellParams, CellState
from recdyn.connectivity import LowRankSparseFactors
from recdyn.errors import NumericalFailure
from recdyn.numcore import make_rng

KINDS = ["rnn", "lstm", "gru", "cfc"]
FD_STEP = 1e-5


def rel_err(a, b):
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-8))


def random_cell(kind, h, n_in, rng):
    """A cell with randomised rank, sparsity, scheme and non-zero biases."""
    rank = [None, 1, h // 2, h][rng.integers(4)]
    s = [0.0, 0.3, 0.6][rng.integers(3)]
    scheme = ["orthogonal", "glorot_uniform"][rng.integers(2)]
    p = cells.init_cell(kind, n_in, h, rank, s, scheme, rng)
    gain = rng.uniform(0.5, 1.5)
    for f in p.recurrent:
        f.w1 *= gain
    p.bias[:] = rng.normal(0, 0.5, p.bias.shape)
    return p


def random_state(p, rng, batch=None):
    shape = (p.hidden_size,) if batch is None else (batch, p.hidden_size)
    c = rng.normal(0, 1, shape) if p.kind == "lstm" else None
    return CellState(rng.uniform(-0.9, 0.9, shape), c)


def fd_jacobian(p, state, x):
    n = p.hidden_size
    J = np.zeros((n, n))
    for j in range(n):
        hp = state.h.copy()
        hm = state.h.copy()
        hp[j] += FD_STEP
        hm[j] -= FD_STEP
        up, _ = cells.step(p, CellState(hp, state.c), x)
        dn, _ = cells.step(p, CellState(hm, state.c), x)
        J[:, j] = (up.h - dn.h) / (2 * FD_STEP)
    return J


def constant_cell(kind, h, n_in, value=0.0, bias=0.0):
    g = len(cells.GATES[kind])
    rec = [LowRankSparseFactors(np.full((h, h), value), None, np.ones((h, h)), None, 0.0) for _ in range(g)]
    return CellParams(kind, rec, np.full((g, h, n_in), value), np.full((g, h), bias))


def test_rnn_zero_weights_gives_tanh_bias():
    p = constant_cell("rnn", 3, 2)
    p.bias[0] = [0.1, -2.0, 0.5]
    new, _ = cells.step(p, cells.zero_state(p), np.array([5.0, -3.0]))
    np.testing.assert_allclose(new.h, np.tanh(p.bias[0]))


def test_cfc_zero_forget_preactivation_is_even_blend():
    rng = make_rng(0, "cfc0")
    p = random_cell("cfc", 5, 3, rng)
    p.recurrent[0].w1[:] = 0.0
    if p.recurrent[0].w2 is not None:
        p.recurrent[0].w2[:] = 0.0
    p.inp[0] = 0.0
    p.bias[0] = 0.0
    state = random_state(p, rng)
    x = rng.normal(size=3)
    new, cache = cells.step(p, state, x)
    np.testing.assert_allclose(new.h, 0.5 * cache.act[1] + 0.5 * cache.act[2], atol=1e-15)


def test_cell_equations_by_hand():
    rng = make_rng(0, "hand")
    x = rng.normal(size=3)
    for kind in KINDS:
        p = random_cell(kind, 4, 3, rng)
        st = random_state(p, rng)
        W = p.effective()
        y = [p.inp[k] @ x + W[k] @ st.h + p.bias[k] for k in range(len(p.gates))]
        sg = lambda v: 1 / (1 + np.exp(-v))  # noqa: E731
        new, _ = cells.step(p, st, x)
        if kind == "rnn":
            want = np.tanh(y[0])
        elif kind == "lstm":
            c = sg(y[1]) * st.c + sg(y[0]) * np.tanh(y[3])
            want = sg(y[2]) * np.tanh(c)
            np.testing.assert_allclose(new.c, c, atol=1e-14)
        elif kind == "gru":
            z, r = sg(y[0]), sg(y[1])
            n = np.tanh(p.inp[2] @ x + r * (W[2] @ st.h) + p.bias[2])
            want = (1 - z) * n + z * st.h
        else:
            want = sg(y[0]) * np.tanh(y[1]) + (1 - sg(y[0])) * np.tanh(y[2])
        np.testing.assert_allclose(new.h, want, atol=1e-14, err_msg=kind)


def test_rnn_jacobian_formula_and_zero():
    rng = make_rng(0, "rnnj")
    p = random_cell("rnn", 6, 3, rng)
    st = random_state(p, rng)
    x = rng.normal(size=3)
    new, _ = cells.step(p, st, x)
    J = cells.hidden_jacobian(p, st, x)
    np.testing.assert_allclose(J, np.diag(1 - new.h**2) @ p.effective()[0], atol=1e-14)
    p0 = constant_cell("rnn", 6, 3)
    assert np.all(cells.hidden_jacobian(p0, st, x) == 0.0)


@pytest.mark.parametrize("kind", KINDS)
def test_hidden_jacobian_matches_finite_differences(kind):
    rng = make_rng(7, "jac", kind)
    worst = 0.0
    for _ in range(200):
        p = random_cell(kind, 8, 4, rng)
        st = random_state(p, rng)
        x = rng.normal(size=4)
        worst = max(worst, rel_err(cells.hidden_jacobian(p, st, x), fd_jacobian(p, st, x)))
    assert worst <= 1e-4


def test_lstm_state_jacobian_matches_finite_differences():
    rng = make_rng(7, "lstm-full")
    for _ in range(20):
        p = random_cell("lstm", 5, 3, rng)
        st = random_state(p, rng)
        x = rng.normal(size=3)
        z0 = np.concatenate([st.h, st.c])
        J = np.zeros((10, 10))
        for j in range(10):
            zp, zm = z0.copy(), z0.copy()
            zp[j] += FD_STEP
            zm[j] -= FD_STEP
            up, _ = cells.step(p, CellState(zp[:5], zp[5:]), x)
            dn, _ = cells.step(p, CellState(zm[:5], zm[5:]), x)
            J[:, j] = (np.concatenate([up.h, up.c]) - np.concatenate([dn.h, dn.c])) / (2 * FD_STEP)
        assert rel_err(cells.lstm_state_jacobian(p, st, x), J) <= 1e-4
        # the upper-left block is the c-fixed hidden Jacobian
        np.testing.assert_allclose(cells.lstm_state_jacobian(p, st, x)[:5, :5], cells.hidden_jacobian(p, st, x))


def loss_of(p, xs, weights):
    hs, _ = cells.run(p, xs)
    return 0.5 * float(np.sum(weights * hs**2))


@pytest.mark.parametrize("kind", KINDS)
def test_sequence_gradients_match_finite_differences(kind):
    rng = make_rng(3, "grad", kind)
    for trial in range(3):
        p = random_cell(kind, 6, 3, rng)
        xs = rng.normal(size=(2, 5, 3))
        weights = rng.uniform(0.5, 1.5, size=(2, 5, 6))
        hs, caches = cells.run(p, xs)
        grads, grad_x = cells.run_backward(p, caches, weights * hs)
        arrays = p.arrays()
        assert set(grads) == set(arrays)
        for name, arr in arrays.items():
            fd = np.zeros_like(arr)
            for idx in np.ndindex(arr.shape):
                old = arr[idx]
                arr[idx] = old + FD_STEP
                up = loss_of(p, xs, weights)
                arr[idx] = old - FD_STEP
                dn = loss_of(p, xs, weights)
                arr[idx] = old
                fd[idx] = (up - dn) / (2 * FD_STEP)
            assert rel_err(grads[name], fd) <= 1e-4, (kind, name, trial)
        fdx = np.zeros_like(xs)
        for idx in np.ndindex(xs.shape):
            xp, xm = xs.copy(), xs.copy()
            xp[idx] += FD_STEP
            xm[idx] -= FD_STEP
            fdx[idx] = (loss_of(p, xp, weights) - loss_of(p, xm, weights)) / (2 * FD_STEP)
        assert rel_err(grad_x, fdx) <= 1e-4


@pytest.mark.parametrize("kind", KINDS)
def test_backward_step_matches_jacobian_transpose(kind):
    rng = make_rng(5, "bstep", kind)
    p = random_cell(kind, 7, 3, rng)
    st = random_state(p, rng)
    x = rng.normal(size=3)
    _, cache = cells.step(p, st, x)
    g = rng.normal(size=7)
    gin, grads, gx = cells.backward_step(p, cache, g)
    np.testing.assert_allclose(gin.h, cells.hidden_jacobian(p, st, x).T @ g, atol=1e-12)
    zin, zgrads, zx = cells.backward_step(p, cache, np.zeros(7))
    assert np.all(zin.h == 0) and np.all(zx == 0)
    assert all(np.all(v == 0) for v in zgrads.values())


def test_backward_step_shape_errors():
    rng = make_rng(5, "shape")
    p = random_cell("gru", 4, 2, rng)
    _, cache = cells.step(p, random_state(p, rng), np.ones(2))
    with pytest.raises(ValueError):
        cells.backward_step(p, cache, np.ones(5))


def test_masked_factor_gradient_rule_and_zero_mask_effect():
    rng = make_rng(9, "mask")
    p = cells.init_cell("rnn", 3, 6, 2, 0.5, "glorot_uniform", rng)
    f = p.recurrent[0]
    g_eff = rng.normal(size=(6, 6))
    fg = cells.factor_gradients(f, g_eff)
    np.testing.assert_allclose(fg["w1"], (g_eff * f.mask) @ f.w2.T)
    np.testing.assert_allclose(fg["w2"], f.w1.T @ (g_eff * f.mask))
    # perturbing the product where the mask is zero changes nothing downstream
    i, j = np.argwhere(f.mask == 0)[0]
    xs = rng.normal(size=(4, 3))
    base, _ = cells.run(p, xs)
    weff = p.effective()
    bumped = f.product()
    bumped[i, j] += 1.0
    assert (bumped * f.mask)[i, j] == 0.0
    np.testing.assert_array_equal(weff[0], (f.product() * f.mask))
    again, _ = cells.run(p, xs, weff=(bumped * f.mask)[None])
    np.testing.assert_array_equal(base, again)


def test_cfc_large_forget_bias_reduces_to_rnn():
    rng = make_rng(11, "degenerate")
    p = cells.init_cell("cfc", 3, 8, None, 0.0, "orthogonal", rng)
    p.inp *= 0.3
    p.bias[0] += 20.0
    rnn = CellParams("rnn", [p.recurrent[1].copy()], p.inp[1:2].copy(), p.bias[1:2].copy())
    xs = rng.normal(size=(50, 3))
    hc, _ = cells.run(p, xs)
    hr, _ = cells.run(rnn, xs)
    assert np.max(np.abs(hc - hr)) < 1e-6


def test_step_is_bit_reproducible():
    rng = make_rng(1, "repro")
    p = random_cell("lstm", 5, 2, rng)
    st = random_state(p, rng)
    x = rng.normal(size=2)
    a, _ = cells.step(p, st, x)
    b, _ = cells.step(p, st, x)
    assert np.array_equal(a.h, b.h) and np.array_equal(a.c, b.c)


def test_batched_step_matches_single():
    rng = make_rng(1, "batch")
    for kind in KINDS:
        p = random_cell(kind, 5, 2, rng)
        st = random_state(p, rng, batch=3)
        xs = rng.normal(size=(3, 2))
        new, _ = cells.step(p, st, xs)
        for b in range(3):
            one, _ = cells.step(p, CellState(st.h[b], None if st.c is None else st.c[b]), xs[b])
            np.testing.assert_allclose(new.h[b], one.h, atol=1e-15)


def test_non_finite_output_names_gate():
    p = constant_cell("rnn", 2, 1)
    p.recurrent[0].w1[:] = np.nan
    with pytest.raises(NumericalFailure) as err:
        cells.step(p, cells.zero_state(p), np.ones(1))
    assert err.value.gate == "h"


def test_non_finite_input_rejected():
    p = constant_cell("rnn", 2, 1)
    with pytest.raises(ValueError):
        cells.step(p, cells.zero_state(p), np.array([np.inf]))


def test_rank_and_sparsity_must_match_across_gates():
    rng = make_rng(2, "mix")
    a = cells.init_cell("gru", 2, 4, 2, 0.0, "orthogonal", rng)
    b = cells.init_cell("gru", 2, 4, 3, 0.0, "orthogonal", rng)
    with pytest.raises(ValueError):
        CellParams("gru", [a.recurrent[0], b.recurrent[1], a.recurrent[2]], a.inp, a.bias)


def test_lstm_forget_bias_default():
    p = cells.init_cell("lstm", 2, 4, None, 0.0, "orthogonal", make_rng(0, "fb"))
    assert np.all(p.bias[1] == 1.0) and np.all(p.bias[[0, 2, 3]] == 0.0)
