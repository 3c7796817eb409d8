import numpy as np
import pytest

from recdyn import numcore as nc
from recdyn.connectivity import (
    InitScheme,
    build_factors,
    count_parameters,
    effective_matrix,
    sample_glorot_uniform,
    sample_mask,
    sample_orthogonal,
    spectral_truncate,
)


def rng(*labels):
    return nc.make_rng(1234, *labels)


def test_orthogonal_n1():
    q = sample_orthogonal(1, rng("o1"))
    assert q.shape == (1, 1) and abs(q[0, 0]) == pytest.approx(1.0)


@pytest.mark.parametrize("n", [2, 7, 64])
def test_orthogonal_norm(n):
    q = sample_orthogonal(n, rng("o", n))
    np.testing.assert_allclose(q.T @ q, np.eye(n), atol=1e-10)
    assert nc.spectral_norm(q) == pytest.approx(1.0, abs=1e-10)


def test_orthogonal_512_unit_circle():
    q = sample_orthogonal(512, rng("o512"))
    ev = nc.eigenvalues(q)
    assert np.max(np.abs(np.abs(ev) - 1.0)) < 1e-8


def test_orthogonal_is_haar_first_entry_moments():
    # for Haar O(n), E[q11^2] = 1/n; the unsigned QR would bias the sign of q11
    vals = np.array([sample_orthogonal(4, rng("haar", i))[0, 0] for i in range(2000)])
    assert abs(np.mean(vals**2) - 0.25) < 0.02
    assert abs(np.mean(vals)) < 0.04


def test_glorot_uniform_512_moments():
    w = sample_glorot_uniform(512, rng("gu"))
    assert abs(w.mean()) < 0.002
    assert w.var() == pytest.approx(1 / 512, rel=0.05)
    assert np.abs(w).max() <= np.sqrt(3 / 512)


def test_glorot_uniform_n1_range():
    w = sample_glorot_uniform(1, rng("gu1"))
    assert -np.sqrt(3) <= w[0, 0] <= np.sqrt(3)


def test_mask_zero_sparsity():
    assert np.all(sample_mask(16, 0.0, rng("m0")) == 1.0)


def test_mask_binomial_64():
    m = sample_mask(64, 0.8, rng("m64"))
    zeros = int(np.sum(m == 0))
    assert abs(zeros - 4096 * 0.8) <= 4 * np.sqrt(4096 * 0.8 * 0.2)
    assert set(np.unique(m)) <= {0.0, 1.0}


def test_mask_binomial_512():
    m = sample_mask(512, 0.5, rng("m512"))
    assert abs(np.mean(m == 0) - 0.5) <= 0.004


def test_mask_rejects_bad_sparsity():
    with pytest.raises(ValueError):
        sample_mask(4, 1.0, rng("bad"))
    with pytest.raises(ValueError):
        sample_mask(4, -0.1, rng("bad"))


@pytest.mark.parametrize("r", [1, 3, 10, 16])
def test_truncate_orthogonal_keeps_norm(r):
    w = sample_orthogonal(16, rng("t", r))
    w1, w2 = spectral_truncate(w, r, rng("tt", r))
    assert nc.spectral_norm(w1 @ w2) == pytest.approx(1.0, abs=1e-9)


def test_truncate_full_rank_reconstructs():
    w = rng("full").standard_normal((12, 12))
    w1, w2 = spectral_truncate(w, 12)
    assert np.linalg.norm(w1 @ w2 - w) < 1e-9


def test_truncate_diagonal():
    w1, w2 = spectral_truncate(np.diag([3.0, 2.0, 1.0]), 2)
    np.testing.assert_allclose(w1 @ w2, np.diag([3.0, 2.0, 0.0]), atol=1e-12)


def test_truncate_balanced_factors_and_eckart_young():
    w = rng("bal").standard_normal((10, 10))
    sig = nc.svd(w).singular_values
    w1, w2 = spectral_truncate(w, 4)
    np.testing.assert_allclose(np.linalg.norm(w1, axis=0), np.sqrt(sig[:4]), rtol=1e-10)
    np.testing.assert_allclose(np.linalg.norm(w2, axis=1), np.sqrt(sig[:4]), rtol=1e-10)
    assert np.linalg.norm(w - w1 @ w2, 2) == pytest.approx(sig[4], rel=1e-8)


def test_truncate_tied_block_rotation_is_still_optimal():
    w = sample_orthogonal(12, rng("tie"))
    w1, w2 = spectral_truncate(w, 5, rng("tie-rot"))
    prod = w1 @ w2
    s = nc.svd(prod).singular_values
    np.testing.assert_allclose(s[:5], 1.0, atol=1e-10)
    assert np.all(s[5:] < 1e-10)
    # a rank-5 partial isometry aligned with w: prod = w P for an orthogonal projector P
    p = w.T @ prod
    np.testing.assert_allclose(p, p.T, atol=1e-10)
    np.testing.assert_allclose(p @ p, p, atol=1e-10)


def test_truncate_rejects_bad_rank():
    with pytest.raises(ValueError):
        spectral_truncate(np.eye(3), 4)
    with pytest.raises(ValueError):
        spectral_truncate(np.eye(3), 0)


def test_build_full_orthogonal():
    f = build_factors(64, "full", 0.0, InitScheme.ORTHOGONAL, rng("bf"))
    assert f.w2 is None and f.rank is None
    assert nc.spectral_norm(effective_matrix(f)) == pytest.approx(1.0, abs=1e-10)


def test_build_rank16_orthogonal_radius():
    radii = [
        nc.spectral_radius(effective_matrix(build_factors(64, 16, 0.0, "orthogonal", rng("r16", i))))
        for i in range(10)
    ]
    assert np.mean(radii) == pytest.approx(0.5, abs=0.06)


def test_build_glorot_sparse_512_radius():
    f = build_factors(512, None, 0.8, "glorot_uniform", rng("gs"))
    assert nc.spectral_radius(effective_matrix(f)) == pytest.approx(np.sqrt(0.2), abs=0.05)


def test_mask_is_stored_not_baked():
    f = build_factors(8, 3, 0.5, "orthogonal", rng("store"))
    assert f.w1.shape == (8, 3) and f.w2.shape == (3, 8)
    # the raw product is dense even where the mask is zero
    assert np.all(f.product()[f.mask == 0] != 0)


def test_effective_matrix_cases():
    g = rng("eff")
    f = build_factors(6, 2, 0.0, "glorot_uniform", g)
    np.testing.assert_array_equal(effective_matrix(f), f.w1 @ f.w2)
    f.mask = np.eye(6)
    eff = effective_matrix(f)
    assert np.all(eff[~np.eye(6, dtype=bool)] == 0.0)
    f = build_factors(5, 2, 0.4, "orthogonal", g)
    brute = np.zeros((5, 5))
    for i in range(5):
        for j in range(5):
            brute[i, j] = sum(f.w1[i, k] * f.w2[k, j] for k in range(2)) * f.mask[i, j]
    np.testing.assert_allclose(effective_matrix(f), brute, atol=1e-15)


def test_deterministic_given_seed():
    a = build_factors(16, 4, 0.3, "orthogonal", rng("det"))
    b = build_factors(16, 4, 0.3, "orthogonal", rng("det"))
    assert np.array_equal(a.w1, b.w1) and np.array_equal(a.w2, b.w2) and np.array_equal(a.mask, b.mask)


@pytest.mark.parametrize(
    "kind,expected",
    [("rnn", 20544), ("gru", 61632), ("cfc", 61632), ("lstm", 82176)],
)
def test_parameter_counts_full(kind, expected):
    assert count_parameters(kind, 256, 64, "full") == expected


def test_parameter_counts_low_rank():
    assert count_parameters("rnn", 256, 64, 16) == 256 * 64 + 64 + 2 * 64 * 16
    # rank 16 matches the recurrent budget of sparsity 0.5 at h=64
    assert 2 * 64 * 16 == 0.5 * 64 * 64
    with pytest.raises(ValueError):
        count_parameters("cnn", 256, 64, None)
