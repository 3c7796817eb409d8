"""Dense float64 linear algebra on top of the compiled kernels."""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .. import _accel
from . import _kernels_jit, _kernels_np

SVD_TOL = 1e-12
SVD_MAX_SWEEPS = 100
EIG_TOL = 1e-12


class ConvergenceError(RuntimeError):
    """An iterative kernel hit its iteration cap."""

    def __init__(self, message, iterations, residual=float("nan")):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


class SvdResult(NamedTuple):
    U: np.ndarray
    singular_values: np.ndarray
    Vt: np.ndarray


def _kernels(backend=None):
    if backend is None:
        backend = _accel.backend_name()
    if backend == "numba":
        return _kernels_jit
    if backend == "numpy":
        return _kernels_np
    raise ValueError(f"unknown backend {backend!r}")


def as_matrix(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"expected a 2-d matrix, got shape {a.shape}")
    if a.size and not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    return a


def _complete_columns(u, valid):
    """Fill the columns of ``u`` flagged invalid with an orthonormal completion."""
    m, k = u.shape
    basis = [u[:, j] for j in range(k) if valid[j]]
    out = u.copy()
    e = 0
    for j in range(k):
        if valid[j]:
            continue
        while True:
            cand = np.zeros(m)
            cand[e % m] = 1.0
            e += 1
            for b in basis:
                cand -= (b @ cand) * b
            for b in basis:  # second pass for orthogonality to working precision
                cand -= (b @ cand) * b
            nrm = np.linalg.norm(cand)
            if nrm > 1e-8:
                break
        cand /= nrm
        basis.append(cand)
        out[:, j] = cand
    return out


def _pow2_scale(a):
    """Exact power-of-two factor bringing max|a| near 1 (avoids under/overflow in squares)."""
    peak = float(np.abs(a).max()) if a.size else 0.0
    if peak == 0.0:
        return 1.0
    return float(2.0 ** -np.frexp(peak)[1])


def _jacobi(a, want_vectors, backend):
    m, n = a.shape
    transpose = m < n
    scale = _pow2_scale(a)
    work = np.ascontiguousarray(a if transpose else a.T) * scale  # rows = columns of the tall matrix
    vt, sweeps, converged = _kernels(backend).jacobi_svd(work, want_vectors, SVD_TOL, SVD_MAX_SWEEPS)
    if not converged:
        raise ConvergenceError(f"Jacobi SVD did not converge after {sweeps} sweeps", sweeps)
    sig = np.sqrt(np.einsum("ij,ij->i", work, work)) / scale
    return work / scale, sig, vt, transpose


def singular_values(a, backend=None) -> np.ndarray:
    """Singular values in descending order."""
    a = as_matrix(a)
    if a.size == 0:
        raise ValueError("empty matrix")
    _, sig, _, _ = _jacobi(a, False, backend)
    return np.sort(sig)[::-1]


def svd(a, backend=None) -> SvdResult:
    """Thin SVD by one-sided Jacobi.

    Columns of ``U`` are sign-fixed so that each one's largest-magnitude entry
    is positive; the matching row of ``Vt`` is flipped along with it.
    """
    a = as_matrix(a)
    if a.size == 0:
        raise ValueError("empty matrix")
    work, sig, vt, transpose = _jacobi(a, True, backend)
    order = np.argsort(-sig, kind="stable")
    sig = sig[order]
    left = work[order].T  # tall-side vectors scaled by sigma
    right = vt[order]  # rows: small-side vectors
    scale = sig[0] if sig[0] > 0 else 1.0
    valid = sig > 1e-13 * scale
    left = left / np.where(valid, sig, 1.0) * valid
    left = _complete_columns(left, valid)
    if transpose:
        u, vt_out = right.T, left.T
    else:
        u, vt_out = left, right
    idx = np.argmax(np.abs(u), axis=0)
    signs = np.where(u[idx, np.arange(u.shape[1])] < 0, -1.0, 1.0)
    u = u * signs
    vt_out = vt_out * signs[:, None]
    return SvdResult(np.ascontiguousarray(u), sig, np.ascontiguousarray(vt_out))


def truncate(a, r: int, backend=None) -> np.ndarray:
    """Best rank-``r`` approximation of ``a``."""
    res = svd(a, backend)
    return (res.U[:, :r] * res.singular_values[:r]) @ res.Vt[:r]


def qr(a, backend=None):
    """Reduced Householder QR with a non-negative diagonal in R."""
    a = as_matrix(a)
    q, r = _kernels(backend).householder_qr(a.copy())
    d = np.where(np.diag(r) < 0, -1.0, 1.0)
    return q * d, r * d[:, None]


def hessenberg(a, backend=None) -> np.ndarray:
    a = as_matrix(a)
    if a.shape[0] != a.shape[1]:
        raise ValueError("hessenberg needs a square matrix")
    return _kernels(backend).hessenberg(a.copy())


def _sort_spectrum(vals):
    mags = np.abs(vals)
    order = np.lexsort((-vals.imag, -vals.real, -mags))
    return vals[order]


def eigenvalues(a, backend=None) -> np.ndarray:
    """Full complex spectrum, sorted by descending magnitude.

    Ties are broken by descending real part, then descending imaginary part.
    """
    a = as_matrix(a)
    n, n2 = a.shape
    if n != n2:
        raise ValueError(f"eigenvalues need a square matrix, got {a.shape}")
    if n == 0:
        raise ValueError("empty matrix")
    kern = _kernels(backend)
    scale = _pow2_scale(a)
    h = kern.hessenberg(a * scale)
    wr, wi, iters, ok = kern.hessenberg_eigenvalues(h.copy(), EIG_TOL, 100 * n)
    if not ok:
        sub = np.abs(np.diag(h, -1)).max() / scale if n > 1 else 0.0
        raise ConvergenceError(f"Francis QR did not converge after {iters} iterations", iters, sub)
    return _sort_spectrum((wr + 1j * wi) / scale)


def spectral_radius(a, backend=None) -> float:
    return float(np.abs(eigenvalues(a, backend)[0]))


def spectral_norm(a, backend=None) -> float:
    return float(singular_values(a, backend)[0])


def frobenius_norm(a) -> float:
    a = np.asarray(a, dtype=np.float64)
    return float(np.sqrt(np.sum(a * a)))


def pca_explained_top_k(data, k: int, backend=None) -> float:
    """Fraction of total variance carried by the top ``k`` principal components.

    Returns 1.0 when the centred data has zero total variance.
    """
    data = as_matrix(data)
    if k < 1:
        raise ValueError("k must be at least 1")
    if data.shape[0] < 2:
        raise ValueError("need at least two samples")
    if k > data.shape[1]:
        raise ValueError(f"k={k} exceeds feature dimension {data.shape[1]}")
    centred = data - data.mean(axis=0)
    total = float(np.sum(centred * centred))
    if total == 0.0:
        return 1.0
    # the feature covariance shares its nonzero spectrum with the centred data
    cov = centred.T @ centred
    sig2 = singular_values(cov, backend)  # symmetric PSD: singular values are the eigenvalues
    return float(min(1.0, np.sum(sig2[:k]) / np.sum(sig2)))
