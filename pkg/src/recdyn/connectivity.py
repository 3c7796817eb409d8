"""Recurrent weight sampling and the low-rank, sparse parameterisation.

A recurrent matrix is stored as trainable factors ``w1`` (h x r) and ``w2``
(r x h) together with a fixed 0/1 mask; the matrix seen by the cell is
``(w1 @ w2) * mask``. Full-rank matrices are not factorised: ``w1`` holds the
whole h x h matrix and ``w2`` is ``None``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .numcore import qr, svd

FULL = "full"

GATE_COUNTS = {"rnn": 1, "gru": 3, "cfc": 3, "lstm": 4}


class InitScheme(str, enum.Enum):
    ORTHOGONAL = "orthogonal"
    GLOROT_UNIFORM = "glorot_uniform"


def parse_rank(rank):
    """Normalise a rank given as int, ``"full"`` or ``None`` (full)."""
    if rank is None or (isinstance(rank, str) and rank.lower() == FULL):
        return None
    if isinstance(rank, str) and rank.strip().isdigit():
        rank = int(rank)
    if isinstance(rank, bool) or not isinstance(rank, (int, float, np.integer)) or int(rank) != rank:
        raise ValueError(f"invalid rank {rank!r}")
    return int(rank)


def rank_label(rank) -> str:
    rank = parse_rank(rank)
    return FULL if rank is None else str(rank)


def sample_orthogonal(n: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed orthogonal n x n matrix.

    QR of an iid standard Gaussian matrix; ``qr`` returns R with a
    non-negative diagonal, which is the sign correction that makes Q Haar.
    """
    if n < 1:
        raise ValueError("n must be positive")
    q, _ = qr(rng.standard_normal((n, n)))
    return q


def glorot_uniform(shape, rng: np.random.Generator) -> np.ndarray:
    fan_out, fan_in = shape
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def sample_glorot_uniform(n: int, rng: np.random.Generator) -> np.ndarray:
    """Square Glorot-uniform matrix: entries Unif(-sqrt(3/n), sqrt(3/n)), variance 1/n."""
    if n < 1:
        raise ValueError("n must be positive")
    return glorot_uniform((n, n), rng)


def sample_mask(n: int, s: float, rng: np.random.Generator) -> np.ndarray:
    """0/1 mask whose entries are independently 1 with probability 1 - s.

    Small matrices at high sparsity can come out with an all-zero row; that is
    kept as drawn.
    """
    if not 0.0 <= s < 1.0:
        raise ValueError(f"sparsity must lie in [0, 1), got {s}")
    return (rng.random((n, n)) >= s).astype(np.float64)


DEGENERATE_RTOL = 1e-9


def _degenerate_block(sig, r):
    """Index range [a, b) of singular values tied with sigma_r, or None if the cut is clean."""
    if r >= len(sig):
        return None
    tol = DEGENERATE_RTOL * max(sig[0], np.finfo(float).tiny)
    tied = np.abs(sig - sig[r - 1]) <= tol
    if not tied[r]:
        return None
    a = r - 1
    while a > 0 and tied[a - 1]:
        a -= 1
    b = r
    while b < len(sig) and tied[b]:
        b += 1
    return a, b


def spectral_truncate(w: np.ndarray, r: int, rng: np.random.Generator | None = None):
    """Split the best rank-r approximation of ``w`` into balanced factors.

    Returns ``(w1, w2)`` with ``w1 = U_r sqrt(S_r)`` and ``w2 = sqrt(S_r) V_r^T``.

    When sigma_r is tied with sigma_{r+1} (an orthogonal matrix has all singular
    values equal) the rank-r approximation is not unique. With ``rng`` given,
    the singular vectors of the tied block are rotated by a shared Haar
    orthogonal matrix before cutting, so the kept subspace is uniformly random
    within the block; without it, the solver's own basis is cut.
    """
    return spectral_truncations(w, [r], rng)[0]


def spectral_truncations(w: np.ndarray, ranks, rng: np.random.Generator | None = None):
    """``spectral_truncate`` at several ranks from a single SVD of ``w``.

    Each rank draws its own tied-block rotation, so results match separate
    calls up to the randomness of that rotation.
    """
    h = w.shape[0]
    if w.shape != (h, h):
        raise ValueError("spectral_truncate expects a square matrix")
    for r in ranks:
        if not 1 <= r <= h:
            raise ValueError(f"rank must lie in [1, {h}], got {r}")
    res = svd(w)
    out = []
    for r in ranks:
        u, sig, vt = res.U, res.singular_values, res.Vt
        block = _degenerate_block(sig, r) if rng is not None else None
        if block is not None:
            a, b = block
            rot = sample_orthogonal(b - a, rng)
            u = u.copy()
            vt = vt.copy()
            u[:, a:b] = u[:, a:b] @ rot
            vt[a:b] = rot.T @ vt[a:b]
        root = np.sqrt(sig[:r])
        out.append((u[:, :r] * root, root[:, None] * vt[:r]))
    return out


@dataclass
class LowRankSparseFactors:
    w1: np.ndarray
    w2: np.ndarray | None
    mask: np.ndarray
    rank: int | None
    sparsity: float

    @property
    def size(self) -> int:
        return self.mask.shape[0]

    @property
    def is_full(self) -> bool:
        return self.w2 is None

    def product(self) -> np.ndarray:
        return self.w1 if self.w2 is None else self.w1 @ self.w2

    def trainable(self) -> dict:
        if self.w2 is None:
            return {"w": self.w1}
        return {"w1": self.w1, "w2": self.w2}

    def copy(self) -> "LowRankSparseFactors":
        return LowRankSparseFactors(
            self.w1.copy(), None if self.w2 is None else self.w2.copy(), self.mask.copy(), self.rank, self.sparsity
        )


def sample_base(h: int, scheme, rng) -> np.ndarray:
    scheme = InitScheme(scheme)
    if scheme is InitScheme.ORTHOGONAL:
        return sample_orthogonal(h, rng)
    return sample_glorot_uniform(h, rng)


def build_factors(h: int, rank, s: float, scheme, rng: np.random.Generator) -> LowRankSparseFactors:
    """Sample one recurrent matrix in factored, masked form.

    The base matrix is drawn first, then truncated (unless full rank), then the
    mask is drawn; the mask is kept separate from the factors.
    """
    rank = parse_rank(rank)
    base = sample_base(h, scheme, rng)
    if rank is None:
        w1, w2 = base, None
    else:
        w1, w2 = spectral_truncate(base, rank, rng)
    mask = sample_mask(h, s, rng)
    return LowRankSparseFactors(w1, w2, mask, rank, float(s))


def effective_matrix(f: LowRankSparseFactors) -> np.ndarray:
    return f.product() * f.mask


def count_parameters(cell_kind: str, input_size: int, h: int, rank) -> int:
    """Trainable scalars in one cell: per gate input weights, bias and recurrent factors."""
    kind = cell_kind.lower()
    if kind not in GATE_COUNTS:
        raise ValueError(f"unknown cell kind {cell_kind!r}")
    rank = parse_rank(rank)
    recurrent = h * h if rank is None else 2 * h * rank
    return GATE_COUNTS[kind] * (input_size * h + h + recurrent)
