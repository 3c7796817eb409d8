"""Post-hoc measurements of trained or freshly initialised recurrent models."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import cells
from .numcore import eigenvalues, frobenius_norm, pca_explained_top_k, singular_values, spectral_norm

UNDERFLOW = 1e-300


@dataclass
class SpectralReport:
    spectral_radius: float
    spectral_norm: float
    normalized_singulars: np.ndarray
    eigen_magnitudes: np.ndarray
    gate_averaged: bool


def _cell_of(obj) -> cells.CellParams:
    return obj if isinstance(obj, cells.CellParams) else obj.cell


def _matrix_stats(w):
    sig = singular_values(w)
    top = sig[0]
    # an all-zero matrix has no direction to normalise by; report [1, 0, ...]
    norm_sig = sig / top if top > 0 else np.eye(1, len(sig))[0]
    if w.shape[0] == w.shape[1]:
        mags = np.abs(eigenvalues(w))
        radius = float(mags[0])
    else:
        mags = np.zeros(0)
        radius = math.nan
    return radius, float(top), norm_sig, mags


def _average(stats):
    radius = float(np.mean([s[0] for s in stats]))
    norm = float(np.mean([s[1] for s in stats]))
    # pointwise mean of sorted lists keeps them sorted
    sing = np.mean([s[2] for s in stats], axis=0)
    mags = np.mean([s[3] for s in stats], axis=0)
    return SpectralReport(radius, norm, sing, mags, len(stats) > 1)


def spectral_report(cell) -> SpectralReport:
    """Radius, norm and sorted spectra of each gate's effective recurrent matrix, averaged over gates."""
    cell = _cell_of(cell)
    return _average([_matrix_stats(w) for w in cell.effective()])


def input_spectral_report(cell) -> SpectralReport:
    """The same statistics on the input matrices; radius is NaN when they are not square."""
    cell = _cell_of(cell)
    return _average([_matrix_stats(w) for w in cell.inp])


@dataclass
class GradientDecayCurve:
    """log |G_t| for t = 1..T, translated so that ``values[0] == 0``.

    ``log_norms`` are the untranslated values and ``step_log_norms[t]`` is
    log |J| of the factor that extends G_t to G_{t+1}. ``truncated_at`` is the
    first t (1-based) whose norm fell below 1e-300, if any.
    """

    values: np.ndarray
    log_norms: np.ndarray
    step_log_norms: np.ndarray
    norm: str = "fro"
    truncated_at: int | None = None


def _norm(m, kind):
    return frobenius_norm(m) if kind == "fro" else spectral_norm(m)


def step_jacobians(model, observations, lstm_full_state=False):
    """Hidden-state Jacobians J_1..J_T along one episode of observations (T, obs_dim)."""
    from .training import _encode  # local import keeps analysis usable on bare cells

    cell = _cell_of(model)
    weff = cell.effective()
    obs = np.asarray(observations, dtype=np.float64)
    if obs.ndim != 2:
        raise ValueError("expected a single episode (T, obs_dim)")
    xs = _encode(model, obs)[2] if not isinstance(model, cells.CellParams) else obs
    _, caches = cells.run(cell, xs, weff)
    out = []
    for cache in caches:
        state = cells.CellState(cache.h_prev, cache.c_prev)
        if cell.kind == "lstm" and lstm_full_state:
            out.append(cells.lstm_state_jacobian(cell, state, cache.x, weff))
        else:
            out.append(cells._jacobian_from_cache(cell.kind, weff, cache)[0])
    return out


def gradient_decay(model, observations, norm="fro", lstm_full_state=False) -> GradientDecayCurve:
    """Norms of the cumulative products J_T, J_T J_{T-1}, ..., J_T ... J_1 from the final step."""
    if norm not in ("fro", "spectral"):
        raise ValueError("norm must be 'fro' or 'spectral'")
    jacs = step_jacobians(model, observations, lstm_full_state)
    T = len(jacs)
    if T < 1:
        raise ValueError("episode is empty")
    logs = []
    step_logs = []
    truncated = None
    g = jacs[-1]
    for t in range(1, T + 1):
        if t > 1:
            j = jacs[T - t]
            nj = _norm(j, norm)
            step_logs.append(math.log(nj) if nj > 0 else -math.inf)
            g = g @ j
        n = _norm(g, norm)
        if n < UNDERFLOW:
            truncated = t
            break
        logs.append(math.log(n))
    logs = np.array(logs)
    values = logs - logs[0] if len(logs) else logs
    return GradientDecayCurve(values, logs, np.array(step_logs[: max(len(logs) - 1, 0)]), norm, truncated)


@dataclass
class DimensionalityReport:
    recurrent_ev5: float
    input_ev5: float
    full_ev5: float
    per_gate_recurrent: list = field(default_factory=list)
    per_gate_input: list = field(default_factory=list)


def _flat(a):
    return a.reshape(-1, a.shape[-1])


def effective_dimensionality(log, k=5) -> DimensionalityReport:
    """Explained variance of the top ``k`` principal components.

    Computed on the recurrent drive W_rec h_{t-1} and input drive W_inp x_t of
    each gate (then averaged over gates) and on the hidden state itself, pooling
    every step of every episode in the log.
    """
    g = log.rec.shape[-2]
    rec = [pca_explained_top_k(_flat(log.rec[..., i, :]), k) for i in range(g)]
    inp = [pca_explained_top_k(_flat(log.inp[..., i, :]), k) for i in range(g)]
    full = pca_explained_top_k(_flat(log.h), k)
    return DimensionalityReport(float(np.mean(rec)), float(np.mean(inp)), full, rec, inp)


def time_constant_deviation(model, log) -> float:
    """Mean |sigma(y_f) - 0.5| over steps and units of a CfC's interpolation gate."""
    cell = _cell_of(model)
    if cell.kind != "cfc":
        raise ValueError("time-constant deviation is defined for CfC cells only")
    gate = log.gates[..., cell.gate("f"), :]
    return float(np.mean(np.abs(gate - 0.5)))


@dataclass
class TaskDimension:
    per_gate: dict  # gate -> (|W0|_F, |dW|_F)
    w0_total: float
    delta_total: float


def task_dimension(w0, trained) -> TaskDimension:
    """Frobenius norms of the initial effective recurrent matrices and of their training change."""
    w0 = _cell_of(w0)
    trained = _cell_of(trained)
    if w0.kind != trained.kind or w0.hidden_size != trained.hidden_size:
        raise ValueError("snapshot and trained cell differ in kind or size")
    e0 = w0.effective()
    e1 = trained.effective()
    per_gate = {name: (frobenius_norm(e0[i]), frobenius_norm(e1[i] - e0[i])) for i, name in enumerate(w0.gates)}
    return TaskDimension(per_gate, sum(v[0] for v in per_gate.values()), sum(v[1] for v in per_gate.values()))
