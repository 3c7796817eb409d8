"""RNN, LSTM, GRU and CfC cells over low-rank sparse recurrent factors.

Arrays follow the row-vector convention: a state is ``(..., h)`` and a
projection is ``state @ W.T``, so every function accepts a single vector or a
batch. Per-gate quantities are stacked on an axis of length ``len(gates)``
placed just before the hidden axis.

Gate naming:

    rnn   h            h' = tanh(y_h)
    lstm  i f o c      c' = f c + i g,  h' = o tanh(c')
    gru   z r n        n = tanh(U_n x + r * (W_n h) + b_n),  h' = (1 - z) n + z h
    cfc   f g h        h' = s(y_f) tanh(y_g) + (1 - s(y_f)) tanh(y_h)
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .connectivity import LowRankSparseFactors, build_factors, glorot_uniform, parse_rank
from .errors import NumericalFailure

GATES = {
    "rnn": ("h",),
    "lstm": ("i", "f", "o", "c"),
    "gru": ("z", "r", "n"),
    "cfc": ("f", "g", "h"),
}


def sigmoid(y):
    # tanh form: no overflow for large |y| and no branching on the sign
    return 0.5 * (1.0 + np.tanh(0.5 * y))


def _kind(kind: str) -> str:
    k = str(kind).lower()
    if k not in GATES:
        raise ValueError(f"unknown cell kind {kind!r}")
    return k


@dataclass
class CellParams:
    kind: str
    recurrent: list  # one LowRankSparseFactors per gate
    inp: np.ndarray  # (G, h, input_size)
    bias: np.ndarray  # (G, h)

    def __post_init__(self):
        self.kind = _kind(self.kind)
        g = len(GATES[self.kind])
        if len(self.recurrent) != g or self.inp.shape[0] != g or self.bias.shape[0] != g:
            raise ValueError(f"{self.kind} needs {g} gates")
        h = self.bias.shape[1]
        ranks = {f.rank for f in self.recurrent}
        sparsities = {f.sparsity for f in self.recurrent}
        if len(ranks) != 1 or len(sparsities) != 1:
            raise ValueError("rank and sparsity must match across gates")
        for f in self.recurrent:
            if f.mask.shape != (h, h):
                raise ValueError("recurrent factors do not match the hidden size")
        if self.inp.shape[1] != h:
            raise ValueError("input weights do not match the hidden size")

    @property
    def gates(self):
        return GATES[self.kind]

    @property
    def hidden_size(self) -> int:
        return self.bias.shape[1]

    @property
    def input_size(self) -> int:
        return self.inp.shape[2]

    @property
    def rank(self):
        return self.recurrent[0].rank

    @property
    def sparsity(self) -> float:
        return self.recurrent[0].sparsity

    def gate(self, name: str) -> int:
        return self.gates.index(name)

    def effective(self) -> np.ndarray:
        """Masked recurrent matrices, shape (G, h, h)."""
        return np.stack([f.product() * f.mask for f in self.recurrent])

    def arrays(self) -> dict:
        """Trainable arrays by name; the values alias the stored parameters."""
        out = {"inp": self.inp, "bias": self.bias}
        for name, f in zip(self.gates, self.recurrent):
            for key, arr in f.trainable().items():
                out[f"rec.{name}.{key}"] = arr
        return out

    def copy(self) -> "CellParams":
        return CellParams(self.kind, [f.copy() for f in self.recurrent], self.inp.copy(), self.bias.copy())


def init_cell(kind, input_size, hidden_size, rank=None, sparsity=0.0, scheme="orthogonal", rng=None, forget_bias=1.0):
    """Fresh cell: independent recurrent draw per gate, Glorot-uniform input weights, zero biases.

    The LSTM forget-gate bias starts at ``forget_bias``.
    """
    kind = _kind(kind)
    if rng is None:
        raise ValueError("an rng is required")
    rank = parse_rank(rank)
    gates = GATES[kind]
    recurrent = [build_factors(hidden_size, rank, sparsity, scheme, rng) for _ in gates]
    inp = np.stack([glorot_uniform((hidden_size, input_size), rng) for _ in gates])
    bias = np.zeros((len(gates), hidden_size))
    if kind == "lstm":
        bias[gates.index("f")] = forget_bias
    return CellParams(kind, recurrent, inp, bias)


@dataclass
class CellState:
    h: np.ndarray
    c: np.ndarray | None = None


def zero_state(params: CellParams, batch=None) -> CellState:
    shape = (params.hidden_size,) if batch is None else (batch, params.hidden_size)
    c = np.zeros(shape) if params.kind == "lstm" else None
    return CellState(np.zeros(shape), c)


@dataclass
class StepCache:
    x: np.ndarray
    h_prev: np.ndarray
    c_prev: np.ndarray | None
    rec: np.ndarray  # W_rec h_prev per gate, (..., G, h)
    inp: np.ndarray  # W_inp x per gate, (..., G, h)
    pre: np.ndarray  # pre-activations y per gate
    act: np.ndarray  # gate outputs
    h: np.ndarray
    c: np.ndarray | None = None
    extra: dict = field(default_factory=dict)


def _split(v, g, h):
    return v.reshape(v.shape[:-1] + (g, h))


def _check(kind, act, out, step=None):
    if np.all(np.isfinite(out)):
        return
    gates = GATES[kind]
    bad = [name for k, name in enumerate(gates) if not np.all(np.isfinite(act[..., k, :]))]
    gate = bad[0] if bad else gates[-1]
    raise NumericalFailure(f"non-finite output in {kind} gate {gate!r}", gate=gate, step=step)


def advance(kind, weff, inp, bias, h_prev, c_prev=None, x=None, step=None) -> StepCache:
    """One step given the already projected input ``inp`` = W_inp x (no bias)."""
    g, n = weff.shape[0], weff.shape[1]
    rec = _split(h_prev @ weff.reshape(g * n, n).T, g, n)
    pre = inp + bias + rec
    act = np.empty_like(pre)
    extra = {}
    c = None
    if kind == "rnn":
        act[..., 0, :] = np.tanh(pre[..., 0, :])
        h = act[..., 0, :].copy()
    elif kind == "lstm":
        act[..., :3, :] = sigmoid(pre[..., :3, :])
        act[..., 3, :] = np.tanh(pre[..., 3, :])
        i, f, o, gg = act[..., 0, :], act[..., 1, :], act[..., 2, :], act[..., 3, :]
        c = f * c_prev + i * gg
        tc = np.tanh(c)
        extra["tanh_c"] = tc
        h = o * tc
    elif kind == "gru":
        act[..., :2, :] = sigmoid(pre[..., :2, :])
        z, r = act[..., 0, :], act[..., 1, :]
        # reset gate scales the recurrent product of the candidate only
        pre[..., 2, :] = inp[..., 2, :] + bias[2] + r * rec[..., 2, :]
        act[..., 2, :] = np.tanh(pre[..., 2, :])
        nn = act[..., 2, :]
        h = (1.0 - z) * nn + z * h_prev
    else:
        act[..., 0, :] = sigmoid(pre[..., 0, :])
        act[..., 1:, :] = np.tanh(pre[..., 1:, :])
        sf = act[..., 0, :]
        h = sf * act[..., 1, :] + (1.0 - sf) * act[..., 2, :]
    _check(kind, act, h, step)
    if c is not None and not np.all(np.isfinite(c)):
        raise NumericalFailure("non-finite lstm cell state", gate="c", step=step)
    return StepCache(x, h_prev, c_prev, rec, inp, pre, act, h, c, extra)


def project_input(params: CellParams, x) -> np.ndarray:
    g, n = params.inp.shape[:2]
    return _split(x @ params.inp.reshape(g * n, -1).T, g, n)


def step(params: CellParams, state: CellState, x, weff=None):
    """Advance one step; returns the new state and the cache for backward_step."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.input_size or state.h.shape[-1] != params.hidden_size:
        raise ValueError("shape mismatch between params, state and input")
    if not np.all(np.isfinite(x)):
        raise ValueError("input is not finite")
    if params.kind == "lstm" and state.c is None:
        raise ValueError("lstm state needs a cell vector")
    if weff is None:
        weff = params.effective()
    cache = advance(params.kind, weff, project_input(params, x), params.bias, state.h, state.c, x)
    return CellState(cache.h, cache.c), cache


def _diag_rows(v, m):
    return v[:, None] * m


def hidden_jacobian(params: CellParams, state: CellState, x, weff=None) -> np.ndarray:
    """dh_t/dh_{t-1} for a single (unbatched) step.

    For the LSTM the previous cell state is held fixed; see
    ``lstm_state_jacobian`` for the Jacobian of the joint (h, c) state.
    """
    if np.ndim(state.h) != 1:
        raise ValueError("hidden_jacobian takes a single state vector")
    if weff is None:
        weff = params.effective()
    _, cache = step(params, state, x, weff)
    return _jacobian_from_cache(params.kind, weff, cache)[0]


def _jacobian_from_cache(kind, weff, cache):
    a = cache.act
    if kind == "rnn":
        return (_diag_rows(1.0 - cache.h**2, weff[0]),)
    if kind == "lstm":
        i, f, o, g = a
        tc = cache.extra["tanh_c"]
        dc = (
            _diag_rows(cache.c_prev * f * (1 - f), weff[1])
            + _diag_rows(g * i * (1 - i), weff[0])
            + _diag_rows(i * (1 - g**2), weff[3])
        )
        dh = _diag_rows(tc * o * (1 - o), weff[2]) + _diag_rows(o * (1 - tc**2), dc)
        return dh, dc
    if kind == "gru":
        z, r, n = a
        dz = _diag_rows(z * (1 - z), weff[0])
        dr = _diag_rows(r * (1 - r), weff[1])
        dn = _diag_rows(1 - n**2, _diag_rows(r, weff[2]) + _diag_rows(cache.rec[2], dr))
        return (_diag_rows(1 - z, dn) + np.diag(z) + _diag_rows(cache.h_prev - n, dz),)
    sf, tg, th = a
    ds = sf * (1 - sf)
    return (
        _diag_rows(sf * (1 - tg**2), weff[1])
        + _diag_rows((tg - th) * ds, weff[0])
        + _diag_rows((1 - sf) * (1 - th**2), weff[2]),
    )


def lstm_state_jacobian(params: CellParams, state: CellState, x, weff=None) -> np.ndarray:
    """Jacobian of (h_t, c_t) with respect to (h_{t-1}, c_{t-1}), shape (2h, 2h)."""
    if params.kind != "lstm":
        raise ValueError("lstm_state_jacobian needs an lstm cell")
    if weff is None:
        weff = params.effective()
    _, cache = step(params, state, x, weff)
    dh, dc = _jacobian_from_cache("lstm", weff, cache)
    f, o = cache.act[1], cache.act[2]
    tc = cache.extra["tanh_c"]
    top = np.hstack([dh, np.diag(o * (1 - tc**2) * f)])
    bottom = np.hstack([dc, np.diag(f)])
    return np.vstack([top, bottom])


def retreat(kind, weff, cache: StepCache, gh, gc=None):
    """Reverse one step.

    Returns ``(dpre, drec, gh_prev, gc_prev)``: the loss gradient with respect
    to the pre-activations (which is also the gradient of the bias and of the
    input projection), the gradient with respect to each gate's recurrent term
    ``W h_prev``, and the gradients flowing into the previous state.
    """
    a = cache.act
    dpre = np.empty_like(cache.pre)
    gc_prev = None
    if kind == "rnn":
        dpre[..., 0, :] = gh * (1 - cache.h**2)
        drec = dpre
        gh_prev = 0.0
    elif kind == "lstm":
        i, f, o, g = (a[..., k, :] for k in range(4))
        tc = cache.extra["tanh_c"]
        gct = gh * o * (1 - tc**2)
        if gc is not None:
            gct = gct + gc
        dpre[..., 0, :] = gct * g * i * (1 - i)
        dpre[..., 1, :] = gct * cache.c_prev * f * (1 - f)
        dpre[..., 2, :] = gh * tc * o * (1 - o)
        dpre[..., 3, :] = gct * i * (1 - g**2)
        drec = dpre
        gh_prev = 0.0
        gc_prev = gct * f
    elif kind == "gru":
        z, r, n = (a[..., k, :] for k in range(3))
        dn = gh * (1 - z) * (1 - n**2)
        dpre[..., 2, :] = dn
        dpre[..., 1, :] = dn * cache.rec[..., 2, :] * r * (1 - r)
        dpre[..., 0, :] = gh * (cache.h_prev - n) * z * (1 - z)
        drec = dpre.copy()
        drec[..., 2, :] = dn * r
        gh_prev = gh * z
    else:
        sf, tg, th = (a[..., k, :] for k in range(3))
        dpre[..., 0, :] = gh * (tg - th) * sf * (1 - sf)
        dpre[..., 1, :] = gh * sf * (1 - tg**2)
        dpre[..., 2, :] = gh * (1 - sf) * (1 - th**2)
        drec = dpre
        gh_prev = 0.0
    gcount, n = weff.shape[0], weff.shape[1]
    gh_prev = gh_prev + drec.reshape(drec.shape[:-2] + (gcount * n,)) @ weff.reshape(gcount * n, n)
    return dpre, drec, gh_prev, gc_prev


def factor_gradients(f: LowRankSparseFactors, g_eff) -> dict:
    """Chain a gradient on the effective matrix back to the trainable factors.

    The mask is applied to the gradient; the mask itself gets none.
    """
    gm = g_eff * f.mask
    if f.w2 is None:
        return {"w": gm}
    return {"w1": gm @ f.w2.T, "w2": f.w1.T @ gm}


def parameter_gradients(params: CellParams, xs, h_prevs, dpre, drec) -> dict:
    """Accumulate parameter gradients from per-step pre-activation gradients.

    Leading axes of ``xs``/``h_prevs``/``dpre``/``drec`` (batch, time, ...) are
    summed over.
    """
    g, n = params.bias.shape
    lead = dpre.shape[:-2]
    dp = dpre.reshape(-1, g * n)
    dr = drec.reshape(-1, g * n)
    xs = np.asarray(xs).reshape(-1, params.input_size)
    hp = np.asarray(h_prevs).reshape(-1, n)
    if dp.shape[0] != xs.shape[0] or dp.shape[0] != hp.shape[0]:
        raise ValueError(f"gradient and cache shapes disagree (leading axes {lead})")
    grads = {
        "inp": (dp.T @ xs).reshape(g, n, -1),
        "bias": dp.sum(axis=0).reshape(g, n),
    }
    geff = (dr.T @ hp).reshape(g, n, n)
    for k, (name, f) in enumerate(zip(params.gates, params.recurrent)):
        for key, val in factor_gradients(f, geff[k]).items():
            grads[f"rec.{name}.{key}"] = val
    return grads


def backward_step(params: CellParams, cache: StepCache, grad_h, grad_c=None, weff=None):
    """Reverse-mode through one step.

    Returns ``(grad_state, param_grads, grad_x)`` where ``grad_state`` holds the
    gradients with respect to the previous hidden (and cell) state.
    """
    grad_h = np.asarray(grad_h, dtype=np.float64)
    if grad_h.shape != cache.h.shape:
        raise ValueError(f"grad_h has shape {grad_h.shape}, expected {cache.h.shape}")
    if grad_c is not None and (cache.c is None or np.shape(grad_c) != cache.c.shape):
        raise ValueError("grad_c does not match the cell state")
    if weff is None:
        weff = params.effective()
    dpre, drec, gh_prev, gc_prev = retreat(params.kind, weff, cache, grad_h, grad_c)
    grads = parameter_gradients(params, cache.x, cache.h_prev, dpre, drec)
    g, n = params.bias.shape
    grad_x = dpre.reshape(dpre.shape[:-2] + (g * n,)) @ params.inp.reshape(g * n, -1)
    if params.kind == "lstm" and gc_prev is None:
        gc_prev = np.zeros_like(cache.c_prev)
    return CellState(gh_prev, gc_prev), grads, grad_x


def run(params: CellParams, xs, weff=None, state=None):
    """Unroll over ``xs`` of shape (..., T, input_size) from the zero state.

    Returns the hidden states (..., T, h) and the list of step caches.
    """
    xs = np.asarray(xs, dtype=np.float64)
    if weff is None:
        weff = params.effective()
    inp = project_input(params, xs)
    batch = xs.shape[:-2]
    if state is None:
        state = zero_state(params, batch[0] if batch else None)
    h, c = state.h, state.c
    caches = []
    for t in range(xs.shape[-2]):
        cache = advance(params.kind, weff, inp[..., t, :, :], params.bias, h, c, xs[..., t, :], step=t)
        caches.append(cache)
        h, c = cache.h, cache.c
    hs = np.stack([k.h for k in caches], axis=-2)
    return hs, caches


def run_backward(params: CellParams, caches, grad_hs, weff=None):
    """Full BPTT through a ``run`` unroll.

    ``grad_hs`` is the loss gradient on every hidden state, shape (..., T, h).
    Returns the summed parameter gradients and the input gradients (..., T, in).
    """
    if weff is None:
        weff = params.effective()
    T = len(caches)
    gh = np.zeros_like(caches[-1].h)
    gc = np.zeros_like(caches[-1].c) if params.kind == "lstm" else None
    dpres = [None] * T
    drecs = [None] * T
    for t in range(T - 1, -1, -1):
        gh = gh + grad_hs[..., t, :]
        dpre, drec, gh, gc = retreat(params.kind, weff, caches[t], gh, gc)
        if not np.all(np.isfinite(gh)):
            raise NumericalFailure(f"non-finite gradient at step {t}", step=t)
        dpres[t] = dpre
        drecs[t] = drec
    dpre = np.stack(dpres, axis=-3)
    drec = np.stack(drecs, axis=-3)
    xs = np.stack([k.x for k in caches], axis=-2)
    hp = np.stack([k.h_prev for k in caches], axis=-2)
    grads = parameter_gradients(params, xs, hp, dpre, drec)
    g, n = params.bias.shape
    grad_x = dpre.reshape(dpre.shape[:-2] + (g * n,)) @ params.inp.reshape(g * n, -1)
    return grads, grad_x
