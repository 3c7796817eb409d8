"""Behavioural cloning: encoder MLP, recurrent cell and tanh head trained with BPTT and Adam."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import cells
from .connectivity import glorot_uniform, parse_rank
from .data import Dataset, split_episodes
from .errors import ConfigError, NumericalFailure
from .numcore import make_rng

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class PolicyModel:
    """obs -> standardise -> dense 256 relu -> dense 256 relu -> cell -> dense tanh.

    ``obs_mean``/``obs_std`` are fixed at construction from the training data
    and never trained.
    """

    enc_w1: np.ndarray
    enc_b1: np.ndarray
    enc_w2: np.ndarray
    enc_b2: np.ndarray
    cell: cells.CellParams
    head_w: np.ndarray
    head_b: np.ndarray
    obs_mean: np.ndarray
    obs_std: np.ndarray

    def __post_init__(self):
        if self.enc_w1.shape[0] != self.enc_w2.shape[1] or self.enc_w2.shape[0] != self.cell.input_size:
            raise ValueError("encoder shapes do not chain into the cell")
        if self.head_w.shape[1] != self.cell.hidden_size:
            raise ValueError("head does not match the hidden size")
        if self.obs_mean.shape != (self.enc_w1.shape[1],) or self.obs_std.shape != self.obs_mean.shape:
            raise ValueError("observation statistics do not match the encoder")

    @property
    def obs_dim(self):
        return self.enc_w1.shape[1]

    @property
    def action_dim(self):
        return self.head_w.shape[0]

    def arrays(self) -> dict:
        out = {
            "enc.w1": self.enc_w1,
            "enc.b1": self.enc_b1,
            "enc.w2": self.enc_w2,
            "enc.b2": self.enc_b2,
            "head.w": self.head_w,
            "head.b": self.head_b,
        }
        for k, v in self.cell.arrays().items():
            out["cell." + k] = v
        return out

    def copy(self) -> "PolicyModel":
        return PolicyModel(
            self.enc_w1.copy(),
            self.enc_b1.copy(),
            self.enc_w2.copy(),
            self.enc_b2.copy(),
            self.cell.copy(),
            self.head_w.copy(),
            self.head_b.copy(),
            self.obs_mean.copy(),
            self.obs_std.copy(),
        )


def init_model(kind, obs_dim, action_dim, rank=None, sparsity=0.0, scheme="orthogonal", rng=None,
               hidden=64, encoder=256, forget_bias=1.0, obs_mean=None, obs_std=None) -> PolicyModel:
    if rng is None:
        raise ValueError("an rng is required")
    w1 = glorot_uniform((encoder, obs_dim), rng)
    w2 = glorot_uniform((encoder, encoder), rng)
    cell = cells.init_cell(kind, encoder, hidden, rank, sparsity, scheme, rng, forget_bias)
    head = glorot_uniform((action_dim, hidden), rng)
    mean = np.zeros(obs_dim) if obs_mean is None else np.asarray(obs_mean, dtype=np.float64)
    std = np.ones(obs_dim) if obs_std is None else np.asarray(obs_std, dtype=np.float64)
    return PolicyModel(w1, np.zeros(encoder), w2, np.zeros(encoder), cell, head, np.zeros(action_dim), mean, std)


@dataclass
class TrajectoryLog:
    """Per-step cell quantities, time on the second-to-last data axis.

    ``h`` is (..., T, h); ``rec``, ``inp`` and ``gates`` are (..., T, G, h) and
    hold W_rec h_{t-1}, W_inp x_t and the gate outputs.
    """

    h: np.ndarray
    rec: np.ndarray
    inp: np.ndarray
    gates: np.ndarray
    kind: str

    def __len__(self):
        return self.h.shape[-2]

    @classmethod
    def from_caches(cls, kind, caches, axis=-2):
        def stack(attr, ax):
            return np.stack([getattr(c, attr) for c in caches], axis=ax)

        return cls(stack("h", -2), stack("rec", -3), stack("inp", -3), stack("act", -3), kind)


def _encode(model, obs):
    x = (obs - model.obs_mean) / model.obs_std
    a1 = x @ model.enc_w1.T + model.enc_b1
    z1 = np.maximum(a1, 0.0)
    a2 = z1 @ model.enc_w2.T + model.enc_b2
    z2 = np.maximum(a2, 0.0)
    return x, z1, z2


def forward_sequence(model: PolicyModel, observations, weff=None, _keep=False):
    """Predicted actions (..., T, action_dim) from the zero state, plus the log."""
    obs = np.asarray(observations, dtype=np.float64)
    if obs.shape[-1] != model.obs_dim:
        raise ValueError(f"observations have dim {obs.shape[-1]}, model expects {model.obs_dim}")
    if weff is None:
        weff = model.cell.effective()
    x, z1, z2 = _encode(model, obs)
    hs, caches = cells.run(model.cell, z2, weff)
    pred = np.tanh(hs @ model.head_w.T + model.head_b)
    log = TrajectoryLog.from_caches(model.cell.kind, caches)
    if _keep:
        return pred, log, (x, z1, z2, hs, caches)
    return pred, log


def mse_loss(pred, target) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError("prediction and target shapes differ")
    d = pred - target
    return float(np.mean(d * d))


def bptt(model: PolicyModel, obs, actions):
    """Loss and exact gradients of the mean squared error over a batch of whole episodes."""
    weff = model.cell.effective()
    pred, _, (x, z1, z2, hs, caches) = forward_sequence(model, obs, weff, _keep=True)
    loss = mse_loss(pred, actions)
    dpred = 2.0 * (pred - actions) / pred.size
    dy = dpred * (1.0 - pred**2)
    grads = {
        "head.w": dy.reshape(-1, dy.shape[-1]).T @ hs.reshape(-1, hs.shape[-1]),
        "head.b": dy.reshape(-1, dy.shape[-1]).sum(axis=0),
    }
    dhs = dy @ model.head_w
    cgrads, dz2 = cells.run_backward(model.cell, caches, dhs, weff)
    for k, v in cgrads.items():
        grads["cell." + k] = v
    da2 = dz2 * (z2 > 0)
    grads["enc.w2"] = da2.reshape(-1, da2.shape[-1]).T @ z1.reshape(-1, z1.shape[-1])
    grads["enc.b2"] = da2.reshape(-1, da2.shape[-1]).sum(axis=0)
    dz1 = da2 @ model.enc_w2
    da1 = dz1 * (z1 > 0)
    grads["enc.w1"] = da1.reshape(-1, da1.shape[-1]).T @ x.reshape(-1, x.shape[-1])
    grads["enc.b1"] = da1.reshape(-1, da1.shape[-1]).sum(axis=0)
    for k, v in grads.items():
        if not np.all(np.isfinite(v)):
            raise NumericalFailure(f"non-finite gradient for {k}")
    return loss, grads


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def zeros_like(cls, arrays: dict):
        return cls({k: np.zeros_like(a) for k, a in arrays.items()}, {k: np.zeros_like(a) for k, a in arrays.items()})


def adam_step(params: dict, grads: dict, state: AdamState, lr: float):
    """Bias-corrected Adam, updating ``params`` arrays in place."""
    state.t += 1
    c1 = 1.0 - ADAM_BETA1**state.t
    c2 = 1.0 - ADAM_BETA2**state.t
    for k, p in params.items():
        g = grads[k]
        m = state.m[k]
        v = state.v[k]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)
    return params, state


def clip_global_norm(grads: dict, max_norm):
    total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if max_norm is not None and total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


@dataclass
class TrainConfig:
    kind: str = "cfc"
    rank: object = None
    sparsity: float = 0.0
    scheme: str = "orthogonal"
    hidden: int = 64
    encoder: int = 256
    epochs: int = 40
    batch_size: int = 16
    lr_grid: tuple = (1e-3,)
    forget_bias: float = 1.0
    clip_norm: float | None = None
    train_fraction: float = 0.9

    def __post_init__(self):
        self.kind = str(self.kind).lower()
        if self.kind not in cells.GATES:
            raise ConfigError(f"unknown cell kind {self.kind!r}")
        self.rank = parse_rank(self.rank)
        if self.rank is not None and not 1 <= self.rank <= self.hidden:
            raise ConfigError(f"rank {self.rank} outside [1, {self.hidden}]")
        if not 0.0 <= self.sparsity < 1.0:
            raise ConfigError("sparsity must lie in [0, 1)")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        self.lr_grid = tuple(float(x) for x in self.lr_grid)
        if not self.lr_grid or min(self.lr_grid) <= 0:
            raise ConfigError("lr_grid must hold positive learning rates")


@dataclass
class TrainResult:
    model: PolicyModel
    w0: cells.CellParams
    lr: float
    train_loss: list
    val_loss: list
    runs: dict = field(default_factory=dict)  # lr -> (train curve, validation curve)


def observation_stats(ds: Dataset, idx):
    obs = ds.observations[idx].reshape(-1, ds.obs_dim)
    std = obs.std(axis=0)
    return obs.mean(axis=0), np.where(std > 1e-8, std, 1.0)


def _masks(model):
    return [f.mask.copy() for f in model.cell.recurrent]


def _fit(model, ds, cfg, lr, seed):
    params = model.arrays()
    state = AdamState.zeros_like(params)
    shuffle = make_rng(seed, "shuffle")
    tr_obs, tr_act = ds.subset(ds.train)
    va_obs, va_act = ds.subset(ds.validation)

    def val_loss():
        if len(ds.validation) == 0:
            return float("nan")
        pred, _ = forward_sequence(model, va_obs)
        return mse_loss(pred, va_act)

    train_curve = [mse_loss(forward_sequence(model, tr_obs)[0], tr_act)]
    val_curve = [val_loss()]
    n = len(ds.train)
    for _ in range(cfg.epochs):
        order = shuffle.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, grads = bptt(model, tr_obs[idx], tr_act[idx])
            clip_global_norm(grads, cfg.clip_norm)
            adam_step(params, grads, state, lr)
            total += loss * len(idx)
        train_curve.append(total / n)
        val_curve.append(val_loss())
    return train_curve, val_curve


def train(cfg: TrainConfig, ds: Dataset, seed: int) -> TrainResult:
    """Fit one model per learning rate from a shared initialisation; keep the best on validation loss.

    The returned curves start with the loss of the untrained model (epoch 0);
    training-loss entries after that are running means over the epoch.
    """
    if len(ds) == 0:
        raise ConfigError("dataset is empty")
    if len(ds.train) == 0:
        split_episodes(ds, make_rng(seed, "split"), cfg.train_fraction)
    mean, std = observation_stats(ds, ds.train)
    init = init_model(
        cfg.kind, ds.obs_dim, ds.action_dim, cfg.rank, cfg.sparsity, cfg.scheme, make_rng(seed, "init"),
        cfg.hidden, cfg.encoder, cfg.forget_bias, mean, std,
    )
    masks = _masks(init)
    best = None
    runs = {}
    for lr in cfg.lr_grid:
        model = init.copy()
        tr, va = _fit(model, ds, cfg, lr, seed)
        if any(not np.array_equal(a, b) for a, b in zip(masks, _masks(model))):
            raise AssertionError("training modified a recurrent mask")
        runs[lr] = (tr, va)
        # nan validation (no held-out episodes) falls back to the training loss
        score = va[-1] if np.isfinite(va[-1]) else tr[-1]
        if best is None or score < best[0]:
            best = (score, lr, model)
    _, lr, model = best
    return TrainResult(model, init.cell.copy(), lr, runs[lr][0], runs[lr][1], runs)


class Controller:
    """Closed-loop wrapper: one cell step per observation, state kept across calls.

    With ``record=True`` every step's cache is kept; ``log()`` stacks them into
    a TrajectoryLog with episodes on the leading axis.
    """

    def __init__(self, model: PolicyModel, record=False):
        self.model = model
        self.record = record
        self.weff = model.cell.effective()
        self.logs = []
        self._caches = []
        self.state = None

    def reset(self, batch):
        self._flush()
        self.state = cells.zero_state(self.model.cell, batch)

    def act(self, obs):
        _, _, z2 = _encode(self.model, np.asarray(obs, dtype=np.float64))
        inp = cells.project_input(self.model.cell, z2)
        cache = cells.advance(self.model.cell.kind, self.weff, inp, self.model.cell.bias, self.state.h, self.state.c, z2)
        self.state = cells.CellState(cache.h, cache.c)
        if self.record:
            self._caches.append(cache)
        return np.tanh(cache.h @ self.model.head_w.T + self.model.head_b)

    def _flush(self):
        if self._caches:
            self.logs.append(TrajectoryLog.from_caches(self.model.cell.kind, self._caches))
            self._caches = []

    def log(self) -> TrajectoryLog | None:
        self._flush()
        if not self.logs:
            return None
        return TrajectoryLog(
            np.concatenate([g.h for g in self.logs]),
            np.concatenate([g.rec for g in self.logs]),
            np.concatenate([g.inp for g in self.logs]),
            np.concatenate([g.gates for g in self.logs]),
            self.model.cell.kind,
        )
