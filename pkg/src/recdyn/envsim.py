"""PointChase: a small closed-loop control task with a scripted expert.

A point agent with first-order drag chases a target moving on a seeded
Lissajous curve. The observation is ``[q - p, v, q_dot]`` (6 numbers), the
action is a 2-d acceleration command in [-1, 1], the reward is ``-|q - p|``.

The environment is vectorised over a batch of episodes, one seed each, so a
whole evaluation condition runs as a single loop over time.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .numcore import make_rng

OBS_DIM = 6
ACTION_DIM = 2
DT = 0.05
EPISODE_LENGTH = 200
DRAG = 0.9
ACTION_SCALE = 1.0
KP = 4.0
KD = 2.0


def _lissajous(seed):
    g = make_rng(seed, "lissajous")
    amp = g.uniform(0.2, 0.5, 2)
    freq = g.uniform(0.5, 1.5, 2)
    phase = g.uniform(0.0, 2 * np.pi, 2)
    centre = g.uniform(-1.0, 1.0, 2)
    start = centre + g.uniform(-1.0, 1.0, 2)
    return amp, freq, phase, centre, start


class PointChaseEnv:
    def __init__(self, dt=DT, horizon=EPISODE_LENGTH, drag=DRAG, action_scale=ACTION_SCALE):
        self.dt = dt
        self.horizon = horizon
        self.drag = drag
        self.action_scale = action_scale
        self.t = 0
        self._single = True

    def _target(self, t):
        time = t * self.dt
        ang = self.freq * time + self.phase
        q = self.centre + self.amp * np.sin(ang)
        qd = self.amp * self.freq * np.cos(ang)
        return q, qd

    def _obs(self):
        q, qd = self._target(self.t)
        obs = np.concatenate([q - self.p, self.v, qd], axis=-1)
        return obs[0] if self._single else obs

    def reset(self, seed):
        """Start one episode (int seed) or a batch (sequence of seeds)."""
        self._single = np.ndim(seed) == 0
        seeds = [int(seed)] if self._single else [int(s) for s in seed]
        params = [_lissajous(s) for s in seeds]
        self.amp, self.freq, self.phase, self.centre, self.p = (np.array(x, dtype=np.float64) for x in zip(*params))
        self.v = np.zeros_like(self.p)
        self.t = 0
        return self._obs()

    def step(self, action):
        if self.t >= self.horizon:
            raise RuntimeError("episode is over; call reset")
        a = np.clip(np.asarray(action, dtype=np.float64), -1.0, 1.0) * self.action_scale
        a = np.broadcast_to(a, self.p.shape)
        self.v = self.drag * self.v + (1.0 - self.drag) * a
        self.p = self.p + self.dt * self.v
        self.t += 1
        q, _ = self._target(self.t)
        reward = -np.linalg.norm(q - self.p, axis=-1)
        done = self.t >= self.horizon
        return self._obs(), (reward[0] if self._single else reward), done


def expert_action(obs):
    """PD law toward the target: clip(4 (q - p) + 2 (q_dot - v), -1, 1)."""
    obs = np.asarray(obs, dtype=np.float64)
    err = obs[..., 0:2]
    v = obs[..., 2:4]
    qd = obs[..., 4:6]
    return np.clip(KP * err + KD * (qd - v), -1.0, 1.0)


class ExpertPolicy:
    """The scripted expert behind the same interface as trained controllers."""

    def reset(self, batch):
        pass

    def act(self, obs):
        return expert_action(obs)


def episode_seeds(seed, n):
    g = make_rng(seed, "episode-seeds")
    return [int(s) for s in g.integers(0, 2**31 - 1, size=n)]


def generate_rollouts(env: PointChaseEnv, expert=expert_action, n=100, seed=0) -> Dataset:
    """``n`` full expert episodes of (observation, action) pairs."""
    T = env.horizon
    if n == 0:
        return Dataset(np.zeros((0, T, OBS_DIM)), np.zeros((0, T, ACTION_DIM)), [])
    seeds = episode_seeds(seed, n)
    obs = env.reset(seeds)
    all_obs = np.empty((n, T, OBS_DIM))
    all_act = np.empty((n, T, ACTION_DIM))
    for t in range(T):
        a = expert(obs)
        all_obs[:, t] = obs
        all_act[:, t] = a
        obs, _, _ = env.step(a)
    return Dataset(all_obs, all_act, seeds)


class PerturbationKind(str, enum.Enum):
    NOISE = "noise"
    DROPOUT = "dropout"
    OFFSET = "offset"


@dataclass
class Perturbation:
    """Per-step observation corruption, applied independently with ``apply_prob``.

    ``magnitude`` is the noise standard deviation (scalar or per dimension), the
    dropped fraction of dimensions, or the offset size, depending on ``kind``.
    """

    kind: PerturbationKind
    magnitude: object
    apply_prob: float = 0.1

    def __post_init__(self):
        self.kind = PerturbationKind(self.kind)
        if not 0.0 <= self.apply_prob <= 1.0:
            raise ValueError("apply_prob must lie in [0, 1]")
        if self.kind is PerturbationKind.DROPOUT and not 0.0 <= float(self.magnitude) <= 1.0:
            raise ValueError("dropout fraction must lie in [0, 1]")


def default_perturbations(obs_std, apply_prob=0.1, scale=0.3):
    """Noise sigma = 0.3 std per dim, dropout fraction 0.3, offset 0.3 x mean std."""
    obs_std = np.asarray(obs_std, dtype=np.float64)
    return {
        "noise": Perturbation("noise", scale * obs_std, apply_prob),
        "dropout": Perturbation("dropout", 0.3, apply_prob),
        "offset": Perturbation("offset", scale * float(np.mean(obs_std)), apply_prob),
    }


def perturb(obs, pert: Perturbation | None, rng, force=False):
    """Corrupt a single observation or a batch (rows perturbed independently).

    Returns the observation and a boolean mask of the rows that were hit.
    """
    obs = np.asarray(obs, dtype=np.float64)
    single = obs.ndim == 1
    x = np.atleast_2d(obs).copy()
    n, d = x.shape
    if pert is None:
        hit = np.zeros(n, dtype=bool)
        return (x[0] if single else x), (hit[0] if single else hit)
    hit = np.ones(n, dtype=bool) if force else rng.random(n) < pert.apply_prob
    # draw for every row so the stream does not depend on which rows were hit
    if pert.kind is PerturbationKind.NOISE:
        delta = rng.standard_normal((n, d)) * np.asarray(pert.magnitude, dtype=np.float64)
        x[hit] += delta[hit]
    elif pert.kind is PerturbationKind.DROPOUT:
        k = int(round(float(pert.magnitude) * d))
        order = np.argsort(rng.random((n, d)), axis=1)[:, :k]
        for row in np.flatnonzero(hit):
            x[row, order[row]] = 0.0
    else:
        sign = np.where(rng.random(n) < 0.5, -1.0, 1.0)
        x[hit] += (sign * float(pert.magnitude))[hit, None]
    return (x[0] if single else x), (hit[0] if single else hit)


@dataclass
class EvalReport:
    """Closed-loop evaluation of one policy under one condition.

    Rewards are negative, so ``normalized`` is expert / model: 1 for expert
    parity, below 1 when the model trails the expert.
    """

    mean_reward: float
    expert_reward: float
    normalized: float
    se: float
    episode_rewards: np.ndarray
    expert_episode_rewards: np.ndarray
    aborted: np.ndarray
    logs: list = field(default_factory=list)

    @property
    def any_aborted(self):
        return bool(np.any(self.aborted))


def rollout(env: PointChaseEnv, policy, seeds, pert=None, pert_seed=0, record=None):
    """Run ``policy`` in closed loop on one episode per seed.

    ``policy`` needs ``reset(batch)`` and ``act(obs) -> action``. Returns the
    per-episode returns and the abort flags. An episode whose action turns
    non-finite is aborted: the agent stops moving and each remaining step is
    credited with the last finite reward.
    """
    seeds = list(seeds)
    n = len(seeds)
    rng = make_rng(pert_seed, "perturb")
    obs = env.reset(seeds)
    policy.reset(n)
    total = np.zeros(n)
    last = np.zeros(n)
    aborted = np.zeros(n, dtype=bool)
    for t in range(env.horizon):
        seen, _ = perturb(obs, pert, rng)
        a = np.asarray(policy.act(seen), dtype=np.float64)
        bad = ~np.all(np.isfinite(a), axis=-1)
        aborted |= bad
        a = np.where(aborted[:, None], 0.0, a)
        if record is not None:
            record(t, seen, a)
        obs, reward, _ = env.step(a)
        reward = np.where(aborted, last, reward)
        total += reward
        last = reward
    return total, aborted


def closed_loop_eval(env, policy, pert=None, episodes=10, seed=0, expert=None, record=None) -> EvalReport:
    """Evaluate ``policy`` and the expert on the same episodes and perturbation draws."""
    seeds = episode_seeds(seed, episodes)
    model_r, aborted = rollout(env, policy, seeds, pert, seed, record)
    expert_r, _ = rollout(env, expert or ExpertPolicy(), seeds, pert, seed)
    m, e = float(model_r.mean()), float(expert_r.mean())
    normalized = e / m if m != 0 else float("nan")
    # per-episode paired ratios give the spread; the headline is the ratio of means
    ratios = expert_r / np.where(model_r == 0, np.nan, model_r)
    se = float(np.std(ratios, ddof=1) / np.sqrt(episodes)) if episodes > 1 else 0.0
    return EvalReport(m, e, normalized, se, model_r, expert_r, aborted)


def shift_score(reports: dict) -> float:
    """Mean normalized reward over the perturbation conditions."""
    vals = [reports[k].normalized for k in ("noise", "dropout", "offset") if k in reports]
    return float(np.mean(vals)) if vals else float("nan")
