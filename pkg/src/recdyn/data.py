"""Episode datasets for behavioural cloning."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError


@dataclass
class Dataset:
    """Equal-length episodes of observations (N, T, obs_dim) and actions (N, T, act_dim).

    ``train`` and ``validation`` hold episode indices.
    """

    observations: np.ndarray
    actions: np.ndarray
    seeds: list = field(default_factory=list)
    train: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    validation: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self):
        self.observations = np.asarray(self.observations, dtype=np.float64)
        self.actions = np.asarray(self.actions, dtype=np.float64)
        if self.observations.ndim != 3 or self.actions.ndim != 3:
            raise ConfigError("dataset arrays must be (episodes, steps, dim)")
        if self.observations.shape[:2] != self.actions.shape[:2]:
            raise ConfigError("observations and actions disagree on episodes or steps")
        if self.actions.size and np.max(np.abs(self.actions)) > 1.0:
            raise ConfigError("actions must lie in [-1, 1]")
        self.train = np.asarray(self.train, dtype=np.int64)
        self.validation = np.asarray(self.validation, dtype=np.int64)

    def __len__(self):
        return self.observations.shape[0]

    @property
    def obs_dim(self):
        return self.observations.shape[2]

    @property
    def action_dim(self):
        return self.actions.shape[2]

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return self.observations[idx], self.actions[idx]

    def digest(self) -> str:
        h = hashlib.sha256()
        for arr in (self.observations, self.actions, self.train, self.validation):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()


def split_episodes(ds: Dataset, rng, train_fraction=0.9) -> Dataset:
    """Assign a seeded train/validation split by episode index (in place, returned)."""
    n = len(ds)
    perm = rng.permutation(n)
    n_train = int(round(train_fraction * n))
    if n >= 2:
        n_train = min(max(n_train, 1), n - 1)
    ds.train = np.sort(perm[:n_train])
    ds.validation = np.sort(perm[n_train:])
    return ds
