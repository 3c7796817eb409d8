"""Experiment configuration: a JSON document with one object per section.

Unknown sections or keys are rejected. Every field has a default, so an empty
document ``{}`` is a valid configuration.

Sections and keys::

    model   kind, rank, sparsity, scheme, hidden, encoder, forget_bias
    train   seeds, lr_grid, epochs, batch_size, clip_norm, train_fraction
    data    episodes, env_seed, horizon
    eval    episodes, seed, perturbations, apply_prob, scale, decay_episodes
    grid    cells, ranks, sparsities
    theory  n, trials, decay_n, decay_trials, lemma_trials
    out     output directory (string)
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .cells import GATES
from .connectivity import FULL, InitScheme, parse_rank
from .errors import ConfigError
from .training import TrainConfig

PERTURBATION_KINDS = ("noise", "dropout", "offset")


@dataclass
class ModelSection:
    kind: str = "cfc"
    rank: object = FULL
    sparsity: float = 0.0
    scheme: str = "orthogonal"
    hidden: int = 64
    encoder: int = 256
    forget_bias: float = 1.0


@dataclass
class TrainSection:
    seeds: list = field(default_factory=lambda: [0, 1, 2])
    lr_grid: list = field(default_factory=lambda: [1e-3])
    epochs: int = 40
    batch_size: int = 16
    clip_norm: float | None = None
    train_fraction: float = 0.9


@dataclass
class DataSection:
    episodes: int = 100
    env_seed: int = 0
    horizon: int = 200


@dataclass
class EvalSection:
    episodes: int = 10
    seed: int = 1000
    perturbations: list = field(default_factory=lambda: list(PERTURBATION_KINDS))
    apply_prob: float = 0.1
    scale: float = 0.3
    decay_episodes: int = 3


@dataclass
class GridSection:
    cells: list = field(default_factory=lambda: ["rnn", "lstm", "gru", "cfc"])
    ranks: list = field(default_factory=lambda: [1, 5, 16, 27, FULL])
    sparsities: list = field(default_factory=lambda: [0.0, 0.2, 0.5, 0.8])


@dataclass
class TheorySection:
    n: int = 512
    trials: int = 10
    decay_n: int = 64
    decay_trials: int = 20
    lemma_trials: int = 100


@dataclass
class ExperimentConfig:
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    data: DataSection = field(default_factory=DataSection)
    eval: EvalSection = field(default_factory=EvalSection)
    grid: GridSection = field(default_factory=GridSection)
    theory: TheorySection = field(default_factory=TheorySection)
    out: str = "runs"

    def validate(self):
        m = self.model
        self.train_config(m.kind, m.rank, m.sparsity)  # raises on a bad model section
        if not self.train.seeds:
            raise ConfigError("train.seeds must not be empty")
        if self.data.episodes < 0 or self.data.horizon < 1:
            raise ConfigError("data.episodes must be >= 0 and data.horizon >= 1")
        if self.eval.episodes < 1:
            raise ConfigError("eval.episodes must be >= 1")
        bad = set(self.eval.perturbations) - set(PERTURBATION_KINDS)
        if bad:
            raise ConfigError(f"unknown perturbations {sorted(bad)}")
        if not 0.0 <= self.eval.apply_prob <= 1.0:
            raise ConfigError("eval.apply_prob must lie in [0, 1]")
        for kind in self.grid.cells:
            for r in self.grid.ranks:
                for s in self.grid.sparsities:
                    self.train_config(kind, r, s)
        if self.theory.n < 2 or self.theory.trials < 1 or self.theory.decay_trials < 1:
            raise ConfigError("theory sizes must be >= 2 and trials >= 1")
        return self

    def train_config(self, kind, rank, sparsity) -> TrainConfig:
        m, t = self.model, self.train
        try:
            InitScheme(m.scheme)
            rank = parse_rank(rank)
        except ValueError as e:
            raise ConfigError(str(e)) from None
        if str(kind).lower() not in GATES:
            raise ConfigError(f"unknown cell kind {kind!r}")
        return TrainConfig(
            kind=kind, rank=rank, sparsity=float(sparsity), scheme=m.scheme, hidden=m.hidden, encoder=m.encoder,
            epochs=t.epochs, batch_size=t.batch_size, lr_grid=tuple(t.lr_grid), forget_bias=m.forget_bias,
            clip_norm=t.clip_norm, train_fraction=t.train_fraction,
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _section(cls, raw, name):
    if not isinstance(raw, dict):
        raise ConfigError(f"section {name!r} must be an object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown keys in {name!r}: {sorted(unknown)}")
    return cls(**raw)


SECTIONS = {
    "model": ModelSection,
    "train": TrainSection,
    "data": DataSection,
    "eval": EvalSection,
    "grid": GridSection,
    "theory": TheorySection,
}


def from_dict(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(raw) - set(SECTIONS) - {"out"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    parts = {k: _section(cls, raw.get(k, {}), k) for k, cls in SECTIONS.items()}
    out = raw.get("out", "runs")
    if not isinstance(out, str):
        raise ConfigError("out must be a string")
    try:
        return ExperimentConfig(**parts, out=out).validate()
    except (TypeError, ValueError) as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(str(e)) from None


def load(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: {e}") from None
    except OSError as e:
        raise ConfigError(f"cannot read config: {e}") from None
    return from_dict(raw)
