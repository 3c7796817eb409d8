"""JSON files for datasets and checkpoints.

Arrays are nested lists in row-major order. Python writes floats with the
shortest decimal that reads back to the same double, so a save/load cycle is
bit-exact.
"""
from __future__ import annotations

import json
import os
import tempfile

import numpy as np

from .cells import CellParams
from .connectivity import LowRankSparseFactors, parse_rank, rank_label
from .data import Dataset
from .errors import ConfigError
from .training import PolicyModel

SCHEMA_VERSION = 1


def _arr(a):
    return np.asarray(a, dtype=np.float64).tolist()


def _load_arr(x, ndim):
    a = np.array(x, dtype=np.float64)
    if a.ndim != ndim:
        # empty nested lists lose their trailing shape
        if a.size == 0:
            return a.reshape((0,) * ndim)
        raise ConfigError(f"expected a {ndim}-d array, got {a.ndim}-d")
    return a


def write_json(obj, path):
    """Write through a temporary file so readers never see a partial document."""
    path = os.fspath(path)
    d = os.path.dirname(path) or "."
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            json.dump(obj, fh, separators=(",", ":"))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read {path}: {e}") from None


def dataset_to_dict(ds: Dataset) -> dict:
    return {
        "schema": SCHEMA_VERSION,
        "kind": "dataset",
        "shape": list(ds.observations.shape[:2]),
        "seeds": [int(s) for s in ds.seeds],
        "observations": _arr(ds.observations),
        "actions": _arr(ds.actions),
        "train": [int(i) for i in ds.train],
        "validation": [int(i) for i in ds.validation],
        "digest": ds.digest(),
    }


def dataset_from_dict(d: dict) -> Dataset:
    if d.get("kind") != "dataset":
        raise ConfigError("not a dataset file")
    n, t = d["shape"]
    obs = _load_arr(d["observations"], 3).reshape(n, t, -1) if n else np.zeros((0, t, 6))
    act = _load_arr(d["actions"], 3).reshape(n, t, -1) if n else np.zeros((0, t, 2))
    ds = Dataset(obs, act, list(d["seeds"]), d["train"], d["validation"])
    if ds.digest() != d["digest"]:
        raise ConfigError("dataset digest mismatch")
    return ds


def save_dataset(ds, path):
    write_json(dataset_to_dict(ds), path)


def load_dataset(path) -> Dataset:
    return dataset_from_dict(read_json(path))


def cell_to_dict(cell: CellParams) -> dict:
    gates = []
    for name, f in zip(cell.gates, cell.recurrent):
        gates.append({
            "gate": name,
            "w1": _arr(f.w1),
            "w2": None if f.w2 is None else _arr(f.w2),
            "mask": _arr(f.mask),
        })
    return {
        "kind": cell.kind,
        "rank": rank_label(cell.rank),
        "sparsity": cell.sparsity,
        "inp": _arr(cell.inp),
        "bias": _arr(cell.bias),
        "recurrent": gates,
    }


def cell_from_dict(d: dict) -> CellParams:
    rank = parse_rank(d["rank"])
    rec = []
    for g in d["recurrent"]:
        w2 = None if g["w2"] is None else _load_arr(g["w2"], 2)
        rec.append(LowRankSparseFactors(_load_arr(g["w1"], 2), w2, _load_arr(g["mask"], 2), rank, float(d["sparsity"])))
    return CellParams(d["kind"], rec, _load_arr(d["inp"], 3), _load_arr(d["bias"], 2))


MODEL_FIELDS = ("enc_w1", "enc_b1", "enc_w2", "enc_b2", "head_w", "head_b", "obs_mean", "obs_std")


def model_to_dict(m: PolicyModel) -> dict:
    out = {k: _arr(getattr(m, k)) for k in MODEL_FIELDS}
    out["cell"] = cell_to_dict(m.cell)
    return out


def model_from_dict(d: dict) -> PolicyModel:
    ndim = {"enc_w1": 2, "enc_w2": 2, "head_w": 2}
    kw = {k: _load_arr(d[k], ndim.get(k, 1)) for k in MODEL_FIELDS}
    return PolicyModel(cell=cell_from_dict(d["cell"]), **kw)


def save_checkpoint(path, model, w0, config: dict, seed: int, meta: dict):
    write_json({
        "schema": SCHEMA_VERSION,
        "kind": "checkpoint",
        "config": config,
        "seed": int(seed),
        "model": model_to_dict(model),
        "w0": cell_to_dict(w0),
        "meta": meta,
    }, path)


def load_checkpoint(path) -> dict:
    """Returns the document with ``model`` and ``w0`` rebuilt as objects."""
    d = read_json(path)
    if d.get("kind") != "checkpoint":
        raise ConfigError(f"{path} is not a checkpoint")
    if d.get("schema") != SCHEMA_VERSION:
        raise ConfigError(f"unsupported checkpoint schema {d.get('schema')}")
    d["model"] = model_from_dict(d["model"])
    d["w0"] = cell_from_dict(d["w0"])
    return d
