"""Command line: theory, gen-data, train, eval, analyze, grid.

Exit codes: 0 success, 1 invalid configuration or input, 2 numerical failure,
3 a theory law failed its check. ``REC_DYN_OUT`` overrides ``--out``.
"""
from __future__ import annotations

import os

# one BLAS thread per process; grid parallelism comes from --jobs
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import argparse  # noqa: E402
import csv  # noqa: E402
import logging  # noqa: E402
import math  # noqa: E402
import multiprocessing  # noqa: E402
import sys  # noqa: E402
import time  # noqa: E402

import numpy as np  # noqa: E402

from . import analysis, config, persist, rmtverify  # noqa: E402
from .connectivity import FULL, parse_rank, rank_label  # noqa: E402
from .envsim import ExpertPolicy, PointChaseEnv, closed_loop_eval, default_perturbations, generate_rollouts, shift_score  # noqa: E402
from .errors import ConfigError, NumericalFailure  # noqa: E402
from .training import Controller, train  # noqa: E402

log = logging.getLogger("recdyn")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_THEORY = 0, 1, 2, 3

EVAL_COLUMNS = ("model", "rank", "sparsity", "seed", "condition", "normalized_reward", "se", "aborted")
LOSS_COLUMNS = ("model", "rank", "sparsity", "seed", "lr", "epoch", "train_loss", "val_loss")
ANALYSIS_COLUMNS = (
    "model", "rank", "sparsity", "seed",
    "spectral_radius", "spectral_norm", "input_spectral_norm",
    "decay_slope", "recurrent_ev5", "input_ev5", "full_ev5",
    "time_constant_dev", "w0_fro", "delta_fro",
)
CONDITIONS = ("in_dist", "noise", "dropout", "offset", "shift_mean")


def _num(x):
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return "nan" if math.isnan(x) else repr(x)
    return str(x)


def write_csv(path, columns, rows):
    os.makedirs(os.path.dirname(os.fspath(path)) or ".", exist_ok=True)
    tmp = f"{path}.tmp"
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_num(r[c]) for c in columns])
    os.replace(tmp, path)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def model_label(kind, rank, sparsity, seed):
    return f"{kind}_r{rank_label(rank)}_s{sparsity:g}_seed{seed}"


def out_dir(args, cfg):
    return os.environ.get("REC_DYN_OUT") or args.out or cfg.out


# ---- dataset -------------------------------------------------------------

def make_dataset(cfg, seed=None):
    env = PointChaseEnv(horizon=cfg.data.horizon)
    return generate_rollouts(env, n=cfg.data.episodes, seed=cfg.data.env_seed if seed is None else seed)


def dataset_for(cfg, out, path=None):
    """Load ``path`` or ``out/dataset.json``, generating and saving the latter when missing."""
    if path:
        return persist.load_dataset(path)
    default = os.path.join(out, "dataset.json")
    if not os.path.exists(default):
        persist.save_dataset(make_dataset(cfg), default)
    return persist.load_dataset(default)


# ---- single model --------------------------------------------------------

def train_one(cfg, ds, kind, rank, sparsity, seed, out):
    """Train and write the checkpoint and loss CSV; returns the checkpoint path."""
    tcfg = cfg.train_config(kind, rank, sparsity)
    label = model_label(tcfg.kind, tcfg.rank, tcfg.sparsity, seed)
    t0 = time.perf_counter()
    res = train(tcfg, ds, seed)
    meta = {
        "epochs": tcfg.epochs,
        "lr": res.lr,
        "train_loss": res.train_loss,
        "val_loss": res.val_loss,
        "dataset_digest": ds.digest(),
    }
    echo = cfg.to_dict()
    echo["model"].update(kind=tcfg.kind, rank=rank_label(tcfg.rank), sparsity=tcfg.sparsity)
    path = os.path.join(out, "checkpoints", label + ".json")
    persist.save_checkpoint(path, res.model, res.w0, echo, seed, meta)
    rows = []
    for lr, (tr, va) in sorted(res.runs.items()):
        for epoch, (a, b) in enumerate(zip(tr, va)):
            rows.append(dict(model=tcfg.kind, rank=rank_label(tcfg.rank), sparsity=tcfg.sparsity, seed=seed,
                             lr=lr, epoch=epoch, train_loss=a, val_loss=b))
    write_csv(os.path.join(out, "losses", label + ".csv"), LOSS_COLUMNS, rows)
    log.info("trained %s in %.1fs (val %.4g -> %.4g)", label, time.perf_counter() - t0, res.val_loss[0], res.val_loss[-1])
    return path


def _ident(ck):
    m = ck["config"]["model"]
    return m["kind"], m["rank"], float(m["sparsity"]), ck["seed"]


def evaluate_policy(policy, obs_std, cfg, ident, record=None):
    """One row per condition plus the shift mean; ``policy`` needs reset/act."""
    env = PointChaseEnv(horizon=cfg.data.horizon)
    perts = default_perturbations(obs_std, cfg.eval.apply_prob, cfg.eval.scale)
    kind, rank, s, seed = ident
    reports = {"in_dist": closed_loop_eval(env, policy, None, cfg.eval.episodes, cfg.eval.seed, record=record)}
    for name in cfg.eval.perturbations:
        reports[name] = closed_loop_eval(env, policy, perts[name], cfg.eval.episodes, cfg.eval.seed)
    base = dict(model=kind, rank=rank, sparsity=s, seed=seed)
    rows = [dict(base, condition=c, normalized_reward=r.normalized, se=r.se, aborted=int(r.aborted.sum()))
            for c, r in reports.items()]
    shifted = [reports[k] for k in cfg.eval.perturbations]
    if shifted:
        se = float(np.sqrt(sum(r.se**2 for r in shifted)) / len(shifted))
        rows.append(dict(base, condition="shift_mean", normalized_reward=shift_score(reports), se=se,
                         aborted=int(sum(r.aborted.sum() for r in shifted))))
    return rows, reports


def eval_checkpoint(ck, cfg):
    model = ck["model"]
    return evaluate_policy(Controller(model), model.obs_std, cfg, _ident(ck))[0]


def _fit_slope(values):
    if len(values) < 2:
        return math.nan
    return float(np.polyfit(np.arange(len(values)), values, 1)[0])


def analyze_checkpoint(ck, cfg):
    model = ck["model"]
    ctrl = Controller(model, record=True)
    seen = []
    env = PointChaseEnv(horizon=cfg.data.horizon)
    closed_loop_eval(env, ctrl, None, cfg.eval.episodes, cfg.eval.seed, record=lambda t, obs, a: seen.append(obs))
    obs = np.stack(seen, axis=1)  # (episodes, T, obs_dim)
    slopes = [_fit_slope(analysis.gradient_decay(model, obs[i]).values) for i in range(min(cfg.eval.decay_episodes, len(obs)))]
    dims = analysis.effective_dimensionality(ctrl.log())
    spec = analysis.spectral_report(model)
    inp = analysis.input_spectral_report(model)
    task = analysis.task_dimension(ck["w0"], model)
    tc = analysis.time_constant_deviation(model, ctrl.log()) if model.cell.kind == "cfc" else math.nan
    kind, rank, s, seed = _ident(ck)
    return dict(
        model=kind, rank=rank, sparsity=s, seed=seed,
        spectral_radius=spec.spectral_radius, spectral_norm=spec.spectral_norm, input_spectral_norm=inp.spectral_norm,
        decay_slope=float(np.mean(slopes)) if slopes else math.nan,
        recurrent_ev5=dims.recurrent_ev5, input_ev5=dims.input_ev5, full_ev5=dims.full_ev5,
        time_constant_dev=tc, w0_fro=task.w0_total, delta_fro=task.delta_total,
    )


# ---- grid ----------------------------------------------------------------

def grid_jobs(cfg):
    return [(kind, parse_rank(r), float(s), int(seed))
            for kind in cfg.grid.cells for r in cfg.grid.ranks for s in cfg.grid.sparsities for seed in cfg.train.seeds]


def _rank_key(rank):
    return math.inf if rank in (FULL, None) else int(rank)


def _row_key(row):
    kinds = ("rnn", "lstm", "gru", "cfc")
    kind = row["model"]
    cond = CONDITIONS.index(row["condition"]) if "condition" in row else 0
    extra = (float(row["lr"]), int(row["epoch"])) if "epoch" in row else ()
    return (kinds.index(kind) if kind in kinds else len(kinds), kind, _rank_key(row["rank"]), float(row["sparsity"]),
            int(row["seed"]), cond, *extra)


def run_cell(task):
    """Grid worker: train unless the checkpoint exists, then eval and analyze unless done."""
    cfg_dict, ds_path, out, (kind, rank, s, seed) = task
    cfg = config.from_dict(cfg_dict)
    label = model_label(kind, rank, s, seed)
    ck_path = os.path.join(out, "checkpoints", label + ".json")
    eval_path = os.path.join(out, "cells", label + ".eval.csv")
    an_path = os.path.join(out, "cells", label + ".analysis.csv")
    try:
        if not os.path.exists(ck_path):
            train_one(cfg, persist.load_dataset(ds_path), kind, rank, s, seed, out)
        if not (os.path.exists(eval_path) and os.path.exists(an_path)):
            ck = persist.load_checkpoint(ck_path)
            write_csv(eval_path, EVAL_COLUMNS, eval_checkpoint(ck, cfg))
            write_csv(an_path, ANALYSIS_COLUMNS, [analyze_checkpoint(ck, cfg)])
    except NumericalFailure as e:
        return label, f"numerical failure: {e}"
    return label, None


def merge(out, pattern_dir, suffix, columns, target):
    rows = []
    d = os.path.join(out, pattern_dir)
    if os.path.isdir(d):
        for name in sorted(os.listdir(d)):
            if name.endswith(suffix):
                rows.extend(read_csv(os.path.join(d, name)))
    rows.sort(key=_row_key)
    with open(target + ".tmp", "w", newline="") as fh:
        w = csv.DictWriter(fh, columns, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    os.replace(target + ".tmp", target)
    return len(rows)


# ---- commands ------------------------------------------------------------

def cmd_theory(args, cfg):
    out = out_dir(args, cfg)
    t = cfg.theory
    trials = args.trials or t.trials
    seed = args.seed if args.seed is not None else 0
    t0 = time.perf_counter()
    checks = rmtverify.run_all(seed, t.n, trials, t.decay_n, args.trials or t.decay_trials, t.lemma_trials)
    path = os.path.join(out, "theory.csv")
    os.makedirs(out, exist_ok=True)
    rmtverify.write_csv(checks, path)
    failed = [r for c in checks for r in c.failures()]
    for r in failed:
        log.warning("law failed: %s %s empirical=%.6g predicted=%.6g tol=%.3g", r.law, r.param, r.empirical, r.predicted, r.tol)
    log.info("theory: %d rows, %d failed, %.0fs -> %s", sum(len(c.rows) for c in checks), len(failed), time.perf_counter() - t0, path)
    return EXIT_THEORY if failed else EXIT_OK


def cmd_gen_data(args, cfg):
    out = out_dir(args, cfg)
    if args.episodes is not None:
        cfg.data.episodes = args.episodes
    ds = make_dataset(cfg, args.seed)
    path = args.data or os.path.join(out, "dataset.json")
    persist.save_dataset(ds, path)
    log.info("wrote %d episodes to %s (sha256 %s)", len(ds), path, ds.digest()[:12])
    return EXIT_OK


def cmd_train(args, cfg):
    out = out_dir(args, cfg)
    ds = dataset_for(cfg, out, args.data)
    seed = args.seed if args.seed is not None else cfg.train.seeds[0]
    m = cfg.model
    path = train_one(cfg, ds, m.kind, m.rank, m.sparsity, seed, out)
    print(path)
    return EXIT_OK


def _eval_rows(args, cfg):
    if args.seed is not None:
        cfg.eval.seed = args.seed
    rows = []
    for ck_path in args.checkpoints:
        if ck_path == "expert":
            std = make_dataset(cfg).observations.reshape(-1, 6).std(axis=0)
            rows.extend(evaluate_policy(ExpertPolicy(), std, cfg, ("expert", FULL, 0.0, cfg.eval.seed))[0])
        else:
            rows.extend(eval_checkpoint(persist.load_checkpoint(ck_path), cfg))
    return rows


def cmd_eval(args, cfg):
    out = out_dir(args, cfg)
    rows = _eval_rows(args, cfg)
    path = args.csv or os.path.join(out, "eval.csv")
    write_csv(path, EVAL_COLUMNS, rows)
    for r in rows:
        flag = f"  ABORTED x{r['aborted']}" if r["aborted"] else ""
        print(f"{r['model']:>6} r={r['rank']:<4} s={r['sparsity']:<4g} seed={r['seed']:<4} {r['condition']:<10} "
              f"{r['normalized_reward']:.4f} +/- {r['se']:.4f}{flag}")
    return EXIT_OK


def cmd_analyze(args, cfg):
    out = out_dir(args, cfg)
    if args.seed is not None:
        cfg.eval.seed = args.seed
    rows = [analyze_checkpoint(persist.load_checkpoint(p), cfg) for p in args.checkpoints]
    path = args.csv or os.path.join(out, "analysis.csv")
    write_csv(path, ANALYSIS_COLUMNS, rows)
    log.info("wrote %d rows to %s", len(rows), path)
    return EXIT_OK


def cmd_grid(args, cfg):
    out = out_dir(args, cfg)
    if args.seed is not None:
        cfg.train.seeds = [args.seed]
    os.makedirs(out, exist_ok=True)
    dataset_for(cfg, out, args.data)
    ds_path = args.data or os.path.join(out, "dataset.json")
    jobs = grid_jobs(cfg)
    ck_dir = os.path.join(out, "checkpoints")
    resumed = len(os.listdir(ck_dir)) if os.path.isdir(ck_dir) else 0
    tasks = [(cfg.to_dict(), ds_path, out, j) for j in jobs]
    t0 = time.perf_counter()
    failures = []
    if args.jobs > 1:
        ctx = multiprocessing.get_context("spawn")
        with ctx.Pool(args.jobs) as pool:
            results = list(pool.imap_unordered(run_cell, tasks))
    else:
        results = [run_cell(t) for t in tasks]
    failures = [(label, msg) for label, msg in results if msg]
    for label, msg in failures:
        log.error("%s: %s", label, msg)
    n_eval = merge(out, "cells", ".eval.csv", EVAL_COLUMNS, os.path.join(out, "eval.csv"))
    merge(out, "cells", ".analysis.csv", ANALYSIS_COLUMNS, os.path.join(out, "analysis.csv"))
    merge(out, "losses", ".csv", LOSS_COLUMNS, os.path.join(out, "losses.csv"))
    elapsed = time.perf_counter() - t0
    persist.write_json({"elapsed_s": elapsed, "jobs": args.jobs, "cells": len(jobs), "checkpoints_at_start": resumed,
                        "failures": len(failures)}, os.path.join(out, "grid_run.json"))
    log.info("grid: %d cells, %d eval rows, %.0fs", len(jobs), n_eval, elapsed)
    return EXIT_NUMERIC if failures else EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="recdyn", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment config")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--jobs", type=int, default=1, help="parallel grid workers")
    common.add_argument("--out", default=None, help="output directory (REC_DYN_OUT overrides)")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("theory", parents=[common], help="check the random-matrix laws")
    s.add_argument("--trials", type=int, default=None)
    s.set_defaults(fn=cmd_theory)

    s = sub.add_parser("gen-data", parents=[common], help="record expert rollouts")
    s.add_argument("--episodes", type=int, default=None)
    s.add_argument("--data", default=None, help="dataset path (default OUT/dataset.json)")
    s.set_defaults(fn=cmd_gen_data)

    s = sub.add_parser("train", parents=[common], help="train the model in the config's model section")
    s.add_argument("--data", default=None)
    s.set_defaults(fn=cmd_train)

    for name, fn, what in (("eval", cmd_eval, "closed-loop evaluation"), ("analyze", cmd_analyze, "post-hoc analysis")):
        s = sub.add_parser(name, parents=[common], help=what)
        s.add_argument("checkpoints", nargs="+", help="checkpoint files" + (" or 'expert'" if name == "eval" else ""))
        s.add_argument("--csv", default=None)
        s.set_defaults(fn=fn)

    s = sub.add_parser("grid", parents=[common], help="train, evaluate and analyze the whole grid (resumable)")
    s.add_argument("--data", default=None)
    s.set_defaults(fn=cmd_grid)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s",
                        stream=sys.stderr)
    try:
        cfg = config.load(args.config) if args.config else config.from_dict({})
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        return args.fn(args, cfg)
    except NumericalFailure as e:
        log.error("numerical failure: %s", e)
        return EXIT_NUMERIC
    except (ConfigError, ValueError) as e:
        log.error("invalid configuration or input: %s", e)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
