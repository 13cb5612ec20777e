"""Seeded runs, seed sweeps and the adaptive vs fixed-rank comparison."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .config import ConfigError, build
from .trainer import train

WORKERS_ENV = "PATHLORA_WORKERS"


def worker_count(default=1):
    raw = os.environ.get(WORKERS_ENV, "")
    if not raw:
        return default
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}", WORKERS_ENV) from None
    if n < 1:
        raise ConfigError(f"{WORKERS_ENV} must be >= 1", WORKERS_ENV)
    return n


def map_seeds(fn, seeds, workers=None):
    """``[fn(s) for s in seeds]``, fanned out over threads; order follows ``seeds``."""
    workers = worker_count() if workers is None else workers
    seeds = list(seeds)
    if workers <= 1 or len(seeds) <= 1:
        return [fn(s) for s in seeds]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, seeds))


def run_seed(cfg, seed):
    setup = build(cfg, seed)
    report, _ = train(setup.net, setup.data, setup.train_config)
    return report


def fixed_baseline(cfg):
    """Config for plain LoRA holding the adaptive run's final triplet budget.

    The budget is spread evenly over layers and the prune schedule is pushed
    past the last epoch so no event fires.
    """
    n_layers = len(cfg["layer_dims"]) - 1
    if cfg["b_final"] % n_layers:
        raise ConfigError(f"b_final={cfg['b_final']} does not split evenly over {n_layers} layers",
                          "b_final")
    r = cfg["b_final"] // n_layers
    out = dict(cfg)
    out.update(r0=r, b_final=r * n_layers, start_epoch=float(cfg["epochs"] + 1),
               end_epoch=float(cfg["epochs"] + 2))
    return out


def compare(cfg, seeds, baselines=("fixed-lora",), workers=None):
    """Per-seed final test loss for the adaptive method and each baseline."""
    methods = {"adaptive": cfg}
    for name in baselines:
        if name != "fixed-lora":
            raise ConfigError(f"unknown baseline '{name}'", name)
        methods[name] = fixed_baseline(cfg)
    jobs = [(m, s) for m in methods for s in seeds]
    reports = map_seeds(lambda job: run_seed(methods[job[0]], job[1]), jobs, workers)
    rows = []
    for (method, seed), rep in zip(jobs, reports):
        rows.append({"seed": seed, "method": method, "status": rep.status,
                     "final_ranks": " ".join(map(str, rep.final_ranks)),
                     "total_rank": sum(rep.final_ranks),
                     "trainable_parameters": rep.trainable_parameters,
                     "test_loss": rep.test_loss})
    medians = {}
    for method in methods:
        losses = [r["test_loss"] for r in rows if r["method"] == method and r["test_loss"] is not None]
        medians[method] = float(np.median(losses)) if losses else None
    summary = {"seeds": list(seeds), "median_test_loss": medians}
    for name in baselines:
        a, b = medians["adaptive"], medians[name]
        summary[f"adaptive_le_{name}"] = None if a is None or b is None else bool(a <= b)
    ranks = {}
    for method in methods:
        per = [[int(x) for x in r["final_ranks"].split()] for r in rows if r["method"] == method]
        ranks[method] = [float(v) for v in np.median(np.array(per), axis=0)]
    summary["median_final_ranks"] = ranks
    return rows, summary
