"""Training loop: adapter updates, per-batch scoring, epoch smoothing and pruning."""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import alloc, score
from .errors import NonFiniteError
from .ig import NetworkPath, ScoreField, aggregate_epoch, draw_node, stochastic_from_values
from .linalg import Prng, canonicalize, frobenius_norm, svd_product
from .model import Network, forward_loss, loss_and_grad_ab

OPTIMIZERS = ("sgd", "adam")
ABLATIONS = ("none", "no_alpha", "multiplicative_score")
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    batch_size: int = 128
    epochs: int = 12
    n_quad: int = 20
    beta1: float = 0.85
    beta2: float = 0.85
    epsilon: float = 1e-6
    schedule: alloc.PruneSchedule = field(default_factory=alloc.PruneSchedule)
    optimizer: str = "adam"
    patience: int = 10
    seed: int = 0
    ablation: str = "none"
    ig_weighting: str = "verbatim"
    uncertainty_center: str = "updated"
    svd_every: int = 1

    def __post_init__(self):
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")
        if self.ablation not in ABLATIONS:
            raise ValueError(f"ablation must be one of {ABLATIONS}")
        if self.n_quad < 2:
            raise ValueError("n_quad must be >= 2")
        if self.batch_size < 1 or self.epochs < 1 or self.patience < 1 or self.svd_every < 1:
            raise ValueError("batch_size, epochs, patience and svd_every must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


# --- optimizer ----------------------------------------------------------------


class Optimizer:
    """SGD or bias-corrected Adam over a flat list of arrays."""

    def __init__(self, kind="adam", lr=0.01):
        self.kind, self.lr = kind, lr
        self.reset()

    def reset(self):
        self.t = 0
        self.m = None
        self.v = None

    def step(self, params, grads):
        for g in grads:
            if not np.all(np.isfinite(g)):
                raise NonFiniteError("non-finite gradient passed to the optimizer")
        if self.kind == "sgd":
            out = [p - self.lr * g for p, g in zip(params, grads)]
        else:
            b1, b2 = ADAM_BETAS
            if self.m is None or [m.shape for m in self.m] != [p.shape for p in params]:
                self.t = 0
                self.m = [np.zeros_like(p) for p in params]
                self.v = [np.zeros_like(p) for p in params]
            self.t += 1
            out = []
            for i, (p, g) in enumerate(zip(params, grads)):
                self.m[i] = b1 * self.m[i] + (1 - b1) * g
                self.v[i] = b2 * self.v[i] + (1 - b2) * g * g
                mhat = self.m[i] / (1 - b1**self.t)
                vhat = self.v[i] / (1 - b2**self.t)
                out.append(p - self.lr * mhat / (np.sqrt(vhat) + ADAM_EPS))
        for p in out:
            if not np.all(np.isfinite(p)):
                raise NonFiniteError("optimizer produced non-finite parameters")
        return out


def optimizer_step(params, grads, cfg: TrainConfig, opt: Optimizer | None = None):
    """Apply one update; pass ``opt`` to carry Adam moments between calls."""
    if len(params) != len(grads) or any(p.shape != g.shape for p, g in zip(params, grads)):
        raise ValueError("parameter and gradient shapes differ")
    opt = opt or Optimizer(cfg.optimizer, cfg.learning_rate)
    return opt.step(params, grads)


# --- early stopping -------------------------------------------------------------


class EarlyStopper:
    """Tracks the best loss; signals a stop after ``patience`` non-improving evaluations."""

    def __init__(self, patience, baseline=math.inf, params=None):
        self.patience = patience
        self.best = baseline
        self.best_params = params
        self.best_index = 0
        self.evaluations = 0
        self.bad = 0

    def observe(self, loss, params) -> bool:
        self.evaluations += 1
        if loss < self.best:
            self.best, self.best_params, self.best_index = loss, params, self.evaluations
            self.bad = 0
        else:
            self.bad += 1
        return self.bad >= self.patience


def early_stop_loop(params, step_fn, eval_fn, patience, max_steps):
    """Run ``params = step_fn(params)`` until validation stalls or ``max_steps``.

    ``eval_fn(params)`` gives the validation loss. The entry point is the
    initial best. Returns ``(best_params, best_loss, evaluations)``.
    """
    stopper = EarlyStopper(patience, eval_fn(params), params)
    for _ in range(max_steps):
        params = step_fn(params)
        if stopper.observe(eval_fn(params), params):
            break
    return stopper.best_params, stopper.best, stopper.evaluations


# --- report ---------------------------------------------------------------------


@dataclass
class RunReport:
    status: str = "ok"
    config: dict = field(default_factory=dict)
    data: dict = field(default_factory=dict)
    epochs: list = field(default_factory=list)
    prune_events: list = field(default_factory=list)
    allocation: list = field(default_factory=list)
    score_stats: list = field(default_factory=list)
    quadrature: list = field(default_factory=list)
    early_stopping: dict = field(default_factory=dict)
    final_ranks: list = field(default_factory=list)
    trainable_parameters: int = 0
    test_loss: float | None = None
    w0_unchanged: bool = True
    diagnostic: str | None = None
    wall_clock_seconds: float = 0.0

    def to_dict(self):
        return asdict(self)


def _factors(net: Network):
    return [x for layer in net.layers for x in (layer.a, layer.b)]


def _set_factors(net: Network, flat):
    return net.with_factors(list(zip(flat[0::2], flat[1::2])))


def _views(net):
    return [canonicalize(svd_product(layer.a, layer.b)) for layer in net.layers]


def _series_stats(xs):
    x = np.asarray(xs, dtype=np.float64)
    mean = float(x.mean())
    var = float(x.var())
    if x.size > 2 and var > 0:
        c = x - mean
        lag1 = float(np.sum(c[1:] * c[:-1]) / np.sum(c * c))
    else:
        lag1 = None
    return mean, var, lag1


def trainable_parameters(net: Network) -> int:
    return sum(layer.a.size + layer.b.size for layer in net.layers)


def _guarantee_each_layer(scores, selected, n_layers):
    """Swap in each empty layer's best triplet for the weakest selected one elsewhere."""
    ranked = sorted(scores, key=alloc._rank_key)
    selected = set(selected)
    for layer in range(n_layers):
        if any(l == layer for l, _ in selected):
            continue
        best = next(s for s in ranked if s.layer_id == layer)
        counts = {}
        for l, _ in selected:
            counts[l] = counts.get(l, 0) + 1
        victim = next(s for s in reversed(ranked)
                      if (s.layer_id, s.triplet_index) in selected and counts[s.layer_id] > 1)
        selected.discard((victim.layer_id, victim.triplet_index))
        selected.add((best.layer_id, best.triplet_index))
    return selected


def _config_dict(cfg: TrainConfig):
    d = asdict(cfg)
    d["schedule"] = asdict(cfg.schedule)
    return d


def train(net: Network, data, cfg: TrainConfig):
    """Run the adaptive-rank training loop; returns ``(report, final_network)``."""
    t0 = time.perf_counter()
    report = RunReport(config=_config_dict(cfg), data=dict(getattr(data, "provenance", {})))
    spe = data.steps_per_epoch(cfg.batch_size)
    if spe < 1:
        raise ValueError("training split smaller than one batch")
    sched = cfg.schedule
    if sched.n_layers != len(net.layers):
        raise ValueError(f"schedule expects {sched.n_layers} layers, network has {len(net.layers)}")
    if sched.b_final < len(net.layers):
        raise ValueError(f"budget infeasible: b_final={sched.b_final} leaves a layer without "
                         f"any triplet ({len(net.layers)} layers)")
    if any(layer.rank != sched.r0 for layer in net.layers):
        raise ValueError(f"adapters must start at rank r0={sched.r0}")
    total_steps = cfg.epochs * spe
    boundaries = [b for b in sched.boundaries(spe) if b <= total_steps]
    end_step = sched.steps(spe)[1]
    scoring = bool(boundaries)

    w0_before = [layer.w0.copy() for layer in net.layers]
    net = net.copy()
    rng = Prng(cfg.seed, "train")
    ig_rng = rng.split("ig-nodes")
    opt = Optimizer(cfg.optimizer, cfg.learning_rate)
    state = score.ImportanceState(beta1=cfg.beta1, beta2=cfg.beta2, epsilon=cfg.epsilon,
                                  center=cfg.uncertainty_center)
    n = cfg.n_quad
    tracked = {}
    phase = "adapt"
    stopper = None
    step = 0
    views = None

    try:
        for epoch in range(cfg.epochs):
            per_batch, losses, nodes = [], [], []
            stop = False
            for batch in data.minibatches(cfg.batch_size, rng.split(f"shuffle{epoch}")):
                loss, grads = loss_and_grad_ab(net, batch, 1.0)
                losses.append(loss)
                flat = opt.step(_factors(net), [g for pair in grads for g in pair])
                net = _set_factors(net, flat)
                step += 1
                if phase == "finetune":
                    val = forward_loss(net, data.val, 1.0)
                    if stopper.observe(val, net.copy()):
                        stop = True
                        break
                    continue
                if not scoring:
                    continue
                if views is None or step % cfg.svd_every == 0 or any(
                        v.rank != l.rank for v, l in zip(views, net.layers)):
                    views = _views(net)
                path = NetworkPath(net, views, batch)
                k = n if cfg.ablation == "no_alpha" else draw_node(ig_rng, n)
                nodes.append(k)
                s = stochastic_from_values(path.weights, path(0.0), path(k / n), path(1.0), n,
                                           cfg.ig_weighting)
                per_batch.append(path.field(s))

            record = {
                "epoch": epoch + 1,
                "phase": phase,
                "steps": step,
                "train_loss": float(np.mean(losses)) if losses else None,
                "val_loss": forward_loss(net, data.val, 1.0),
                "ranks": net.ranks,
            }
            report.epochs.append(record)
            for layer in net.layers:
                report.allocation.append({"epoch": epoch + 1, "layer": layer.layer_id,
                                          "rank": layer.rank})
            if stop:
                break
            if phase == "finetune" or not per_batch:
                continue

            s_agg = aggregate_epoch(per_batch, len(per_batch))
            state = score.update(state, s_agg)
            field_ = (score.multiplicative(state) if cfg.ablation == "multiplicative_score"
                      else score.snr(state))
            report.quadrature.append({
                "epoch": epoch + 1,
                "batches": len(per_batch),
                "gradient_evaluations": 3 * len(per_batch),
                "mean_alpha": float(np.mean(nodes)) / n,
                "node_counts": np.bincount(nodes, minlength=n + 1)[1:].tolist(),
            })
            flat_agg = s_agg.flat()
            stats = {"epoch": epoch + 1, "s_agg_mean": float(flat_agg.mean()),
                     "s_agg_var": float(flat_agg.var()),
                     "snr_mean": float(field_.flat().mean()), "entries": []}
            for li in range(len(net.layers)):
                for kind, arr in (("P", s_agg.p[li]), ("Q", s_agg.q[li])):
                    key = f"L{li}_{kind}00"
                    tracked.setdefault(key, []).append(float(arr[0, 0]))
                    mean, var, lag1 = _series_stats(tracked[key])
                    stats["entries"].append({"entry": key, "value": tracked[key][-1], "mean": mean,
                                             "variance": var, "lag1_autocorr": lag1})
            report.score_stats.append(stats)

            prev = step - spe
            if not any(prev < b <= step for b in boundaries):
                continue
            views = _views(net)
            budget = alloc.budget_at(sched, step, spe)
            scores = alloc.triplet_scores(views, field_)
            selected = alloc.select_top_b(scores, budget)
            selected = _guarantee_each_layer(scores, selected, len(net.layers))
            keep = alloc.local_selection(selected, len(net.layers))
            new_factors, drift, bound = [], [], []
            for layer, view, idx in zip(net.layers, views, keep):
                a, b = alloc.prune_rebuild(view, idx)
                drift.append(frobenius_norm(layer.a @ layer.b - a @ b))
                bound.append(alloc.dropped_mass(view, idx))
                new_factors.append((a, b))
            net = net.with_factors(new_factors)
            state = score.reindex(state, keep)
            opt.reset()
            views = None
            report.prune_events.append({
                "epoch": epoch + 1, "step": step, "budget": budget, "ranks": net.ranks,
                "kept": keep, "drift": drift, "dropped_mass": bound,
                "scores": [[s.layer_id, s.triplet_index, s.value, s.lam] for s in scores],
            })
            if step >= end_step:
                phase = "finetune"
                stopper = EarlyStopper(cfg.patience, forward_loss(net, data.val, 1.0), net.copy())

        if stopper is not None:
            net = stopper.best_params
            report.early_stopping = {"evaluations": stopper.evaluations,
                                     "best_val_loss": stopper.best,
                                     "best_index": stopper.best_index,
                                     "stopped_early": stopper.bad >= stopper.patience}
        report.test_loss = forward_loss(net, data.test, 1.0)
    except NonFiniteError as exc:
        report.status = "diverged"
        report.diagnostic = f"step {step}: {exc}"

    report.final_ranks = net.ranks
    report.trainable_parameters = trainable_parameters(net)
    report.w0_unchanged = all(np.array_equal(a, layer.w0) for a, layer in zip(w0_before, net.layers))
    report.wall_clock_seconds = time.perf_counter() - t0
    return report, net
