"""Empirical checks of the quadrature error terms on a fixed probe problem."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ig import (BoundInputs, NetworkPath, estimate_b, estimate_c2, node_values,
                 stochastic_from_values, theorem1_bound, trapezoid)
from .linalg import Prng, canonicalize, svd_product
from .model import (Batch, finite_diff_grad, grad_ab, grad_pq, max_relative_error,
                    random_network)
from .tasks import probe_problem


def probe_path(seed=3, batch_size=64, rank=8):
    net, batch = probe_problem(seed, batch_size, rank)
    views = [canonicalize(svd_product(l.a, l.b)) for l in net.layers]
    return NetworkPath(net, views, batch)


def loglog_slope(xs, ys):
    return float(np.polyfit(np.log(xs), np.log(ys), 1)[0])


def reference_scores(path, n_ref=4096):
    """Signed integral estimate and ``|w| * |integral|`` on the dense trapezoid grid."""
    integral = trapezoid(node_values(path, n_ref))
    return integral, np.abs(path.weights) * np.abs(integral)


def discretization(path, n_list=(2, 4, 8, 16, 32, 64), n_ref=4096, probes=64):
    """Summed |full-trapezoid score(N) - reference| for each N, with the C2 bound."""
    _, ref = reference_scores(path, n_ref)
    c2 = estimate_c2(path, probes=probes)
    w = np.abs(path.weights)
    rows = []
    for n in n_list:
        est = w * np.abs(trapezoid(node_values(path, n)))
        rows.append({"kind": "discretization", "param": n,
                     "error": float(np.sum(np.abs(est - ref))),
                     "bound": float(np.sum(w * c2 / (12.0 * n * n)))})
    slope = loglog_slope([r["param"] for r in rows], [r["error"] for r in rows])
    return rows, slope


def _sampled_scores(w, vals, n, nodes, weighting):
    """Per-batch single-node scores for each drawn node, shape (len(nodes), entries)."""
    return stochastic_from_values(w, vals[0], vals[nodes], vals[n], n, weighting)


def sampling(path, n=20, m_list=(4, 16, 64), seeds=200, weighting="verbatim", root_seed=0):
    """Spread over seeds of the M-batch mean of single-node scores.

    The statistic is the epoch score summed over all entries; every seed
    draws its own M nodes from a labeled stream.
    """
    vals = node_values(path, n)
    w = path.weights
    root = Prng(root_seed, f"sampling/{weighting}")
    stds, per_entry = {}, {}
    for m in m_list:
        totals, fields = [], []
        for s in range(seeds):
            nodes = root.split(f"M={m}/seed={s}").integers(1, n, m)
            agg = _sampled_scores(w, vals, n, nodes, weighting).mean(axis=0)
            totals.append(agg.sum())
            fields.append(agg)
        stds[m] = float(np.std(totals, ddof=1))
        per_entry[m] = np.std(np.stack(fields), axis=0, ddof=1)
    rows, ratios = [], {}
    for m in m_list:
        rows.append({"kind": "sampling", "param": m, "error": stds[m],
                     "bound": None})
        if 4 * m in stds:
            ratios[m] = stds[m] / stds[4 * m] if stds[4 * m] > 0 else None
            live = per_entry[4 * m] > 0
            ratios[f"{m}_entry_median"] = float(np.median(per_entry[m][live] / per_entry[4 * m][live]))
    return rows, ratios


def coverage(path, n=20, m=16, trials=200, delta=0.05, c_const=1.0, n_ref=4096, probes=64,
             weighting="verbatim", root_seed=0):
    """Fraction of (trial, entry) pairs whose epoch-score gap sits inside the bound.

    Gaps are measured against the dense reference and, separately, against the
    full N-node trapezoid score.
    """
    _, s_e = reference_scores(path, n_ref)
    vals = node_values(path, n)
    w = path.weights
    s_full = np.abs(w) * np.abs(trapezoid(vals))
    inputs = BoundInputs(c2_hat=estimate_c2(path, probes=probes), b_hat=estimate_b(path, n),
                         delta=delta, c_const=c_const)
    bound = theorem1_bound(w, inputs, n, m)
    live = w != 0
    root = Prng(root_seed, f"coverage/{weighting}")
    hits = hits_full = 0
    worst_ratio = 0.0
    for t in range(trials):
        nodes = root.split(f"trial={t}").integers(1, n, m)
        s_agg = _sampled_scores(w, vals, n, nodes, weighting).mean(axis=0)
        gap = np.abs(s_e - s_agg)[live]
        hits += int(np.sum(gap <= bound[live]))
        hits_full += int(np.sum(np.abs(s_full - s_agg)[live] <= bound[live]))
        worst_ratio = max(worst_ratio, float(np.max(gap / bound[live])))
    total = trials * int(live.sum())
    return {"weighting": weighting, "n": n, "m": m, "trials": trials, "delta": delta,
            "c": c_const, "b_hat": inputs.b_hat, "coverage": hits / total,
            "coverage_vs_full_trapezoid": hits_full / total, "worst_gap_over_bound": worst_ratio}


# --- finite-difference suite -----------------------------------------------------

GRAD_FLOOR = 1e-4


@dataclass
class GradCheckResult:
    worst: float
    where: dict | None
    configs: int
    checks: int

    def passed(self, tol=1e-5):
        return self.worst <= tol


def random_config(rng: Prng):
    """A small random tanh network, a batch and a path point."""
    n_layers = int(rng.integers(1, 4, 1)[0])
    dims = [int(d) for d in rng.integers(2, 13, n_layers + 1)]
    rank = int(rng.integers(1, min(dims) + 1, 1)[0])
    loss_kind = ("mse", "xent")[int(rng.integers(0, 2, 1)[0])]
    net = random_network(rng.split("net"), dims, rank=rank, activation="tanh",
                         loss_kind=loss_kind, adapter_scale=1.0)
    n = int(rng.integers(4, 17, 1)[0])
    x = rng.split("x").normal(n * dims[0]).reshape(n, dims[0])
    if loss_kind == "mse":
        y = rng.split("y").normal(n * dims[-1]).reshape(n, dims[-1])
    else:
        y = rng.split("y").integers(0, dims[-1], n).astype(np.float64)
    alpha = 0.05 + 0.95 * float(rng.random(1)[0])
    return net, Batch(x, y), alpha


def gradient_suite(seed=0, configs=100, h=1e-5, floor=GRAD_FLOOR, fault=None):
    """Analytic vs central-difference gradients over random tanh configurations.

    Each configuration checks dL/dA, dL/dB at the path point, the integrand
    gradients w.r.t. P and Q, and their alpha-scaled form. ``fault`` is a
    test hook: a callable applied to every analytic result before comparison.
    """
    root = Prng(seed, "gradcheck")
    worst, where, checks = 0.0, None, 0
    for c in range(configs):
        net, batch, alpha = random_config(root.split(str(c)))
        views = [canonicalize(svd_product(l.a, l.b)) for l in net.layers]
        pairs = {
            "ab": (grad_ab(net, batch, alpha), finite_diff_grad(net, batch, alpha, "ab", h)),
            "pq": (grad_pq(net, views, batch, alpha),
                   finite_diff_grad(net, batch, alpha, "pq", h, views=views)),
            "pq_scaled": (grad_pq(net, views, batch, alpha, scaled=True),
                          finite_diff_grad(net, batch, alpha, "pq", h, views=views, scaled=True)),
        }
        for kind, (ana, num) in pairs.items():
            if fault is not None:
                ana = fault(kind, ana)
            err, loc = max_relative_error(ana, num, floor)
            checks += 1
            if err > worst or where is None:
                li, k, idx = loc if loc else (0, 0, ())
                worst = max(worst, err)
                names = {"ab": ("A", "B")}.get(kind, ("P", "Q"))
                where = {"config": c, "kind": kind, "layer": li, "param": names[k],
                         "index": [int(i) for i in idx], "alpha": alpha}
    return GradCheckResult(worst, where, configs, checks)


def break_first_entry(kind, grads):
    """Fault hook that corrupts one analytic entry by 1%."""
    out = [tuple(g.copy() for g in pair) for pair in grads]
    out[0][0].flat[0] = out[0][0].flat[0] * 1.01 + 1e-3
    return out
