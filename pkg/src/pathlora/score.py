"""EMA sensitivity/uncertainty tracking, the SNR score, and the stability simulator."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ShapeDriftError
from .ig import ScoreField
from .linalg import Prng


@dataclass
class ImportanceState:
    """Smoothed sensitivity ``s_bar`` and uncertainty ``u_bar`` per P/Q entry.

    ``center`` selects which mean the deviation in the uncertainty update is
    measured against: ``"updated"`` (the freshly smoothed value, default) or
    ``"previous"`` (the value before this update).
    """

    s_bar: ScoreField | None = None
    u_bar: ScoreField | None = None
    t: int = 0
    beta1: float = 0.85
    beta2: float = 0.85
    epsilon: float = 1e-6
    center: str = "updated"

    def __post_init__(self):
        for name in ("beta1", "beta2"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.center not in ("updated", "previous"):
            raise ValueError("center must be 'updated' or 'previous'")


def _ema(prev, new, beta1, beta2, center):
    s = beta1 * prev[0] + (1.0 - beta1) * new
    ref = s if center == "updated" else prev[0]
    u = beta2 * prev[1] + (1.0 - beta2) * np.abs(new - ref)
    return s, u


def update(state: ImportanceState, s_agg: ScoreField) -> ImportanceState:
    """One epoch of smoothing; the first observation seeds ``s_bar`` (``u_bar`` = 0)."""
    x = s_agg.flat()
    if np.any(x < 0) or not np.all(np.isfinite(x)):
        raise ValueError("aggregated scores must be finite and non-negative")
    if state.s_bar is None:
        return replace(state, s_bar=s_agg.copy(), u_bar=ScoreField.zeros(s_agg.shapes), t=state.t + 1)
    if state.s_bar.shapes != s_agg.shapes:
        raise ShapeDriftError("score shapes changed; re-index the state after pruning")
    s, u = _ema((state.s_bar.flat(), state.u_bar.flat()), x, state.beta1, state.beta2, state.center)
    shapes = s_agg.shapes
    return replace(state, s_bar=ScoreField.from_flat(s, shapes),
                   u_bar=ScoreField.from_flat(u, shapes), t=state.t + 1)


def snr(state: ImportanceState) -> ScoreField:
    s, u = state.s_bar.flat(), state.u_bar.flat()
    return ScoreField.from_flat(s / (u + state.epsilon), state.s_bar.shapes)


def multiplicative(state: ImportanceState) -> ScoreField:
    """Sensitivity times uncertainty, the product form used by AdaLoRA."""
    return ScoreField.from_flat(state.s_bar.flat() * state.u_bar.flat(), state.s_bar.shapes)


def reindex(state: ImportanceState, keep) -> ImportanceState:
    """Drop pruned triplets: ``keep[l]`` lists surviving column/row indices of layer l."""
    if state.s_bar is None:
        return state

    def cut(f):
        return ScoreField([p[:, k] for p, k in zip(f.p, keep)], [q[k, :] for q, k in zip(f.q, keep)])

    return replace(state, s_bar=cut(state.s_bar), u_bar=cut(state.u_bar))


def effective_window(beta: float) -> float:
    return (1.0 + beta) / (1.0 - beta)


def burn_in(beta_min: float, delta: float, c1: float = 2.0, c2: float = 2.0) -> int:
    """``ceil(c1 / (1 - beta_min) * log(c2 / delta))``; 1 with a warning if the log is <= 0."""
    arg = c2 / delta
    if arg <= 1.0:
        warnings.warn(f"log(c2/delta) = log({arg:g}) <= 0; burn-in clamped to 1", stacklevel=2)
        return 1
    return max(1, math.ceil(c1 / (1.0 - beta_min) * math.log(arg)))


def theorem2_constant(mu, sigma, d, c0=1.0):
    return 2.0 * math.sqrt(2.0) * sigma / d + 2.0 * c0 * mu / d**2 * (sigma + d)


def deviation_bound(mu, sigma, d, beta, delta=0.05, c0=1.0):
    return theorem2_constant(mu, sigma, d, c0) * math.sqrt(math.log(2.0 / delta) / effective_window(beta))


@dataclass
class SnrSimConfig:
    mu: float = 1.0
    sigma: float = 0.2
    betas: tuple = (0.5, 0.85, 0.97)
    steps: int = 400
    replications: int = 200
    delta: float = 0.05
    c0: float = 1.0
    c1: float = 2.0
    c2: float = 2.0
    epsilon: float = 1e-6
    center: str = "updated"
    oracle_samples: int = 1_000_000

    def __post_init__(self):
        if self.mu <= 0 or self.sigma < 0:
            raise ValueError("need mu > 0 and sigma >= 0")
        for b in self.betas:
            if not 0.0 < b < 1.0:
                raise ValueError(f"beta {b} outside (0, 1)")
            if self.steps < burn_in(b, self.delta, self.c1, self.c2):
                raise ValueError(f"steps={self.steps} shorter than burn-in for beta={b}")


def truncated_normal(rng: Prng, mu, sigma, n):
    """Normal(mu, sigma^2) draws clipped below at 0."""
    return np.maximum(mu + sigma * rng.normal(n), 0.0)


def mean_abs_deviation(rng: Prng, mu, sigma, n=1_000_000):
    """Monte-Carlo ``E|y - mu|`` for the truncated score distribution."""
    return float(np.mean(np.abs(truncated_normal(rng, mu, sigma, n) - mu)))


def snr_trajectories(y, beta1, beta2, epsilon=1e-6, center="updated"):
    """Run the EMA recursions over ``y`` (steps x reps); returns (snr, snr without epsilon)."""
    steps, reps = y.shape
    s = y[0].copy()
    u = np.zeros(reps)
    out = np.empty_like(y)
    raw = np.empty_like(y)
    with np.errstate(divide="ignore", invalid="ignore"):
        for t in range(steps):
            if t:
                s, u = _ema((s, u), y[t], beta1, beta2, center)
            out[t] = s / (u + epsilon)
            raw[t] = s / u
    return out, raw


def snr_simulate(cfg: SnrSimConfig, seed: int = 0):
    """Monte-Carlo check of SNR stability after burn-in for each beta.

    Returns ``(trajectories, summary)``: per beta, the (steps x replications)
    SNR and deviation arrays (deviation is None when degenerate), and a
    per-beta summary with median deviation and bound coverage at the
    final step.
    """
    root = Prng(seed, "snr-sim")
    d = mean_abs_deviation(root.split("oracle"), cfg.mu, cfg.sigma, cfg.oracle_samples)
    degenerate = d < 1e-9
    target = cfg.mu / d if not degenerate else math.inf
    rows, per_beta = [], []
    for beta in cfg.betas:
        g = root.split(f"beta={beta!r}")
        y = truncated_normal(g, cfg.mu, cfg.sigma, cfg.steps * cfg.replications)
        y = y.reshape(cfg.steps, cfg.replications)
        traj, raw = snr_trajectories(y, beta, beta, cfg.epsilon, cfg.center)
        dev = np.abs(traj - target)
        t_burn = burn_in(beta, cfg.delta, cfg.c1, cfg.c2)
        post = dev[t_burn - 1:]
        entry = {
            "beta": beta,
            "n_eff": effective_window(beta),
            "burn_in": t_burn,
            "median_deviation": None if degenerate else float(np.median(post)),
            "median_deviation_no_eps": None if degenerate else float(
                np.median(np.abs(raw[t_burn - 1:] - target))),
        }
        if degenerate:
            entry["bound"] = None
            entry["coverage"] = None
        else:
            bound = deviation_bound(cfg.mu, cfg.sigma, d, beta, cfg.delta, cfg.c0)
            entry["bound"] = bound
            entry["coverage"] = (float(np.mean(dev[-1] <= bound))
                                 if cfg.replications > 1 else None)
        per_beta.append(entry)
        rows.append({"beta": beta, "snr": traj, "deviation": None if degenerate else dev})
    medians = [e["median_deviation"] for e in per_beta]
    order = np.argsort([e["n_eff"] for e in per_beta])
    monotone = None
    if not degenerate:
        seq = [medians[i] for i in order]
        monotone = all(b <= a for a, b in zip(seq, seq[1:]))
    summary = {
        "mu": cfg.mu,
        "sigma": cfg.sigma,
        "d_hat": d,
        "target": None if degenerate else target,
        "degenerate": degenerate,
        "per_beta": per_beta,
        "monotone_non_increasing": monotone,
        "min_coverage": (None if degenerate or cfg.replications <= 1
                         else min(e["coverage"] for e in per_beta)),
    }
    return rows, summary


def trajectory_rows(trajectories):
    """Flatten simulator output into (beta, replication, t, snr, deviation) rows."""
    for tr in trajectories:
        steps, reps = tr["snr"].shape
        for r in range(reps):
            for t in range(steps):
                dev = None if tr["deviation"] is None else float(tr["deviation"][t, r])
                yield tr["beta"], r, t + 1, float(tr["snr"][t, r]), dev
