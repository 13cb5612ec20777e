"""Triplet importance, global budgeted selection, pruning and the budget schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .linalg import SvdView


@dataclass(frozen=True)
class TripletScore:
    layer_id: int
    triplet_index: int
    value: float
    lam: float


def triplet_scores(views, snr_field):
    """``|lam_i| + mean_k snr(P_ki) + mean_k snr(Q_ik)`` for every triplet of every layer."""
    if len(views) != len(snr_field.p):
        raise DimensionError(f"{len(views)} views but {len(snr_field.p)} score layers")
    out = []
    for layer_id, (v, sp, sq) in enumerate(zip(views, snr_field.p, snr_field.q)):
        if sp.shape != v.p.shape or sq.shape != v.q.shape:
            raise DimensionError(f"layer {layer_id}: scores {sp.shape}/{sq.shape} vs view "
                                 f"{v.p.shape}/{v.q.shape}")
        s = np.abs(v.lam) + sp.mean(axis=0) + sq.mean(axis=1)
        for i in range(v.rank):
            if not math.isfinite(s[i]):
                raise ValueError(f"non-finite triplet score at layer {layer_id}, index {i}")
            out.append(TripletScore(layer_id, i, float(s[i]), float(v.lam[i])))
    return out


def _rank_key(ts: TripletScore):
    return (-ts.value, -abs(ts.lam), ts.layer_id, ts.triplet_index)


def select_top_b(scores, b):
    """Set of ``(layer_id, triplet_index)`` for the b best triplets across all layers.

    Ties in score go to the larger |lam|, then the lower layer, then the
    lower triplet index.
    """
    if not 1 <= b <= len(scores):
        raise ValueError(f"budget {b} outside [1, {len(scores)}]")
    ranked = sorted(scores, key=_rank_key)
    return {(s.layer_id, s.triplet_index) for s in ranked[:b]}


def local_selection(selected, n_layers):
    """Split a global selection into sorted per-layer index lists."""
    per = [[] for _ in range(n_layers)]
    for layer_id, idx in selected:
        per[layer_id].append(idx)
    return [sorted(x) for x in per]


def prune_rebuild(view: SvdView, selected_local):
    """``A = P_S diag(lam_S)^(1/2)``, ``B = diag(lam_S)^(1/2) Q_S`` at the reduced rank |S|."""
    idx = sorted(set(int(i) for i in selected_local))
    if not idx:
        raise ValueError("cannot rebuild a layer with no retained triplets")
    if idx[0] < 0 or idx[-1] >= view.rank:
        raise IndexError(f"triplet index outside [0, {view.rank})")
    lam = view.lam[idx]
    if np.any(lam < 0):
        raise ValueError("singular values must be non-negative")
    root = np.sqrt(lam)
    return view.p[:, idx] * root, root[:, None] * view.q[idx]


def dropped_mass(view: SvdView, selected_local) -> float:
    """sqrt of the summed squared singular values not in the selection."""
    keep = set(selected_local)
    return float(np.sqrt(sum(view.lam[i] ** 2 for i in range(view.rank) if i not in keep)))


@dataclass(frozen=True)
class PruneSchedule:
    """Global triplet budget over training.

    ``gamma``, ``t_init``, ``delta_t`` and ``t_final`` are carried for config
    compatibility but do not influence :func:`budget_at`.
    """

    r0: int = 8
    b_final: int = 8
    n_layers: int = 2
    start_epoch: float = 2.0
    end_epoch: float = 5.0
    interval: float = 0.2
    gamma: float | None = None
    t_init: float | None = None
    delta_t: float | None = None
    t_final: float | None = None

    def __post_init__(self):
        if self.r0 < 1:
            raise ValueError("r0 must be >= 1")
        if not 1 <= self.b_final <= self.b_init:
            raise ValueError(f"b_final must lie in [1, {self.b_init}]")
        if not self.start_epoch < self.end_epoch:
            raise ValueError("start_epoch must precede end_epoch")
        if self.interval <= 0:
            raise ValueError("interval must be positive")

    @property
    def b_init(self) -> int:
        return self.r0 * self.n_layers

    def steps(self, steps_per_epoch):
        """(first boundary step, last boundary step, boundary spacing) in global steps."""
        start = int(round(self.start_epoch * steps_per_epoch))
        end = int(round(self.end_epoch * steps_per_epoch))
        every = max(1, math.ceil(self.interval * steps_per_epoch))
        return start, end, every

    def boundaries(self, steps_per_epoch):
        start, end, every = self.steps(steps_per_epoch)
        out = list(range(start, end, every))
        out.append(end)
        return out


def budget_at(schedule: PruneSchedule, global_step: int, steps_per_epoch: int) -> int:
    """Cubic decay from ``b_init`` to ``b_final``, held between interval boundaries."""
    start, end, every = schedule.steps(steps_per_epoch)
    if global_step < start:
        return schedule.b_init
    if global_step >= end:
        return schedule.b_final
    tau = ((global_step - start) // every) * every / (end - start)
    value = schedule.b_final + (schedule.b_init - schedule.b_final) * (1.0 - tau) ** 3
    return int(math.ceil(value - 1e-9))
