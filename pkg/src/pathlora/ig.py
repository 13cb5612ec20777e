"""Integrated-gradients importance on the adapter path ``L(alpha * dW)``.

A *path* exposes the scored weights as a flat vector and returns the flat
gradient ``g(alpha)`` for those weights. :class:`NetworkPath` scores every
entry of P and Q of each layer; :class:`ScalarPath` wraps a closed-form
``g`` for checks against known integrals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NonFiniteError, ShapeDriftError
from .linalg import Prng
from .model import forward_loss, grad_pq, view_deltas

MODES = ("full", "stochastic")
WEIGHTINGS = ("verbatim", "unbiased")


@dataclass
class ScoreField:
    """Per-layer arrays shaped like P (d1 x r) and Q (r x d2)."""

    p: list
    q: list

    @property
    def shapes(self):
        return [(a.shape, b.shape) for a, b in zip(self.p, self.q)]

    def flat(self) -> np.ndarray:
        parts = [x.reshape(-1) for pair in zip(self.p, self.q) for x in pair]
        return np.concatenate(parts) if parts else np.zeros(0)

    @classmethod
    def from_flat(cls, vec, shapes) -> "ScoreField":
        p, q, i = [], [], 0
        for sp, sq in shapes:
            for shape, dst in ((sp, p), (sq, q)):
                n = shape[0] * shape[1]
                dst.append(np.asarray(vec[i:i + n], dtype=np.float64).reshape(shape))
                i += n
        if i != len(vec):
            raise ShapeDriftError(f"flat vector has {len(vec)} entries, layout needs {i}")
        return cls(p, q)

    @classmethod
    def zeros(cls, shapes) -> "ScoreField":
        return cls([np.zeros(sp) for sp, _ in shapes], [np.zeros(sq) for _, sq in shapes])

    def copy(self) -> "ScoreField":
        return ScoreField([a.copy() for a in self.p], [b.copy() for b in self.q])


@dataclass(frozen=True)
class QuadratureSpec:
    n: int = 20
    mode: str = "stochastic"
    rng_label: str = "ig"
    weighting: str = "verbatim"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.weighting not in WEIGHTINGS:
            raise ValueError(f"weighting must be one of {WEIGHTINGS}")
        if self.n < 1 or (self.mode == "stochastic" and self.n < 2):
            raise ValueError(f"node count {self.n} too small for {self.mode} mode")


class NetworkPath:
    """Gradient path over the P/Q entries of every layer's SVD view.

    Gradients are memoized per alpha, so repeated quadratures over nested
    node sets reuse evaluations.
    """

    def __init__(self, net, views, batch):
        self.net, self.views, self.batch = net, list(views), batch
        self.shapes = [(v.p.shape, v.q.shape) for v in self.views]
        self.weights = ScoreField([v.p for v in self.views], [v.q for v in self.views]).flat()
        self.lam = np.concatenate([v.lam for v in self.views])
        self._cache = {}
        self.evaluations = 0

    def _eval(self, alpha):
        alpha = float(alpha)
        hit = self._cache.get(alpha)
        if hit is None:
            grads = grad_pq(self.net, self.views, self.batch, alpha, with_lambda=True)
            pq = np.concatenate([x.reshape(-1) for dp, dq, _ in grads for x in (dp, dq)])
            lam = np.concatenate([dl for _, _, dl in grads])
            if not (np.all(np.isfinite(pq)) and np.all(np.isfinite(lam))):
                raise NonFiniteError(f"non-finite path gradient at alpha={alpha}")
            hit = self._cache[alpha] = (pq, lam)
            self.evaluations += 1
        return hit

    def __call__(self, alpha) -> np.ndarray:
        return self._eval(alpha)[0]

    def lambda_grad(self, alpha) -> np.ndarray:
        return self._eval(alpha)[1]

    def loss(self, alpha) -> float:
        return forward_loss(self.net, self.batch, alpha, view_deltas(self.views))

    def field(self, vec) -> ScoreField:
        return ScoreField.from_flat(vec, self.shapes)


class ScalarPath:
    """Closed-form path: ``g(alpha)`` returns one gradient per weight."""

    def __init__(self, weights, g):
        self.weights = np.atleast_1d(np.asarray(weights, dtype=np.float64))
        self._g = g
        self.shapes = [((1, self.weights.size), (1, 0))]
        self.evaluations = 0

    def __call__(self, alpha):
        self.evaluations += 1
        return np.broadcast_to(np.asarray(self._g(float(alpha)), dtype=np.float64),
                               self.weights.shape).copy()

    def field(self, vec) -> ScoreField:
        return ScoreField.from_flat(vec, self.shapes)


def node_values(path, n):
    """Gradients at ``k/n`` for k = 0..n, stacked as rows."""
    return np.stack([path(k / n) for k in range(n + 1)])


def trapezoid(values, axis=0):
    """Composite trapezoid over [0, 1] for samples at ``k/n``, k = 0..n."""
    values = np.moveaxis(np.asarray(values), axis, 0)
    n = values.shape[0] - 1
    return (values[0] + 2.0 * values[1:-1].sum(axis=0) + values[-1]) / (2.0 * n)


def simpson(values, axis=0):
    """Richardson-extrapolated trapezoid (composite Simpson); n must be even."""
    values = np.moveaxis(np.asarray(values), axis, 0)
    n = values.shape[0] - 1
    if n % 2:
        raise ValueError("Simpson's rule needs an even number of intervals")
    return (4.0 * trapezoid(values) - trapezoid(values[::2])) / 3.0


def ig_full_path(path, n) -> np.ndarray:
    """``|w| / (2N) * |g(0) + 2 sum_k g(k/N) + g(1)|`` per weight."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return np.abs(path.weights) * np.abs(trapezoid(node_values(path, n)))


def ig_full(net, views, batch, spec: QuadratureSpec) -> ScoreField:
    path = NetworkPath(net, views, batch)
    return path.field(ig_full_path(path, spec.n))


def draw_node(rng: Prng, n: int) -> int:
    """Uniform interior node index k in {1, ..., n-1}."""
    return int(rng.integers(1, n, 1)[0])


def stochastic_from_values(w, g0, gk, g1, n, weighting="verbatim"):
    """Single-node score from the three path gradients.

    ``verbatim`` weights the sampled node by 2; ``unbiased`` by 2(N-1), which
    makes the mean over uniform nodes equal the full trapezoid.
    """
    mult = 2.0 if weighting == "verbatim" else 2.0 * (n - 1)
    return np.abs(w) / (2.0 * n) * np.abs(g0 + mult * gk + g1)


def ig_stochastic_path(path, n, rng=None, weighting="verbatim", node=None) -> np.ndarray:
    """One-sample estimate; exactly three gradient evaluations.

    ``node`` overrides the sampled index (``node=n`` puts it at alpha=1).
    """
    if n < 2:
        raise ValueError("stochastic estimator needs n >= 2")
    k = draw_node(rng, n) if node is None else node
    return stochastic_from_values(path.weights, path(0.0), path(k / n), path(1.0), n, weighting)


def ig_stochastic(net, views, batch, spec: QuadratureSpec, rng: Prng, node=None) -> ScoreField:
    path = NetworkPath(net, views, batch)
    return path.field(ig_stochastic_path(path, spec.n, rng, spec.weighting, node))


def aggregate_epoch(per_batch, m=None) -> ScoreField:
    """Entrywise mean of the per-batch score fields."""
    if not per_batch:
        raise ValueError("nothing to aggregate")
    if m is not None and m != len(per_batch):
        raise ValueError(f"m={m} but {len(per_batch)} fields given")
    shapes = per_batch[0].shapes
    for f in per_batch[1:]:
        if f.shapes != shapes:
            raise ShapeDriftError("score field shapes changed within the epoch")
    total = np.zeros_like(per_batch[0].flat())
    for f in per_batch:
        total += f.flat()
    return ScoreField.from_flat(total / len(per_batch), shapes)


@dataclass(frozen=True)
class BoundInputs:
    c2_hat: float
    b_hat: float
    delta: float = 0.05
    c_const: float = 1.0


def theorem1_bound(w_abs, inputs: BoundInputs, n: int, m: int):
    """Discretization plus sampling error bound on the epoch score.

    ``w_abs``, ``c2_hat`` and ``b_hat`` may be arrays (broadcast per entry).
    """
    if not 0.0 < inputs.delta < 1.0:
        raise ValueError(f"delta must be in (0, 1), got {inputs.delta}")
    if n < 1 or m < 1:
        raise ValueError("n and m must be >= 1")
    w_abs = np.abs(w_abs)
    disc = w_abs * inputs.c2_hat / (12.0 * n * n)
    samp = inputs.c_const * w_abs * inputs.b_hat * math.sqrt(math.log(1.0 / inputs.delta) / m)
    out = disc + samp
    return float(out) if np.ndim(out) == 0 else out


def estimate_c2(path, entry=None, probes=16):
    """Max central second difference of g on a uniform grid with h = 1/(2*probes).

    Returns a per-weight array, or one float when ``entry`` indexes the flat
    weight vector.
    """
    if probes < 3:
        raise ValueError("probes must be >= 3")
    vals = node_values(path, 2 * probes)
    h = 1.0 / (2 * probes)
    second = (vals[2:] - 2.0 * vals[1:-1] + vals[:-2]) / (h * h)
    c2 = np.max(np.abs(second), axis=0)
    return float(c2[entry]) if entry is not None else c2


def estimate_b(path, n, per_entry=False):
    """Max |g| over the interior nodes k/n, reduced to the field max by default."""
    if n < 2:
        raise ValueError("n must be >= 2")
    b = np.max(np.abs(np.stack([path(k / n) for k in range(1, n)])), axis=0)
    return b if per_entry else float(np.max(b))


@dataclass
class Completeness:
    """Signed path attributions per parameter group against the loss change."""

    delta_loss: float
    sum_p: float
    sum_q: float
    sum_lambda: float
    rule: str

    @property
    def total(self) -> float:
        return self.sum_p + self.sum_q + self.sum_lambda

    def gaps(self):
        scale = max(1.0, abs(self.delta_loss))
        return {
            "p": abs(self.sum_p - self.delta_loss) / scale,
            "q": abs(self.sum_q - self.delta_loss) / scale,
            "lambda": abs(self.sum_lambda - self.delta_loss) / scale,
            # the product P diag(lam) Q is degree-3 homogeneous in (P, lam, Q)
            "total": abs(self.total / 3.0 - self.delta_loss) / scale,
        }

    @property
    def gap(self) -> float:
        return max(self.gaps().values())


def completeness(net, views, batch, n_dense=1024, rule="simpson") -> Completeness:
    if n_dense < 64:
        raise ValueError("n_dense must be >= 64")
    path = NetworkPath(net, views, batch)
    integrate = simpson if rule == "simpson" else trapezoid
    alphas = [k / n_dense for k in range(n_dense + 1)]
    g = integrate(np.stack([path(a) for a in alphas]))
    gl = integrate(np.stack([path.lambda_grad(a) for a in alphas]))
    attr = path.field(path.weights * g)
    total = [float(sum(x.sum() for x in grp)) for grp in (attr.p, attr.q)]
    sum_lam = float(np.sum(path.lam * gl))
    dl = path.loss(1.0) - path.loss(0.0)
    for v in (*total, sum_lam, dl):
        if not math.isfinite(v):
            raise NonFiniteError("non-finite completeness term")
    return Completeness(dl, total[0], total[1], sum_lam, rule)


def completeness_gap(net, views, batch, n_dense=1024, rule="simpson") -> float:
    """Worst relative gap between a group's signed attribution sum and L(dW) - L(0)."""
    return completeness(net, views, batch, n_dense, rule).gap
