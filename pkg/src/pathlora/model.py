"""Small adapted feed-forward networks with exact reverse-mode gradients.

Every adapted layer computes ``x @ (w0 + alpha * delta)`` where ``delta`` is
either ``a @ b`` (training view) or ``p @ diag(lam) @ q`` (scoring view).
Scaling happens at forward time; stored factors are never mutated.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DimensionError, NonFiniteError
from .linalg import Prng, SvdView

ACTIVATIONS = ("tanh", "relu")
LOSSES = ("mse", "xent")


@dataclass
class AdapterLayer:
    w0: np.ndarray
    a: np.ndarray
    b: np.ndarray
    layer_id: int = 0

    def __post_init__(self):
        d1, d2 = self.w0.shape
        if self.a.shape[0] != d1 or self.b.shape[1] != d2 or self.a.shape[1] != self.b.shape[0]:
            raise DimensionError(
                f"layer {self.layer_id}: w0 {self.w0.shape}, a {self.a.shape}, b {self.b.shape}"
            )
        if self.a.shape[1] < 1:
            raise DimensionError(f"layer {self.layer_id}: rank must be >= 1")

    @property
    def rank(self) -> int:
        return self.a.shape[1]

    @property
    def shape(self):
        return self.w0.shape

    def delta(self) -> np.ndarray:
        return self.a @ self.b


@dataclass
class Network:
    layers: list
    activation: str = "tanh"
    loss_kind: str = "mse"

    def __post_init__(self):
        if not self.layers:
            raise DimensionError("network needs at least one adapter layer")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.loss_kind not in LOSSES:
            raise ValueError(f"unknown loss {self.loss_kind!r}")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.shape[1] != nxt.shape[0]:
                raise DimensionError(f"layer {prev.layer_id} -> {nxt.layer_id} dims do not chain")

    @property
    def ranks(self):
        return [layer.rank for layer in self.layers]

    def with_factors(self, factors) -> "Network":
        layers = [replace(layer, a=a, b=b) for layer, (a, b) in zip(self.layers, factors)]
        return replace(self, layers=layers)

    def copy(self) -> "Network":
        layers = [replace(l, a=l.a.copy(), b=l.b.copy()) for l in self.layers]
        return replace(self, layers=layers)


@dataclass
class Batch:
    inputs: np.ndarray
    targets: np.ndarray

    def __len__(self):
        return self.inputs.shape[0]


def random_network(rng: Prng, dims=(16, 32, 8), rank=8, activation="tanh",
                   loss_kind="mse", adapter_scale=0.0) -> Network:
    """Gaussian W0 with 1/fan-in variance; A ~ N(0, 1/d1), B scaled by ``adapter_scale``."""
    layers = []
    for i, (d1, d2) in enumerate(zip(dims, dims[1:])):
        g = rng.split(f"layer{i}")
        w0 = g.normal(d1 * d2).reshape(d1, d2) / np.sqrt(d1)
        a = g.normal(d1 * rank).reshape(d1, rank) / np.sqrt(d1)
        b = adapter_scale * g.normal(rank * d2).reshape(rank, d2) / np.sqrt(rank)
        layers.append(AdapterLayer(w0=w0, a=a, b=b, layer_id=i))
    return Network(layers=layers, activation=activation, loss_kind=loss_kind)


def effective_weights(net: Network, alpha: float, deltas=None):
    if deltas is None:
        deltas = [layer.delta() for layer in net.layers]
    return [layer.w0 + alpha * d for layer, d in zip(net.layers, deltas)]


def _act(kind, z):
    return np.tanh(z) if kind == "tanh" else np.maximum(z, 0.0)


def _act_grad(kind, z, h):
    return 1.0 - h * h if kind == "tanh" else (z > 0).astype(np.float64)


def _loss(kind, out, targets):
    if kind == "mse":
        r = out - targets
        return float(np.mean(r * r)), 2.0 * r / r.size
    z = out - out.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    idx = targets.astype(np.int64).reshape(-1)
    n = out.shape[0]
    loss = -float(np.mean(logp[np.arange(n), idx]))
    d = np.exp(logp)
    d[np.arange(n), idx] -= 1.0
    return loss, d / n


@np.errstate(over="ignore", invalid="ignore")
def loss_and_weight_grads(net: Network, batch: Batch, alpha: float, deltas=None, need_grad=True):
    """Loss and dL/dW_eff for every layer at path point ``alpha``."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    weights = effective_weights(net, alpha, deltas)
    h = batch.inputs
    if h.shape[1] != weights[0].shape[0]:
        raise DimensionError(f"input width {h.shape[1]} != {weights[0].shape[0]}")
    acts, pre = [h], []
    for i, w in enumerate(weights):
        z = h @ w
        pre.append(z)
        h = z if i == len(weights) - 1 else _act(net.activation, z)
        acts.append(h)
    loss, dz = _loss(net.loss_kind, h, batch.targets)
    if not np.isfinite(loss):
        raise NonFiniteError("loss is not finite (activation overflow?)")
    if not need_grad:
        return loss, None
    grads = [None] * len(weights)
    for i in range(len(weights) - 1, -1, -1):
        grads[i] = acts[i].T @ dz
        if i:
            dh = dz @ weights[i].T
            dz = dh * _act_grad(net.activation, pre[i - 1], acts[i])
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise NonFiniteError("gradient is not finite")
    return loss, grads


def forward_loss(net: Network, batch: Batch, alpha: float = 1.0, deltas=None) -> float:
    return loss_and_weight_grads(net, batch, alpha, deltas, need_grad=False)[0]


def loss_and_grad_ab(net: Network, batch: Batch, alpha: float = 1.0):
    loss, gw = loss_and_weight_grads(net, batch, alpha)
    grads = [(alpha * g @ l.b.T, alpha * l.a.T @ g) for l, g in zip(net.layers, gw)]
    return loss, grads


def grad_ab(net: Network, batch: Batch, alpha: float = 1.0):
    """Per-layer ``(dL/dA, dL/dB)`` at path point ``alpha``."""
    return loss_and_grad_ab(net, batch, alpha)[1]


def _check_views(net, views):
    if len(views) != len(net.layers):
        raise DimensionError(f"{len(views)} views for {len(net.layers)} layers")
    for layer, v in zip(net.layers, views):
        if v.shape != layer.shape:
            raise DimensionError(f"view {v.shape} does not match layer {layer.layer_id} {layer.shape}")


def view_deltas(views):
    return [v.reconstruct() for v in views]


def grad_pq(net: Network, views, batch: Batch, alpha: float, with_lambda=False, scaled=False):
    """Per-layer ``(dL/dP, dL/dQ)`` at the path point ``W0 + alpha * P diag(lam) Q``.

    By default this is the loss gradient w.r.t. the factor entries evaluated at
    the path point (the integrated-gradients integrand). ``scaled=True`` gives
    the derivative of ``P -> L(W0 + alpha * P diag(lam) Q)`` instead, which
    carries an extra factor ``alpha``. lam is held fixed either way; with
    ``with_lambda`` each tuple gains ``dL/dlam`` as a third element.
    """
    _check_views(net, views)
    _, gw = loss_and_weight_grads(net, batch, alpha, view_deltas(views))
    k = alpha if scaled else 1.0
    out = []
    for v, g in zip(views, gw):
        gq = g @ v.q.T  # d1 x r
        dp = k * gq * v.lam
        dq = k * (v.lam[:, None] * (v.p.T @ g))
        if with_lambda:
            out.append((dp, dq, k * np.einsum("ir,ir->r", v.p, gq)))
        else:
            out.append((dp, dq))
    return out


def central_difference(f, x, h=1e-5):
    """Entrywise central difference of scalar ``f`` at array ``x`` (x restored after)."""
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros_like(x)
    flat, g = x.reshape(-1), out.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f(x)
        flat[i] = old - h
        fm = f(x)
        flat[i] = old
        g[i] = (fp - fm) / (2.0 * h)
    return out


def finite_diff_grad(net: Network, batch: Batch, alpha: float, which="ab", h=1e-5, views=None,
                     scaled=False):
    """Central-difference counterpart of :func:`grad_ab` / :func:`grad_pq`."""
    if h <= 0:
        raise ValueError("h must be positive")
    if which == "ab":
        work = net.copy()
        out = []
        for layer in work.layers:
            pair = []
            for arr in (layer.a, layer.b):
                pair.append(central_difference(lambda _: forward_loss(work, batch, alpha), arr, h))
            out.append(tuple(pair))
        return out
    if which != "pq":
        raise ValueError(f"which must be 'ab' or 'pq', got {which!r}")
    if views is None:
        raise ValueError("pq finite differences need svd views")
    views = [SvdView(p=v.p.copy(), lam=v.lam.copy(), q=v.q.copy()) for v in views]
    _check_views(net, views)
    if scaled:
        def f(_):
            return forward_loss(net, batch, alpha, view_deltas(views))
    else:
        # perturb the factors around the fixed path point alpha * dW
        base = [alpha * d for d in view_deltas(views)]
        frozen = [(v.p.copy(), v.q.copy()) for v in views]

        def f(_):
            deltas = [b + (v.reconstruct() - (p0 * v.lam) @ q0)
                      for b, v, (p0, q0) in zip(base, views, frozen)]
            return forward_loss(net, batch, 1.0, deltas)

    return [(central_difference(f, v.p, h), central_difference(f, v.q, h)) for v in views]


def max_relative_error(analytic, numeric, floor=1e-8):
    """Largest ``|a - n| / max(|a|, |n|, floor)`` over nested gradient structures."""
    worst, where = 0.0, None
    for li, (pa, pn) in enumerate(zip(analytic, numeric)):
        for k, (a, n) in enumerate(zip(pa, pn)):
            rel = np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
            i = int(np.argmax(rel))
            if rel.flat[i] > worst:
                worst, where = float(rel.flat[i]), (li, k, np.unravel_index(i, rel.shape))
    return worst, where
