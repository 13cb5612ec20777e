"""Synthetic planted-rank tasks and CSV ingestion."""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .linalg import Prng
from .model import AdapterLayer, Batch, Network, random_network


@dataclass
class Dataset:
    train: Batch
    val: Batch
    test: Batch
    input_dim: int
    output_dim: int
    provenance: dict = field(default_factory=dict)

    def steps_per_epoch(self, batch_size: int) -> int:
        return self.train.inputs.shape[0] // batch_size

    def minibatches(self, batch_size: int, rng: Prng):
        """Shuffled full batches of the training split (a trailing partial batch is dropped)."""
        n = self.train.inputs.shape[0]
        order = np.argsort(rng.random(n), kind="stable")
        for i in range(n // batch_size):
            idx = order[i * batch_size:(i + 1) * batch_size]
            yield Batch(self.train.inputs[idx], self.train.targets[idx])


@dataclass(frozen=True)
class PlantedSpec:
    layer_dims: tuple = (16, 32, 8)
    ranks: tuple = (6, 2)
    noise_std: float = 0.01
    n_train: int = 2048
    n_val: int = 256
    n_test: int = 256
    seed: int = 0
    activation: str = "tanh"

    def __post_init__(self):
        if len(self.ranks) != len(self.layer_dims) - 1:
            raise ValueError("need one planted rank per adapted layer")
        for k, (d1, d2) in zip(self.ranks, zip(self.layer_dims, self.layer_dims[1:])):
            if not 0 <= k <= min(d1, d2):
                raise ValueError(f"planted rank {k} infeasible for a {d1}x{d2} layer")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")


def planted_update(rng: Prng, d1, d2, rank):
    """Unit-Frobenius sum of ``rank`` Gaussian outer products (zero when rank is 0)."""
    if rank == 0:
        return np.zeros((d1, d2))
    u = rng.normal(d1 * rank).reshape(d1, rank)
    v = rng.normal(rank * d2).reshape(rank, d2)
    delta = u @ v
    return delta / np.linalg.norm(delta)


def gen_planted(spec: PlantedSpec):
    """Dataset drawn from a teacher that shares W0 with the student plus planted updates."""
    root = Prng(spec.seed, "planted")
    base = random_network(root.split("backbone"), spec.layer_dims, rank=1,
                          activation=spec.activation)
    layers = []
    for i, (layer, k) in enumerate(zip(base.layers, spec.ranks)):
        d1, d2 = layer.shape
        delta = planted_update(root.split(f"update{i}"), d1, d2, k)
        a, b = (delta, np.eye(d2)) if k else (np.zeros((d1, 1)), np.zeros((1, d2)))
        layers.append(AdapterLayer(w0=layer.w0, a=a, b=b, layer_id=i))
    teacher = Network(layers, activation=spec.activation, loss_kind="mse")
    splits = []
    for name, n in (("train", spec.n_train), ("val", spec.n_val), ("test", spec.n_test)):
        g = root.split(name)
        x = g.normal(n * spec.layer_dims[0]).reshape(n, spec.layer_dims[0])
        y = teacher_outputs(teacher, x)
        y = y + spec.noise_std * g.split("noise").normal(y.size).reshape(y.shape)
        splits.append(Batch(x, y))
    data = Dataset(*splits, input_dim=spec.layer_dims[0], output_dim=spec.layer_dims[-1],
                   provenance={"generator": "planted", **_spec_dict(spec)})
    return data, teacher


def _spec_dict(spec):
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in spec.__dict__.items()}


def teacher_outputs(net: Network, x):
    h = x
    for i, layer in enumerate(net.layers):
        h = h @ (layer.w0 + layer.delta())
        if i < len(net.layers) - 1:
            h = np.tanh(h) if net.activation == "tanh" else np.maximum(h, 0.0)
    return h


def student_network(data_spec: PlantedSpec, rank: int, seed: int, b_scale=1e-3) -> Network:
    """Student sharing the teacher's frozen W0, with random thin adapters."""
    backbone = random_network(Prng(data_spec.seed, "planted").split("backbone"),
                              data_spec.layer_dims, rank=1, activation=data_spec.activation)
    init = random_network(Prng(seed, "student"), data_spec.layer_dims, rank=rank,
                          activation=data_spec.activation, adapter_scale=b_scale)
    layers = [AdapterLayer(w0=bl.w0, a=il.a, b=il.b, layer_id=i)
              for i, (bl, il) in enumerate(zip(backbone.layers, init.layers))]
    return Network(layers, activation=data_spec.activation, loss_kind="mse")


def probe_problem(seed=3, batch_size=64, rank=8, adapter_scale=1.0):
    """Default 16-32-8 tanh net with non-trivial adapters and one batch of planted data."""
    spec = PlantedSpec(n_train=batch_size, n_val=1, n_test=1, seed=seed)
    data, _ = gen_planted(spec)
    net = student_network(spec, rank, seed, b_scale=adapter_scale)
    return net, data.train


# --- CSV ----------------------------------------------------------------------


class CsvFormatError(ValueError):
    def __init__(self, message, row=None, col=None):
        where = f" (row {row}, column {col})" if row is not None else ""
        super().__init__(message + where)
        self.row, self.col = row, col


@dataclass(frozen=True)
class CsvSchema:
    n_inputs: int
    n_outputs: int
    split: tuple = (0.8, 0.1, 0.1)
    seed: int = 0


def _split_order(n, seed):
    keys = [hashlib.blake2b(f"{seed}:{i}".encode(), digest_size=8).digest() for i in range(n)]
    return sorted(range(n), key=lambda i: keys[i])


def load_csv(path, schema: CsvSchema) -> Dataset:
    """Read a ``x0..,y0..`` CSV and split it deterministically by row hash.

    Rows and columns in error messages are 1-based; row 1 is the first data
    row after the header.
    """
    path = Path(path)
    raw = path.read_bytes()
    text = raw.decode("utf-8")
    reader = csv.reader(text.splitlines())
    try:
        header = next(reader)
    except StopIteration:
        raise CsvFormatError(f"{path} is empty") from None
    width = schema.n_inputs + schema.n_outputs
    expected = [f"x{i}" for i in range(schema.n_inputs)] + [f"y{i}" for i in range(schema.n_outputs)]
    if [h.strip() for h in header] != expected:
        raise CsvFormatError(f"header {header} does not match schema {expected}")
    rows = []
    for r, line in enumerate(reader, start=1):
        if not line:
            continue
        if len(line) != width:
            raise CsvFormatError(f"expected {width} columns, got {len(line)}", r, len(line))
        vals = []
        for c, cell in enumerate(line, start=1):
            try:
                v = float(cell)
            except ValueError:
                raise CsvFormatError(f"cannot parse {cell!r} as a float", r, c) from None
            if not math.isfinite(v):
                raise CsvFormatError(f"non-finite value {cell!r}", r, c)
            vals.append(v)
        rows.append(vals)
    if not rows:
        raise CsvFormatError(f"{path} has no data rows")
    data = np.array(rows)
    n = len(rows)
    n_train = int(round(schema.split[0] * n))
    n_val = int(round(schema.split[1] * n))
    order = _split_order(n, schema.seed)
    parts = [sorted(order[:n_train]), sorted(order[n_train:n_train + n_val]),
             sorted(order[n_train + n_val:])]
    batches = [Batch(data[idx, :schema.n_inputs], data[idx, schema.n_inputs:]) for idx in parts]
    return Dataset(*batches, input_dim=schema.n_inputs, output_dim=schema.n_outputs,
                   provenance={"path": str(path), "sha256": hashlib.sha256(raw).hexdigest(),
                               "split": list(schema.split), "seed": schema.seed})
