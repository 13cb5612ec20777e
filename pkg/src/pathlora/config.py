"""Flat ``key = value`` run configs, validated against the bundled JSON schema."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import jsonschema

from .alloc import PruneSchedule
from .linalg import Prng
from .model import AdapterLayer, Network, random_network
from .tasks import CsvSchema, PlantedSpec, gen_planted, load_csv, student_network
from .trainer import TrainConfig


class ConfigError(ValueError):
    """Bad config file; ``key`` names the offending entry when there is one."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


def load_schema(name):
    return json.loads(resources.files("pathlora.schemas").joinpath(name).read_text("utf-8"))


CONFIG_SCHEMA = load_schema("config.schema.json")
DEFAULTS = {k: v["default"] for k, v in CONFIG_SCHEMA["properties"].items()}


def _coerce(key, raw):
    spec = CONFIG_SCHEMA["properties"][key]
    kind = spec.get("type", "string")
    try:
        if kind == "integer":
            return int(raw)
        if kind == "number":
            return float(raw)
        if kind == "array":
            item = int if spec["items"]["type"] == "integer" else float
            return [item(x) for x in raw.replace(",", " ").split()]
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind}", key) from None
    return raw


def parse_config_text(text, source="<config>"):
    """Parse config text into a dict of overrides (defaults not applied)."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in CONFIG_SCHEMA["properties"]:
            raise ConfigError(f"{source}:{lineno}: unknown key '{key}'", key)
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key '{key}'", key)
        out[key] = _coerce(key, raw)
    return out


def resolve(overrides=None):
    """Defaults merged with overrides, then checked against the schema."""
    cfg = dict(DEFAULTS)
    cfg.update(overrides or {})
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        key = exc.path[0] if exc.path else None
        raise ConfigError(f"{key}: {exc.message}", key) from None
    return cfg


def load_config(path=None):
    if path is None:
        return resolve()
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from None
    return resolve(parse_config_text(text, str(p)))


@dataclass
class RunSetup:
    train_config: TrainConfig
    data: object
    net: Network


def _schedule(cfg, n_layers):
    return PruneSchedule(r0=cfg["r0"], b_final=cfg["b_final"], n_layers=n_layers,
                         start_epoch=cfg["start_epoch"], end_epoch=cfg["end_epoch"],
                         interval=cfg["interval"])


def train_config(cfg, n_layers, seed=None):
    keys = ("learning_rate", "batch_size", "epochs", "n_quad", "beta1", "beta2", "epsilon",
            "optimizer", "patience", "ablation", "ig_weighting", "uncertainty_center",
            "svd_every")
    return TrainConfig(**{k: cfg[k] for k in keys}, schedule=_schedule(cfg, n_layers),
                       seed=cfg["seed"] if seed is None else seed)


def planted_spec(cfg):
    return PlantedSpec(layer_dims=tuple(cfg["layer_dims"]), ranks=tuple(cfg["planted_ranks"]),
                       noise_std=cfg["noise_std"], n_train=cfg["n_train"], n_val=cfg["n_val"],
                       n_test=cfg["n_test"], seed=cfg["data_seed"], activation=cfg["activation"])


def _csv_network(cfg, seed):
    dims = cfg["layer_dims"]
    backbone = random_network(Prng(cfg["data_seed"], "csv").split("backbone"), dims, rank=1,
                              activation=cfg["activation"], loss_kind=cfg["loss"])
    init = random_network(Prng(seed, "student"), dims, rank=cfg["r0"],
                          activation=cfg["activation"], loss_kind=cfg["loss"],
                          adapter_scale=cfg["init_scale"])
    layers = [AdapterLayer(w0=bl.w0, a=il.a, b=il.b, layer_id=i)
              for i, (bl, il) in enumerate(zip(backbone.layers, init.layers))]
    return Network(layers, activation=cfg["activation"], loss_kind=cfg["loss"])


def build(cfg, seed=None):
    """Dataset, student network and training config for one seeded run."""
    seed = cfg["seed"] if seed is None else seed
    n_layers = len(cfg["layer_dims"]) - 1
    try:
        if cfg["data_csv"]:
            dims = cfg["layer_dims"]
            data = load_csv(cfg["data_csv"], CsvSchema(dims[0], dims[-1], tuple(cfg["split"]),
                                                       cfg["data_seed"]))
            net = _csv_network(cfg, seed)
        else:
            if cfg["loss"] != "mse":
                raise ConfigError("loss: planted tasks are regression (mse)", "loss")
            spec = planted_spec(cfg)
            data, _ = gen_planted(spec)
            net = student_network(spec, cfg["r0"], seed, b_scale=cfg["init_scale"])
        tc = train_config(cfg, n_layers, seed)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return RunSetup(tc, data, net)


CSV_COLUMNS = load_schema("csv_columns.json")


def check_csv(path):
    """Validate an emitted CSV against its published column types; returns the row count."""
    name = Path(path).name
    if name not in CSV_COLUMNS:
        raise ConfigError(f"no column schema for {name}")
    cols = CSV_COLUMNS[name]
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != list(cols):
            raise ValueError(f"{name}: header {header} != {list(cols)}")
        n = 0
        for n, row in enumerate(reader, 1):
            if len(row) != len(cols):
                raise ValueError(f"{name}:{n}: expected {len(cols)} fields")
            for value, (col, kind) in zip(row, cols.items()):
                if kind.endswith("?"):
                    if value == "":
                        continue
                    kind = kind[:-1]
                try:
                    {"integer": int, "number": float, "string": str}[kind](value)
                except ValueError:
                    raise ValueError(f"{name}:{n}: column {col} is not {kind}: {value!r}") from None
    return n
