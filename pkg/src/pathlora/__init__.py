"""Adaptive-rank low-rank adapters scored by integrated gradients along the update path."""

from ._backend import BACKEND
from .alloc import PruneSchedule, budget_at, prune_rebuild, select_top_b, triplet_scores
from .errors import DimensionError, NonFiniteError, ShapeDriftError, SvdConvergenceError
from .ig import (QuadratureSpec, ScoreField, aggregate_epoch, completeness, ig_full,
                 ig_stochastic, theorem1_bound)
from .linalg import Prng, SvdView, canonicalize, svd_product, svd_thin
from .model import AdapterLayer, Batch, Network, grad_ab, grad_pq, random_network
from .score import ImportanceState, snr, update
from .tasks import CsvSchema, Dataset, PlantedSpec, gen_planted, load_csv
from .trainer import RunReport, TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "AdapterLayer", "Batch", "CsvSchema", "Dataset", "DimensionError",
    "ImportanceState", "Network", "NonFiniteError", "PlantedSpec", "Prng", "PruneSchedule",
    "QuadratureSpec", "RunReport", "ScoreField", "ShapeDriftError", "SvdConvergenceError",
    "SvdView", "TrainConfig", "aggregate_epoch", "budget_at", "canonicalize", "completeness",
    "gen_planted", "grad_ab", "grad_pq", "ig_full", "ig_stochastic", "load_csv", "prune_rebuild",
    "random_network", "select_top_b", "snr", "svd_product", "svd_thin", "theorem1_bound",
    "train", "triplet_scores", "update",
]
