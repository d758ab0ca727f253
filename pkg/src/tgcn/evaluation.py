"""Estimation accuracy: MAE and RMSE over a split of observed entries."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .graph_data import SPLIT_NAMES, normalize_adjacency
from .model import forward, predict_entries

__all__ = ["MetricsReport", "mae", "rmse", "evaluate"]


def _residuals(pairs) -> np.ndarray:
    pairs = np.asarray(pairs, dtype=np.float64)
    if pairs.size == 0:
        raise ValueError("cannot compute a metric over zero entries")
    pairs = pairs.reshape(-1, 2)
    return pairs[:, 1] - pairs[:, 0]


def mae(pairs) -> float:
    """Mean absolute error of ``(prediction, target)`` pairs."""
    e = _residuals(pairs)
    return math.fsum(np.abs(e).tolist()) / e.size


def rmse(pairs) -> float:
    """Root mean squared error of ``(prediction, target)`` pairs."""
    e = _residuals(pairs)
    # scaling by the largest residual keeps squares clear of underflow and overflow
    scale = float(np.max(np.abs(e)))
    if scale == 0.0 or not math.isfinite(scale):
        return scale
    r = e / scale
    return scale * math.sqrt(math.fsum((r * r).tolist()) / e.size)


@dataclass(frozen=True)
class MetricsReport:
    split: str
    count: int
    mae: float
    rmse: float

    def csv_row(self) -> str:
        return f"{self.split},{self.count},{self.mae!r},{self.rmse!r}"


def evaluate(params, graph, splits, tag) -> MetricsReport:
    """Run the model once and score every entry carrying ``tag``.

    ``tag`` is one of ``TRAIN``, ``VALID``, ``TEST`` or the names
    ``"train"``, ``"validation"``, ``"test"``.
    """
    if isinstance(tag, str):
        by_name = {v: k for k, v in SPLIT_NAMES.items()}
        if tag not in by_name:
            raise ValueError(f"unknown split {tag!r}")
        tag = by_name[tag]
    idx = splits.indices(tag)
    if idx.size == 0:
        raise ValueError(f"split {SPLIT_NAMES[tag]} is empty")
    F = forward(params, normalize_adjacency(graph.adjacency))
    pred = predict_entries(F, graph.entries[idx], params.W_c, params.z, params.v)
    pairs = np.column_stack([pred, graph.weights[idx]])
    return MetricsReport(SPLIT_NAMES[tag], int(idx.size), mae(pairs), rmse(pairs))
