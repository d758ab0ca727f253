"""Dynamic graphs built from temporal weighted edge lists.

Edge-list text format, one record per line::

    <src> <dst> <weight> <timestamp>   # optional comment

Node labels are mapped to dense indices in first-appearance order and raw
timestamps are rank-mapped to slices ``0..T-1``.
"""
from __future__ import annotations

import io
import math
import os
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
import scipy.sparse as sp

__all__ = [
    "DataError",
    "ParseError",
    "SparseAdjacency",
    "DynamicGraph",
    "SplitAssignment",
    "TRAIN",
    "VALID",
    "TEST",
    "load_edge_list",
    "dump_edge_list",
    "split",
    "degree_tensor",
    "normalize_adjacency",
    "synth_generate",
    "synth_temporal",
]

TRAIN, VALID, TEST = 0, 1, 2
SPLIT_NAMES = {TRAIN: "train", VALID: "validation", TEST: "test"}


class DataError(ValueError):
    pass


class ParseError(DataError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class SparseAdjacency:
    """Per-slice CSR matrices of an ``N x N x T`` adjacency tensor.

    Binary when built from links; :func:`normalize_adjacency` returns the same
    type holding real values.
    """

    def __init__(self, slices: list[sp.csr_matrix]):
        if not slices:
            raise DataError("adjacency needs at least one slice")
        n = slices[0].shape[0]
        clean = []
        for s in slices:
            if s.shape != (n, n):
                raise DataError(f"slice shape {s.shape} does not match ({n}, {n})")
            s = sp.csr_matrix(s, dtype=np.float64)
            s.sum_duplicates()
            s.sort_indices()
            clean.append(s)
        self.slices = clean

    @classmethod
    def from_links(cls, n_nodes: int, n_slices: int, i, j, t) -> "SparseAdjacency":
        i, j, t = (np.asarray(a, dtype=np.int64) for a in (i, j, t))
        slices = []
        for s in range(n_slices):
            mask = t == s
            keys = np.unique(i[mask] * n_nodes + j[mask])
            data = np.ones(keys.size)
            slices.append(sp.csr_matrix((data, (keys // n_nodes, keys % n_nodes)), shape=(n_nodes, n_nodes)))
        return cls(slices)

    @property
    def n_nodes(self) -> int:
        return self.slices[0].shape[0]

    @property
    def n_slices(self) -> int:
        return len(self.slices)

    def to_dense(self) -> np.ndarray:
        return np.stack([s.toarray() for s in self.slices], axis=2)

    def has_link(self, i: int, j: int, t: int) -> bool:
        return self.slices[t][i, j] != 0


@dataclass(frozen=True)
class DynamicGraph:
    """Node universe, snapshot count and observed weighted entries.

    ``entries`` is an ``(n, 3)`` integer array of ``(i, j, t)`` keys and
    ``weights`` the matching values of the weight tensor.
    """

    n_nodes: int
    n_slices: int
    entries: np.ndarray
    weights: np.ndarray
    node_labels: tuple = ()
    timestamps: tuple = ()
    adjacency: SparseAdjacency = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        entries = np.asarray(self.entries, dtype=np.int64).reshape(-1, 3)
        weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if entries.shape[0] != weights.shape[0]:
            raise DataError("entries and weights differ in length")
        if entries.size and (
            entries[:, :2].min() < 0
            or entries[:, :2].max() >= self.n_nodes
            or entries[:, 2].min() < 0
            or entries[:, 2].max() >= self.n_slices
        ):
            raise DataError("entry index out of range")
        keys = _keys(entries, self.n_nodes, self.n_slices)
        if np.unique(keys).size != keys.size:
            raise DataError("duplicate (i, j, t) entries")
        entries.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "entries", entries)
        object.__setattr__(self, "weights", weights)
        if not self.node_labels:
            object.__setattr__(self, "node_labels", tuple(str(k) for k in range(self.n_nodes)))
        if not self.timestamps:
            object.__setattr__(self, "timestamps", tuple(range(self.n_slices)))
        if self.adjacency is None:
            adj = SparseAdjacency.from_links(self.n_nodes, self.n_slices, *entries.T)
            object.__setattr__(self, "adjacency", adj)

    @property
    def n_entries(self) -> int:
        return self.entries.shape[0]

    def records(self) -> list[tuple]:
        """Observed entries as sorted ``(timestamp, src, dst, weight)`` label tuples."""
        return sorted(
            (self.timestamps[t], self.node_labels[i], self.node_labels[j], float(w))
            for (i, j, t), w in zip(self.entries.tolist(), self.weights)
        )

    def __eq__(self, other):
        # Label-level identity: dense indices depend on line order, labels do not.
        if not isinstance(other, DynamicGraph):
            return NotImplemented
        return (
            self.n_nodes == other.n_nodes
            and self.n_slices == other.n_slices
            and set(self.node_labels) == set(other.node_labels)
            and self.timestamps == other.timestamps
            and self.records() == other.records()
        )

    __hash__ = None


def _keys(entries: np.ndarray, n_nodes: int, n_slices: int) -> np.ndarray:
    return (entries[:, 2] * n_nodes + entries[:, 0]) * n_nodes + entries[:, 1]


def _read_text(source) -> Iterable[str]:
    if isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as fh:
            data = fh.read()
    elif isinstance(source, bytes):
        data = source
    else:
        data = source.read()
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    return io.StringIO(data)


def load_edge_list(source) -> DynamicGraph:
    """Parse an edge list from a path, bytes, or a binary/text stream."""
    records = []
    for lineno, raw in enumerate(_read_text(source), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 4:
            raise ParseError(lineno, f"expected 4 fields, got {len(parts)}")
        src, dst, w, ts = parts
        try:
            weight = float(w)
        except ValueError:
            raise ParseError(lineno, f"weight {w!r} is not a number") from None
        if not math.isfinite(weight):
            raise ParseError(lineno, f"weight {w!r} is not finite")
        if not ts.isdigit():
            raise ParseError(lineno, f"timestamp {ts!r} is not a non-negative integer")
        records.append((src, dst, weight, int(ts)))
    if not records:
        raise DataError("edge list is empty")

    labels: dict[str, int] = {}
    for src, dst, _, _ in records:
        labels.setdefault(src, len(labels))
        labels.setdefault(dst, len(labels))
    stamps = sorted({r[3] for r in records})
    slot = {s: k for k, s in enumerate(stamps)}

    entries = np.array([(labels[s], labels[d], slot[ts]) for s, d, _, ts in records], dtype=np.int64)
    weights = np.array([r[2] for r in records])
    keys = _keys(entries, len(labels), len(stamps))
    uniq, first, counts = np.unique(keys, return_index=True, return_counts=True)
    if np.any(counts > 1):
        dup = records[np.sort(first[counts > 1])[0]]
        raise DataError(f"duplicate record for key ({dup[0]}, {dup[1]}, {dup[3]})")

    return DynamicGraph(
        n_nodes=len(labels),
        n_slices=len(stamps),
        entries=entries,
        weights=weights,
        node_labels=tuple(labels),
        timestamps=tuple(stamps),
    )


def dump_edge_list(graph: DynamicGraph, dest=None) -> str | None:
    """Write ``graph`` ordered by timestamp, then source label, then target label.

    The order depends only on labels, so dumping a reloaded graph reproduces
    the same text.  Returns the text when ``dest`` is None, otherwise writes
    to the path or text stream.
    """
    text = "".join(f"{src} {dst} {w!r} {ts}\n" for ts, src, dst, w in graph.records())
    if dest is None:
        return text
    if isinstance(dest, (str, os.PathLike)):
        with open(dest, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        dest.write(text)
    return None


@dataclass(frozen=True)
class SplitAssignment:
    """Per-entry tag (TRAIN / VALID / TEST) for a graph's observed entries."""

    tags: np.ndarray
    seed: int

    def indices(self, tag: int) -> np.ndarray:
        return np.flatnonzero(self.tags == tag)

    @property
    def train(self) -> np.ndarray:
        return self.indices(TRAIN)

    @property
    def validation(self) -> np.ndarray:
        return self.indices(VALID)

    @property
    def test(self) -> np.ndarray:
        return self.indices(TEST)


def split(graph: DynamicGraph, ratio=(6, 1, 3), seed: int = 0) -> SplitAssignment:
    """Shuffle observed entries and cut them into train/validation/test."""
    n = graph.n_entries
    if n < 10:
        raise DataError(f"need at least 10 observed entries to split, got {n}")
    ratio = np.asarray(ratio, dtype=np.float64)
    if ratio.shape != (3,) or np.any(ratio < 0) or ratio.sum() <= 0:
        raise ValueError(f"invalid split ratio {ratio}")
    frac = ratio / ratio.sum()
    # tolerance guards against 0.6 * n landing a hair below an integer
    n_train = int(math.floor(frac[0] * n + 1e-9))
    n_valid = int(math.floor(frac[1] * n + 1e-9))
    perm = np.random.default_rng(seed).permutation(n)
    tags = np.full(n, TEST, dtype=np.int8)
    tags[perm[:n_train]] = TRAIN
    tags[perm[n_train:n_train + n_valid]] = VALID
    tags.setflags(write=False)
    return SplitAssignment(tags=tags, seed=seed)


def degree_tensor(adjacency: SparseAdjacency) -> np.ndarray:
    """Diagonal of the degree tensor as an ``(N, T)`` array: ``1 + out-degree``."""
    return np.stack([1.0 + np.asarray(s.sum(axis=1)).ravel() for s in adjacency.slices], axis=1)


def normalize_adjacency(adjacency: SparseAdjacency) -> SparseAdjacency:
    """Per slice ``D^-1/2 (A + I) D^-1/2`` with self-loops added."""
    deg = degree_tensor(adjacency)
    n = adjacency.n_nodes
    eye = sp.identity(n, format="csr")
    out = []
    for t, s in enumerate(adjacency.slices):
        scale = sp.diags(1.0 / np.sqrt(deg[:, t]))
        out.append(sp.csr_matrix(scale @ (s + eye) @ scale))
    return SparseAdjacency(out)


def _draw_links(rng, n_nodes: int, count: int):
    """``count`` distinct off-diagonal (i, j) pairs."""
    flat = rng.choice(n_nodes * (n_nodes - 1), size=count, replace=False)
    flat.sort()
    i = flat // (n_nodes - 1)
    j = flat % (n_nodes - 1)
    j = j + (j >= i)
    return i, j


def _check_synth_args(n_nodes, n_slices, density, weight_range):
    if n_nodes < 2:
        raise ValueError(f"need at least 2 nodes, got {n_nodes}")
    if n_slices < 1:
        raise ValueError(f"need at least 1 slice, got {n_slices}")
    if not 0.0 < density <= 1.0:
        raise ValueError(f"density must lie in (0, 1], got {density}")
    lo, hi = weight_range
    if not lo < hi:
        raise ValueError(f"weight_range must satisfy lo < hi, got {weight_range}")


def _links_per_slice(n_nodes: int, density: float) -> int:
    count = min(int(math.floor(density * n_nodes * n_nodes)), n_nodes * (n_nodes - 1))
    if count < 1:
        raise ValueError(f"density {density} yields no links for {n_nodes} nodes")
    return count


def synth_generate(n_nodes: int, n_slices: int, density: float = 0.15,
                   weight_range=(-1.0, 1.0), seed: int = 0) -> DynamicGraph:
    """Seeded random dynamic graph with smooth, learnable weights.

    Each slice holds ``floor(density * N**2)`` directed links (capped at
    ``N(N-1)``).  A weight is a smooth function of per-node phases and the
    slice index plus uniform noise of at most 5% of the range.
    """
    _check_synth_args(n_nodes, n_slices, density, weight_range)
    lo, hi = weight_range
    rng = np.random.default_rng(seed)
    phase_src = rng.uniform(0.0, 1.0, n_nodes)
    phase_dst = rng.uniform(0.0, 1.0, n_nodes)
    count = _links_per_slice(n_nodes, density)
    entries, weights = [], []
    for t in range(n_slices):
        i, j = _draw_links(rng, n_nodes, count)
        tau = t / n_slices
        smooth = (
            0.5
            + 0.2 * np.sin(2 * np.pi * (phase_src[i] + phase_dst[j]))
            + 0.15 * np.cos(2 * np.pi * (phase_dst[i] + tau))
        )
        noise = rng.uniform(-0.05, 0.05, count)
        entries.append(np.column_stack([i, j, np.full(count, t)]))
        weights.append(lo + (hi - lo) * (smooth + noise))
    return DynamicGraph(n_nodes, n_slices, np.concatenate(entries), np.concatenate(weights))


def synth_temporal(n_nodes: int, n_slices: int, density: float = 0.15,
                   weight_range=(-1.0, 1.0), seed: int = 0, teacher_width: int = 4) -> DynamicGraph:
    """Graph whose weights depend on earlier slices through a fixed random teacher.

    Links are drawn as in :func:`synth_generate`.  Weights are the outputs of
    a randomly initialized two-layer network with temporal window 2 (tied
    layer weights, uniform mixing), standardized to mean ``(lo + hi) / 2``
    and standard deviation ``0.2 * (hi - lo)``, plus 1% uniform noise.  The
    window couples slice ``t`` to the structure of slice ``t - 1``.
    """
    # deferred: the teacher is built from the model module, which imports this one
    from .model import MixingMatrix, ModelParameters, forward, predict_entries

    _check_synth_args(n_nodes, n_slices, density, weight_range)
    if n_slices < 2:
        raise ValueError("a temporal graph needs at least 2 slices")
    lo, hi = weight_range
    rng = np.random.default_rng(seed)
    count = _links_per_slice(n_nodes, density)
    entries = np.concatenate([
        np.column_stack([*_draw_links(rng, n_nodes, count), np.full(count, t)]) for t in range(n_slices)
    ])
    adjacency = SparseAdjacency.from_links(n_nodes, n_slices, *entries.T)

    w = teacher_width

    def uniform(shape, bound):
        return rng.uniform(-bound, bound, size=shape)

    teacher = ModelParameters(
        W_n=uniform((w, n_nodes), 2.0),
        layers=[uniform((w, w), 2.0 / np.sqrt(w)) for _ in range(2)],
        W_c=uniform((2 * w, w), 2.0 / np.sqrt(2 * w)),
        z=np.zeros(w),
        v=np.ones(w),
        mixing=MixingMatrix.zeros(n_slices, 2),
    )
    F = forward(teacher, normalize_adjacency(adjacency))
    y = predict_entries(F, entries, teacher.W_c, teacher.z, teacher.v)
    y = (y - y.mean()) / y.std()
    noise = rng.uniform(-0.01, 0.01, y.size)
    weights = np.clip(0.5 * (lo + hi) + (hi - lo) * (0.2 * y + noise), lo, hi)
    return DynamicGraph(n_nodes, n_slices, entries, weights, adjacency=adjacency)
