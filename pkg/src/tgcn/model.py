"""Tensor graph convolution forward pass and link-weight prediction head."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph_data import SparseAdjacency
from .tensor_core import (
    BandedLowerMatrix,
    ShapeError,
    inverse_m_transform,
    m_transform,
)

__all__ = [
    "ACTIVATIONS",
    "MixingMatrix",
    "ModelConfig",
    "ModelParameters",
    "materialize_mixing",
    "embed_nodes",
    "mix_adjacency",
    "tgcn_layer",
    "forward",
    "predict_edge",
    "predict_entries",
]


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


# activation(x) and its derivative written in terms of the activation's output
ACTIVATIONS = {
    "tanh": (np.tanh, lambda y: 1.0 - y * y),
    "sigmoid": (_sigmoid, lambda y: y * (1.0 - y)),
}


class MixingMatrix:
    """Learnable raw band values of the temporal mixing matrix.

    ``raw[t, d]`` is the logit of ``M[t, t - d]``; columns with ``d > t`` are
    padding and take no part in the softmax.
    """

    def __init__(self, raw):
        raw = np.array(raw, dtype=np.float64)
        if raw.ndim != 2 or raw.shape[1] < 1 or raw.shape[1] > raw.shape[0]:
            raise ShapeError(f"raw mixing values must be (T, b) with 1 <= b <= T, got {raw.shape}")
        for d in range(1, raw.shape[1]):
            raw[:d, d] = 0.0
        self.raw = raw

    @classmethod
    def zeros(cls, order: int, window: int) -> "MixingMatrix":
        return cls(np.zeros((order, window)))

    @property
    def order(self) -> int:
        return self.raw.shape[0]

    @property
    def window(self) -> int:
        return self.raw.shape[1]

    def valid_mask(self) -> np.ndarray:
        T, b = self.raw.shape
        return np.arange(b)[None, :] <= np.arange(T)[:, None]

    def materialize(self) -> BandedLowerMatrix:
        return materialize_mixing(self)


def materialize_mixing(mixing: MixingMatrix) -> BandedLowerMatrix:
    """Row-wise softmax over each in-band window, zero outside the band."""
    mask = mixing.valid_mask()
    logits = np.where(mask, mixing.raw, -np.inf)
    logits = logits - logits.max(axis=1, keepdims=True)
    e = np.where(mask, np.exp(logits), 0.0)
    return BandedLowerMatrix(e / e.sum(axis=1, keepdims=True))


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters.

    ``widths`` lists ``D_0, ..., D_L``; the number of layers is
    ``len(widths) - 1``.
    """

    widths: tuple = (16, 16, 16)
    window: int = 2
    activation: str = "tanh"
    tied: bool = False
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if len(self.widths) < 2:
            raise ValueError("widths needs at least D_0 and D_1")
        if any(w < 1 for w in self.widths):
            raise ValueError(f"widths must be positive, got {self.widths}")
        if self.window < 1:
            raise ValueError(f"window must be >= 1, got {self.window}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}; choose from {sorted(ACTIVATIONS)}")

    @property
    def layers(self) -> int:
        return len(self.widths) - 1


@dataclass
class ModelParameters:
    """Every learnable array of the model, in canonical order."""

    W_n: np.ndarray
    layers: list
    W_c: np.ndarray
    z: np.ndarray
    v: np.ndarray
    mixing: MixingMatrix
    activation: str = "tanh"

    @classmethod
    def init(cls, config: ModelConfig, n_nodes: int, n_slices: int) -> "ModelParameters":
        if config.window > n_slices:
            raise ValueError(f"window {config.window} exceeds slice count {n_slices}")
        rng = np.random.default_rng(config.seed)
        widths = config.widths

        def uniform(shape, fan_in):
            bound = 1.0 / np.sqrt(fan_in)
            return rng.uniform(-bound, bound, size=shape)

        W_n = uniform((widths[0], n_nodes), n_nodes)
        layers = []
        for d_in, d_out in zip(widths[:-1], widths[1:]):
            shape = (d_in, d_out) if config.tied else (d_in, d_out, n_slices)
            layers.append(uniform(shape, d_in))
        d_last = widths[-1]
        W_c = uniform((2 * d_last, d_last), 2 * d_last)
        z = np.zeros(d_last)
        v = rng.uniform(-0.1, 0.1, size=d_last)
        return cls(W_n, layers, W_c, z, v, MixingMatrix.zeros(n_slices, config.window), config.activation)

    @property
    def n_nodes(self) -> int:
        return self.W_n.shape[1]

    @property
    def n_slices(self) -> int:
        return self.mixing.order

    @property
    def window(self) -> int:
        return self.mixing.window

    @property
    def tied(self) -> bool:
        return self.layers[0].ndim == 2

    @property
    def widths(self) -> tuple:
        return (self.W_n.shape[0],) + tuple(W.shape[1] for W in self.layers)

    def blocks(self) -> list[tuple[str, np.ndarray]]:
        """``(name, array)`` pairs in checkpoint order; arrays are live views."""
        out = [("W_n", self.W_n)]
        out += [(f"W_{k}", W) for k, W in enumerate(self.layers, start=1)]
        out += [("W_c", self.W_c), ("z", self.z), ("v", self.v), ("mixing", self.mixing.raw)]
        return out

    def copy(self) -> "ModelParameters":
        return ModelParameters(
            self.W_n.copy(),
            [W.copy() for W in self.layers],
            self.W_c.copy(),
            self.z.copy(),
            self.v.copy(),
            MixingMatrix(self.mixing.raw),
            self.activation,
        )

    def validate(self):
        widths = self.widths
        for k, W in enumerate(self.layers):
            if W.shape[0] != widths[k]:
                raise ShapeError(f"W_{k + 1} expects input width {W.shape[0]} but receives {widths[k]}")
            if W.ndim == 3 and W.shape[2] != self.n_slices:
                raise ShapeError(f"W_{k + 1} has {W.shape[2]} slices, expected {self.n_slices}")
        d = widths[-1]
        if self.W_c.shape != (2 * d, d) or self.z.shape != (d,) or self.v.shape != (d,):
            raise ShapeError("head shapes do not match the last layer width")
        for name, arr in self.blocks():
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"parameter block {name} has non-finite values")

    def equals(self, other: "ModelParameters") -> bool:
        a, b = self.blocks(), other.blocks()
        return (
            self.activation == other.activation
            and len(a) == len(b)
            and all(na == nb and x.shape == y.shape and np.array_equal(x, y) for (na, x), (nb, y) in zip(a, b))
        )


def embed_nodes(W_n, n_slices: int) -> np.ndarray:
    """One-hot embedding: every frontal slice is ``W_n.T``."""
    W_n = np.asarray(W_n, dtype=np.float64)
    return np.repeat(W_n.T[:, :, None], n_slices, axis=2)


def mix_adjacency(adj: SparseAdjacency, M: BandedLowerMatrix) -> list:
    """Sparse slices of ``adj x3 M``: slice t is ``sum_d M[t, t-d] adj_{t-d}``."""
    if adj.n_slices != M.order:
        raise ShapeError(f"adjacency has {adj.n_slices} slices, mixing matrix order is {M.order}")
    out = []
    for t in range(M.order):
        acc = adj.slices[t] * M.bands[t, 0]
        for d in range(1, min(M.band, t + 1)):
            if M.bands[t, d] != 0.0:
                acc = acc + adj.slices[t - d] * M.bands[t, d]
        out.append(acc.tocsr())
    return out


def _as_weight_tensor(W, n_slices: int) -> np.ndarray:
    W = np.asarray(W, dtype=np.float64)
    if W.ndim == 2:
        return np.repeat(W[:, :, None], n_slices, axis=2)
    return W


def _layer(mixed_adj: list, H, W, M, act, cache=None):
    Hh = m_transform(H, M)
    Wh = m_transform(_as_weight_tensor(W, M.order), M)
    N, T = H.shape[0], H.shape[2]
    if Wh.shape[0] != H.shape[1]:
        raise ShapeError(f"layer input width {H.shape[1]} does not match weight rows {Wh.shape[0]}")
    AH = np.empty((N, H.shape[1], T))
    P = np.empty((N, Wh.shape[1], T))
    for t in range(T):
        AH[:, :, t] = mixed_adj[t] @ Hh[:, :, t]
        P[:, :, t] = AH[:, :, t] @ Wh[:, :, t]
    Z = inverse_m_transform(P, M)
    F = ACTIVATIONS[act][0](Z)
    if cache is not None:
        cache.append({"H": H, "Hh": Hh, "Wh": Wh, "AH": AH, "Z": Z, "F": F})
    return F


def tgcn_layer(adj_norm: SparseAdjacency, X, W, M: BandedLowerMatrix, activation: str = "tanh") -> np.ndarray:
    """One layer ``activation(A * X * W)`` with ``*`` the M-product.

    Evaluated in the transformed domain: slices of ``A``, ``X`` and ``W`` are
    mixed by ``M``, multiplied face-wise, then un-mixed by one banded solve.
    """
    X = np.asarray(X, dtype=np.float64)
    return _layer(mix_adjacency(adj_norm, M), X, W, M, activation)


def forward(params: ModelParameters, adj_norm: SparseAdjacency, cache: dict | None = None) -> np.ndarray:
    """Node representation tensor ``F`` (N x D_L x T) of the stacked layers.

    Pass a dict as ``cache`` to keep the intermediates needed for
    backpropagation.
    """
    if adj_norm.n_nodes != params.n_nodes:
        raise ShapeError(f"adjacency has {adj_norm.n_nodes} nodes, parameters expect {params.n_nodes}")
    M = params.mixing.materialize()
    mixed = mix_adjacency(adj_norm, M)
    H = embed_nodes(params.W_n, params.n_slices)
    layer_cache = [] if cache is not None else None
    for W in params.layers:
        H = _layer(mixed, H, W, M, params.activation, layer_cache)
    if cache is not None:
        cache.update(M=M, mixed=mixed, layers=layer_cache, F=H)
    return H


def predict_entries(F, entries, W_c, z, v, cache: dict | None = None) -> np.ndarray:
    """Vectorized head over an ``(n, 3)`` array of ``(i, j, t)`` keys."""
    entries = np.asarray(entries, dtype=np.int64).reshape(-1, 3)
    i, j, t = entries.T
    Fi = F[i, :, t]
    Fj = F[j, :, t]
    pre = Fi * Fj + np.concatenate([Fi, Fj], axis=1) @ W_c + z
    h = np.tanh(pre)
    if cache is not None:
        cache.update(Fi=Fi, Fj=Fj, h=h)
    return h @ v


def predict_edge(F, i: int, j: int, t: int, head) -> float:
    """Estimated weight of link ``(i, j)`` at slice ``t``; ``head = (W_c, z, v)``."""
    F = np.asarray(F)
    N, _, T = F.shape
    for name, val, hi in (("i", i, N), ("j", j, N), ("t", t, T)):
        if not 0 <= val < hi:
            raise ValueError(f"{name}={val} out of range [0, {hi})")
    W_c, z, v = head
    return float(predict_entries(F, [(i, j, t)], W_c, z, v)[0])
