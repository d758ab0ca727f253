"""Huber-loss training with exact reverse-mode gradients.

Gradients are hand-derived adjoints of the forward pass in :mod:`tgcn.model`:
the banded solve ``x3 M^-1`` backpropagates through a solve with the
transposed band, and the mixing softmax through its Jacobian-vector product.
"""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .evaluation import mae, rmse
from .graph_data import DynamicGraph, SplitAssignment, normalize_adjacency
from .model import ACTIVATIONS, MixingMatrix, ModelConfig, ModelParameters, forward, predict_entries
from .tensor_core import inverse_m_transform_adjoint, m_transform_adjoint

__all__ = [
    "NumericalError",
    "FormatError",
    "TrainConfig",
    "EpochRecord",
    "huber_loss",
    "compute_gradients",
    "train",
    "fit_parameters",
    "finite_difference_check",
    "save_checkpoint",
    "load_checkpoint",
    "write_metrics_csv",
]

logger = logging.getLogger(__name__)

MAGIC = "TGCN-CKPT v1"


class NumericalError(ArithmeticError):
    pass


class FormatError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 500
    learning_rate: float = 1e-2
    optimizer: str = "adam"
    delta: float = 1.0
    seed: int = 0
    patience: int | None = None
    batch_size: int | None = None
    weight_decay: float = 0.0
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError(f"Huber threshold delta must be positive, got {self.delta}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning rate must be positive, got {self.learning_rate}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.optimizer not in _OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.optimizer!r}; choose from {sorted(_OPTIMIZERS)}")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError(f"batch_size must be positive, got {self.batch_size}")


def _huber(e: np.ndarray, delta: float) -> np.ndarray:
    a = np.abs(e)
    return np.where(a < delta, 0.5 * e * e, delta * (a - 0.5 * delta))


def _huber_grad(e: np.ndarray, delta: float) -> np.ndarray:
    # at |e| == delta both branches give delta * sign(e); the quadratic one is used
    return np.where(np.abs(e) <= delta, e, delta * np.sign(e))


def huber_loss(pairs, delta: float = 1.0) -> float:
    """Summed Huber loss over ``(prediction, target)`` pairs."""
    if delta <= 0:
        raise ValueError(f"delta must be positive, got {delta}")
    pairs = np.asarray(pairs, dtype=np.float64).reshape(-1, 2)
    return float(_huber(pairs[:, 1] - pairs[:, 0], delta).sum())


def _band_accumulate(G_band: np.ndarray, A: np.ndarray, B: np.ndarray):
    """``G_band[t, d] += <A[..., t], B[..., t - d]>`` for in-band positions."""
    T, b = G_band.shape
    for d in range(b):
        G_band[d:, d] += np.einsum("ijt,ijt->t", A[:, :, d:], B[:, :, : T - d])


def _softmax_backward(M_bands: np.ndarray, G_bands: np.ndarray, mask: np.ndarray) -> np.ndarray:
    G = np.where(mask, G_bands, 0.0)
    inner = (M_bands * G).sum(axis=1, keepdims=True)
    return np.where(mask, M_bands * (G - inner), 0.0)


def compute_gradients(params: ModelParameters, adj_norm, entries, targets,
                      delta: float = 1.0, weight_decay: float = 0.0):
    """Loss and gradients of the summed Huber loss over a batch.

    Parameters
    ----------
    params : ModelParameters
    adj_norm : SparseAdjacency
        Normalized adjacency (see :func:`tgcn.graph_data.normalize_adjacency`).
    entries : array of shape (n, 3)
        ``(i, j, t)`` keys of the batch.
    targets : array of shape (n,)

    Returns
    -------
    loss : float
    grads : dict
        One array per parameter block, keyed like :meth:`ModelParameters.blocks`.
    """
    entries = np.asarray(entries, dtype=np.int64).reshape(-1, 3)
    targets = np.asarray(targets, dtype=np.float64).reshape(-1)
    if entries.shape[0] == 0:
        raise ValueError("batch is empty")

    cache: dict = {}
    F = forward(params, adj_norm, cache)
    head: dict = {}
    pred = predict_entries(F, entries, params.W_c, params.z, params.v, head)
    e = targets - pred
    loss = float(_huber(e, delta).sum())

    # head
    g = -_huber_grad(e, delta)
    h, Fi, Fj = head["h"], head["Fi"], head["Fj"]
    D = params.v.shape[0]
    G_v = h.T @ g
    G_pre = (g[:, None] * params.v) * (1.0 - h * h)
    G_z = G_pre.sum(axis=0)
    G_Wc = np.concatenate([Fi, Fj], axis=1).T @ G_pre
    G_Fi = G_pre * Fj + G_pre @ params.W_c[:D].T
    G_Fj = G_pre * Fi + G_pre @ params.W_c[D:].T
    G_F = np.zeros_like(F)
    i, j, t = entries.T
    np.add.at(G_F, (i, slice(None), t), G_Fi)
    np.add.at(G_F, (j, slice(None), t), G_Fj)

    # layers, last to first
    M = cache["M"]
    mixed = cache["mixed"]
    T = params.n_slices
    G_band = np.zeros_like(M.bands)
    d_act = ACTIVATIONS[params.activation][1]
    G_layers = [None] * len(params.layers)
    for ell in range(len(params.layers) - 1, -1, -1):
        c = cache["layers"][ell]
        G_Z = G_F * d_act(c["F"])
        G_P = inverse_m_transform_adjoint(G_Z, M)
        _band_accumulate(G_band, -G_P, c["Z"])

        Hh, Wh, AH = c["Hh"], c["Wh"], c["AH"]
        G_Wh = np.empty_like(Wh)
        G_Hh = np.empty_like(Hh)
        for s in range(T):
            G_Wh[:, :, s] = AH[:, :, s].T @ G_P[:, :, s]
            G_AH = G_P[:, :, s] @ Wh[:, :, s].T
            G_Hh[:, :, s] = mixed[s].T @ G_AH
            for d in range(min(M.band, s + 1)):
                G_band[s, d] += np.sum(G_AH * (adj_norm.slices[s - d] @ Hh[:, :, s]))

        W = params.layers[ell]
        W_full = W if W.ndim == 3 else np.repeat(W[:, :, None], T, axis=2)
        _band_accumulate(G_band, G_Wh, W_full)
        G_W = m_transform_adjoint(G_Wh, M)
        G_layers[ell] = G_W if W.ndim == 3 else G_W.sum(axis=2)

        _band_accumulate(G_band, G_Hh, c["H"])
        G_F = m_transform_adjoint(G_Hh, M)

    G_Wn = G_F.sum(axis=2).T
    G_mix = _softmax_backward(M.bands, G_band, params.mixing.valid_mask())

    grads = {"W_n": G_Wn}
    grads.update({f"W_{k}": G for k, G in enumerate(G_layers, start=1)})
    grads.update(W_c=G_Wc, z=G_z, v=G_v, mixing=G_mix)

    if weight_decay:
        for name, arr in params.blocks():
            if name == "mixing":
                continue
            loss += 0.5 * weight_decay * float(np.sum(arr * arr))
            grads[name] = grads[name] + weight_decay * arr

    if not math.isfinite(loss):
        raise NumericalError("loss is not finite")
    for name, G in grads.items():
        if not np.all(np.isfinite(G)):
            raise NumericalError(f"gradient of {name} is not finite")
    return loss, grads


class _GradientDescent:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params: ModelParameters, grads: dict):
        for name, arr in params.blocks():
            arr -= self.lr * grads[name]


class _Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: dict = {}
        self.v: dict = {}
        self.t = 0

    def step(self, params: ModelParameters, grads: dict):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, arr in params.blocks():
            g = grads[name]
            m = self.m.setdefault(name, np.zeros_like(arr))
            v = self.v.setdefault(name, np.zeros_like(arr))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            arr -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


_OPTIMIZERS = {"adam": _Adam, "sgd": _GradientDescent}


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    train_mae: float
    train_rmse: float
    val_mae: float
    val_rmse: float


def _split_metrics(pred: np.ndarray, target: np.ndarray):
    if pred.size == 0:
        return math.nan, math.nan
    pairs = np.column_stack([pred, target])
    return mae(pairs), rmse(pairs)


def train(graph: DynamicGraph, splits: SplitAssignment, config: TrainConfig = TrainConfig(),
          init: ModelParameters | None = None):
    """Fit model parameters on the training entries of ``graph``.

    Row 0 of the log describes the initial parameters and row ``e`` the
    parameters after ``e`` epochs.  The returned parameters are those with
    the lowest validation MAE (earliest on ties), or the final ones when the
    validation split is empty.

    Returns
    -------
    params : ModelParameters
    log : list of EpochRecord
    """
    params = init.copy() if init is not None else ModelParameters.init(config.model, graph.n_nodes, graph.n_slices)
    tr, va = splits.train, splits.validation
    return fit_parameters(
        params,
        normalize_adjacency(graph.adjacency),
        graph.entries[tr], graph.weights[tr],
        graph.entries[va], graph.weights[va],
        config,
    )


def fit_parameters(params: ModelParameters, adj_norm, train_entries, train_targets,
                   val_entries, val_targets, config: TrainConfig):
    """Optimization loop behind :func:`train`; ``params`` is updated in place."""
    tr_x = np.asarray(train_entries, dtype=np.int64).reshape(-1, 3)
    tr_y = np.asarray(train_targets, dtype=np.float64).reshape(-1)
    va_x = np.asarray(val_entries, dtype=np.int64).reshape(-1, 3)
    va_y = np.asarray(val_targets, dtype=np.float64).reshape(-1)
    n_train, n_val = tr_y.size, va_y.size
    if n_train == 0:
        raise ValueError("training split is empty")
    opt = _OPTIMIZERS[config.optimizer](config.learning_rate)
    rng = np.random.default_rng(config.seed)

    log: list[EpochRecord] = []
    best, best_mae, best_epoch = params.copy(), math.inf, 0
    for epoch in range(config.epochs + 1):
        F = forward(params, adj_norm)
        p_tr = predict_entries(F, tr_x, params.W_c, params.z, params.v)
        p_va = predict_entries(F, va_x, params.W_c, params.z, params.v)
        loss = float(_huber(tr_y - p_tr, config.delta).sum())
        if not math.isfinite(loss):
            raise NumericalError(f"training diverged at epoch {epoch}")
        rec = EpochRecord(epoch, loss, *_split_metrics(p_tr, tr_y), *_split_metrics(p_va, va_y))
        log.append(rec)
        logger.debug("epoch %d loss %.6g train_mae %.6g val_mae %.6g", epoch, loss, rec.train_mae, rec.val_mae)

        if n_val:
            if rec.val_mae < best_mae:
                best, best_mae, best_epoch = params.copy(), rec.val_mae, epoch
            elif config.patience is not None and epoch - best_epoch >= config.patience:
                logger.info("early stop at epoch %d (best %d)", epoch, best_epoch)
                break
        if epoch == config.epochs:
            break

        if config.batch_size is None or config.batch_size >= n_train:
            batches = [np.arange(n_train)]
        else:
            order = rng.permutation(n_train)
            batches = [order[k:k + config.batch_size] for k in range(0, n_train, config.batch_size)]
        for idx in batches:
            try:
                _, grads = compute_gradients(params, adj_norm, tr_x[idx], tr_y[idx], config.delta, config.weight_decay)
            except NumericalError as exc:
                raise NumericalError(f"training diverged at epoch {epoch}: {exc}") from None
            opt.step(params, grads)

    if not n_val:
        best = params
    return best, log


def finite_difference_check(params: ModelParameters, adj_norm, entries, targets,
                            eps: float = 1e-5, delta: float = 1.0, floor: float = 1e-8):
    """Compare analytic gradients with central differences, coordinate by coordinate.

    The relative error of a coordinate is ``|a - n| / max(|a|, |n|, floor)``.

    Returns
    -------
    worst : float
        Largest relative error over all coordinates.
    where : tuple
        ``(block name, index)`` of the worst coordinate.
    """
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    _, grads = compute_gradients(params, adj_norm, entries, targets, delta)
    probe = params.copy()

    def loss_at():
        F = forward(probe, adj_norm)
        pred = predict_entries(F, entries, probe.W_c, probe.z, probe.v)
        return float(_huber(np.asarray(targets) - pred, delta).sum())

    mask = params.mixing.valid_mask()
    worst, where = 0.0, None
    for name, arr in probe.blocks():
        G = grads[name]
        for idx in np.ndindex(arr.shape):
            if name == "mixing" and not mask[idx]:
                continue
            orig = arr[idx]
            arr[idx] = orig + eps
            up = loss_at()
            arr[idx] = orig - eps
            down = loss_at()
            arr[idx] = orig
            num = (up - down) / (2 * eps)
            rel = abs(G[idx] - num) / max(abs(G[idx]), abs(num), floor)
            if where is None or rel > worst:
                worst, where = rel, (name, idx)
    return worst, where


def _fmt_dims(arr: np.ndarray) -> str:
    shape = arr.shape if arr.ndim > 1 else (1,) + arr.shape
    return "x".join(str(s) for s in shape)


def save_checkpoint(params: ModelParameters, path):
    """Write parameters as line-oriented text with 17 significant digits."""
    lines = [
        MAGIC,
        f"L={len(params.layers)} b={params.window} T={params.n_slices} N={params.n_nodes} "
        f"widths={','.join(str(w) for w in params.widths)} act={params.activation}",
    ]
    for name, arr in params.blocks():
        lines.append(f"{name} {_fmt_dims(arr)}")
        lines.append(" ".join(format(x, ".17g") for x in arr.ravel()))
    text = "\n".join(lines) + "\n"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def _parse_summary(line: str) -> dict:
    try:
        kv = dict(tok.split("=", 1) for tok in line.split())
        return {
            "L": int(kv["L"]),
            "b": int(kv["b"]),
            "T": int(kv["T"]),
            "N": int(kv["N"]),
            "widths": tuple(int(w) for w in kv["widths"].split(",")),
            "act": kv["act"],
        }
    except (KeyError, ValueError) as exc:
        raise FormatError(f"bad config summary line: {line!r}") from exc


def load_checkpoint(path) -> ModelParameters:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or lines[0] != MAGIC:
        raise FormatError(f"{path}: missing {MAGIC!r} header")
    if len(lines) < 2:
        raise FormatError(f"{path}: truncated after header")
    summary = _parse_summary(lines[1])
    if summary["act"] not in ACTIVATIONS:
        raise FormatError(f"unknown activation {summary['act']!r}")
    L = summary["L"]
    names = ["W_n"] + [f"W_{k}" for k in range(1, L + 1)] + ["W_c", "z", "v", "mixing"]
    body = lines[2:]
    if len(body) != 2 * len(names):
        raise FormatError(f"{path}: expected {len(names)} parameter blocks, found {len(body) / 2:g}")
    arrays = {}
    for k, name in enumerate(names):
        header, values = body[2 * k], body[2 * k + 1]
        parts = header.split()
        if len(parts) != 2 or parts[0] != name:
            raise FormatError(f"expected block {name!r}, got {header!r}")
        try:
            shape = tuple(int(s) for s in parts[1].split("x"))
            data = np.array([float(x) for x in values.split()], dtype=np.float64)
        except ValueError as exc:
            raise FormatError(f"block {name}: {exc}") from exc
        if data.size != math.prod(shape):
            raise FormatError(f"block {name}: {data.size} values for shape {shape}")
        if name in ("z", "v"):
            shape = shape[1:]
        arrays[name] = data.reshape(shape)

    params = ModelParameters(
        arrays["W_n"],
        [arrays[f"W_{k}"] for k in range(1, L + 1)],
        arrays["W_c"],
        arrays["z"],
        arrays["v"],
        MixingMatrix(arrays["mixing"]),
        summary["act"],
    )
    if (params.widths != summary["widths"] or params.window != summary["b"]
            or params.n_slices != summary["T"] or params.n_nodes != summary["N"]):
        raise FormatError(f"{path}: parameter shapes disagree with the config summary")
    try:
        params.validate()
    except ValueError as exc:
        raise FormatError(str(exc)) from exc
    return params


def write_metrics_csv(log, dest=None) -> str | None:
    """Render the epoch log as CSV; write to ``dest`` (path) when given."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "train_loss", "train_mae", "train_rmse", "val_mae", "val_rmse"])
    for r in log:
        w.writerow([r.epoch] + [repr(float(x)) for x in (r.train_loss, r.train_mae, r.train_rmse, r.val_mae, r.val_rmse)])
    text = buf.getvalue()
    if dest is None:
        return text
    with open(dest, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    return None
