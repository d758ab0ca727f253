"""scikit-learn style regressor over ``(i, j, t)`` link keys."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, column_or_1d

from .graph_data import DynamicGraph, SparseAdjacency, normalize_adjacency
from .model import ModelConfig, ModelParameters, forward, predict_entries
from .training import TrainConfig, fit_parameters

__all__ = ["TGCNRegressor", "check_edge_keys"]


def check_edge_keys(X, n_nodes: int | None = None, n_slices: int | None = None) -> np.ndarray:
    """Validate an ``(n, 3)`` array of non-negative integer ``(i, j, t)`` keys."""
    X = check_array(X, dtype=None, ensure_2d=True)
    if X.shape[1] != 3:
        raise ValueError(f"X must have 3 columns (i, j, t), got {X.shape[1]}")
    if not np.issubdtype(X.dtype, np.integer):
        as_int = X.astype(np.int64)
        if not np.array_equal(as_int, X):
            raise ValueError("X must hold integer node and slice indices")
        X = as_int
    X = X.astype(np.int64, copy=False)
    if X.min() < 0:
        raise ValueError("X holds negative indices")
    if n_nodes is not None and X[:, :2].max() >= n_nodes:
        raise ValueError(f"node index {X[:, :2].max()} out of range for {n_nodes} nodes")
    if n_slices is not None and X[:, 2].max() >= n_slices:
        raise ValueError(f"slice index {X[:, 2].max()} out of range for {n_slices} slices")
    return X


class TGCNRegressor(RegressorMixin, BaseEstimator):
    """Tensor graph convolutional network as a link-weight regressor.

    ``X`` rows are ``(i, j, t)`` keys and ``y`` the observed weights.  The
    graph structure comes from ``adjacency`` at fit time; without it, the
    links in ``X`` (plus those in ``eval_set``) define the adjacency.

    Parameters
    ----------
    widths : tuple of int
        ``D_0, ..., D_L``.
    window : int
        Band width of the temporal mixing matrix; 1 gives a per-snapshot GCN.
    activation : {"tanh", "sigmoid"}
    tied : bool
        Share one weight matrix across all slices of each layer.
    epochs, learning_rate, optimizer, delta, patience, batch_size, weight_decay
        See :class:`tgcn.training.TrainConfig`.
    random_state : int
        Seeds initialization and minibatch shuffling.
    """

    def __init__(self, widths=(16, 16, 16), window=2, activation="tanh", tied=False,
                 epochs=500, learning_rate=1e-2, optimizer="adam", delta=1.0,
                 patience=None, batch_size=None, weight_decay=0.0, random_state=0):
        self.widths = widths
        self.window = window
        self.activation = activation
        self.tied = tied
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.optimizer = optimizer
        self.delta = delta
        self.patience = patience
        self.batch_size = batch_size
        self.weight_decay = weight_decay
        self.random_state = random_state

    def _train_config(self) -> TrainConfig:
        model = ModelConfig(
            widths=tuple(self.widths),
            window=self.window,
            activation=self.activation,
            tied=self.tied,
            seed=self.random_state,
        )
        return TrainConfig(
            epochs=self.epochs,
            learning_rate=self.learning_rate,
            optimizer=self.optimizer,
            delta=self.delta,
            seed=self.random_state,
            patience=self.patience,
            batch_size=self.batch_size,
            weight_decay=self.weight_decay,
            model=model,
        )

    def fit(self, X, y, adjacency=None, eval_set=None):
        """Train on keys ``X`` and weights ``y``.

        Parameters
        ----------
        X : array-like of shape (n, 3)
        y : array-like of shape (n,)
        adjacency : SparseAdjacency or DynamicGraph, optional
        eval_set : tuple (X_val, y_val), optional
            Validation entries used for model selection and early stopping.
        """
        X = check_edge_keys(X)
        y = column_or_1d(check_array(y, ensure_2d=False, dtype=np.float64))
        if y.shape[0] != X.shape[0]:
            raise ValueError(f"X has {X.shape[0]} rows but y has {y.shape[0]}")
        if eval_set is not None:
            X_val = check_edge_keys(eval_set[0])
            y_val = column_or_1d(check_array(eval_set[1], ensure_2d=False, dtype=np.float64))
        else:
            X_val, y_val = np.empty((0, 3), dtype=np.int64), np.empty(0)

        if isinstance(adjacency, DynamicGraph):
            adjacency = adjacency.adjacency
        if adjacency is None:
            keys = np.vstack([X, X_val])
            n_nodes = int(keys[:, :2].max()) + 1
            n_slices = int(keys[:, 2].max()) + 1
            adjacency = SparseAdjacency.from_links(n_nodes, n_slices, *keys.T)
        elif not isinstance(adjacency, SparseAdjacency):
            raise TypeError("adjacency must be a SparseAdjacency or DynamicGraph")
        check_edge_keys(X, adjacency.n_nodes, adjacency.n_slices)
        if X_val.size:
            check_edge_keys(X_val, adjacency.n_nodes, adjacency.n_slices)

        config = self._train_config()
        adj_norm = normalize_adjacency(adjacency)
        init = ModelParameters.init(config.model, adjacency.n_nodes, adjacency.n_slices)
        self.params_, self.history_ = fit_parameters(init, adj_norm, X, y, X_val, y_val, config)
        self.adjacency_ = adjacency
        self.n_nodes_ = adjacency.n_nodes
        self.n_slices_ = adjacency.n_slices
        self.n_features_in_ = 3
        self.representations_ = forward(self.params_, adj_norm)
        return self

    def _keys(self, X):
        check_is_fitted(self, "params_")
        return check_edge_keys(X, self.n_nodes_, self.n_slices_)

    def predict(self, X):
        """Estimated weights for keys ``X``."""
        X = self._keys(X)
        p = self.params_
        return predict_entries(self.representations_, X, p.W_c, p.z, p.v)

    def transform(self, X):
        """Per-key hidden vector of the prediction head, shape ``(n, D_L)``."""
        X = self._keys(X)
        p = self.params_
        cache: dict = {}
        predict_entries(self.representations_, X, p.W_c, p.z, p.v, cache)
        return cache["h"]
