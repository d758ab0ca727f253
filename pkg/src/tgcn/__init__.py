"""Tensor graph convolutional networks for dynamic-graph link-weight estimation."""
from .estimator import TGCNRegressor
from .evaluation import MetricsReport, evaluate, mae, rmse
from .graph_data import (
    DataError,
    DynamicGraph,
    ParseError,
    SparseAdjacency,
    SplitAssignment,
    degree_tensor,
    dump_edge_list,
    load_edge_list,
    normalize_adjacency,
    split,
    synth_generate,
    synth_temporal,
)
from .model import MixingMatrix, ModelConfig, ModelParameters, forward, materialize_mixing, predict_edge
from .tensor_core import (
    BandedLowerMatrix,
    ShapeError,
    SingularMatrixError,
    facewise_product,
    inverse_m_transform,
    m_product,
    m_transform,
    mode_n_product,
)
from .training import (
    FormatError,
    NumericalError,
    TrainConfig,
    compute_gradients,
    finite_difference_check,
    huber_loss,
    load_checkpoint,
    save_checkpoint,
    train,
)

__version__ = "0.1.0"
