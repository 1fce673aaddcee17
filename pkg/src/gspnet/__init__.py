"""Graph-spectral neural networks in numpy: GSPConv layers, spectral ResNet/MLP,
and selective-weight-decay pruning of graph frequencies."""

from .data import Dataset, load_dataset, save_dataset, synth_planted_band
from .errors import (
    ConvergenceError,
    DataError,
    DivergenceError,
    GraphError,
    GspError,
    LinalgError,
    ModelError,
    PruneError,
    SpectralError,
    TrainError,
)
from .graph import Graph, from_dense, geometric_knn_graph, is_connected, knn_binarize, normalized_laplacian, read_graph, write_graph
from .linalg import EigenPairs, SymMatrix, jacobi_eigh
from .model import SpectralMlp, SpectralResNet, build_model, load_checkpoint, param_count, save_checkpoint
from .prune import KeptSet, SwdSchedule, band_scan, frequency_importance, iou, prune_run, swd_train, truncate
from .spectral import BandSpec, SpectralBasis, build_basis, gft, igft, load_basis, save_basis
from .train import RunHistory, TrainConfig, split_dataset, train_model

__version__ = "0.1.0"
