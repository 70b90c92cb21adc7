"""Semantic segmentation of point clouds with LAE-Conv layers and point-wise spatial attention.

Submodules: ``cloud`` (data types, file formats), ``spatial`` (neighbor
search), ``autodiff`` (tensors, optimizers, checkpoints), ``lae`` and
``attention`` (the two layer types), ``network``, ``pipeline`` (blocks,
training, evaluation, ablation), ``scenes`` (synthetic data) and ``cli``.
"""

from .attention import PSAParams, psa_forward
from .autodiff import Tensor, load_checkpoint, save_checkpoint
from .cloud import (
    FeatureMatrix,
    LabelPrediction,
    PointCloud,
    load_cloud,
    save_cloud,
    save_labeled_cloud,
    seeded_rng,
)
from .lae import LAEConvParams, lae_conv_forward
from .network import PRESETS, NetworkConfig, init_parameters, network_forward
from .pipeline import BlockSpec, TrainOptions, evaluate, sliding_window_predict, train_model
from .spatial import (
    NeighborGraph,
    SearchConfig,
    SpatialIndex,
    ball_query,
    farthest_point_sampling,
    knn_search,
    multi_directional_search,
)

__version__ = "0.1.0"
