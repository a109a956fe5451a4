"""Amortized community detection: GNN encoders feeding amortized clustering heads."""

from .graphs import (
    ClusterSets,
    GeneralSbmConfig,
    LabeledGraph,
    SymmetricSbmConfig,
    gen_general_sbm,
    gen_symmetric_log_sbm,
    graph_rng,
    labels_to_sets,
    sample_crp,
    sample_sbm_edges,
    sets_to_labels,
)
from .heads import PosteriorSample
from .metrics import ami, ari, ece, map_select, uncertainty_stats
from .model import CommunityModel, ModelConfig, build_model, load_model
from .tensor import Tensor, no_grad

__version__ = "0.1.0"

__all__ = [
    "ClusterSets",
    "CommunityModel",
    "GeneralSbmConfig",
    "LabeledGraph",
    "ModelConfig",
    "PosteriorSample",
    "SymmetricSbmConfig",
    "Tensor",
    "ami",
    "ari",
    "build_model",
    "ece",
    "gen_general_sbm",
    "gen_symmetric_log_sbm",
    "graph_rng",
    "labels_to_sets",
    "load_model",
    "map_select",
    "no_grad",
    "sample_crp",
    "sample_sbm_edges",
    "sets_to_labels",
    "uncertainty_stats",
]
