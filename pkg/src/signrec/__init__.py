"""Sign-aware graph transformer recommender."""

from .graph import (
    DatasetSplit,
    Interaction,
    SignedBipartiteGraph,
    ThresholdRule,
    build_graph,
    ingest_raw,
    kcore_filter,
    split,
)
from .metrics import MetricsReport, evaluate, ndcg_at_k, rank_items, recall_at_k
from .model import EmbeddingStack, ModelParams, forward, init_params, predict
from .pathenc import PathTypeTable, build_table, id_to_signs, type_id
from .sampler import SampleSet, sample_neighborhoods
from .spectral import SpectralBasis, SignedLaplacian, build_laplacian, eigendecompose, smoothness_objective, pair_score
from .train import TrainConfig, bpr_loss, fit, sample_unobserved, train_epoch

__version__ = "0.1.0"
