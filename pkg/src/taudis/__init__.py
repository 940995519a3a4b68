"""Batch selection engine for instance-segmentation active learning."""

__version__ = "0.1.0"

from .core import (ConfigError, ImagePrediction, IngestError, InstancePrediction,
                   Mask, MissingEmbeddingError, PoolState, SelectionConfig,
                   apply_round, ingest_predictions, make_pool_state,
                   multipliers_from_seed_mean, scan_violations,
                   write_predictions)
from .maxcover import (CoverProblem, CoverSolution, brute_force_max_cover,
                       greedy_max_cover, lazy_greedy_max_cover,
                       partitioned_max_cover, solve_max_cover)
from .simgraph import SimilarityMatrix, build_similarity_matrix, cosine_similarity, to_cover_problem
from .strategies import StrategyOutput, majority_vote, select_batch
from .uncertainty import (UncertaintyScore, average_classification_margin,
                          class_conditional_wse, classification_entropy,
                          classification_margin, segmentation_entropy,
                          weighted_classification_entropy,
                          weighted_segmentation_entropy)

__all__ = [
    "ConfigError", "ImagePrediction", "IngestError", "InstancePrediction",
    "Mask", "MissingEmbeddingError", "PoolState", "SelectionConfig",
    "apply_round", "ingest_predictions", "make_pool_state",
    "multipliers_from_seed_mean", "scan_violations", "write_predictions",
    "CoverProblem", "CoverSolution", "brute_force_max_cover",
    "greedy_max_cover", "lazy_greedy_max_cover", "partitioned_max_cover",
    "solve_max_cover", "SimilarityMatrix", "build_similarity_matrix",
    "cosine_similarity", "to_cover_problem", "StrategyOutput", "majority_vote",
    "select_batch", "UncertaintyScore", "average_classification_margin",
    "class_conditional_wse", "classification_entropy", "classification_margin",
    "segmentation_entropy", "weighted_classification_entropy",
    "weighted_segmentation_entropy",
]
