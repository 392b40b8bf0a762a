"""Cross-modal retrieval numerics: object-graph local features, attention
fusion, multivariate reranking and recall evaluation at desk scale."""

from .detections import Detection, ObjectGraph, assemble_graph
from .fusion import FusionParams, midf_forward
from .gcn import GcnParams, local_features
from .metrics import GroundTruth, SimilarityMatrix, build_similarity, mean_recall, rank_targets, recall_at_k
from .rerank import RerankConfig, RerankedList, baseline_reverse_rerank, mr_rerank

__all__ = [
    "Detection",
    "ObjectGraph",
    "assemble_graph",
    "FusionParams",
    "midf_forward",
    "GcnParams",
    "local_features",
    "GroundTruth",
    "SimilarityMatrix",
    "build_similarity",
    "mean_recall",
    "rank_targets",
    "recall_at_k",
    "RerankConfig",
    "RerankedList",
    "baseline_reverse_rerank",
    "mr_rerank",
]
