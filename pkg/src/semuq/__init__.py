"""Sampling-based and single-pass uncertainty scores for LLM question answering."""

from .dataset import GenerationSet, QaRecord, Response, SamplingConfig, load_dataset
from .entropy import EntailmentLabel, cluster, lnpe, predictive_entropy, se_score, semantic_entropy
from .evaluation import auroc, label_correct, roc_curve, rouge_l, youden_point
from .geometry import cosine, mean_pairwise_similarity, seu

__version__ = "0.1.0"

__all__ = [
    "EntailmentLabel",
    "GenerationSet",
    "QaRecord",
    "Response",
    "SamplingConfig",
    "auroc",
    "cluster",
    "cosine",
    "label_correct",
    "lnpe",
    "load_dataset",
    "mean_pairwise_similarity",
    "predictive_entropy",
    "roc_curve",
    "rouge_l",
    "se_score",
    "semantic_entropy",
    "seu",
    "youden_point",
]
