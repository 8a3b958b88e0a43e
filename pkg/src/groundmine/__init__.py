"""groundmine: similarity-mined contrastive training for temporal grounding.

Pipeline modules: ``synth`` (planted-topic corpora), ``corpus`` (data model
and feature files), ``miner`` (top-k cosine index and pair sampling),
``model`` (encoders, Gaussian proposal heads, checkpoints), ``losses``
(contrastive/rank objective with analytic gradients), ``trainer``
(deterministic Adam loop), ``evaluation`` (grounding metrics), ``cli``.
"""

from .corpus import Corpus, Sample, load_corpus, read_feature_matrix, write_feature_matrix
from .errors import (
    DegenerateFeatureError,
    FormatError,
    GroundmineError,
    ValidationError,
)
from .evaluation import EvalConfig, MetricReport, evaluate, iop, tiou
from .losses import LossBreakdown, LossToggles, Margins, fd_check, grad_total, total_loss
from .miner import (
    EmbeddingMatrix,
    MiningIndex,
    build_index,
    cosine_topk,
    draw_training_pair,
    embed_queries_reference,
)
from .model import (
    FeatureBundle,
    ModelConfig,
    ModelParams,
    Proposal,
    encode_query,
    forward_bundle,
    gaussian_weights,
    init_params,
    interval_of,
    load_checkpoint,
    negative_weights,
    propose,
    save_checkpoint,
)
from .synth import SynthConfig, generate
from .trainer import AdamState, TrainConfig, adam_update, train, train_step

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "Corpus",
    "DegenerateFeatureError",
    "EmbeddingMatrix",
    "EvalConfig",
    "FeatureBundle",
    "FormatError",
    "GroundmineError",
    "LossBreakdown",
    "LossToggles",
    "Margins",
    "MetricReport",
    "MiningIndex",
    "ModelConfig",
    "ModelParams",
    "Proposal",
    "Sample",
    "SynthConfig",
    "TrainConfig",
    "ValidationError",
    "adam_update",
    "build_index",
    "cosine_topk",
    "draw_training_pair",
    "embed_queries_reference",
    "encode_query",
    "evaluate",
    "fd_check",
    "forward_bundle",
    "gaussian_weights",
    "generate",
    "grad_total",
    "init_params",
    "interval_of",
    "iop",
    "load_checkpoint",
    "load_corpus",
    "negative_weights",
    "propose",
    "read_feature_matrix",
    "save_checkpoint",
    "tiou",
    "total_loss",
    "train",
    "train_step",
    "write_feature_matrix",
]
