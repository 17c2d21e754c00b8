"""Supervised contrastive representation learning for textured image patches.

A small numpy library covering the full pipeline at desk scale: synthetic
corpus generation, stochastic augmentation, a finite-difference-checked
convolutional encoder with projection and classifier heads, the supervised
contrastive objective, LARS optimization with simulated data-parallel workers,
and evaluation (weighted F1, top-k accuracy, Ward clustering, 2D embedding).
"""

from .augment import AugmentParams, apply_pipeline, draw_params
from .corpus import (
    Corpus,
    CorpusConfig,
    CorpusManifest,
    LabeledPatch,
    Patch,
    SplitSpec,
    generate_synthetic_corpus,
    load_corpus,
    sample_balanced_epoch,
    save_corpus,
    split_by_section,
)
from .losses import LossResult, softmax_cross_entropy, supervised_contrastive_loss
from .model import (
    EncoderConfig,
    ModelConfig,
    ProjectionConfig,
    encoder_forward,
    init_params,
    linear_head_forward,
    load_params,
    parameter_count,
    projection_forward,
    save_params,
)
from .optim import OptimState, lars_step, scaled_lr, sgd_step

__all__ = [
    "AugmentParams",
    "Corpus",
    "CorpusConfig",
    "CorpusManifest",
    "EncoderConfig",
    "LabeledPatch",
    "LossResult",
    "ModelConfig",
    "OptimState",
    "Patch",
    "ProjectionConfig",
    "SplitSpec",
    "apply_pipeline",
    "draw_params",
    "encoder_forward",
    "generate_synthetic_corpus",
    "init_params",
    "lars_step",
    "linear_head_forward",
    "load_corpus",
    "load_params",
    "parameter_count",
    "projection_forward",
    "sample_balanced_epoch",
    "save_corpus",
    "save_params",
    "scaled_lr",
    "sgd_step",
    "softmax_cross_entropy",
    "split_by_section",
    "supervised_contrastive_loss",
]
