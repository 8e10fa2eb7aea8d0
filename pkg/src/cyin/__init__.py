"""Cyclic informative multimodal learning.

Library for training a single multimodal model that stays robust when
modalities go missing at inference time. The building blocks are
per-modality information-bottleneck latents, cascaded residual
autoencoder translators between modality latent spaces, cross-modal
attention fusion, and a two-stage training schedule.
"""

from cyin.config import DatasetSpec, IBConfig, FusionConfig, CRAConfig, ExperimentConfig
from cyin.data import (
    MultimodalSample,
    generate_dataset,
    bayes_oracle_regression,
    write_dataset,
    read_dataset,
)
from cyin.protocols import PresenceMask, fixed_mask, random_mask, apply_mask, compute_mr
from cyin import metrics

__all__ = [
    "DatasetSpec",
    "IBConfig",
    "FusionConfig",
    "CRAConfig",
    "ExperimentConfig",
    "MultimodalSample",
    "generate_dataset",
    "bayes_oracle_regression",
    "write_dataset",
    "read_dataset",
    "PresenceMask",
    "fixed_mask",
    "random_mask",
    "apply_mask",
    "compute_mr",
    "metrics",
]
