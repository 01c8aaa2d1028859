"""Bag-level pooling of tile embeddings and the tumor-diagnosis head."""

from .attention import (
    DiagnosisHead,
    GatedAttentionParams,
    SlideBag,
    attention_scores,
    bag_loss_and_grads,
    diagnose,
    diagnosis_loss,
    gated_attention,
    head_probs,
    max_pool,
    mean_pool,
    pool,
)
from .train import DiagConfig, DiagnosisModel, load_model, read_attention, save_model, train_diagnosis, write_attention

__all__ = [
    "DiagConfig",
    "DiagnosisHead",
    "DiagnosisModel",
    "GatedAttentionParams",
    "SlideBag",
    "attention_scores",
    "bag_loss_and_grads",
    "diagnose",
    "diagnosis_loss",
    "gated_attention",
    "head_probs",
    "load_model",
    "max_pool",
    "mean_pool",
    "pool",
    "read_attention",
    "save_model",
    "train_diagnosis",
    "write_attention",
]
