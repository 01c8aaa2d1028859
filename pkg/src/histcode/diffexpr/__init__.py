"""Differential-expression targets, attention-selected features and per-gene linear models."""

from .features import DEFAULT_L, build_de_feature, effective_l, select_tiles
from .models import (
    DEConfig,
    GeneModel,
    RidgePath,
    Standardizer,
    de_loss_and_grad,
    fit_ridge_gd,
    fit_softmax_gd,
    load_gene_models,
    predict_de,
    save_gene_models,
    softmax_loss_and_grad,
    train_gene_models,
)
from .synth import fc_gene_design, synthesize_expression
from .targets import (
    GeneRecord,
    binarize_de,
    de_target,
    fold_change,
    read_driver_list,
    read_expression,
    read_predictions,
    target_table,
    write_driver_list,
    write_expression,
    write_predictions,
)
