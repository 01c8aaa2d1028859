"""Cross-validation splits, metrics, hypothesis tests and report output."""

from .metrics import (
    accuracy,
    confusion,
    midranks,
    pearson,
    pr_points,
    predict_labels,
    random_baseline,
    roc_auc,
    roc_points,
    spearman,
)
from .report import dumps_metrics, write_curve, write_metrics
from .splits import SplitPlan, patient_split
from .stats import bh_correct, fc_accuracy_bins, wilcoxon_rank_sum

__all__ = [
    "SplitPlan",
    "accuracy",
    "bh_correct",
    "confusion",
    "dumps_metrics",
    "fc_accuracy_bins",
    "midranks",
    "patient_split",
    "pearson",
    "pr_points",
    "predict_labels",
    "random_baseline",
    "roc_auc",
    "roc_points",
    "spearman",
    "wilcoxon_rank_sum",
    "write_curve",
    "write_metrics",
]
