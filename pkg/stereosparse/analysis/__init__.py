"""Scoring, the experiment matrix and activation analysis."""

from stereosparse.analysis.metrics import pr_curve, auc, grid_auc, positive_fraction
from stereosparse.analysis.activations import (
    sparsity_match_threshold,
    activation_overlay,
    selectivity_index,
    depth_selectivity_report,
    analyze_depth_selectivity
)
from stereosparse.analysis.experiments import run_matrix, consistency_check, training_size_trend

__all__ = [
    'pr_curve',
    'auc',
    'grid_auc',
    'positive_fraction',
    'sparsity_match_threshold',
    'activation_overlay',
    'selectivity_index',
    'depth_selectivity_report',
    'analyze_depth_selectivity',
    'run_matrix',
    'consistency_check',
    'training_size_trend'
]
