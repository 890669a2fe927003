"""Experiment harness: file formats, checkpoints, configs, metrics and LOSO runs."""

from .checkpoint import Checkpoint, check_schema, decode, encode, load_checkpoint, save_checkpoint
from .config import ExperimentConfig, RunConfig, config_from_dict, load_config
from .metrics import MetricsReport, aggregate, compute_metrics, confusion_matrix
from .pipeline import (
    MODES,
    FoldResult,
    FoldSpec,
    export_embeddings,
    fold_data,
    load_model,
    loso_folds,
    make_fold,
    run_baseline,
    run_loso,
    save_model,
    split_target_trials,
)
