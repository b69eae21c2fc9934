"""Semi-supervised few-shot class-incremental learning with class-balanced
self-training and uncertainty-aware distillation."""

from .config import ExperimentConfig, load_config, preset
from .distill import (AdaptiveWeight, LossBreakdown, adaptive_weight, distillation_loss, estimate_uncertainty,
                      refine_exemplars, session_loss)
from .equilibrium import (PseudoLabelBatch, SelectionPolicy, class_balanced_select, partition_confident,
                          pseudo_label, run_unlabeled_iterations)
from .memory import Exemplar, ExemplarSet, herding_select, update_exemplars
from .metrics import RunReport, SessionMetrics, average_accuracy, performance_drop
from .model import (ModelState, PrototypeTable, build_model, compute_prototypes, expand_head,
                    extract_features, forward, freeze_front_layers, nme_classify)
from .protocol import DatasetManifest, ProtocolConfig, SessionStream, build_benchmark, synthetic_manifest
from .trainer import evaluate, run_experiment, run_incremental_session, train_base_session

__version__ = "0.1.0"

__all__ = [
    "AdaptiveWeight", "DatasetManifest", "Exemplar", "ExemplarSet", "ExperimentConfig", "LossBreakdown",
    "ModelState", "PrototypeTable", "ProtocolConfig", "PseudoLabelBatch", "RunReport", "SelectionPolicy",
    "SessionMetrics", "SessionStream", "adaptive_weight", "average_accuracy", "build_benchmark", "build_model",
    "class_balanced_select", "compute_prototypes", "distillation_loss", "estimate_uncertainty", "evaluate",
    "expand_head", "extract_features", "forward", "freeze_front_layers", "herding_select", "load_config",
    "nme_classify", "partition_confident", "performance_drop", "preset", "pseudo_label", "refine_exemplars",
    "run_experiment", "run_incremental_session", "run_unlabeled_iterations", "session_loss",
    "synthetic_manifest", "train_base_session", "update_exemplars",
]
