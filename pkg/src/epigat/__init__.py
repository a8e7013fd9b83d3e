"""Graph-attention classification of resting-state EEG windows.

The package covers the full chain from raw 14-channel recordings to subject
level scores: band-pass filtering and FastICA cleaning, per-window node
features, phase-locking-value graphs, GATv2 and GCN classifiers on a small
reverse-mode autodiff engine, a random-forest baseline, leave-one-subject-out
evaluation with DeLong comparisons, and attention / Grad-CAM explanations.
"""

__version__ = "0.1.0"

from .config import (ForestConfig, GatConfig, GcnConfig, PipelineConfig,  # noqa: E402
                     PreprocessConfig, TrainConfig, build_config)
from .connectivity import GraphSample, build_graph, plv  # noqa: E402
from .explain import edge_importance, gradcam_node_importance  # noqa: E402
from .features import katz_fd, node_features  # noqa: E402
from .forest import rf_predict_proba, rf_train  # noqa: E402
from .io_dataset import generate_synthetic_dataset, load_manifest, load_recording  # noqa: E402
from .metrics import auroc, compute_metrics, delong_test  # noqa: E402
from .models import GATClassifier, GCNClassifier  # noqa: E402
from .pipeline import build_dataset  # noqa: E402
from .training import loocv, train_model  # noqa: E402

__all__ = [
    "ForestConfig", "GatConfig", "GcnConfig", "PipelineConfig", "PreprocessConfig",
    "TrainConfig", "build_config", "GraphSample", "build_graph", "plv", "edge_importance",
    "gradcam_node_importance", "katz_fd", "node_features", "rf_predict_proba", "rf_train",
    "generate_synthetic_dataset", "load_manifest", "load_recording", "auroc",
    "compute_metrics", "delong_test", "GATClassifier", "GCNClassifier", "build_dataset",
    "loocv", "train_model",
]
