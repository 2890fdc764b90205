"""Impact-surface classification: features, SMOTE, binary networks and fusion."""

from squashloc.classify.crossval import (
    BinaryMetrics,
    CrossValidationReport,
    StratificationError,
    crossvalidate,
    metrics_from_confusion,
    train_bundle,
)
from squashloc.classify.features import (
    FeatureBoundaryError,
    FeatureKind,
    FeatureVector,
    extract,
    extract_t1,
    extract_t2,
)
from squashloc.classify.fusion import BundleEntry, BundleFormatError, ClassifierBundle, fuse, fusion_scores
from squashloc.classify.labels import IMPACT_CLASSES, ClassLabel
from squashloc.classify.mlp import MlpModel, TrainingConfig, predict, train_binary
from squashloc.classify.smote import balance, smote

__all__ = [
    "BinaryMetrics", "BundleEntry", "BundleFormatError", "ClassLabel", "ClassifierBundle",
    "CrossValidationReport", "FeatureBoundaryError", "FeatureKind", "FeatureVector",
    "IMPACT_CLASSES", "MlpModel", "StratificationError", "TrainingConfig", "balance",
    "crossvalidate", "extract", "extract_t1", "extract_t2", "fuse", "fusion_scores",
    "metrics_from_confusion", "predict", "smote", "train_binary", "train_bundle",
]
