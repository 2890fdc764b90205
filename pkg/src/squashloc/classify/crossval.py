"""Stratified k-fold evaluation of one-vs-rest classifiers, and bundle training."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from sklearn.model_selection import StratifiedKFold

from squashloc.classify.features import FeatureKind
from squashloc.classify.fusion import BundleEntry, ClassifierBundle
from squashloc.classify.labels import IMPACT_CLASSES, ClassLabel
from squashloc.classify.mlp import T1_HIDDEN, T2_HIDDEN, MlpModel, TrainingConfig, train_binary
from squashloc.classify.smote import balance

CUTOFF_GRID = np.round(np.arange(0.05, 0.951, 0.05), 2)


class StratificationError(ValueError):
    pass


@dataclass(frozen=True)
class BinaryMetrics:
    accuracy: float
    precision: float
    recall: float
    precision_degenerate: bool = False
    recall_degenerate: bool = False

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r > 0 else 0.0


def metrics_from_confusion(tp: int, fn: int, fp: int, tn: int) -> BinaryMetrics:
    """Accuracy (tp+tn)/n, precision tp/(tp+fp), recall tp/(tp+fn).

    An empty denominator yields 0 with the matching degenerate flag set.
    """
    n = tp + fn + fp + tn
    p_deg = tp + fp == 0
    r_deg = tp + fn == 0
    return BinaryMetrics(
        accuracy=(tp + tn) / n if n else 0.0,
        precision=0.0 if p_deg else tp / (tp + fp),
        recall=0.0 if r_deg else tp / (tp + fn),
        precision_degenerate=p_deg,
        recall_degenerate=r_deg,
    )


def binary_metrics(y_true, y_pred) -> BinaryMetrics:
    y_true = np.asarray(y_true).astype(bool)
    y_pred = np.asarray(y_pred).astype(bool)
    tp = int(np.sum(y_true & y_pred))
    fn = int(np.sum(y_true & ~y_pred))
    fp = int(np.sum(~y_true & y_pred))
    tn = int(np.sum(~y_true & ~y_pred))
    return metrics_from_confusion(tp, fn, fp, tn)


def select_cutoff(confidence, y_true) -> float:
    """Cutoff on the grid that maximises F1 on the given (training) data."""
    best, best_f1 = 0.5, -1.0
    for cut in CUTOFF_GRID:
        f1 = binary_metrics(y_true, confidence > cut).f1
        if f1 > best_f1 + 1e-12:
            best, best_f1 = float(cut), f1
    return best


@dataclass
class FittedBinary:
    """A trained scorer plus the cutoff that turns scores into decisions."""

    score: Callable[[np.ndarray], np.ndarray]
    cutoff: float = 0.5
    model: MlpModel | None = None


def mlp_fitter(hidden=(10, 10), hyper: TrainingConfig | None = None, normalization: str = "none"):
    def fit(X, y) -> FittedBinary:
        model = train_binary(X, y, hidden, hyper, normalization)
        cutoff = select_cutoff(model.predict_proba(X), y)
        return FittedBinary(model.predict_proba, cutoff, model)

    return fit


@dataclass
class CrossValidationReport:
    folds: list[BinaryMetrics]
    cutoffs: list[float] = field(default_factory=list)
    train_sizes: list[int] = field(default_factory=list)
    validation_indices: list[np.ndarray] = field(default_factory=list, repr=False)

    @property
    def mean(self) -> BinaryMetrics:
        return BinaryMetrics(
            accuracy=float(np.mean([m.accuracy for m in self.folds])),
            precision=float(np.mean([m.precision for m in self.folds])),
            recall=float(np.mean([m.recall for m in self.folds])),
            precision_degenerate=any(m.precision_degenerate for m in self.folds),
            recall_degenerate=any(m.recall_degenerate for m in self.folds),
        )


def _binary_targets(labels, positive) -> np.ndarray:
    labels = np.asarray([getattr(l, "value", l) for l in labels])
    if positive is None:
        return labels.astype(int)
    return (labels == getattr(positive, "value", positive)).astype(int)


def crossvalidate(features, labels, fit: Callable | None = None, folds: int = 8,
                  positive: ClassLabel | str | None = None, seed: int = 0,
                  use_smote: bool = True, smote_k: int = 5) -> CrossValidationReport:
    """Stratified ``folds``-fold evaluation of a binary classifier.

    ``labels`` are 0/1, or class labels turned one-vs-rest by ``positive``.
    SMOTE balancing touches training folds only; validation folds always
    hold original samples.
    """
    X = np.asarray([getattr(f, "values", f) for f in features], dtype=float)
    y = _binary_targets(labels, positive)
    if len(X) < folds:
        raise StratificationError(f"{len(X)} samples cannot fill {folds} folds")
    counts = np.bincount(y, minlength=2)
    if counts.min() < folds:
        raise StratificationError(
            f"each class needs at least {folds} samples to appear in every fold, got {counts.tolist()}"
        )
    fit = fit or mlp_fitter()
    splitter = StratifiedKFold(n_splits=folds, shuffle=True, random_state=seed)
    report = CrossValidationReport([])
    for k, (train, valid) in enumerate(splitter.split(X, y)):
        X_train, y_train = X[train], y[train]
        if use_smote:
            X_train, y_train = balance(X_train, y_train, smote_k, seed + k)
        fitted = fit(X_train, y_train)
        decided = fitted.score(X[valid]) > fitted.cutoff
        report.folds.append(binary_metrics(y[valid], decided))
        report.cutoffs.append(fitted.cutoff)
        report.train_sizes.append(len(y_train))
        report.validation_indices.append(valid)
    return report


def train_bundle(datasets: Mapping[tuple[int, FeatureKind], tuple[np.ndarray, Sequence]],
                 hyper: TrainingConfig | None = None, folds: int = 8, seed: int = 0,
                 hidden_for: Mapping[FeatureKind, tuple[int, ...]] | None = None,
                 log: Callable[[str], None] | None = None) -> ClassifierBundle:
    """Pick the best (channel, feature kind) model for every impact class.

    ``datasets`` maps (channel, kind) to (features, class labels). Each
    candidate is cross-validated; the one with the highest mean F1 is retrained
    on all its (balanced) data. Its cross-validated precision becomes the
    fusion weight.
    """
    hidden_for = hidden_for or {FeatureKind.T1: T1_HIDDEN, FeatureKind.T2: T2_HIDDEN}
    entries = {}
    for label in IMPACT_CLASSES:
        best = None
        for (channel, kind), (X, labels) in sorted(datasets.items(), key=lambda kv: (kv[0][0], kv[0][1].value)):
            kind = FeatureKind(kind)
            y = _binary_targets(labels, label)
            if np.bincount(y, minlength=2).min() < folds:
                continue
            fitter = mlp_fitter(hidden_for[kind], hyper, kind.value)
            report = crossvalidate(X, y, fitter, folds, seed=seed)
            mean = report.mean
            if log:
                log(f"{label.value} ch{channel} {kind.value}: acc={mean.accuracy:.3f} "
                    f"prec={mean.precision:.3f} rec={mean.recall:.3f}")
            if best is None or mean.f1 > best[0].f1:
                best = (mean, channel, kind, X, y)
        if best is None:
            raise StratificationError(f"no dataset has enough {label.value} examples")
        mean, channel, kind, X, y = best
        Xb, yb = balance(X, y, rng_seed=seed)
        fitted = mlp_fitter(hidden_for[kind], hyper, kind.value)(Xb, yb)
        entries[label] = BundleEntry(fitted.model, channel, kind, fitted.cutoff, mean.precision)
    return ClassifierBundle(entries)
