"""Utility oracle: stratified k-fold evaluation of a feature subset."""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import rankdata
from sklearn.linear_model import LogisticRegression
from sklearn.model_selection import StratifiedKFold
from sklearn.preprocessing import StandardScaler

from ._forest import forest_fit_predict
from .core import (
    ConfigError,
    EmptySubset,
    GerbilError,
    MetricsReport,
    TabularDataset,
    canonicalize,
)

CLASSIFIERS = ("tree_ensemble", "logistic")
UTILITY_METRICS = ("accuracy", "f1")


class DegenerateLabels(GerbilError):
    pass


@dataclass(frozen=True)
class EvalConfig:
    classifier: str = "tree_ensemble"
    folds: int = 5
    seed: int = 0
    metric: str = "accuracy"
    n_trees: int = 100

    def __post_init__(self):
        if self.classifier not in CLASSIFIERS:
            raise ConfigError(f"classifier must be one of {CLASSIFIERS}, got {self.classifier!r}")
        if self.metric not in UTILITY_METRICS:
            raise ConfigError(f"metric must be one of {UTILITY_METRICS}, got {self.metric!r}")
        if self.folds < 2:
            raise ConfigError("folds must be >= 2")
        if self.n_trees < 1:
            raise ConfigError("n_trees must be >= 1")


def stratified_folds(labels: np.ndarray, n_folds: int, seed: int) -> list[tuple[np.ndarray, np.ndarray]]:
    labels = np.asarray(labels)
    counts = np.bincount(labels, minlength=2)
    if counts.min() == 0:
        raise DegenerateLabels("labels contain a single class")
    if n_folds > counts.min():
        raise DegenerateLabels(
            f"{n_folds} folds requested but the smaller class has only {counts.min()} samples"
        )
    skf = StratifiedKFold(n_splits=n_folds, shuffle=True, random_state=seed)
    return list(skf.split(np.zeros(len(labels)), labels))


def binary_metrics(y_true, y_pred) -> tuple[float, float, float, float]:
    """Precision, recall, F1 for the positive class plus accuracy; 0 where undefined."""
    y_true = np.asarray(y_true).astype(bool)
    y_pred = np.asarray(y_pred).astype(bool)
    tp = float(np.sum(y_true & y_pred))
    fp = float(np.sum(~y_true & y_pred))
    fn = float(np.sum(y_true & ~y_pred))
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = 2 * tp / (2 * tp + fp + fn) if tp > 0 else 0.0
    accuracy = float(np.mean(y_true == y_pred))
    return precision, recall, f1, accuracy


def roc_auc(y_true, scores) -> float:
    """Rank-based (Mann-Whitney) AUC; ties count one half."""
    y_true = np.asarray(y_true).astype(bool)
    n_pos = int(y_true.sum())
    n_neg = len(y_true) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabels("AUC needs both classes in the evaluation fold")
    ranks = rankdata(scores)
    return float((ranks[y_true].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def _fold_seed(seed: int, fold: int) -> int:
    return int(np.random.SeedSequence([seed, fold]).generate_state(1)[0] & 0x7FFFFFFF)


def _fit_predict(X_train, y_train, X_test, cfg: EvalConfig, fold: int):
    if cfg.classifier == "tree_ensemble":
        max_features = max(1, int(np.sqrt(X_train.shape[1])))
        scores = forest_fit_predict(
            np.ascontiguousarray(X_train),
            y_train.astype(np.int64),
            np.ascontiguousarray(X_test),
            cfg.n_trees,
            max_features,
            True,
            _fold_seed(cfg.seed, fold),
        )
        return scores > 0.5, scores
    scaler = StandardScaler().fit(X_train)
    clf = LogisticRegression(max_iter=1000, random_state=cfg.seed)
    clf.fit(scaler.transform(X_train), y_train)
    scores = clf.predict_proba(scaler.transform(X_test))[:, 1]
    return scores > 0.5, scores


def _evaluate_columns(X, y, folds, cfg: EvalConfig) -> MetricsReport:
    per_fold, accs = [], []
    undefined = False
    for k, (tr, te) in enumerate(folds):
        if len(np.unique(y[tr])) < 2 or len(np.unique(y[te])) < 2:
            raise DegenerateLabels(f"fold {k} lacks a class")
        pred, scores = _fit_predict(X[tr], y[tr], X[te], cfg, k)
        p, r, f, acc = binary_metrics(y[te], pred)
        if np.ptp(scores) == 0:
            undefined = True
            auc = 0.5
        else:
            auc = roc_auc(y[te], scores)
        per_fold.append((p, r, f, auc))
        accs.append(acc)
    return MetricsReport.from_folds(per_fold, accs, auc_undefined=undefined)


def _columns_for(ds: TabularDataset, tokens: Sequence[int]) -> list[int]:
    seq = canonicalize(tokens)
    if not seq:
        raise EmptySubset("cannot evaluate an empty subset")
    return ds.vocab.columns(seq)


def evaluate_subset(ds: TabularDataset, tokens: Sequence[int], cfg: EvalConfig = EvalConfig()) -> MetricsReport:
    """Cross-validated precision/recall/F1/AUC of a classifier restricted to ``tokens``.

    The positive class is label 1. Aggregates are unweighted means over folds;
    a constant-score fold gets AUC 0.5 and sets ``auc_undefined``.
    """
    cols = _columns_for(ds, tokens)
    folds = stratified_folds(ds.labels, cfg.folds, cfg.seed)
    return _evaluate_columns(ds.features[:, cols], ds.labels, folds, cfg)


def utility_from_report(report: MetricsReport, metric: str) -> float:
    return report.accuracy if metric == "accuracy" else report.f1


def utility(ds: TabularDataset, tokens: Sequence[int], cfg: EvalConfig = EvalConfig()) -> float:
    return utility_from_report(evaluate_subset(ds, tokens, cfg), cfg.metric)


def evaluate_full(ds: TabularDataset, cfg: EvalConfig = EvalConfig()) -> MetricsReport:
    """Metrics on every feature; the "original set" reference row."""
    return evaluate_subset(ds, ds.vocab.tokens(range(ds.n_features)), cfg)


class SubsetScorer:
    """Memoising utility function bound to one dataset and evaluation config.

    Calling it returns the scalar utility; ``report`` returns the full
    metrics. Results are keyed by canonical subset, so permutations and
    duplicates share a cache entry. Safe to call from several threads.
    """

    def __init__(self, ds: TabularDataset, cfg: EvalConfig = EvalConfig()):
        self.ds = ds
        self.cfg = cfg
        self._folds = stratified_folds(ds.labels, cfg.folds, cfg.seed)
        self._cache: dict[tuple[int, ...], MetricsReport] = {}
        self._lock = threading.Lock()
        self.n_evaluations = 0

    def report(self, tokens: Sequence[int]) -> MetricsReport:
        key = canonicalize(tokens)
        with self._lock:
            hit = self._cache.get(key)
        if hit is not None:
            return hit
        cols = _columns_for(self.ds, key)
        rep = _evaluate_columns(self.ds.features[:, cols], self.ds.labels, self._folds, self.cfg)
        with self._lock:
            self._cache.setdefault(key, rep)
            self.n_evaluations += 1
        return rep

    def __call__(self, tokens: Sequence[int]) -> float:
        return utility_from_report(self.report(tokens), self.cfg.metric)


def f_statistics(ds: TabularDataset) -> np.ndarray:
    """One-way ANOVA F statistic of each feature between the two label groups.

    Zero within-group variance gives F = 0 when the group means coincide and
    +inf otherwise.
    """
    X, y = ds.features, ds.labels
    n = len(y)
    grand = X.mean(axis=0)
    between = np.zeros(X.shape[1])
    within = np.zeros(X.shape[1])
    for g in (0, 1):
        Xg = X[y == g]
        mg = Xg.mean(axis=0)
        between += len(Xg) * (mg - grand) ** 2
        within += ((Xg - mg) ** 2).sum(axis=0)
    df_between, df_within = 1, n - 2
    with np.errstate(divide="ignore", invalid="ignore"):
        F = (between / df_between) / (within / df_within)
    # float noise around zero between-group spread
    tiny = np.isclose(between, 0.0, atol=1e-12 * max(1.0, float(np.abs(X).max())))
    F = np.where(within == 0, np.where(tiny, 0.0, np.inf), F)
    return F


def baseline_ftest(ds: TabularDataset, k: int) -> tuple[int, ...]:
    """Tokens of the ``k`` features with the largest F statistic (ties: lower index)."""
    if not 1 <= k <= ds.n_features:
        raise ConfigError(f"k must lie in [1, {ds.n_features}], got {k}")
    F = f_statistics(ds)
    order = np.argsort(-F, kind="stable")[:k]
    return tuple(sorted(ds.vocab.tokens(order)))
