"""scikit-learn compatible wrapper around the full selection pipeline."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.feature_selection import SelectorMixin
from sklearn.utils.multiclass import type_of_target
from sklearn.utils.validation import check_is_fitted, validate_data

from .core import TabularDataset
from .pipeline import RunConfig, run_pipeline


class GerbilSelector(SelectorMixin, BaseEstimator):
    """Generative feature selector for binary classification.

    ``fit`` collects scored subsets with per-feature DQN agents (or at
    random), trains a variational sequence model on shuffled copies, runs
    gradient ascent from the best subsets in latent space and keeps the
    decoded subset with the highest cross-validated utility.

    Parameters mirror the most commonly tuned pipeline knobs; anything else
    can be passed as a full ``run_config`` (its values are overridden by the
    explicit parameters).

    Attributes
    ----------
    support_ : ndarray of bool, shape (n_features_in_,)
    subset_ : tuple of int
        Selected column indices, ascending.
    report_ : MetricsReport
        Cross-validated metrics of the selected subset.
    records_ : list of SubsetRecord
        Collected (un-augmented) training pairs.
    model_ : SubsetVAE
    search_result_ : SearchResult
    """

    def __init__(
        self,
        collector_epochs=500,
        collector="rl",
        shuffles=25,
        train_epochs=400,
        batch_size=1024,
        learning_rate=1e-4,
        variational=True,
        top_k=25,
        eta=0.5,
        search_steps=20,
        folds=5,
        classifier="tree_ensemble",
        metric="accuracy",
        run_config=None,
        random_state=0,
    ):
        self.collector_epochs = collector_epochs
        self.collector = collector
        self.shuffles = shuffles
        self.train_epochs = train_epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.variational = variational
        self.top_k = top_k
        self.eta = eta
        self.search_steps = search_steps
        self.folds = folds
        self.classifier = classifier
        self.metric = metric
        self.run_config = run_config
        self.random_state = random_state

    def _run_config(self) -> RunConfig:
        base = self.run_config if self.run_config is not None else RunConfig()
        seed = 0 if self.random_state is None else int(self.random_state)
        return base.override(
            **{
                "seed": seed,
                "collector_kind": self.collector,
                "collector.epochs": self.collector_epochs,
                "augment.shuffles": self.shuffles,
                "train.epochs": self.train_epochs,
                "train.batch_size": self.batch_size,
                "train.lr": self.learning_rate,
                "model.variational": self.variational,
                "search.top_k": self.top_k,
                "search.eta": self.eta,
                "search.steps": self.search_steps,
                "eval.folds": self.folds,
                "eval.classifier": self.classifier,
                "eval.metric": self.metric,
            }
        ).seeded()

    def fit(self, X, y):
        X, y = validate_data(self, X, y, dtype=np.float64, ensure_min_samples=2)
        if type_of_target(y) != "binary":
            raise ValueError("GerbilSelector supports binary targets only")
        self.classes_, y_enc = np.unique(y, return_inverse=True)
        names = getattr(self, "feature_names_in_", None)
        ds = TabularDataset(X, y_enc, tuple(names) if names is not None else ())
        cfg = self._run_config()
        result = run_pipeline(ds, cfg)

        self.run_config_ = cfg
        self.records_ = result.records
        self.model_ = result.trained.model
        self.training_curve_ = result.trained.curve
        self.search_result_ = result.search
        self.report_ = result.search.report
        self.utility_ = result.search.utility
        self.subset_ = tuple(ds.vocab.columns(result.search.best))
        support = np.zeros(ds.n_features, dtype=bool)
        support[list(self.subset_)] = True
        self.support_ = support
        return self

    def _get_support_mask(self):
        check_is_fitted(self, "support_")
        return self.support_

    def __sklearn_tags__(self):
        tags = super().__sklearn_tags__()
        tags.target_tags.required = True
        tags.input_tags.allow_nan = False
        return tags

