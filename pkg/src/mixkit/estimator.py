"""scikit-learn style front end for the source optimizer."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin, clone
from sklearn.utils.validation import check_array, check_is_fitted

from .optimizer import FINAL_STEP_FRACTION, LossConfig, optimize_estimates, total_loss_and_grad
from .signal import MixtureBatch


class MixITSeparator(TransformerMixin, BaseEstimator):
    """Separate a mixture of mixtures into ``n_sources`` estimates.

    ``X`` holds the N reference mixtures as rows, shape ``(N, T)``; a 1-D
    ``X`` is one mixture (N = 1). ``fit`` optimizes the estimates for
    ``X`` and stores them in ``sources_``. ``transform`` runs the same
    deterministic optimization on new input and returns ``(M, T)``
    estimates. ``y`` is the optional weak label vector used by the
    semantic loss terms, which also require ``classifier``.
    """

    def __init__(self, n_sources=4, snr_max_db=30.0, weight_l1=0.0, weight_l1l2=0.0,
                 weight_cov=0.0, weight_ce=0.0, weight_cos=0.0, aggregator="or",
                 mixit_method="auto", steps=2000, step_size=1e-2, final_step_fraction=FINAL_STEP_FRACTION,
                 classifier=None, random_state=0):
        self.n_sources = n_sources
        self.snr_max_db = snr_max_db
        self.weight_l1 = weight_l1
        self.weight_l1l2 = weight_l1l2
        self.weight_cov = weight_cov
        self.weight_ce = weight_ce
        self.weight_cos = weight_cos
        self.aggregator = aggregator
        self.mixit_method = mixit_method
        self.steps = steps
        self.step_size = step_size
        self.final_step_fraction = final_step_fraction
        self.classifier = classifier
        self.random_state = random_state

    def _loss_config(self):
        return LossConfig(
            n_sources=self.n_sources, snr_max_db=self.snr_max_db, weight_l1=self.weight_l1,
            weight_l1l2=self.weight_l1l2, weight_cov=self.weight_cov, weight_ce=self.weight_ce,
            weight_cos=self.weight_cos, aggregator=self.aggregator, mixit_method=self.mixit_method,
        )

    @staticmethod
    def _batch(X):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        return MixtureBatch(check_array(X, dtype=float))

    def _classifier(self, cfg):
        if not cfg.uses_semantic:
            return None
        if self.classifier is None:
            raise ValueError("semantic loss weights need a classifier")
        clf = self.classifier
        if not hasattr(clf, "slope_"):
            clf = clone(clf).fit()
        return clf

    def _run(self, X, y):
        cfg = self._loss_config()
        seed = 0 if self.random_state is None else int(self.random_state)
        return optimize_estimates(
            self._batch(X), cfg, steps=self.steps, step_size=self.step_size, seed=seed,
            classifier=self._classifier(cfg), labels=y,
            final_step_fraction=self.final_step_fraction,
        )

    def fit(self, X, y=None):
        result = self._run(X, y)
        self.n_references_ = self._batch(X).n_references
        self.sources_ = result.sources
        self.assignment_ = result.assignment
        self.loss_trace_ = result.loss_trace
        self.labels_ = y
        return self

    def transform(self, X, y=None):
        check_is_fitted(self, "sources_")
        return self._run(X, y).sources

    def fit_transform(self, X, y=None, **fit_params):
        return self.fit(X, y).sources_

    def score(self, X, y=None):
        """Negative composite loss of the fitted estimates against ``X``."""
        check_is_fitted(self, "sources_")
        cfg = self._loss_config()
        breakdown, _ = total_loss_and_grad(self._batch(X), self.sources_, cfg,
                                           self._classifier(cfg), y, with_grad=False)
        return -breakdown.total
