"""Generative Bayes classifier over per-class online KDEs."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .bandwidth import BandwidthUnavailable
from .engine import DEFAULT_DTH, CompressionTrigger, SampleModel

log = logging.getLogger(__name__)


@dataclass
class EngineConfig:
    """Settings shared by every class model."""

    diagonal: bool = False
    forgetting: float = 1.0
    dth: float = DEFAULT_DTH
    trigger_floor: int = 10
    growth_factor: float = 1.5
    revitalize: bool = True

    def new_model(self, d: int) -> SampleModel:
        return SampleModel(
            d,
            diagonal=self.diagonal,
            forgetting=self.forgetting,
            dth=self.dth,
            trigger=CompressionTrigger(self.trigger_floor, self.growth_factor),
            revitalize=self.revitalize,
        )


def _label_key(label):
    return (0, label) if isinstance(label, (int, float, np.integer, np.floating)) else (1, str(label))


@dataclass
class ClassifierModel:
    """Per-class sample models with empirical class priors.

    Labels are kept in sorted order, which is also the tie-breaking order of
    :meth:`predict`.
    """

    config: EngineConfig = field(default_factory=EngineConfig)
    classes: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)
    d: int | None = None

    @property
    def labels(self) -> list:
        return sorted(self.classes, key=_label_key)

    @property
    def priors(self) -> dict:
        total = sum(self.counts.values())
        return {k: self.counts[k] / total for k in self.labels}

    def observe(self, x, label) -> None:
        x = np.asarray(x, dtype=float).reshape(-1)
        if self.d is None:
            self.d = x.shape[0]
        elif x.shape[0] != self.d:
            raise ValueError(f"expected a {self.d}-vector, got length {x.shape[0]}")
        if label not in self.classes:
            self.classes[label] = self.config.new_model(self.d)
            self.counts[label] = 0
        self.classes[label].add_sample(x)
        self.counts[label] += 1

    def fit(self, X, y) -> ClassifierModel:
        for x, label in zip(np.atleast_2d(X), y):
            self.observe(x, label)
        return self

    def unavailable(self) -> list:
        """Labels whose model cannot yet produce a bandwidth."""
        return [k for k in self.labels if self.classes[k].n_eff < 2]

    def class_log_likelihoods(self, X) -> np.ndarray:
        """Log-likelihood of each row of X under each class model, shape ``(n, C)``.

        Classes without a usable bandwidth score ``-inf``.
        """
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.full((X.shape[0], len(self.classes)), -np.inf)
        for j, label in enumerate(self.labels):
            try:
                out[:, j] = self.classes[label].log_likelihood(X)
            except BandwidthUnavailable:
                warnings.warn(f"class {label!r} has no bandwidth yet; scored as -inf", stacklevel=2)
        return out

    def log_posteriors(self, X) -> np.ndarray:
        priors = self.priors
        log_prior = np.log([priors[k] for k in self.labels])
        return self.class_log_likelihoods(X) + log_prior[None, :]

    def predict_many(self, X) -> list:
        scores = self.log_posteriors(X)
        labels = self.labels
        return [labels[j] for j in np.argmax(scores, axis=1)]

    def predict(self, x):
        return self.predict_many(np.asarray(x, dtype=float).reshape(1, -1))[0]

    def avg_neg_log_likelihood(self, X, y, return_excluded: bool = False):
        """Mean of ``-log p(x | true class)`` over the test samples.

        Samples whose class is unknown or lacks a bandwidth are excluded; the
        excluded count is returned alongside when ``return_excluded`` is set.
        """
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = list(y)
        if not y:
            raise ValueError("empty test set")
        total, used, excluded = 0.0, 0, 0
        for label in dict.fromkeys(y):
            rows = [i for i, t in enumerate(y) if t == label]
            model = self.classes.get(label)
            try:
                if model is None:
                    raise BandwidthUnavailable(f"unknown class {label!r}")
                ll = model.log_likelihood(X[rows])
            except BandwidthUnavailable as exc:
                log.warning("excluding %d samples: %s", len(rows), exc)
                excluded += len(rows)
                continue
            total -= float(np.sum(ll))
            used += len(rows)
        value = total / used if used else math.nan
        return (value, excluded) if return_excluded else value
