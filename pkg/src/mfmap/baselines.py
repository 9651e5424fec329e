"""Reference models sharing the ``log_score`` interface of the transport map."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DataValidationError
from .model import ModelSettings
from .predict import ScoreResult
from .spatial import Ensemble
from .train import TrainConfig, TrainedMap, fit

__all__ = ["IndependentGaussian", "fit_independent_gaussian", "fit_linear_map", "VARIANCE_FLOOR"]

VARIANCE_FLOOR = 1e-8


@dataclass(frozen=True)
class IndependentGaussian:
    """Independent normal per location, with empirical mean and variance."""

    means: tuple
    variances: tuple

    @property
    def R(self) -> int:
        return len(self.means)

    def log_score(self, test: Ensemble) -> ScoreResult:
        if test.R != self.R or test.sizes != tuple(m.size for m in self.means):
            raise DataValidationError("test ensemble does not match the fitted locations")
        out = np.empty((test.n, self.R))
        for r, (y, mu, var) in enumerate(zip(test.values, self.means, self.variances)):
            z2 = (y - mu) ** 2 / var
            out[:, r] = 0.5 * np.sum(z2 + np.log(var) + math.log(2 * math.pi), axis=1)
        return ScoreResult(out)


def fit_independent_gaussian(train: Ensemble) -> IndependentGaussian:
    if train.n < 2:
        raise DataValidationError("at least two replicates are needed for a variance")
    means = tuple(v.mean(axis=0) for v in train.values)
    variances = tuple(np.maximum(v.var(axis=0, ddof=1), VARIANCE_FLOOR) for v in train.values)
    return IndependentGaussian(means, variances)


def fit_linear_map(train: Ensemble, locs, ordering=None, sets=None, config: TrainConfig = TrainConfig(),
                   settings: ModelSettings = ModelSettings()) -> TrainedMap:
    """The transport map with the nonlinear kernel term removed."""
    linear = ModelSettings(settings.g, settings.epsilon, settings.family, False,
                           settings.m_max, settings.mp_max)
    return fit(train, locs, config, linear, ordering=ordering, sets=sets)
