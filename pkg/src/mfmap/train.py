"""Empirical-Bayes fitting of the hyperparameters by minibatch Adam ascent."""

from __future__ import annotations

import csv
import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import _rng
from .errors import DataValidationError, NumericalError, TrainingDivergedError
from .likelihood import FidelityData, _fidelity_sum, effective_sizes, fidelity_terms, prepare_data
from .model import (
    HyperParams,
    ModelSettings,
    checkpoint_to_dict,
    constrain_block,
    nonlinearity_variance,
    relevance_weights,
)
from .ordering import (
    ConditioningSets,
    MaximinOrdering,
    build_conditioning_sets,
    conditional_maximin,
)
from .spatial import Ensemble, MultiFidelityLocations, format_float

__all__ = ["TrainConfig", "TrainedMap", "FidelityCache", "fit", "build_map", "objective_trace",
           "write_trace_csv"]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 128
    learning_rate: float = 0.03
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    tolerance: float = 1e-6
    patience: int = 10
    enabled: tuple | None = None
    gradient: str = "analytic"
    threads: int = 1

    def __post_init__(self):
        if self.epochs < 1:
            raise DataValidationError("epochs must be at least 1")
        if self.batch_size < 1:
            raise DataValidationError("batch size must be at least 1")
        if not self.learning_rate >= 0:
            raise DataValidationError("learning rate must be non-negative")
        if self.gradient not in ("analytic", "fd"):
            raise DataValidationError("gradient must be 'analytic' or 'fd'")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["enabled"] = list(self.enabled) if self.enabled is not None else None
        return d


@dataclass
class FidelityCache:
    """Posterior quantities for every location of one fidelity, in rank order."""

    sizes: tuple
    X: np.ndarray          # (N_r, n, m + mp) training conditioning vectors
    chol: np.ndarray       # (N_r, n, n) Cholesky factor of G
    weights: np.ndarray    # (N_r, n) G^{-1} y
    alpha_post: float
    beta_post: np.ndarray  # (N_r,)
    q: np.ndarray
    sigma2: np.ndarray     # (N_r,)
    range_: float
    log_marginal: np.ndarray  # (N_r,)


@dataclass
class TrainedMap:
    hp: HyperParams
    settings: ModelSettings
    locs: MultiFidelityLocations
    ordering: MaximinOrdering
    sets: ConditioningSets
    data: list
    caches: list
    config: TrainConfig | None = None
    trace: list = field(default_factory=list)
    batch_trace: list = field(default_factory=list)
    initial_hp: HyperParams | None = None

    @property
    def R(self) -> int:
        return self.hp.R

    @property
    def n(self) -> int:
        return self.data[0].n

    @property
    def final_objectives(self) -> list:
        return [float(np.sum(c.log_marginal)) for c in self.caches]

    @property
    def sizes(self) -> list:
        return [c.sizes for c in self.caches]

    def log_score(self, test: Ensemble):
        from .predict import log_score

        return log_score(self, test)

    def checkpoint(self, **extra) -> dict:
        training = {}
        if self.config is not None:
            training.update(self.config.to_dict())
        training["final_objectives"] = self.final_objectives
        training["epochs_run"] = [len(t) for t in self.trace]
        model = "mfbtm" if self.settings.nonlinear else "linear"
        return checkpoint_to_dict(self.hp, self.settings, model=model, training=training, **extra)


def _cache_for(block, d: FidelityData, settings: ModelSettings) -> FidelityCache:
    sizes = effective_sizes(block, d, settings)
    out = fidelity_terms(block, d, settings, sizes=sizes, keep=True)
    theta = constrain_block(block, settings.nonlinear)
    return FidelityCache(
        sizes=sizes,
        X=d.design(np.arange(d.size), *sizes),
        chol=out.chol,
        weights=out.weights,
        alpha_post=float(out.alpha_post),
        beta_post=out.beta_post,
        q=relevance_weights(theta, *sizes),
        sigma2=np.atleast_1d(nonlinearity_variance(theta, d.ell)),
        range_=theta.range,
        log_marginal=out.values,
    )


def _structures(locs, settings, ordering=None, sets=None):
    if ordering is None:
        ordering = conditional_maximin(locs)
    if sets is None:
        sets = build_conditioning_sets(ordering, locs, settings.m_max, settings.mp_max)
    return ordering, sets


def build_map(hp: HyperParams, locs: MultiFidelityLocations, ensemble: Ensemble,
              settings: ModelSettings = ModelSettings(), ordering=None, sets=None,
              **kwargs) -> TrainedMap:
    """Assemble a map from fixed hyperparameters (no optimization)."""
    ensemble.check_against(locs)
    ordering, sets = _structures(locs, settings, ordering, sets)
    data = prepare_data(ordering, sets, ensemble)
    caches = [_cache_for(hp.blocks[r], d, settings) for r, d in enumerate(data)]
    return TrainedMap(hp, settings, locs, ordering, sets, data, caches, **kwargs)


def _fit_fidelity(block0, d: FidelityData, settings: ModelSettings, config: TrainConfig):
    block = np.array(block0, dtype=float)
    N = d.size
    B = min(config.batch_size, N)
    rng = _rng.stream(config.seed, "batching", d.r)
    m1 = np.zeros_like(block)
    m2 = np.zeros_like(block)
    step = 0
    trace, batch_trace = [], []
    stall = 0
    best = None
    last_good = block.copy()
    for epoch in range(config.epochs):
        sizes = effective_sizes(block, d, settings)
        perm = rng.permutation(N)
        epoch_sum = 0.0
        for start in range(0, N, B):
            idx = perm[start:start + B]
            scale = N / idx.size
            # overflow shows up as a non-finite value and is reported below
            try:
                with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
                    if config.gradient == "analytic":
                        res = fidelity_terms(block, d, settings, idx=idx, sizes=sizes, grad=True)
                        val = float(np.sum(res.values))
                        g = res.grad.sum(axis=0) * scale
                    else:
                        val = float(np.sum(fidelity_terms(block, d, settings, idx=idx, sizes=sizes).values))
                        g = _fd_block_gradient(block, d, settings, idx, sizes) * scale
            except NumericalError as exc:
                raise TrainingDivergedError(d.r + 1, epoch + 1, last_good) from exc
            if not (np.isfinite(val) and np.all(np.isfinite(g))):
                raise TrainingDivergedError(d.r + 1, epoch + 1, last_good)
            last_good = block.copy()
            epoch_sum += val
            batch_trace.append(scale * val)
            step += 1
            m1 = config.beta1 * m1 + (1 - config.beta1) * g
            m2 = config.beta2 * m2 + (1 - config.beta2) * g * g
            mhat = m1 / (1 - config.beta1**step)
            vhat = m2 / (1 - config.beta2**step)
            block = block + config.learning_rate * mhat / (np.sqrt(vhat) + config.adam_eps)
        trace.append(epoch_sum)
        # stop once the best epoch objective has not improved for `patience` epochs
        if best is None or epoch_sum - best > config.tolerance * max(abs(best), 1.0):
            best = epoch_sum
            stall = 0
        else:
            stall += 1
            if stall >= config.patience:
                log.debug("fidelity %d stopped after %d epochs", d.r + 1, epoch + 1)
                break
    return block, trace, batch_trace


def _fd_block_gradient(block, d, settings, idx, sizes):
    g = np.empty(block.size)
    for k in range(block.size):
        h = 1e-4 * max(1.0, abs(block[k]))
        up, dn = block.copy(), block.copy()
        up[k] += h
        dn[k] -= h
        g[k] = (_fidelity_sum(up, d, settings, idx, sizes) - _fidelity_sum(dn, d, settings, idx, sizes)) / (2 * h)
    return g


def fit(ensemble: Ensemble, locs: MultiFidelityLocations, config: TrainConfig = TrainConfig(),
        settings: ModelSettings = ModelSettings(), init: HyperParams | None = None,
        ordering=None, sets=None) -> TrainedMap:
    """Maximize the integrated likelihood separately for every fidelity.

    Returns a :class:`TrainedMap` whose caches are rebuilt at the final
    hyperparameters, with conditioning-set sizes re-derived from them.
    """
    ensemble.check_against(locs)
    if ensemble.n < 2:
        warnings.warn("training with a single replicate; estimates rely on the prior", stacklevel=2)
    ordering, sets = _structures(locs, settings, ordering, sets)
    data = prepare_data(ordering, sets, ensemble)
    hp0 = init.copy() if init is not None else HyperParams.default(ensemble)
    enabled = set(range(ensemble.R)) if config.enabled is None else {r for r in config.enabled}

    def job(r):
        if r not in enabled:
            return hp0.blocks[r].copy(), [], []
        return _fit_fidelity(hp0.blocks[r], data[r], settings, config)

    if config.threads > 1 and ensemble.R > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            results = list(pool.map(job, range(ensemble.R)))
    else:
        results = [job(r) for r in range(ensemble.R)]
    hp = HyperParams([res[0] for res in results])
    caches = [_cache_for(hp.blocks[r], d, settings) for r, d in enumerate(data)]
    return TrainedMap(
        hp, settings, locs, ordering, sets, data, caches,
        config=config,
        trace=[res[1] for res in results],
        batch_trace=[res[2] for res in results],
        initial_hp=hp0,
    )


def objective_trace(tmap: TrainedMap, smoothed: bool = True) -> list:
    """Per-epoch objective for each fidelity; ``smoothed`` applies a running maximum."""
    out = []
    for t in tmap.trace:
        t = np.asarray(t, dtype=float)
        out.append(np.maximum.accumulate(t) if smoothed and t.size else t)
    return out


def write_trace_csv(path, tmap: TrainedMap) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fidelity", "epoch", "objective"])
        for r, t in enumerate(objective_trace(tmap)):
            for e, v in enumerate(t):
                w.writerow([r + 1, e + 1, format_float(v)])
