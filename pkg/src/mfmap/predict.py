"""Posterior predictive densities, log-scores, the forward map and sampling.

Each component ``y_{r,i}`` given its conditioning values is Student-t with
``2 alpha~`` degrees of freedom, location ``k*' G^{-1} y`` and squared scale
``beta~ / alpha~ * (1 + K(x*, x*) - k*' G^{-1} k*)``.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import gammaln

from . import _rng
from .errors import DataValidationError, NumericalError
from .model import gram
from .spatial import Ensemble, format_float
from .train import TrainedMap

__all__ = [
    "PredictiveComponent",
    "ScoreResult",
    "predictive_component",
    "student_t_logpdf",
    "log_score",
    "forward_map",
    "sample_joint",
    "sample_conditional",
    "write_scores_csv",
]

_VAR_TOL = 1e-10


@dataclass(frozen=True)
class PredictiveComponent:
    """Student-t predictive for one component; arrays broadcast over targets."""

    loc: np.ndarray
    scale: np.ndarray
    df: float

    def logpdf(self, y):
        return student_t_logpdf(y, self.loc, self.scale, self.df)


def student_t_logpdf(y, loc, scale, df):
    z = (np.asarray(y, dtype=float) - loc) / scale
    return (gammaln(0.5 * (df + 1.0)) - gammaln(0.5 * df) - 0.5 * math.log(df * math.pi)
            - np.log(scale) - 0.5 * (df + 1.0) * np.log1p(z * z / df))


def _conditioning(tmap: TrainedMap, r: int, i: int, current: np.ndarray, previous: np.ndarray | None):
    """Conditioning vectors ``(k, m + mp)`` of location ``(r, i)`` from rank-ordered values."""
    m, mp = tmap.caches[r].sizes
    d = tmap.data[r]
    k = current.shape[0]
    out = np.zeros((k, m + mp))
    cols = d.same[i, :m]
    valid = cols >= 0
    out[:, :m][:, valid] = current[:, cols[valid]]
    if mp:
        cols = d.prev[i, :mp]
        valid = cols >= 0
        out[:, m:][:, valid] = previous[:, cols[valid]]
    return out


def _predict(tmap: TrainedMap, r: int, i: int, xs: np.ndarray) -> PredictiveComponent:
    c = tmap.caches[r]
    Xtr = c.X[i]
    sigma2 = c.sigma2[i]
    family = tmap.settings.family
    ks = gram(Xtr, xs, c.q, sigma2, c.range_, family)
    loc = ks.T @ c.weights[i]
    v = solve_triangular(c.chol[i], ks, lower=True, check_finite=False)
    kss = np.sum(xs * c.q * xs, axis=1) + sigma2
    factor = 1.0 + kss - np.sum(v * v, axis=0)
    bad = factor <= 0
    if np.any(bad):
        if np.any(factor < -_VAR_TOL * (1.0 + kss)):
            raise NumericalError(f"negative predictive variance at fidelity {r + 1}, rank {i + 1}")
        warnings.warn(f"predictive variance clamped at fidelity {r + 1}, rank {i + 1}", stacklevel=3)
        factor = np.maximum(factor, 1e-12)
    scale = np.sqrt(c.beta_post[i] / c.alpha_post * factor)
    return PredictiveComponent(loc, scale, 2.0 * c.alpha_post)


def predictive_component(tmap: TrainedMap, r: int, i: int, x) -> PredictiveComponent:
    """Predictive of the rank-``i`` component of fidelity ``r`` given conditioning vector(s) ``x``."""
    m, mp = tmap.caches[r].sizes
    xs = np.atleast_2d(np.asarray(x, dtype=float))
    if xs.shape[1] != m + mp:
        raise ValueError(f"conditioning vector must have length {m + mp}, got {xs.shape[1]}")
    return _predict(tmap, r, i, xs)


@dataclass(frozen=True)
class ScoreResult:
    """Negative log densities of test replicates.

    ``per_fidelity[j, r]`` is ``-log p(y_r | y_{<r})`` for replicate ``j``.
    """

    per_fidelity: np.ndarray

    @property
    def per_replicate(self) -> np.ndarray:
        return self.per_fidelity.sum(axis=1)

    @property
    def mean(self) -> float:
        return float(np.mean(self.per_replicate))

    @property
    def fidelity_means(self) -> np.ndarray:
        return self.per_fidelity.mean(axis=0)


def _check_test(tmap: TrainedMap, test: Ensemble) -> tuple:
    if test.R != tmap.R or test.sizes != tmap.locs.sizes:
        raise DataValidationError("test ensemble does not match the training locations")
    return tmap.ordering.order_values(test.values)


def log_score(tmap: TrainedMap, test: Ensemble) -> ScoreResult:
    """Teacher-forced log-score: each component conditions on the replicate's own values."""
    ordered = _check_test(tmap, test)
    out = np.zeros((test.n, tmap.R))
    for r in range(tmap.R):
        prev = ordered[r - 1] if r > 0 else None
        cur = ordered[r]
        for i in range(cur.shape[1]):
            xs = _conditioning(tmap, r, i, cur, prev)
            lp = _predict(tmap, r, i, xs).logpdf(cur[:, i])
            if not np.all(np.isfinite(lp)):
                raise NumericalError(f"non-finite predictive density at fidelity {r + 1}, rank {i + 1}")
            out[:, r] -= lp
    return ScoreResult(out)


def forward_map(tmap: TrainedMap, y) -> np.ndarray:
    """Plug-in map to the reference: ``(y - location) / d_hat`` per component.

    ``d_hat^2`` is the posterior mean ``beta~ / (alpha~ - 1)``. Accepts an
    :class:`Ensemble` (returns ``(k, N)``) or a tuple of per-fidelity vectors
    for one replicate (returns ``(N,)``). Columns follow the global order.
    """
    single = not isinstance(y, Ensemble)
    ens = Ensemble(tuple(np.atleast_2d(v) for v in y)) if single else y
    ordered = _check_test(tmap, ens)
    parts = []
    for r in range(tmap.R):
        c = tmap.caches[r]
        prev = ordered[r - 1] if r > 0 else None
        cur = ordered[r]
        z = np.empty_like(cur)
        dhat = np.sqrt(c.beta_post / (c.alpha_post - 1.0))
        for i in range(cur.shape[1]):
            xs = _conditioning(tmap, r, i, cur, prev)
            z[:, i] = (cur[:, i] - _predict(tmap, r, i, xs).loc) / dhat[i]
        parts.append(z)
    out = np.concatenate(parts, axis=1)
    return out[0] if single else out


_SAMPLE_CHUNK = 1024


def _draw(tmap: TrainedMap, count: int, seed: int, fixed: tuple = ()) -> Ensemble:
    """Sequential ancestral sampling in global maximin order.

    Replicate ``j`` consumes a normal and a gamma variate per component from
    its own stream ``(seed, "sampling", j)``, so draws do not depend on
    ``count`` (up to rounding) and fixed coordinates leave the other draws
    untouched.
    """
    chunks = []
    for start in range(0, count, _SAMPLE_CHUNK):
        stop = min(count, start + _SAMPLE_CHUNK)
        part = tuple(f[start:stop] for f in fixed)
        chunks.append(_draw_chunk(tmap, start, stop, seed, part))
    return Ensemble(tuple(np.concatenate([c[r] for c in chunks]) for r in range(tmap.R)))


def _draw_chunk(tmap: TrainedMap, start: int, stop: int, seed: int, fixed: tuple) -> tuple:
    alpha_all = np.concatenate([np.full(d.size, c.alpha_post) for d, c in zip(tmap.data, tmap.caches)])
    N = alpha_all.size
    count = stop - start
    normals = np.empty((count, N))
    gammas = np.empty((count, N))
    for j in range(count):
        g = _rng.stream(seed, "sampling", start + j)
        normals[j] = g.standard_normal(N)
        gammas[j] = g.standard_gamma(alpha_all)
    # Student-t as z / sqrt(chi2_nu / nu), nu = 2 alpha~, chi2_nu = 2 Gamma(alpha~)
    tdraws = normals / np.sqrt(gammas / alpha_all)
    values = []
    offset = 0
    for r in range(tmap.R):
        d = tmap.data[r]
        if r < len(fixed):
            values.append(fixed[r])
            offset += d.size
            continue
        cur = np.zeros((count, d.size))
        prev = values[r - 1] if r > 0 else None
        for i in range(d.size):
            xs = _conditioning(tmap, r, i, cur, prev)
            pc = _predict(tmap, r, i, xs)
            cur[:, i] = pc.loc + pc.scale * tdraws[:, offset + i]
        values.append(cur)
        offset += d.size
    return tmap.ordering.unorder_values(tuple(values))


def sample_joint(tmap: TrainedMap, count: int, seed: int) -> Ensemble:
    """``count`` replicates from the posterior predictive, in original location order."""
    return _draw(tmap, count, seed)


def sample_conditional(tmap: TrainedMap, given: Ensemble | None, count: int, seed: int) -> Ensemble:
    """Sample fidelities above ``given.R`` with the lower fidelities fixed.

    ``given`` holds the first ``r0`` fidelities in original order, either a
    single replicate (shared by all draws) or ``count`` replicates; ``None``
    fixes nothing. The result echoes the given fidelities and contains all
    ``R`` fidelities. Draws of the free fidelities match those of
    :func:`sample_joint` with the same seed whenever the fixed values agree.
    """
    if given is None:
        return _draw(tmap, count, seed)
    r0 = given.R
    if r0 > tmap.R:
        raise DataValidationError(f"given {r0} fidelities, the map has {tmap.R}")
    if given.sizes != tmap.locs.sizes[:r0]:
        raise DataValidationError("given fields do not match the lower-fidelity locations")
    if given.n not in (1, count):
        raise DataValidationError(f"given has {given.n} replicates; expected 1 or {count}")
    vals = tuple(np.broadcast_to(v, (count, v.shape[1])).copy() for v in given.values)
    if r0 == tmap.R:
        return Ensemble(vals)
    fixed = tuple(np.asarray(v)[:, p] for v, p in zip(vals, tmap.ordering.perms[:r0]))
    return _draw(tmap, count, seed, fixed)


def write_scores_csv(path, result: ScoreResult) -> None:
    """``replicate,fidelity,neg_log_score`` rows (1-based)."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["replicate", "fidelity", "neg_log_score"])
        for j, row in enumerate(result.per_fidelity):
            for r, v in enumerate(row):
                w.writerow([j + 1, r + 1, format_float(v)])
