"""Synthetic multi-fidelity data with exact reference densities.

The high-fidelity field comes from a sequential (Vecchia-type) generator:
along a maximin ordering, each value is a kriging prediction from its nearest
previously ordered neighbors under an exponential-covariance GP, optionally
plus a sine of the first two weighted neighbors, plus Gaussian noise with the
GP's conditional standard deviation. Lower fidelities are block averages or
block minima of that field.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from . import _rng
from .errors import DataValidationError
from .ordering import conditional_maximin
from .spatial import Ensemble, MultiFidelityLocations, _k_smallest, pairwise_distances

__all__ = [
    "SCENARIOS",
    "GeneratorSpec",
    "SequentialGenerator",
    "Scenario",
    "unit_grid",
    "coarsen_average",
    "coarsen_min",
    "exponential_covariance",
    "gen_gaussian",
    "gen_nonlinear_highfid",
    "gen_scenario",
]

SCENARIOS = ("gaussian-exponential", "nonlinear-map", "block-average", "block-min")
MAX_EXACT_N = 5000
_LOG_2PI = float(np.log(2 * np.pi))


def unit_grid(A: int) -> np.ndarray:
    """Cell centers of an ``A x A`` grid on the unit square, row-major (y outer, x inner)."""
    c = (np.arange(A) + 0.5) / A
    xx, yy = np.meshgrid(c, c)
    return np.column_stack([xx.ravel(), yy.ravel()])


def _blocks(field, factor: int):
    field = np.asarray(field, dtype=float)
    A = int(round(np.sqrt(field.shape[-1])))
    if A * A != field.shape[-1]:
        raise DataValidationError("field length is not a square grid")
    if factor < 1 or A % factor:
        raise DataValidationError(f"grid side {A} is not divisible by factor {factor}")
    a = A // factor
    return field.reshape(field.shape[:-1] + (a, factor, a, factor)), a


def coarsen_average(field, factor: int) -> np.ndarray:
    """Mean over ``factor x factor`` blocks of flattened square grids (last axis)."""
    b, a = _blocks(field, factor)
    return b.mean(axis=(-3, -1)).reshape(b.shape[:-4] + (a * a,))


def coarsen_min(field, factor: int) -> np.ndarray:
    b, a = _blocks(field, factor)
    return b.min(axis=(-3, -1)).reshape(b.shape[:-4] + (a * a,))


def exponential_covariance(a, b, range_: float) -> np.ndarray:
    return np.exp(-pairwise_distances(a, b) / range_)


def gen_gaussian(locs: MultiFidelityLocations, range_: float, seed: int, n: int,
                 stream: str = "gaussian") -> Ensemble:
    """Exact draws of a unit-variance GP with covariance ``exp(-dist / range)``.

    All fidelities are sampled jointly at their own locations.
    """
    if range_ <= 0:
        raise DataValidationError("range must be positive")
    pts = np.vstack(locs.coords)
    if pts.shape[0] > MAX_EXACT_N:
        raise DataValidationError(f"exact sampling limited to N <= {MAX_EXACT_N}")
    C = exponential_covariance(pts, pts, range_)
    try:
        L = np.linalg.cholesky(C)
    except np.linalg.LinAlgError:
        # shared locations across fidelities make C singular
        L = np.linalg.cholesky(C + 1e-10 * np.eye(C.shape[0]))
    z = _rng.replicate_normals(seed, stream, n, pts.shape[0])
    Y = z @ L.T
    splits = np.cumsum(locs.sizes)[:-1]
    return Ensemble(tuple(np.split(Y, splits, axis=1)))


class SequentialGenerator:
    """Sequential kriging generator over the conditional maximin order of ``locs``.

    Every point conditions on its ``m`` nearest previously ordered points of
    any fidelity. With ``amplitude = 0`` this is the Vecchia approximation of
    the exponential GP.
    """

    def __init__(self, locs: MultiFidelityLocations, range_: float = 0.3, m: int = 30,
                 amplitude: float = 0.0, frequency: float = 4.0):
        if range_ <= 0:
            raise DataValidationError("range must be positive")
        self.locs = locs
        self.range_ = range_
        self.m = m
        self.amplitude = amplitude
        self.frequency = frequency
        self.ordering = conditional_maximin(locs)
        order = self.ordering.global_order
        offsets = np.concatenate([[0], np.cumsum(locs.sizes)[:-1]])
        # flat index (fidelity blocks concatenated, original order) of each global rank
        self.flat_index = offsets[order[:, 0]] + order[:, 1]
        pts = np.vstack(locs.coords)[self.flat_index]
        N = pts.shape[0]
        self.neighbors = []
        self.weights = []
        self.sd = np.empty(N)
        for g in range(N):
            k = min(g, m)
            if k == 0:
                self.neighbors.append(np.empty(0, dtype=np.intp))
                self.weights.append(np.empty(0))
                self.sd[g] = 1.0
                continue
            diff = pts[:g] - pts[g]
            nb = _k_smallest(np.sqrt(np.sum(diff * diff, axis=1)), k)
            S = exponential_covariance(pts[nb], pts[nb], range_)
            s = exponential_covariance(pts[nb], pts[g:g + 1], range_)[:, 0]
            b = cho_solve(cho_factor(S, lower=True), s)
            self.neighbors.append(nb)
            self.weights.append(b)
            self.sd[g] = np.sqrt(max(1.0 - float(s @ b), 1e-12))

    @property
    def N(self) -> int:
        return self.sd.size

    def _mean(self, g: int, Y: np.ndarray) -> np.ndarray:
        nb = self.neighbors[g]
        b = self.weights[g]
        if nb.size == 0:
            return np.zeros(Y.shape[0])
        mu = Y[:, nb] @ b
        if self.amplitude:
            arg = Y[:, nb[:2]] @ b[:2]
            mu = mu + self.amplitude * np.sin(self.frequency * arg)
        return mu

    def sample(self, n: int, seed: int, stream: str = "generator") -> Ensemble:
        eps = _rng.replicate_normals(seed, stream, n, self.N)
        Y = np.zeros((n, self.N))
        for g in range(self.N):
            Y[:, g] = self._mean(g, Y) + self.sd[g] * eps[:, g]
        return self._to_ensemble(Y)

    def _to_ensemble(self, Y: np.ndarray) -> Ensemble:
        flat = np.empty_like(Y)
        flat[:, self.flat_index] = Y
        splits = np.cumsum(self.locs.sizes)[:-1]
        return Ensemble(tuple(np.split(flat, splits, axis=1)))

    def logpdf(self, ens: Ensemble) -> np.ndarray:
        """Exact log density of each replicate (sum of Gaussian component terms)."""
        ens.check_against(self.locs)
        Y = np.concatenate(ens.values, axis=1)[:, self.flat_index]
        out = np.zeros(Y.shape[0])
        for g in range(self.N):
            z = (Y[:, g] - self._mean(g, Y)) / self.sd[g]
            out += -0.5 * _LOG_2PI - np.log(self.sd[g]) - 0.5 * z * z
        return out


def gen_nonlinear_highfid(A: int = 30, range_: float = 0.3, seed: int = 0, n: int = 50,
                          amplitude: float = 2.0, frequency: float = 4.0, m: int = 30,
                          stream: str = "generator"):
    """High-fidelity fields on an ``A x A`` grid; returns ``(ensemble, generator)``."""
    gen = SequentialGenerator(MultiFidelityLocations((unit_grid(A),)), range_, m, amplitude, frequency)
    return gen.sample(n, seed, stream), gen


@dataclass(frozen=True)
class GeneratorSpec:
    """Scenario description.

    ``grids`` lists grid sides from coarsest to finest. For the block
    scenarios each side must divide the next; for ``gaussian-exponential``
    every grid carries point values of one GP; ``nonlinear-map`` uses only
    the last grid.
    """

    scenario: str = "block-average"
    grids: tuple = (5, 10, 30)
    range_: float = 0.3
    amplitude: float = 2.0
    frequency: float = 4.0
    m: int = 30

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise DataValidationError(f"unknown scenario {self.scenario!r}; choose from {SCENARIOS}")
        object.__setattr__(self, "grids", tuple(int(g) for g in self.grids))
        if self.scenario in ("block-average", "block-min"):
            for a, b in zip(self.grids, self.grids[1:]):
                if b % a:
                    raise DataValidationError(f"grid {b} is not a refinement of grid {a}")

    @classmethod
    def default(cls, scenario: str) -> "GeneratorSpec":
        if scenario == "gaussian-exponential":
            return cls(scenario, grids=(5, 10), amplitude=0.0)
        if scenario == "nonlinear-map":
            return cls(scenario, grids=(30,))
        return cls(scenario)

    def to_json(self) -> str:
        d = asdict(self)
        d["grids"] = list(self.grids)
        return json.dumps(d, sort_keys=True)


@dataclass
class Scenario:
    spec: GeneratorSpec
    locs: MultiFidelityLocations
    train: Ensemble
    test: Ensemble
    generator: SequentialGenerator
    shifts: list = field(default_factory=list)

    def truth_logpdf(self, ens: Ensemble) -> np.ndarray:
        """Exact log density of the generated field (the finest fidelity for block scenarios)."""
        if self.spec.scenario in ("block-average", "block-min"):
            return self.generator.logpdf(Ensemble((ens.values[-1],)))
        return self.generator.logpdf(ens)


def _coarsen_chain(high: np.ndarray, grids: tuple, how) -> list:
    levels = [high]
    for a, b in zip(reversed(grids[:-1]), reversed(grids[1:])):
        levels.insert(0, how(levels[0], b // a))
    return levels


def gen_scenario(spec: GeneratorSpec, n_train: int, n_test: int, seed: int) -> Scenario:
    """Train and test ensembles (independent streams) plus the exact-density handle.

    Fidelities produced by block minima are shifted by their training mean so
    that every fidelity is centered; the same shift is applied to the test
    set. Block averages of the zero-mean field are already centered.
    """
    if spec.scenario in ("block-average", "block-min"):
        high_locs = MultiFidelityLocations((unit_grid(spec.grids[-1]),))
        gen = SequentialGenerator(high_locs, spec.range_, spec.m, spec.amplitude, spec.frequency)
        locs = MultiFidelityLocations(tuple(unit_grid(a) for a in spec.grids))
        how = coarsen_average if spec.scenario == "block-average" else coarsen_min
        tr = _coarsen_chain(gen.sample(n_train, seed, "train").values[0], spec.grids, how)
        te = _coarsen_chain(gen.sample(n_test, seed, "test").values[0], spec.grids, how)
        shifts = [0.0] * len(spec.grids)
        if spec.scenario == "block-min":
            for r in range(len(spec.grids) - 1):
                shifts[r] = float(np.mean(tr[r]))
                tr[r] = tr[r] - shifts[r]
                te[r] = te[r] - shifts[r]
        return Scenario(spec, locs, Ensemble(tuple(tr)), Ensemble(tuple(te)), gen, shifts)
    if spec.scenario == "nonlinear-map":
        locs = MultiFidelityLocations((unit_grid(spec.grids[-1]),))
        amp = spec.amplitude
    else:
        locs = MultiFidelityLocations(tuple(unit_grid(a) for a in spec.grids))
        amp = 0.0
    gen = SequentialGenerator(locs, spec.range_, spec.m, amp, spec.frequency)
    return Scenario(spec, locs, gen.sample(n_train, seed, "train"), gen.sample(n_test, seed, "test"),
                    gen, [0.0] * locs.R)
