"""Location sets, ensembles, CSV ingestion and neighbor queries.

Conventions
-----------
Inside Python, fidelities and locations are indexed from 0 (fidelity 0 is the
coarsest). The CSV formats label fidelities from 1 and replicates from 1.
Distances are Euclidean in coordinate units; lon/lat inputs are treated as
planar.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataValidationError

__all__ = [
    "MultiFidelityLocations",
    "Ensemble",
    "Standardization",
    "load_locations",
    "load_ensemble",
    "write_locations",
    "write_ensemble",
    "standardize",
    "nearest_neighbors",
    "pairwise_distances",
    "format_float",
]


def format_float(x) -> str:
    """Shortest round-trip representation, stable across runs."""
    return repr(float(x))


def pairwise_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Euclidean distances between the rows of ``a`` and ``b``."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


@dataclass(frozen=True)
class MultiFidelityLocations:
    """Per-fidelity coordinate arrays, coarsest fidelity first.

    ``coords[r]`` is an ``(N_r, D)`` array in original (file) order.
    """

    coords: tuple

    def __post_init__(self):
        if len(self.coords) < 1:
            raise DataValidationError("at least one fidelity is required")
        arrays = []
        dim = None
        for r, c in enumerate(self.coords):
            c = np.array(c, dtype=float)
            if c.ndim == 1:
                c = c[:, None]
            if c.ndim != 2 or c.shape[0] < 1:
                raise DataValidationError(f"fidelity {r + 1} is empty")
            if dim is None:
                dim = c.shape[1]
            elif c.shape[1] != dim:
                raise DataValidationError(
                    f"fidelity {r + 1} has dimension {c.shape[1]}, expected {dim}"
                )
            if not np.all(np.isfinite(c)):
                raise DataValidationError(f"non-finite coordinate in fidelity {r + 1}")
            uniq = np.unique(c, axis=0)
            if uniq.shape[0] != c.shape[0]:
                raise DataValidationError(f"duplicate location within fidelity {r + 1}")
            c.setflags(write=False)
            arrays.append(c)
        object.__setattr__(self, "coords", tuple(arrays))

    @property
    def R(self) -> int:
        return len(self.coords)

    @property
    def sizes(self) -> tuple:
        return tuple(c.shape[0] for c in self.coords)

    @property
    def N(self) -> int:
        return sum(self.sizes)

    @property
    def dim(self) -> int:
        return self.coords[0].shape[1]

    @property
    def bounding_box(self) -> np.ndarray:
        """``(2, D)`` array: row 0 is the minimum, row 1 the maximum."""
        allc = np.vstack(self.coords)
        return np.vstack([allc.min(axis=0), allc.max(axis=0)])

    @property
    def diameter(self) -> float:
        lo, hi = self.bounding_box
        return float(np.sqrt(np.sum((hi - lo) ** 2)))

    def __eq__(self, other):
        if not isinstance(other, MultiFidelityLocations):
            return NotImplemented
        return self.R == other.R and all(
            a.shape == b.shape and np.array_equal(a, b)
            for a, b in zip(self.coords, other.coords)
        )

    __hash__ = None


@dataclass(frozen=True)
class Ensemble:
    """``values[r]`` is an ``(n, N_r)`` matrix in original location order."""

    values: tuple

    def __post_init__(self):
        if len(self.values) < 1:
            raise DataValidationError("ensemble needs at least one fidelity")
        arrays = []
        n = None
        for r, v in enumerate(self.values):
            v = np.array(v, dtype=float)
            if v.ndim != 2:
                raise DataValidationError(f"fidelity {r + 1} values must be a matrix")
            if n is None:
                n = v.shape[0]
            elif v.shape[0] != n:
                raise DataValidationError(
                    f"fidelity {r + 1} has {v.shape[0]} replicates, expected {n}"
                )
            if not np.all(np.isfinite(v)):
                bad = np.argwhere(~np.isfinite(v))[0]
                raise DataValidationError(
                    f"non-finite value in fidelity {r + 1}, replicate {bad[0] + 1}, "
                    f"column {bad[1] + 1}"
                )
            v.setflags(write=False)
            arrays.append(v)
        object.__setattr__(self, "values", tuple(arrays))

    @property
    def n(self) -> int:
        return self.values[0].shape[0]

    @property
    def R(self) -> int:
        return len(self.values)

    @property
    def sizes(self) -> tuple:
        return tuple(v.shape[1] for v in self.values)

    def check_against(self, locs: MultiFidelityLocations) -> None:
        if self.R != locs.R:
            raise DataValidationError(
                f"ensemble has {self.R} fidelities, locations have {locs.R}"
            )
        for r, (a, b) in enumerate(zip(self.sizes, locs.sizes)):
            if a != b:
                raise DataValidationError(
                    f"fidelity {r + 1}: ensemble has {a} columns, locations have {b}"
                )

    def subset(self, replicates) -> "Ensemble":
        idx = np.asarray(replicates)
        return Ensemble(tuple(v[idx] for v in self.values))

    def fidelities(self, upto: int) -> "Ensemble":
        """The first ``upto`` fidelities."""
        return Ensemble(self.values[:upto])

    def __eq__(self, other):
        if not isinstance(other, Ensemble):
            return NotImplemented
        return self.R == other.R and all(
            a.shape == b.shape and np.array_equal(a, b)
            for a, b in zip(self.values, other.values)
        )

    __hash__ = None


def _parse_float(token: str, where: str) -> float:
    token = token.strip()
    if "," in token or token == "":
        raise DataValidationError(f"malformed number {token!r} at {where}")
    try:
        x = float(token)
    except ValueError:
        raise DataValidationError(f"malformed number {token!r} at {where}") from None
    if not math.isfinite(x):
        raise DataValidationError(f"non-finite value {token!r} at {where}")
    return x


def load_locations(path) -> MultiFidelityLocations:
    """Read a ``fidelity,x,y[,z...]`` CSV.

    Rows must be sorted by fidelity (labels 1..R, no gaps); within a fidelity
    the file order defines the original location index.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataValidationError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if len(header) < 2 or header[0] != "fidelity":
        raise DataValidationError(f"{path}: header must start with 'fidelity'")
    dim = len(header) - 1
    groups: dict = {}
    last = 0
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not t.strip() for t in row):
            continue
        where = f"{path}:{lineno}"
        if len(row) != dim + 1:
            raise DataValidationError(
                f"{where}: expected {dim + 1} fields, got {len(row)} (dimension mismatch)"
            )
        try:
            fid = int(row[0].strip())
        except ValueError:
            raise DataValidationError(f"{where}: bad fidelity label {row[0]!r}") from None
        if fid < last:
            raise DataValidationError(f"{where}: rows not sorted by fidelity")
        last = fid
        coords = [_parse_float(t, where) for t in row[1:]]
        groups.setdefault(fid, []).append(coords)
    if not groups:
        raise DataValidationError(f"{path}: no locations")
    R = max(groups)
    missing = [r for r in range(1, R + 1) if r not in groups]
    if missing or min(groups) < 1:
        raise DataValidationError(f"{path}: empty fidelity {missing or [min(groups)]}")
    return MultiFidelityLocations(tuple(np.array(groups[r]) for r in range(1, R + 1)))


def write_locations(path, locs: MultiFidelityLocations) -> None:
    names = ["x", "y", "z"] if locs.dim <= 3 else [f"x{k + 1}" for k in range(locs.dim)]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fidelity"] + names[: locs.dim])
        for r, c in enumerate(locs.coords):
            for row in c:
                w.writerow([r + 1] + [format_float(x) for x in row])


def _load_ensemble_file(path, expected_cols: int | None) -> np.ndarray:
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataValidationError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if header[0] != "rep":
        raise DataValidationError(f"{path}: header must start with 'rep'")
    ncol = len(header) - 1
    if expected_cols is not None and ncol != expected_cols:
        raise DataValidationError(
            f"{path}: {ncol} value columns, expected {expected_cols} (column-count mismatch)"
        )
    out = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not t.strip() for t in row):
            continue
        where = f"{path}:{lineno}"
        if len(row) != ncol + 1:
            raise DataValidationError(
                f"{where}: {len(row) - 1} value columns, expected {ncol} (column-count mismatch)"
            )
        try:
            rep = int(row[0].strip())
        except ValueError:
            raise DataValidationError(f"{where}: bad replicate id {row[0]!r}") from None
        if rep != len(out) + 1:
            raise DataValidationError(f"{where}: replicate ids must increase from 1")
        out.append([_parse_float(t, where) for t in row[1:]])
    if not out:
        raise DataValidationError(f"{path}: no replicates")
    return np.array(out, dtype=float)


def load_ensemble(paths, locs: MultiFidelityLocations | None = None) -> Ensemble:
    """Read one ``rep,v1,...,vNr`` CSV per fidelity.

    ``paths`` is a sequence with one path per fidelity (a single path is
    accepted for one-fidelity data). When ``locs`` is given, column counts are
    checked against it.
    """
    if isinstance(paths, (str, Path)):
        paths = [paths]
    paths = list(paths)
    if locs is not None and len(paths) != locs.R:
        raise DataValidationError(f"got {len(paths)} ensemble files for {locs.R} fidelities")
    mats = []
    for r, p in enumerate(paths):
        expected = locs.sizes[r] if locs is not None else None
        mats.append(_load_ensemble_file(p, expected))
    ns = {m.shape[0] for m in mats}
    if len(ns) != 1:
        raise DataValidationError(f"inconsistent replicate counts across fidelities: {sorted(ns)}")
    return Ensemble(tuple(mats))


def write_ensemble(paths: Sequence, ens: Ensemble) -> None:
    if len(paths) != ens.R:
        raise ValueError("need one path per fidelity")
    for p, v in zip(paths, ens.values):
        with Path(p).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["rep"] + [f"v{j + 1}" for j in range(v.shape[1])])
            for k, row in enumerate(v):
                w.writerow([k + 1] + [format_float(x) for x in row])


@dataclass(frozen=True)
class Standardization:
    """Per-location means and standard deviations, one pair of arrays per fidelity."""

    means: tuple
    sds: tuple

    def apply(self, ens: Ensemble) -> Ensemble:
        return Ensemble(tuple((v - m) / s for v, m, s in zip(ens.values, self.means, self.sds)))

    def inverse(self, ens: Ensemble) -> Ensemble:
        return Ensemble(tuple(v * s + m for v, m, s in zip(ens.values, self.means, self.sds)))


def standardize(ens: Ensemble, min_sd: float = 1e-12):
    """Center and scale every column to mean 0, sd 1 (divisor n - 1).

    Returns the standardized ensemble and the :class:`Standardization` table
    that inverts it.
    """
    if ens.n < 2:
        raise DataValidationError("standardize needs at least 2 replicates")
    means, sds = [], []
    for r, v in enumerate(ens.values):
        m = v.mean(axis=0)
        s = v.std(axis=0, ddof=1)
        bad = np.flatnonzero(s < min_sd)
        if bad.size:
            raise DataValidationError(
                f"zero-variance column: fidelity {r + 1}, column {bad[0] + 1}"
            )
        means.append(m)
        sds.append(s)
    table = Standardization(tuple(means), tuple(sds))
    return table.apply(ens), table


def nearest_neighbors(query, pool, k: int) -> np.ndarray:
    """Indices of the ``k`` pool points closest to ``query``.

    Sorted by ascending distance; equal distances go to the smaller index.
    """
    pool = np.asarray(pool, dtype=float)
    if pool.ndim == 1:
        pool = pool[:, None]
    q = np.asarray(query, dtype=float).reshape(1, -1)
    if k > pool.shape[0]:
        raise DataValidationError(f"k={k} exceeds pool size {pool.shape[0]}")
    if k <= 0:
        return np.empty(0, dtype=np.intp)
    d = pairwise_distances(q, pool)[0]
    return _k_smallest(d, k)


def _k_smallest(d: np.ndarray, k: int, labels: np.ndarray | None = None) -> np.ndarray:
    """Positions of the k smallest entries of ``d``, ties by position (or ``labels``)."""
    if labels is None:
        labels = np.arange(d.size)
    if k < d.size:
        # partition first, then include every entry tied with the k-th distance
        kth = np.partition(d, k - 1)[k - 1]
        cand = np.flatnonzero(d <= kth)
    else:
        cand = np.arange(d.size)
    order = np.lexsort((labels[cand], d[cand]))
    return cand[order[:k]]
