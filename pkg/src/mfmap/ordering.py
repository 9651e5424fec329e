"""Conditional maximin ordering across fidelities and nearest-neighbor conditioning sets."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .spatial import MultiFidelityLocations, _k_smallest, format_float

__all__ = [
    "MaximinOrdering",
    "ConditioningSets",
    "conditional_maximin",
    "build_conditioning_sets",
    "write_ordering_csv",
    "DEFAULT_M_MAX",
]

DEFAULT_M_MAX = 30

_CHUNK = 256


def _dist_to(points: np.ndarray, x: np.ndarray) -> np.ndarray:
    diff = points - x
    return np.sqrt(np.sum(diff * diff, axis=1))


def _min_dist_to_set(points: np.ndarray, anchors: np.ndarray) -> np.ndarray:
    out = np.empty(points.shape[0])
    for start in range(0, points.shape[0], _CHUNK):
        block = points[start:start + _CHUNK]
        diff = block[:, None, :] - anchors[None, :, :]
        out[start:start + _CHUNK] = np.sqrt(np.sum(diff * diff, axis=2)).min(axis=1)
    return out


@dataclass(frozen=True)
class MaximinOrdering:
    """Per-fidelity maximin permutations and lengthscales.

    ``perms[r][k]`` is the original index of the point with rank ``k`` in
    fidelity ``r``; ``lengthscales[r][k]`` is its distance to all previously
    ordered points (lower fidelities included) at selection time.
    """

    perms: tuple
    lengthscales: tuple
    diameter: float

    @property
    def R(self) -> int:
        return len(self.perms)

    def ranks(self, r: int) -> np.ndarray:
        """Inverse permutation: ``ranks(r)[orig] = rank``."""
        inv = np.empty_like(self.perms[r])
        inv[self.perms[r]] = np.arange(self.perms[r].size)
        return inv

    @property
    def global_order(self) -> np.ndarray:
        """``(N, 2)`` array of ``(fidelity, original index)`` in global rank order."""
        rows = [np.column_stack([np.full(p.size, r), p]) for r, p in enumerate(self.perms)]
        return np.vstack(rows)

    def ordered_coords(self, locs: MultiFidelityLocations, r: int) -> np.ndarray:
        return locs.coords[r][self.perms[r]]

    def order_values(self, values: tuple) -> tuple:
        """Permute per-fidelity ``(n, N_r)`` matrices from original to rank order."""
        return tuple(np.asarray(v)[:, p] for v, p in zip(values, self.perms))

    def unorder_values(self, values: tuple) -> tuple:
        out = []
        for v, p in zip(values, self.perms):
            v = np.asarray(v)
            w = np.empty_like(v)
            w[:, p] = v
            out.append(w)
        return tuple(out)


def conditional_maximin(locs: MultiFidelityLocations) -> MaximinOrdering:
    """Order each fidelity by maximin distance, conditional on all coarser fidelities.

    The first point of the coarsest fidelity is the one nearest the centroid
    of that fidelity, and its lengthscale is the bounding-box diameter of all
    locations. Ties in every arg-max go to the smallest original index.
    """
    diam = locs.diameter
    perms, ells = [], []
    for r, pts in enumerate(locs.coords):
        n_r = pts.shape[0]
        order = np.empty(n_r, dtype=np.intp)
        ell = np.empty(n_r)
        if r == 0:
            centroid = pts.mean(axis=0)
            first = int(_k_smallest(_dist_to(pts, centroid), 1)[0])
            mind = _dist_to(pts, pts[first])
            mind[first] = -1.0
            order[0], ell[0] = first, diam
            start = 1
        else:
            mind = _min_dist_to_set(pts, np.vstack(locs.coords[:r]))
            start = 0
        for k in range(start, n_r):
            j = int(np.argmax(mind))
            order[k], ell[k] = j, mind[j]
            np.minimum(mind, _dist_to(pts, pts[j]), out=mind)
            mind[j] = -1.0
        order.setflags(write=False)
        ell.setflags(write=False)
        perms.append(order)
        ells.append(ell)
    return MaximinOrdering(tuple(perms), tuple(ells), diam)


@dataclass(frozen=True)
class ConditioningSets:
    """Nearest-neighbor conditioning sets in rank coordinates.

    ``same[r]`` is ``(N_r, m_max)``: ranks of the nearest previously ordered
    points of fidelity ``r``, nearest first, padded with -1.
    ``prev[r]`` is ``(N_r, m'_max)``: ranks of the nearest points of fidelity
    ``r - 1`` (empty for ``r = 0``).
    """

    same: tuple
    prev: tuple

    @property
    def m_max(self) -> int:
        return self.same[0].shape[1]

    @property
    def mp_max(self) -> int:
        return max((p.shape[1] for p in self.prev), default=0)

    def same_counts(self, r: int) -> np.ndarray:
        return np.sum(self.same[r] >= 0, axis=1)

    def prev_counts(self, r: int) -> np.ndarray:
        return np.sum(self.prev[r] >= 0, axis=1)


def build_conditioning_sets(
    ordering: MaximinOrdering,
    locs: MultiFidelityLocations,
    m_max: int = DEFAULT_M_MAX,
    mp_max: int = DEFAULT_M_MAX,
) -> ConditioningSets:
    """Nearest previously ordered same-fidelity neighbors and nearest previous-fidelity neighbors.

    Both lists are sorted by distance; ties go to the smaller rank.
    """
    if m_max < 1 or mp_max < 1:
        raise ValueError("m_max and mp_max must be at least 1")
    same, prev = [], []
    for r in range(locs.R):
        pts = ordering.ordered_coords(locs, r)
        n_r = pts.shape[0]
        c = np.full((n_r, m_max), -1, dtype=np.intp)
        for i in range(1, n_r):
            k = min(i, m_max)
            c[i, :k] = _k_smallest(_dist_to(pts[:i], pts[i]), k)
        c.setflags(write=False)
        same.append(c)
        if r == 0:
            cp = np.empty((n_r, 0), dtype=np.intp)
        else:
            pool = ordering.ordered_coords(locs, r - 1)
            k = min(pool.shape[0], mp_max)
            cp = np.full((n_r, k), -1, dtype=np.intp)
            for i in range(n_r):
                cp[i] = _k_smallest(_dist_to(pool, pts[i]), k)
        cp.setflags(write=False)
        prev.append(cp)
    return ConditioningSets(tuple(same), tuple(prev))


def write_ordering_csv(path, ordering: MaximinOrdering) -> None:
    """Diagnostics export: ``fidelity,orig_index,rank,lengthscale`` (all 1-based)."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fidelity", "orig_index", "rank", "lengthscale"])
        for r, (perm, ell) in enumerate(zip(ordering.perms, ordering.lengthscales)):
            for k, (j, l) in enumerate(zip(perm, ell)):
                w.writerow([r + 1, int(j) + 1, k + 1, format_float(l)])
