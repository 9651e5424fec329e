"""Hyperparameters, prior parameterization and the fidelity-aware kernel.

Each fidelity ``r`` owns a block of unconstrained hyperparameters, in order

    d1, d2, s1, s2, gamma, q0, q1, qp0, qp1

The coarsest fidelity has no cross-fidelity terms, so its block stops at
``q1``; the total count is ``9R - 2``. ``d2``, ``s2``, ``q1`` and ``qp1`` are
stored through a softplus transform and are positive once constrained.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import DataValidationError

__all__ = [
    "PARAM_NAMES",
    "POSITIVE",
    "RHO_FAMILIES",
    "HyperParams",
    "FidelityParams",
    "softplus",
    "softplus_inv",
    "prior_params",
    "relevance_weights",
    "adaptive_sizes",
    "nonlinearity_variance",
    "kernel",
    "correlation",
    "lengthscale_floor",
    "DEFAULT_G",
    "DEFAULT_EPSILON",
    "ModelSettings",
    "checkpoint_to_dict",
    "checkpoint_from_dict",
    "CHECKPOINT_VERSION",
]

PARAM_NAMES = ("d1", "d2", "s1", "s2", "gamma", "q0", "q1", "qp0", "qp1")
POSITIVE = frozenset({"d2", "s2", "q1", "qp1"})
RHO_FAMILIES = ("exponential", "matern32", "sqexp")

DEFAULT_G = 4.0
DEFAULT_EPSILON = 0.01

_SQRT3 = math.sqrt(3.0)

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelSettings:
    """Fixed (non-optimized) model choices."""

    g: float = DEFAULT_G
    epsilon: float = DEFAULT_EPSILON
    family: str = "matern32"
    nonlinear: bool = True
    m_max: int = 30
    mp_max: int = 30

    def __post_init__(self):
        if self.family not in RHO_FAMILIES:
            raise DataValidationError(f"unknown correlation family {self.family!r}")
        if self.g <= 0 or self.epsilon < 0 or self.m_max < 1 or self.mp_max < 1:
            raise DataValidationError("invalid model settings")


def softplus(x):
    return np.logaddexp(0.0, x)


def softplus_inv(y):
    y = np.asarray(y, dtype=float)
    # log(expm1(y)) loses precision for large y; y + log(-expm1(-y)) does not
    return y + np.log(-np.expm1(-y))


def n_params(r: int) -> int:
    return 7 if r == 0 else 9


@dataclass(frozen=True)
class FidelityParams:
    """Constrained view of one fidelity's hyperparameters."""

    d1: float
    d2: float
    s1: float
    s2: float
    gamma: float
    q0: float
    q1: float
    qp0: float = 0.0
    qp1: float = 1.0
    nonlinear: bool = True

    @property
    def range(self) -> float:
        return math.exp(self.gamma)


class HyperParams:
    """Unconstrained hyperparameters, one numpy block per fidelity."""

    def __init__(self, blocks):
        blocks = [np.array(b, dtype=float).reshape(-1) for b in blocks]
        for r, b in enumerate(blocks):
            if b.size != n_params(r):
                raise DataValidationError(
                    f"fidelity {r + 1} needs {n_params(r)} hyperparameters, got {b.size}"
                )
        self.blocks = tuple(blocks)

    @property
    def R(self) -> int:
        return len(self.blocks)

    @property
    def count(self) -> int:
        return sum(b.size for b in self.blocks)

    def copy(self) -> "HyperParams":
        return HyperParams([b.copy() for b in self.blocks])

    def with_block(self, r: int, block) -> "HyperParams":
        blocks = list(self.blocks)
        blocks[r] = np.array(block, dtype=float)
        return HyperParams(blocks)

    def constrained(self, r: int, nonlinear: bool = True) -> FidelityParams:
        return constrain_block(self.blocks[r], nonlinear)

    def to_dict(self, r: int) -> dict:
        return {name: float(v) for name, v in zip(PARAM_NAMES, self.blocks[r])}

    @classmethod
    def from_dicts(cls, entries) -> "HyperParams":
        blocks = []
        for r, e in enumerate(entries):
            blocks.append([float(e[name]) for name in PARAM_NAMES[: n_params(r)]])
        return cls(blocks)

    @classmethod
    def default(cls, ensemble=None, R: int | None = None) -> "HyperParams":
        """Default initialization; ``d1`` starts at the log sample variance of each fidelity."""
        if ensemble is None and R is None:
            raise ValueError("need an ensemble or R")
        R = ensemble.R if ensemble is not None else R
        half = float(softplus_inv(0.5))
        blocks = []
        for r in range(R):
            if ensemble is not None and ensemble.values[r].size > 1:
                var = float(np.var(ensemble.values[r], ddof=1))
                d1 = math.log(var) if var > 0 else 0.0
            else:
                d1 = 0.0
            b = [d1, float(softplus_inv(1.0)), -1.0, half, 0.0, 0.0, half]
            if r > 0:
                b += [0.0, half]
            blocks.append(b)
        return cls(blocks)

    def __eq__(self, other):
        if not isinstance(other, HyperParams):
            return NotImplemented
        return self.R == other.R and all(np.array_equal(a, b) for a, b in zip(self.blocks, other.blocks))

    __hash__ = None

    def __repr__(self):
        return f"HyperParams({[b.tolist() for b in self.blocks]})"


def constrain_block(block, nonlinear: bool = True) -> FidelityParams:
    b = np.asarray(block, dtype=float)
    kw = dict(
        d1=float(b[0]),
        d2=float(softplus(b[1])),
        s1=float(b[2]),
        s2=float(softplus(b[3])),
        gamma=float(b[4]),
        q0=float(b[5]),
        q1=float(softplus(b[6])),
        nonlinear=nonlinear,
    )
    if b.size == 9:
        kw.update(qp0=float(b[7]), qp1=float(softplus(b[8])))
    return FidelityParams(**kw)


def constraint_jacobian(block) -> np.ndarray:
    """d(constrained)/d(unconstrained), elementwise."""
    b = np.asarray(block, dtype=float)
    jac = np.ones(b.size)
    for k, name in enumerate(PARAM_NAMES[: b.size]):
        if name in POSITIVE:
            jac[k] = expit(b[k])
    return jac


def lengthscale_floor(diameter: float) -> float:
    return 1e-9 * diameter if diameter > 0 else 1e-9


def prior_params(theta: FidelityParams, ell, g: float = DEFAULT_G):
    """Inverse-gamma prior ``(alpha, beta)`` for the residual variance at lengthscale ``ell``.

    The prior mean of ``d^2`` is ``exp(d1) * ell**d2`` and its standard
    deviation is ``g`` times the mean.
    """
    ell = np.asarray(ell, dtype=float)
    if np.any(ell <= 0):
        raise ValueError("lengthscale must be positive (apply the floor first)")
    if g <= 0:
        raise ValueError("g must be positive")
    alpha = 2.0 + 1.0 / g**2
    beta = np.exp(theta.d1 + theta.d2 * np.log(ell)) * (1.0 + 1.0 / g**2)
    if beta.ndim == 0:
        beta = float(beta)
    return alpha, beta


def nonlinearity_variance(theta: FidelityParams, ell):
    if not theta.nonlinear:
        return np.zeros_like(np.asarray(ell, dtype=float))
    ell = np.asarray(ell, dtype=float)
    return np.exp(theta.s1 + theta.s2 * np.log(ell))


def relevance_weights(theta: FidelityParams, m: int, mp: int) -> np.ndarray:
    """Diagonal of the relevance matrix: same-fidelity block, then previous-fidelity block."""
    j = np.arange(1, m + 1)
    jp = np.arange(1, mp + 1)
    return np.concatenate([
        np.exp(theta.q0 - theta.q1 * j),
        np.exp(theta.qp0 - theta.qp1 * jp),
    ])


def _truncation(intercept: float, slope: float, eps: float, cap: int) -> int:
    if eps <= 0:
        return cap
    log_eps = math.log(eps)
    tol = 1e-12 * (1.0 + abs(log_eps))
    k = 0
    while k < cap and intercept - slope * (k + 1) >= log_eps - tol:
        k += 1
    return k


def adaptive_sizes(theta: FidelityParams, eps: float, caps) -> tuple:
    """Largest ``k`` with weight ``exp(q0 - q1 k) >= eps``, per block, capped.

    A relative tolerance of 1e-12 on the log threshold keeps boundary cases
    (weight exactly equal to ``eps``) inclusive under rounding.
    """
    if eps < 0:
        raise ValueError("eps must be non-negative")
    m_cap, mp_cap = caps
    m = _truncation(theta.q0, theta.q1, eps, m_cap)
    mp = _truncation(theta.qp0, theta.qp1, eps, mp_cap)
    return m, mp


def correlation(t, family: str = "matern32"):
    t = np.asarray(t, dtype=float)
    if family == "matern32":
        a = _SQRT3 * t
        return (1.0 + a) * np.exp(-a)
    if family == "exponential":
        return np.exp(-t)
    if family == "sqexp":
        return np.exp(-0.5 * t * t)
    raise ValueError(f"unknown correlation family {family!r}; choose from {RHO_FAMILIES}")


def correlation_slope_over_t(t, family: str = "matern32"):
    """``rho'(t) / t``; finite at 0 for the smooth families."""
    t = np.asarray(t, dtype=float)
    if family == "matern32":
        return -3.0 * np.exp(-_SQRT3 * t)
    if family == "sqexp":
        return -np.exp(-0.5 * t * t)
    if family == "exponential":
        with np.errstate(divide="ignore", invalid="ignore"):
            out = -np.exp(-t) / t
        return np.where(t > 0, out, 0.0)
    raise ValueError(f"unknown correlation family {family!r}")


def kernel(x, xp, q, sigma2: float, range_: float, family: str = "matern32") -> float:
    """Linear-plus-stationary kernel between two conditioning vectors."""
    x = np.asarray(x, dtype=float)
    xp = np.asarray(xp, dtype=float)
    q = np.asarray(q, dtype=float)
    if not (x.shape == xp.shape == q.shape):
        raise ValueError(f"length mismatch: {x.shape}, {xp.shape}, {q.shape}")
    lin = float(np.sum(x * q * xp))
    diff = x - xp
    dist = math.sqrt(float(np.sum(q * diff * diff)))
    return lin + sigma2 * float(correlation(dist / range_, family))


def gram(X, Xp, q, sigma2, range_, family: str = "matern32", same: bool = False):
    """Batched kernel matrices.

    ``X`` is ``(..., n, m)``, ``Xp`` is ``(..., k, m)``, ``q`` is ``(m,)`` and
    ``sigma2`` broadcasts against the leading axes. Returns ``(..., n, k)``.
    With ``same=True`` the diagonal distance is set to exactly zero.
    """
    Xq = X * q
    lin = Xq @ np.swapaxes(Xp, -1, -2)
    sigma2 = np.asarray(sigma2, dtype=float)
    if not np.any(sigma2):
        return lin
    sx = np.sum(Xq * X, axis=-1)
    sxp = np.sum(Xp * q * Xp, axis=-1)
    sqd = sx[..., :, None] + sxp[..., None, :] - 2.0 * lin
    np.maximum(sqd, 0.0, out=sqd)
    if same:
        idx = np.arange(sqd.shape[-1])
        sqd[..., idx, idx] = 0.0
    t = np.sqrt(sqd) / range_
    return lin + sigma2[..., None, None] * correlation(t, family)


def checkpoint_to_dict(hp: HyperParams, settings: ModelSettings, **extra) -> dict:
    """JSON-ready checkpoint; unconstrained values are stored."""
    theta = []
    for r in range(hp.R):
        entry = {"fidelity": r + 1}
        entry.update(hp.to_dict(r))
        theta.append(entry)
    out = {
        "version": CHECKPOINT_VERSION,
        "R": hp.R,
        "g": settings.g,
        "epsilon": settings.epsilon,
        "rho_family": settings.family,
        "nonlinear": settings.nonlinear,
        "m_max": settings.m_max,
        "mp_max": settings.mp_max,
        "theta": theta,
    }
    out.update(extra)
    return out


def checkpoint_from_dict(d: dict):
    """Inverse of :func:`checkpoint_to_dict`; returns ``(HyperParams, ModelSettings)``."""
    if d.get("version") != CHECKPOINT_VERSION:
        raise DataValidationError(f"unsupported checkpoint version {d.get('version')!r}")
    entries = sorted(d["theta"], key=lambda e: e["fidelity"])
    if len(entries) != d["R"]:
        raise DataValidationError("checkpoint R does not match theta entries")
    hp = HyperParams.from_dicts(entries)
    settings = ModelSettings(
        g=float(d["g"]),
        epsilon=float(d["epsilon"]),
        family=d["rho_family"],
        nonlinear=bool(d.get("nonlinear", True)),
        m_max=int(d.get("m_max", 30)),
        mp_max=int(d.get("mp_max", 30)),
    )
    return hp, settings
