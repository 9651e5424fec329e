"""Integrated likelihood of the map components and its gradient.

Under the normal-inverse-gamma prior each location contributes

    log p(y_i) = -n/2 log(2 pi) - 1/2 log|G| + alpha log(beta)
                 - alpha~ log(beta~) + lgamma(alpha~) - lgamma(alpha)

with ``G = K + I``, ``alpha~ = alpha + n/2`` and
``beta~ = beta + y' G^{-1} y / 2``. Fidelities never share hyperparameters,
so the total splits into independent per-fidelity subtotals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lapack
from scipy.special import expit, gammaln

from .errors import DegenerateKernelError, NumericalError
from .model import (
    PARAM_NAMES,
    HyperParams,
    ModelSettings,
    adaptive_sizes,
    constrain_block,
    correlation,
    gram,
    correlation_slope_over_t,
    lengthscale_floor,
    nonlinearity_variance,
    prior_params,
    relevance_weights,
)
from .ordering import ConditioningSets, MaximinOrdering
from .spatial import Ensemble

__all__ = [
    "LocationTerm",
    "FidelityData",
    "MarginalResult",
    "prepare_data",
    "location_log_marginal",
    "fidelity_terms",
    "total_log_marginal",
    "grad_log_marginal",
    "JITTER",
]

JITTER = 1e-8
_LOG_2PI = math.log(2.0 * math.pi)
_CHUNK = 16


@dataclass
class LocationTerm:
    """Cached quantities for one location after evaluating its marginal likelihood."""

    K: np.ndarray
    chol: np.ndarray
    weights: np.ndarray  # G^{-1} y
    alpha: float
    beta: float
    alpha_post: float
    beta_post: float
    log_value: float

    @property
    def G(self) -> np.ndarray:
        return self.K + np.eye(self.K.shape[0]) * (1.0 + _jitter(self.K))


def _jitter(K: np.ndarray) -> float:
    return JITTER * (1.0 + float(np.max(np.diagonal(K, axis1=-2, axis2=-1))))


def _factor(G: np.ndarray, y: np.ndarray, fidelity: int, index: int):
    if not np.all(np.isfinite(G)):
        raise DegenerateKernelError(fidelity + 1, index + 1, "non-finite kernel entries")
    L, info = lapack.dpotrf(G, lower=1, clean=1)
    if info != 0:
        raise DegenerateKernelError(fidelity + 1, index + 1, f"dpotrf info={info}")
    w, info = lapack.dpotrs(L, y, lower=1)
    if info != 0:
        raise DegenerateKernelError(fidelity + 1, index + 1, f"dpotrs info={info}")
    return L, w


def location_log_marginal(X, y, alpha, beta, q, sigma2, range_, family="matern32",
                          fidelity: int = 0, index: int = 0):
    """Log integrated likelihood of one location.

    ``X`` holds the ``n`` replicate conditioning vectors as rows, ``y`` the
    ``n`` responses. Returns ``(log_value, LocationTerm)``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).reshape(-1)
    n = y.size
    if X.shape[0] != n:
        raise ValueError("X must have one row per replicate")
    K = gram(X, X, np.asarray(q, dtype=float), sigma2, range_, family, same=True)
    G = K + np.eye(n) * (1.0 + _jitter(K))
    L, w = _factor(G, y, fidelity, index)
    alpha_post = alpha + 0.5 * n
    beta_post = beta + 0.5 * float(y @ w)
    val = (-0.5 * n * _LOG_2PI - float(np.sum(np.log(np.diag(L))))
           + alpha * math.log(beta) - alpha_post * math.log(beta_post)
           + float(gammaln(alpha_post) - gammaln(alpha)))
    term = LocationTerm(K, L, w, float(alpha), float(beta), alpha_post, beta_post, val)
    return val, term


@dataclass(frozen=True)
class FidelityData:
    """Training data of one fidelity in rank order, with its conditioning structure."""

    r: int
    Y: np.ndarray          # (n, N_r)
    Yprev: np.ndarray      # (n, N_{r-1}) or (n, 0)
    same: np.ndarray       # (N_r, m_max) ranks, -1 padded
    prev: np.ndarray       # (N_r, mp_cap) ranks in fidelity r-1
    ell: np.ndarray        # floored lengthscales, (N_r,)

    @property
    def n(self) -> int:
        return self.Y.shape[0]

    @property
    def size(self) -> int:
        return self.Y.shape[1]

    @property
    def caps(self) -> tuple:
        return self.same.shape[1], self.prev.shape[1]

    def design(self, idx, m: int, mp: int, Y=None, Yprev=None) -> np.ndarray:
        """Conditioning vectors ``(B, n, m + mp)`` for the locations ``idx``.

        ``Y``/``Yprev`` default to the training data; missing neighbors are
        zero-filled, which leaves the kernel unchanged.
        """
        Y = self.Y if Y is None else Y
        Yprev = self.Yprev if Yprev is None else Yprev
        idx = np.asarray(idx)
        reps = Y.shape[0]
        parts = []
        if m > 0:
            Ypad = np.concatenate([Y, np.zeros((reps, 1))], axis=1)
            cols = self.same[idx, :m]
            parts.append(np.moveaxis(Ypad[:, np.where(cols < 0, Y.shape[1], cols)], 0, 1))
        if mp > 0 and self.prev.shape[1] > 0:
            Ppad = np.concatenate([Yprev, np.zeros((reps, 1))], axis=1)
            cols = self.prev[idx, :mp]
            parts.append(np.moveaxis(Ppad[:, np.where(cols < 0, Yprev.shape[1], cols)], 0, 1))
        if not parts:
            return np.zeros((idx.size, reps, 0))
        return np.concatenate(parts, axis=2)


def prepare_data(ordering: MaximinOrdering, sets: ConditioningSets, ensemble: Ensemble) -> list:
    """Permute an ensemble into rank order and bundle it with neighbor sets per fidelity."""
    ordered = ordering.order_values(ensemble.values)
    floor = lengthscale_floor(ordering.diameter)
    out = []
    for r in range(ensemble.R):
        Yprev = ordered[r - 1] if r > 0 else np.zeros((ensemble.n, 0))
        ell = np.maximum(ordering.lengthscales[r], floor)
        out.append(FidelityData(r, ordered[r], Yprev, sets.same[r], sets.prev[r], ell))
    return out


def effective_sizes(block, data: FidelityData, settings: ModelSettings) -> tuple:
    theta = constrain_block(block, settings.nonlinear)
    m, mp = adaptive_sizes(theta, settings.epsilon, data.caps)
    if data.r == 0:
        mp = 0
    return m, mp


@dataclass
class _Batch:
    values: np.ndarray
    grad: np.ndarray | None = None
    chol: np.ndarray | None = None
    weights: np.ndarray | None = None
    beta_post: np.ndarray | None = None
    alpha_post: float = 0.0


def fidelity_terms(block, data: FidelityData, settings: ModelSettings, idx=None,
                   sizes=None, grad: bool = False, keep: bool = False) -> _Batch:
    """Per-location log marginals for locations ``idx`` of one fidelity.

    ``sizes`` fixes the truncated conditioning-set sizes; by default they are
    derived from ``block``. With ``grad=True`` the per-location gradients with
    respect to the unconstrained block are returned as ``(B, P)``.
    """
    if idx is None:
        idx = np.arange(data.size)
    idx = np.asarray(idx)
    if sizes is None:
        sizes = effective_sizes(block, data, settings)
    parts = []
    for start in range(0, idx.size, _CHUNK):
        parts.append(_terms_chunk(block, data, settings, idx[start:start + _CHUNK],
                                  sizes, grad, keep))
    out = _Batch(
        values=np.concatenate([p.values for p in parts]),
        alpha_post=parts[0].alpha_post,
    )
    if grad:
        out.grad = np.concatenate([p.grad for p in parts])
    if keep:
        out.chol = np.concatenate([p.chol for p in parts])
        out.weights = np.concatenate([p.weights for p in parts])
        out.beta_post = np.concatenate([p.beta_post for p in parts])
    return out


def _terms_chunk(block, data, settings, idx, sizes, want_grad, keep) -> _Batch:
    block = np.asarray(block, dtype=float)
    theta = constrain_block(block, settings.nonlinear)
    m, mp = sizes
    n = data.n
    B = idx.size
    X = data.design(idx, m, mp)
    y = data.Y[:, idx].T
    ell = data.ell[idx]
    log_ell = np.log(ell)
    alpha, beta = prior_params(theta, ell, settings.g)
    beta = np.atleast_1d(beta)
    q = relevance_weights(theta, m, mp)
    gam = theta.range
    sigma2 = nonlinearity_variance(theta, ell)

    Xq = X * q
    lin = Xq @ np.swapaxes(X, 1, 2)
    K = lin.copy()
    if settings.nonlinear and q.size:
        sx = np.sum(Xq * X, axis=2)
        sqd = sx[:, :, None] + sx[:, None, :] - 2.0 * lin
        np.maximum(sqd, 0.0, out=sqd)
        diag = np.arange(n)
        sqd[:, diag, diag] = 0.0
        t = np.sqrt(sqd) / gam
        rho = correlation(t, settings.family)
    elif settings.nonlinear:
        sqd = np.zeros((B, n, n))
        t = sqd
        rho = np.ones((B, n, n))
    if settings.nonlinear:
        Knl = sigma2[:, None, None] * rho
        K += Knl
    diagK = np.diagonal(K, axis1=1, axis2=2)
    jit = JITTER * (1.0 + diagK.max(axis=1))
    G = K.copy()
    G[:, np.arange(n), np.arange(n)] += (1.0 + jit)[:, None]

    alpha_post = alpha + 0.5 * n
    chol = np.empty((B, n, n)) if (keep or want_grad) else None
    W = np.empty((B, n))
    logdet = np.empty(B)
    Ginv = np.empty((B, n, n)) if want_grad else None
    for b in range(B):
        L, w = _factor(G[b], y[b], data.r, int(idx[b]))
        W[b] = w
        logdet[b] = 2.0 * np.sum(np.log(np.diag(L)))
        if chol is not None:
            chol[b] = L
        if want_grad:
            inv, info = lapack.dpotri(L, lower=1)
            if info != 0:
                raise DegenerateKernelError(data.r + 1, int(idx[b]) + 1, f"dpotri info={info}")
            Ginv[b] = np.tril(inv) + np.tril(inv, -1).T
    quad = np.einsum("bi,bi->b", y, W)
    beta_post = beta + 0.5 * quad
    values = (-0.5 * n * _LOG_2PI - 0.5 * logdet + alpha * np.log(beta)
              - alpha_post * np.log(beta_post) + gammaln(alpha_post) - gammaln(alpha))
    out = _Batch(values=values, alpha_post=alpha_post)
    if keep:
        out.chol, out.weights, out.beta_post = chol, W, beta_post
    if not want_grad:
        return out

    P = block.size
    grad = np.zeros((B, P))
    # prior scale enters only through log(beta)
    coef_beta = alpha - alpha_post * beta / beta_post
    grad[:, 0] = coef_beta
    grad[:, 1] = coef_beta * log_ell * expit(block[1])

    c = alpha_post / (2.0 * beta_post)

    def contract(dK):
        tr = np.einsum("bij,bij->b", Ginv, dK)
        qf = np.einsum("bi,bij,bj->b", W, dK, W)
        return -0.5 * tr + c * qf

    if settings.nonlinear:
        grad[:, 2] = contract(Knl)
        grad[:, 3] = contract(Knl * (log_ell * expit(block[3]))[:, None, None])
        H = sigma2[:, None, None] * correlation_slope_over_t(t, settings.family) / (2.0 * gam**2)
        grad[:, 4] = contract(-2.0 * H * sqd)
    else:
        H = None

    j_same = np.arange(1, m + 1, dtype=float)
    j_prev = np.arange(1, mp + 1, dtype=float)
    zeros_same = np.zeros(m)
    zeros_prev = np.zeros(mp)
    directions = [
        (5, np.concatenate([np.ones(m), zeros_prev])),
        (6, np.concatenate([-j_same * expit(block[6]), zeros_prev])),
    ]
    if P == 9:
        directions += [
            (7, np.concatenate([zeros_same, np.ones(mp)])),
            (8, np.concatenate([zeros_same, -j_prev * expit(block[8])])),
        ]
    for k, a in directions:
        if not np.any(a):
            continue
        Xa = X * (a * q)
        lin_a = Xa @ np.swapaxes(X, 1, 2)
        dK = lin_a
        if H is not None:
            sa = np.sum(Xa * X, axis=2)
            d2a = sa[:, :, None] + sa[:, None, :] - 2.0 * lin_a
            dK = lin_a + H * d2a
        grad[:, k] = contract(dK)
    out.grad = grad
    return out


@dataclass
class MarginalResult:
    total: float
    per_fidelity: list = field(default_factory=list)
    sizes: list = field(default_factory=list)


def total_log_marginal(hp: HyperParams, data: list, settings: ModelSettings) -> MarginalResult:
    """Sum of location terms, reported per fidelity (summed in rank order)."""
    subtotals, sizes = [], []
    for r, d in enumerate(data):
        s = effective_sizes(hp.blocks[r], d, settings)
        vals = fidelity_terms(hp.blocks[r], d, settings, sizes=s).values
        subtotals.append(float(np.sum(vals)))
        sizes.append(s)
    return MarginalResult(float(np.sum(subtotals)), subtotals, sizes)


def _fidelity_sum(block, d, settings, idx, sizes) -> float:
    vals = fidelity_terms(block, d, settings, idx=idx, sizes=sizes).values
    return float(np.sum(vals))


def grad_log_marginal(hp: HyperParams, data: list, settings: ModelSettings,
                      fidelities=None, idx=None, h: float = 1e-4, method: str = "fd",
                      sizes=None) -> list:
    """Gradient of each fidelity subtotal with respect to its own unconstrained block.

    ``method="fd"`` uses central differences with step ``h * max(1, |theta_k|)``;
    ``method="analytic"`` uses the closed form. Conditioning-set sizes are held
    at their values for the unperturbed ``hp`` (or ``sizes``). ``idx`` may
    restrict the sum to a subset of locations (a dict keyed by fidelity, or
    one array used for every fidelity).
    """
    if fidelities is None:
        fidelities = range(len(data))
    out = []
    for r in fidelities:
        d = data[r]
        block = hp.blocks[r]
        s = sizes[r] if sizes is not None else effective_sizes(block, d, settings)
        ids = idx.get(r) if isinstance(idx, dict) else idx
        if method == "analytic":
            g = fidelity_terms(block, d, settings, idx=ids, sizes=s, grad=True).grad.sum(axis=0)
        elif method == "fd":
            g = np.empty(block.size)
            for k in range(block.size):
                step = h * max(1.0, abs(block[k]))
                up = block.copy()
                dn = block.copy()
                up[k] += step
                dn[k] -= step
                g[k] = (_fidelity_sum(up, d, settings, ids, s)
                        - _fidelity_sum(dn, d, settings, ids, s)) / (2.0 * step)
        else:
            raise ValueError(f"unknown gradient method {method!r}")
        bad = np.flatnonzero(~np.isfinite(g))
        if bad.size:
            raise NumericalError(
                f"non-finite gradient for fidelity {r + 1}, coordinate {PARAM_NAMES[bad[0]]}"
            )
        out.append(g)
    return out


def cross_gradient(hp: HyperParams, data: list, settings: ModelSettings, h: float = 1e-4):
    """Finite-difference Jacobian of every fidelity subtotal with respect to every block.

    Returns ``J[r][s]``, the gradient of subtotal ``r`` with respect to block
    ``s``; off-diagonal blocks vanish because subtotals share no parameters.
    """
    base_sizes = [effective_sizes(hp.blocks[r], d, settings) for r, d in enumerate(data)]

    def subtotals(params: HyperParams):
        return [_fidelity_sum(params.blocks[r], d, settings, None, base_sizes[r])
                for r, d in enumerate(data)]

    J = [[np.zeros(b.size) for b in hp.blocks] for _ in data]
    for s, block in enumerate(hp.blocks):
        for k in range(block.size):
            step = h * max(1.0, abs(block[k]))
            up = block.copy()
            dn = block.copy()
            up[k] += step
            dn[k] -= step
            fu = subtotals(hp.with_block(s, up))
            fd = subtotals(hp.with_block(s, dn))
            for r in range(len(data)):
                J[r][s][k] = (fu[r] - fd[r]) / (2.0 * step)
    return J
