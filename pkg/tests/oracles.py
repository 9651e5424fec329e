"""Independent slow reference implementations used by the tests."""

import numpy as np


def brute_maximin(coords):
    """Conditional maximin by exhaustive rescans of the full distance matrix.

    Returns ``(perms, lengthscales)`` as lists. Every step recomputes the
    minimum distance to the whole selected set (no incremental updates).
    """
    allpts = np.vstack([np.asarray(c, dtype=float) for c in coords])
    lo, hi = allpts.min(axis=0), allpts.max(axis=0)
    diam = float(np.sqrt(((hi - lo) ** 2).sum()))
    D = np.sqrt(((allpts[:, None, :] - allpts[None, :, :]) ** 2).sum(axis=2))
    offsets = np.concatenate([[0], np.cumsum([len(c) for c in coords])])
    chosen = []
    perms, ells = [], []
    for r in range(len(coords)):
        idx = list(range(offsets[r], offsets[r + 1]))
        perm, ell = [], []
        remaining = list(idx)
        if r == 0:
            pts = allpts[idx]
            d = np.sqrt(((pts - pts.mean(axis=0)) ** 2).sum(axis=1))
            first = min(range(len(idx)), key=lambda j: (d[j], j))
            perm.append(first)
            ell.append(diam)
            remaining.remove(idx[first])
            chosen.append(idx[first])
        while remaining:
            md = D[np.ix_(remaining, chosen)].min(axis=1)
            best = max(range(len(remaining)), key=lambda j: (md[j], -remaining[j]))
            g = remaining.pop(best)
            perm.append(g - offsets[r])
            ell.append(float(md[best]))
            chosen.append(g)
        perms.append(perm)
        ells.append(ell)
    return perms, ells


def brute_conditioning(coords, perms, m_max, mp_max):
    same, prev = [], []
    for r, pts in enumerate(coords):
        ordered = np.asarray(pts, dtype=float)[perms[r]]
        s = []
        for i in range(len(ordered)):
            d = [float(np.sqrt(((ordered[i] - ordered[k]) ** 2).sum())) for k in range(i)]
            s.append(sorted(range(i), key=lambda k: (d[k], k))[:m_max])
        same.append(s)
        if r == 0:
            prev.append([[] for _ in ordered])
            continue
        pool = np.asarray(coords[r - 1], dtype=float)[perms[r - 1]]
        p = []
        for i in range(len(ordered)):
            d = [float(np.sqrt(((ordered[i] - q) ** 2).sum())) for q in pool]
            p.append(sorted(range(len(pool)), key=lambda k: (d[k], k))[:mp_max])
        prev.append(p)
    return same, prev


def nig_marginal_density(y, X, alpha, beta, kernel):
    """Density of y under y | d2 ~ N(0, d2 (K + I)), d2 ~ IG(alpha, beta) by 1D quadrature over d2."""
    from scipy import integrate, stats

    y = np.atleast_1d(y)
    G = kernel(X) + np.eye(len(y))

    def integrand(d2):
        return (stats.multivariate_normal(np.zeros(len(y)), d2 * G).pdf(y)
                * stats.invgamma(alpha, scale=beta).pdf(d2))

    val, _ = integrate.quad(integrand, 0, np.inf, limit=400, epsabs=1e-14, epsrel=1e-10)
    return val


def simulate_from_prior(data, block, n, seed, g=4.0):
    """Draw ``n`` replicates of one fidelity from the linear model itself.

    Each location ``i`` (rank order) draws ``d2_i`` from its inverse-gamma
    prior and then ``y_i ~ N(0, d2_i (X Q X' + I))`` jointly over replicates,
    with ``X`` built from already simulated values. Returns the ``(n, N)``
    matrix in rank order.
    """
    from mfmap.likelihood import effective_sizes
    from mfmap.model import ModelSettings, constrain_block, relevance_weights

    settings = ModelSettings(nonlinear=False)
    theta = constrain_block(block, nonlinear=False)
    m, mp = effective_sizes(block, data, settings)
    q = relevance_weights(theta, m, mp)
    rng = np.random.default_rng(seed)
    Y = np.zeros((n, data.size))
    for i in range(data.size):
        X = data.design(np.array([i]), m, mp, Y=Y)[0]
        alpha = 2.0 + 1.0 / g**2
        beta = np.exp(theta.d1) * data.ell[i] ** theta.d2 * (1.0 + 1.0 / g**2)
        d2 = beta / rng.gamma(alpha)
        C = d2 * ((X * q) @ X.T + np.eye(n))
        Y[:, i] = np.linalg.cholesky(C) @ rng.standard_normal(n)
    return Y
