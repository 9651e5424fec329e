import math
import warnings

import numpy as np
import pytest
from scipy import integrate, stats

from mfmap.errors import DataValidationError
from mfmap.model import HyperParams, ModelSettings, softplus_inv
from mfmap.predict import (
    ScoreResult,
    forward_map,
    log_score,
    predictive_component,
    sample_conditional,
    sample_joint,
    student_t_logpdf,
    write_scores_csv,
)
from mfmap.simdata import gen_gaussian, unit_grid
from mfmap.spatial import Ensemble, MultiFidelityLocations
from mfmap.train import TrainConfig, build_map, fit

LINEAR = ModelSettings(nonlinear=False)


@pytest.fixture
def nonlinear_map(nested_locs, small_ensemble):
    return build_map(HyperParams.default(small_ensemble), nested_locs, small_ensemble)


@pytest.fixture(scope="module")
def gaussian_linear_map():
    locs = MultiFidelityLocations((unit_grid(2), unit_grid(4)))
    train = gen_gaussian(locs, 0.3, seed=3, n=40)
    return build_map(HyperParams.default(train), locs, train, LINEAR)


def _stratified(tmap, count=20):
    picks = []
    per = count // tmap.R
    for r, d in enumerate(tmap.data):
        k = per if r < tmap.R - 1 else count - per * (tmap.R - 1)
        picks += [(r, int(i)) for i in np.linspace(0, d.size - 1, k).round()]
    return picks


def _training_vector(tmap, r, i, j):
    """Conditioning vector of training replicate ``j`` at rank ``i``."""
    return tmap.caches[r].X[i, j]


def test_predictive_densities_integrate_to_one(nonlinear_map):
    picks = _stratified(nonlinear_map)
    assert len(picks) == 20
    for r, i in picks:
        pc = predictive_component(nonlinear_map, r, i, _training_vector(nonlinear_map, r, i, 0) + 0.3)
        loc, scale = float(pc.loc[0]), float(pc.scale[0])
        total, _ = integrate.quad(lambda u: math.exp(float(pc.logpdf(loc + scale * u)[0])) * scale,
                                  -np.inf, np.inf, epsabs=1e-12, epsrel=1e-10, limit=200)
        assert total == pytest.approx(1.0, abs=1e-4)


def test_student_t_matches_scipy():
    y = np.linspace(-4, 4, 9)
    got = student_t_logpdf(y, 0.5, 1.7, 7.3)
    np.testing.assert_allclose(got, stats.t.logpdf(y, 7.3, loc=0.5, scale=1.7), rtol=1e-12)


def test_zero_kernel_gives_prior_like_predictive(small_ensemble):
    locs = MultiFidelityLocations((unit_grid(3),))
    ens = Ensemble((small_ensemble.values[0],))
    # q0 far below log(eps) removes every neighbor; the linear model has no sigma^2
    block = [0.2, float(softplus_inv(1.3)), -1.0, 0.0, 0.0, -100.0, 0.5]
    tm = build_map(HyperParams([block]), locs, ens, LINEAR)
    d = tm.data[0]
    n = d.n
    alpha = 2.0 + 1.0 / 16.0
    for i in range(d.size):
        pc = predictive_component(tm, 0, i, np.zeros(0))
        beta = math.exp(0.2) * d.ell[i] ** 1.3 * (1.0 + 1.0 / 16.0)
        beta_post = beta + 0.5 * float(d.Y[:, i] @ d.Y[:, i]) / (1.0 + 1e-8)
        alpha_post = alpha + 0.5 * n
        assert pc.loc[0] == 0.0
        assert pc.df == pytest.approx(2 * alpha_post, rel=1e-14)
        assert pc.scale[0] ** 2 == pytest.approx(beta_post / alpha_post, rel=1e-10)


def test_single_location_score_is_student_t():
    locs = MultiFidelityLocations((np.array([[0.3, 0.6]]),))
    train = Ensemble((np.array([[0.4], [-1.1], [0.7], [2.0], [-0.2]]),))
    block = [0.1, float(softplus_inv(1.0)), -0.5, float(softplus_inv(0.5)), 0.0, 0.0, 0.5]
    tm = build_map(HyperParams([block]), locs, train)
    y = train.values[0][:, 0]
    n = y.size
    # single point: lengthscale floor 1e-9, sigma^2 from the nonlinearity law
    ell = 1e-9
    sigma2 = math.exp(-0.5) * ell**0.5
    G = sigma2 * np.ones((n, n)) + np.eye(n) * (1.0 + 1e-8 * (1.0 + sigma2))
    Gi = np.linalg.inv(G)
    alpha = 2.0 + 1.0 / 16.0
    beta = math.exp(0.1) * ell * (1.0 + 1.0 / 16.0)
    a_post = alpha + n / 2
    b_post = beta + 0.5 * y @ Gi @ y
    one = np.ones(n)
    loc = sigma2 * one @ Gi @ y
    scale = math.sqrt(b_post / a_post * (1.0 + sigma2 - sigma2**2 * one @ Gi @ one))
    test = Ensemble((np.array([[0.25], [-3.0]]),))
    got = log_score(tm, test)
    want = -stats.t.logpdf(test.values[0][:, 0], 2 * a_post, loc=loc, scale=scale)
    np.testing.assert_allclose(got.per_replicate, want, rtol=1e-9)


def test_score_decomposes_by_fidelity(nonlinear_map, small_ensemble):
    res = log_score(nonlinear_map, small_ensemble)
    assert res.per_fidelity.shape == (12, 2)
    np.testing.assert_array_equal(res.per_replicate, res.per_fidelity.sum(axis=1))
    assert res.mean == pytest.approx(res.per_replicate.mean(), rel=1e-15)
    np.testing.assert_array_equal(res.fidelity_means, res.per_fidelity.mean(axis=0))


def test_extra_fidelity_leaves_lower_subtotals(nested_locs, small_ensemble):
    hp2 = HyperParams.default(small_ensemble)
    tm2 = build_map(hp2, nested_locs, small_ensemble)
    # a deterministic copy of the finest fidelity at the same points (domain unchanged)
    ens3 = Ensemble(small_ensemble.values + (small_ensemble.values[1],))
    locs3 = MultiFidelityLocations(nested_locs.coords + (nested_locs.coords[1],))
    hp3 = HyperParams(list(hp2.blocks) + [hp2.blocks[1]])
    tm3 = build_map(hp3, locs3, ens3)
    a = log_score(tm2, small_ensemble).per_fidelity
    b = log_score(tm3, ens3).per_fidelity
    np.testing.assert_allclose(b[:, :2], a, rtol=1e-12)
    np.testing.assert_allclose(b.sum(axis=1), a.sum(axis=1) + b[:, 2], rtol=1e-12)


def test_score_rejects_mismatched_test(nonlinear_map):
    with pytest.raises(DataValidationError):
        log_score(nonlinear_map, Ensemble((np.zeros((2, 9)),)))


def test_forward_map_zero_at_location_and_monotone(nonlinear_map, small_ensemble):
    y = [v[0].copy() for v in small_ensemble.values]
    z = forward_map(nonlinear_map, tuple(y))
    assert z.shape == (45,)
    # last rank of the finest fidelity: nothing depends on it
    r, i = 1, nonlinear_map.data[1].size - 1
    col = nonlinear_map.ordering.perms[r][i]
    x = _training_vector(nonlinear_map, r, i, 0)
    loc = float(predictive_component(nonlinear_map, r, i, x).loc[0])
    y[r][col] = loc
    assert forward_map(nonlinear_map, tuple(y))[-1] == pytest.approx(0.0, abs=1e-12)
    vals = []
    for v in np.linspace(-3, 3, 7):
        y[r][col] = v
        vals.append(forward_map(nonlinear_map, tuple(y))[-1])
    assert np.all(np.diff(vals) > 0)
    np.testing.assert_allclose(np.diff(vals, n=2), 0.0, atol=1e-12)


def test_forward_map_on_training_data_has_unit_variance():
    locs = MultiFidelityLocations((unit_grid(5), unit_grid(10)))
    train = gen_gaussian(locs, 0.3, seed=21, n=100)
    tm = fit(train, locs, TrainConfig(seed=2), LINEAR)
    z = forward_map(tm, train)
    assert z.shape == (100, 125)
    assert abs(float(np.mean(z))) < 0.05
    assert float(np.mean(np.var(z, axis=0))) == pytest.approx(1.0, abs=0.15)


def test_forward_map_of_samples_is_student_t(gaussian_linear_map):
    tm = gaussian_linear_map
    draws = sample_joint(tm, 10_000, seed=4)
    z = forward_map(tm, draws)
    ordered = tm.ordering.order_values(draws.values)
    offset = 0
    for r, c in enumerate(tm.caches):
        dhat = np.sqrt(c.beta_post / (c.alpha_post - 1.0))
        for i in (0, tm.data[r].size - 1):
            X = tm.data[r].design(np.array([i]), *c.sizes, Y=ordered[r],
                                  Yprev=ordered[r - 1] if r else None)[0]
            pc = predictive_component(tm, r, i, X)
            t = z[:, offset + i] * dhat[i] / pc.scale
            assert stats.kstest(t, "t", args=(pc.df,)).pvalue > 1e-3
        offset += tm.data[r].size


def test_sampling_is_deterministic_and_prefix_stable(nonlinear_map):
    a = sample_joint(nonlinear_map, 7, seed=9)
    b = sample_joint(nonlinear_map, 7, seed=9)
    c = sample_joint(nonlinear_map, 3, seed=9)
    assert a == b
    # the prefix agrees up to rounding (batched linear algebra depends on count)
    for x, y in zip(a.subset(np.arange(3)).values, c.values):
        np.testing.assert_allclose(x, y, rtol=0, atol=1e-12)
    assert sample_joint(nonlinear_map, 7, seed=10) != a
    assert a.sizes == (9, 36)


def _model_covariance(tm):
    """Covariance of the linear map's joint law, built from its predictive components.

    Each component is ``w'x + s(x) t`` with ``s(x)^2 = c0 (1 + x'Vx)``; ``w``,
    ``c0`` and ``V`` are read off the predictive at basis vectors.
    """
    N = sum(d.size for d in tm.data)
    C = np.zeros((N, N))
    starts = np.concatenate([[0], np.cumsum([d.size for d in tm.data])])
    for r, d in enumerate(tm.data):
        m, mp = tm.caches[r].sizes
        for i in range(d.size):
            p = m + mp
            # global indices feeding the conditioning vector (-1 = zero-filled)
            src = np.full(p, -1)
            same = d.same[i, :m]
            src[:m] = np.where(same >= 0, starts[r] + same, -1)
            if mp:
                prev = d.prev[i, :mp]
                src[m:] = np.where(prev >= 0, starts[r - 1] + prev, -1)
            S = np.zeros((p, N))
            S[np.arange(p)[src >= 0], src[src >= 0]] = 1.0
            eye = np.eye(p)
            pc0 = predictive_component(tm, r, i, np.zeros(p))
            c0 = float(pc0.scale[0]) ** 2
            w = np.array([predictive_component(tm, r, i, eye[k]).loc[0] for k in range(p)])
            V = np.zeros((p, p))
            diag = [float(predictive_component(tm, r, i, eye[k]).scale[0]) ** 2 / c0 - 1 for k in range(p)]
            for a in range(p):
                V[a, a] = diag[a]
                for b in range(a):
                    s2 = float(predictive_component(tm, r, i, eye[a] + eye[b]).scale[0]) ** 2 / c0 - 1
                    V[a, b] = V[b, a] = 0.5 * (s2 - diag[a] - diag[b])
            g = starts[r] + i
            a = S.T @ w
            cx = S @ C @ S.T
            nu = pc0.df
            C[g, :g] = a[:g] @ C[:g, :g]
            C[:g, g] = C[g, :g]
            C[g, g] = a @ C @ a + c0 * nu / (nu - 2) * (1 + np.trace(V @ cx))
    return C


def test_sample_covariance_matches_model(gaussian_linear_map):
    tm = gaussian_linear_map
    C = _model_covariance(tm)
    draws = sample_joint(tm, 10_000, seed=5)
    Y = np.concatenate(tm.ordering.order_values(draws.values), axis=1)
    K = Y.shape[0]
    prod = Y[:, :, None] * Y[:, None, :]
    emp = prod.mean(axis=0)
    se = prod.std(axis=0) / math.sqrt(K)
    ratio = np.abs(emp - C) / se
    # 210 distinct entries: allow the odd 3-SE excursion, none beyond a Bonferroni-level 4 SE
    assert np.mean(ratio > 3) <= 0.01
    assert ratio.max() <= 4
    assert np.all(np.abs(Y.mean(axis=0)) <= 4 * Y.std(axis=0) / math.sqrt(K))


def test_conditional_echoes_given_and_matches_joint(nonlinear_map):
    joint = sample_joint(nonlinear_map, 5, seed=2)
    cond = sample_conditional(nonlinear_map, joint.fidelities(1), 5, seed=2)
    assert cond.R == 2
    np.testing.assert_array_equal(cond.values[0], joint.values[0])
    # same seed and same fixed values: the free fidelity is drawn identically
    np.testing.assert_allclose(cond.values[1], joint.values[1], rtol=0, atol=1e-12)
    assert sample_conditional(nonlinear_map, None, 5, seed=2) == joint


def test_conditional_with_all_fidelities_is_echo(nonlinear_map, small_ensemble):
    given = small_ensemble.subset([0])
    out = sample_conditional(nonlinear_map, given, 4, seed=1)
    for v, g in zip(out.values, given.values):
        np.testing.assert_array_equal(v, np.repeat(g, 4, axis=0))


def test_conditional_shared_given_is_broadcast(nonlinear_map, small_ensemble):
    out = sample_conditional(nonlinear_map, small_ensemble.subset([2]).fidelities(1), 6, seed=3)
    assert out.n == 6
    assert np.all(out.values[0] == small_ensemble.values[0][2])
    assert len({tuple(row) for row in out.values[1]}) == 6


def test_conditional_shape_errors(nonlinear_map, small_ensemble):
    with pytest.raises(DataValidationError):
        sample_conditional(nonlinear_map, Ensemble((np.zeros((1, 8)),)), 3, seed=0)
    with pytest.raises(DataValidationError):
        sample_conditional(nonlinear_map, small_ensemble.subset([0, 1]).fidelities(1), 3, seed=0)
    three = Ensemble(small_ensemble.values + (small_ensemble.values[1],))
    with pytest.raises(DataValidationError):
        sample_conditional(nonlinear_map, three.subset([0]), 3, seed=0)


def test_predictive_component_checks_length(nonlinear_map):
    with pytest.raises(ValueError):
        predictive_component(nonlinear_map, 0, 3, np.zeros(100))


def test_write_scores_csv(tmp_path):
    res = ScoreResult(np.array([[1.5, 2.0], [0.25, -1.0]]))
    p = tmp_path / "scores.csv"
    write_scores_csv(p, res)
    lines = p.read_text().splitlines()
    assert lines[0] == "replicate,fidelity,neg_log_score"
    assert len(lines) == 5
    rows = [l.split(",") for l in lines[1:]]
    assert [(r[0], r[1]) for r in rows] == [("1", "1"), ("1", "2"), ("2", "1"), ("2", "2")]
    assert float(rows[3][2]) == -1.0


def test_no_warnings_on_regular_map(nonlinear_map, small_ensemble):
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        log_score(nonlinear_map, small_ensemble)
