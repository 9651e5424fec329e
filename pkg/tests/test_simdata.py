import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from mfmap.errors import DataValidationError
from mfmap.simdata import (
    GeneratorSpec,
    SequentialGenerator,
    coarsen_average,
    coarsen_min,
    gen_gaussian,
    gen_nonlinear_highfid,
    gen_scenario,
    unit_grid,
)
from mfmap.spatial import Ensemble, MultiFidelityLocations


def _pair_locs():
    return MultiFidelityLocations((np.array([[0.1, 0.2], [0.4, 0.2], [0.9, 0.9]]),))


def test_unit_grid_is_row_major_cell_centers():
    g = unit_grid(2)
    np.testing.assert_allclose(g, [[0.25, 0.25], [0.75, 0.25], [0.25, 0.75], [0.75, 0.75]])


def test_gaussian_is_deterministic():
    a = gen_gaussian(_pair_locs(), 0.3, seed=4, n=2)
    b = gen_gaussian(_pair_locs(), 0.3, seed=4, n=2)
    assert a == b
    assert gen_gaussian(_pair_locs(), 0.3, seed=5, n=2) != a


def test_gaussian_variance_and_correlation():
    n = 10_000
    Y = gen_gaussian(_pair_locs(), 0.3, seed=1, n=n).values[0]
    var = Y.var(axis=0)
    np.testing.assert_allclose(var, 1.0, atol=4 * math.sqrt(2 / n))
    rho = np.corrcoef(Y[:, 0], Y[:, 1])[0, 1]
    want = math.exp(-1.0)
    assert abs(rho - want) <= 4 * (1 - want**2) / math.sqrt(n)


def test_gaussian_rejects_bad_input():
    with pytest.raises(DataValidationError):
        gen_gaussian(_pair_locs(), 0.0, seed=1, n=2)
    big = MultiFidelityLocations((np.random.default_rng(0).random((5001, 2)),))
    with pytest.raises(DataValidationError):
        gen_gaussian(big, 0.3, seed=1, n=1)


def test_gaussian_multi_fidelity_shapes():
    locs = MultiFidelityLocations((unit_grid(2), unit_grid(4)))
    ens = gen_gaussian(locs, 0.3, seed=0, n=3)
    assert ens.sizes == (4, 16) and ens.n == 3


def test_first_generated_value_has_unit_variance():
    _, gen = gen_nonlinear_highfid(A=6, n=1)
    assert gen.sd[0] == 1.0
    assert gen.neighbors[0].size == 0
    assert all(nb.size == min(g, 30) for g, nb in enumerate(gen.neighbors))


def test_linear_generator_matches_exact_gp_at_first_location():
    locs = MultiFidelityLocations((unit_grid(10),))
    n = 3000
    gen = SequentialGenerator(locs, 0.3, 30, amplitude=0.0)
    seq = gen.sample(n, seed=2).values[0]
    exact = gen_gaussian(locs, 0.3, seed=3, n=n).values[0]
    first = gen.flat_index[0]
    res = stats.ks_2samp(seq[:, first], exact[:, first])
    # two-sample KS critical value at level 1e-3
    assert res.statistic < 1.95 * math.sqrt(2 / n)


def test_vecchia_weights_are_kriging_weights():
    locs = MultiFidelityLocations((unit_grid(4),))
    gen = SequentialGenerator(locs, 0.3, m=30)
    pts = locs.coords[0][gen.flat_index]
    # with every previous point conditioned on, the sequential law is the exact GP
    C = np.exp(-np.linalg.norm(pts[:, None] - pts[None], axis=2) / 0.3)
    L = np.linalg.cholesky(C)
    np.testing.assert_allclose(gen.sd, np.diag(L), rtol=1e-10)
    ens = gen.sample(3, seed=0)
    Y = np.concatenate(ens.values, axis=1)
    back = np.argsort(gen.flat_index)
    want = stats.multivariate_normal(np.zeros(16), C[np.ix_(back, back)]).logpdf(Y)
    np.testing.assert_allclose(gen.logpdf(ens), want, rtol=1e-9)


def test_nonlinear_logpdf_is_sum_of_normal_terms():
    ens, gen = gen_nonlinear_highfid(A=5, n=4, seed=3)
    Y = np.concatenate(ens.values, axis=1)[:, gen.flat_index]
    total = np.zeros(4)
    for g in range(gen.N):
        nb, b = gen.neighbors[g], gen.weights[g]
        mu = Y[:, nb] @ b
        if nb.size:
            mu = mu + 2.0 * np.sin(4.0 * (Y[:, nb[:2]] @ b[:2]))
        total += stats.norm.logpdf(Y[:, g], mu, gen.sd[g])
    np.testing.assert_allclose(gen.logpdf(ens), total, rtol=1e-12)


def test_generators_are_deterministic():
    a, _ = gen_nonlinear_highfid(A=6, n=3, seed=8)
    b, _ = gen_nonlinear_highfid(A=6, n=3, seed=8)
    assert a == b


def test_coarsen_examples():
    block = np.array([1.0, 2.0, 3.0, 4.0])
    assert coarsen_average(block, 2).tolist() == [2.5]
    assert coarsen_min(block, 2).tolist() == [1.0]
    const = np.full(36, 1.75)
    np.testing.assert_array_equal(coarsen_average(const, 3), np.full(4, 1.75))


def test_coarsen_respects_block_layout():
    field = np.arange(16.0)
    # rows of a 4x4 grid: [0..3], [4..7], ...; block (0, 0) = {0, 1, 4, 5}
    np.testing.assert_array_equal(coarsen_average(field, 2), [2.5, 4.5, 10.5, 12.5])
    np.testing.assert_array_equal(coarsen_min(field, 2), [0.0, 2.0, 8.0, 10.0])


def test_coarse_cells_sit_at_block_centroids():
    fine = unit_grid(6)
    for k in range(2):
        np.testing.assert_allclose(coarsen_average(fine[:, k], 3), unit_grid(2)[:, k], atol=1e-15)


def test_coarsen_rejects_indivisible():
    with pytest.raises(DataValidationError):
        coarsen_average(np.zeros(25), 2)
    with pytest.raises(DataValidationError):
        coarsen_min(np.zeros(10), 2)


def test_coarsen_composes():
    Y = np.random.default_rng(0).standard_normal((3, 900))
    two_step = coarsen_average(coarsen_average(Y, 3), 2)
    np.testing.assert_allclose(two_step, coarsen_average(Y, 6), atol=1e-12)


fields = st.lists(st.integers(-1000, 1000), min_size=36, max_size=36).map(lambda v: np.array(v) / 100)


@settings(max_examples=50, deadline=None)
@given(fields, fields, st.floats(-3, 3), st.floats(-3, 3))
def test_coarsen_average_is_linear(y, z, a, b):
    np.testing.assert_allclose(coarsen_average(a * y + b * z, 3),
                               a * coarsen_average(y, 3) + b * coarsen_average(z, 3), atol=1e-9)


@settings(max_examples=50, deadline=None)
@given(fields, fields)
def test_coarsen_min_order_properties(y, z):
    assert np.all(coarsen_min(y, 2) <= coarsen_average(y, 2) + 1e-12)
    lo = np.minimum(y, z)
    assert np.all(coarsen_min(lo, 3) <= coarsen_min(z, 3))


def test_spec_validation():
    with pytest.raises(DataValidationError):
        GeneratorSpec("no-such-scenario")
    with pytest.raises(DataValidationError):
        GeneratorSpec("block-average", grids=(4, 10, 30))
    spec = GeneratorSpec.default("block-min")
    assert json.loads(spec.to_json())["grids"] == [5, 10, 30]


@pytest.fixture(scope="module")
def block_average():
    return gen_scenario(GeneratorSpec("block-average", grids=(5, 10, 30)), 4, 3, seed=1)


def test_block_scenario_sizes(block_average):
    assert block_average.locs.sizes == (25, 100, 900)
    assert block_average.train.sizes == (25, 100, 900)
    assert block_average.train.n == 4 and block_average.test.n == 3


def test_block_average_chain_is_exact(block_average):
    for ens in (block_average.train, block_average.test):
        y1, y2, y3 = ens.values
        np.testing.assert_array_equal(y2, coarsen_average(y3, 3))
        np.testing.assert_array_equal(y1, coarsen_average(coarsen_average(y3, 3), 2))


def test_train_and_test_streams_differ(block_average):
    assert not np.allclose(block_average.train.values[2][:3], block_average.test.values[2])


def test_scenario_is_deterministic(block_average):
    again = gen_scenario(GeneratorSpec("block-average", grids=(5, 10, 30)), 4, 3, seed=1)
    assert again.train == block_average.train and again.test == block_average.test


def test_truth_density_uses_finest_field(block_average):
    lp = block_average.truth_logpdf(block_average.test)
    want = block_average.generator.logpdf(Ensemble((block_average.test.values[2],)))
    np.testing.assert_array_equal(lp, want)
    assert np.all(np.isfinite(lp))


def test_block_min_is_centered_on_training_mean():
    sc = gen_scenario(GeneratorSpec("block-min", grids=(2, 6)), 20, 5, seed=0)
    assert abs(float(np.mean(sc.train.values[0]))) < 1e-12
    assert sc.shifts[0] != 0.0 and sc.shifts[1] == 0.0
    raw = coarsen_min(sc.test.values[1], 3)
    np.testing.assert_allclose(sc.test.values[0], raw - sc.shifts[0], atol=1e-12)


def test_gaussian_and_nonlinear_scenarios():
    g = gen_scenario(GeneratorSpec.default("gaussian-exponential"), 3, 2, seed=0)
    assert g.locs.sizes == (25, 100)
    assert g.generator.amplitude == 0.0
    nl = gen_scenario(GeneratorSpec("nonlinear-map", grids=(6,)), 3, 2, seed=0)
    assert nl.locs.sizes == (36,)
    np.testing.assert_allclose(nl.truth_logpdf(nl.test), nl.generator.logpdf(nl.test))
