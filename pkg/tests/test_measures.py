import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import logsumexp

from jointsl.errors import InvalidInput, NotPSD
from jointsl.linalg import spectral_decompose
from jointsl.measures import (DiscreteMeasure, GaussianMeasure, discretize_gaussian,
                              independence_cost, low_discrepancy, mean_cov, pca, third_moment)


def random_measure(rng, n, d, uniform=False):
    pts = rng.standard_normal((n, d))
    w = None if uniform else rng.uniform(0.1, 1.0, n)
    return DiscreteMeasure.from_points(pts, w)


def test_construction_normalizes():
    m = DiscreteMeasure(np.arange(6.0).reshape(3, 2), np.log([1.0, 2.0, 5.0]))
    assert abs(logsumexp(m.log_weights)) < 1e-12
    assert np.allclose(m.weights, [0.125, 0.25, 0.625])


def test_construction_errors():
    with pytest.raises(InvalidInput):
        DiscreteMeasure(np.zeros((2, 2)), np.zeros(3))
    with pytest.raises(InvalidInput):
        DiscreteMeasure(np.array([[np.nan, 0.0]]), np.zeros(1))
    with pytest.raises(InvalidInput):
        DiscreteMeasure(np.zeros((1, 2)), np.array([-np.inf]))
    with pytest.raises(InvalidInput):
        DiscreteMeasure.from_points(np.zeros((2, 1)), [1.0, -1.0])


def test_duplicates_merged():
    m = DiscreteMeasure.from_points([[0.0], [1.0], [0.0], [2.0]], [1, 1, 2, 4])
    assert m.n == 3
    assert np.allclose(m.points[:, 0], [0, 1, 2])
    assert np.allclose(m.weights, [3 / 8, 1 / 8, 4 / 8])
    assert list(m.source_index) == [0, 1, 3]
    with pytest.raises(InvalidInput):
        DiscreteMeasure.from_points([[0.0], [0.0]], merge=False)


def test_arrays_read_only():
    m = DiscreteMeasure.from_points(np.zeros((1, 2)))
    with pytest.raises(ValueError):
        m.log_weights[0] = 1.0


def test_csv_roundtrip(tmp_path):
    m = random_measure(np.random.default_rng(1), 7, 3)
    path = tmp_path / "m.csv"
    m.to_csv(path)
    header = path.read_text().splitlines()[0]
    assert header == "x_1,x_2,x_3,weight"
    back = DiscreteMeasure.from_csv(path)
    assert np.array_equal(back.points, m.points)
    assert np.allclose(back.weights, m.weights, rtol=1e-14)


def test_csv_renormalizes(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("x_1,weight\n0,2\n1,6\n")
    assert np.allclose(DiscreteMeasure.from_csv(path).weights, [0.25, 0.75])


def test_gaussian_json_roundtrip():
    g = GaussianMeasure([1.0, 2.0], [[2.0, 0.5], [0.5, 1.0]])
    back = GaussianMeasure.from_json(g.to_json())
    assert np.array_equal(back.mean, g.mean) and np.array_equal(back.cov, g.cov)
    assert set(json.loads(g.to_json())) == {"mean", "cov"}


def test_gaussian_rejects_non_psd():
    with pytest.raises(NotPSD):
        GaussianMeasure([0.0, 0.0], [[1.0, 0.0], [0.0, -1.0]])
    with pytest.raises(InvalidInput):
        GaussianMeasure([0.0], [[1.0, 0.0], [0.0, 1.0]])


def test_mean_cov_point_mass():
    s = mean_cov(DiscreteMeasure.point_mass([2.0, 3.0]))
    assert np.allclose(s.mean, [2, 3]) and np.allclose(s.cov, 0)


def test_mean_cov_bernoulli():
    s = mean_cov(DiscreteMeasure.from_points([[0.0], [1.0]]))
    assert np.isclose(s.mean[0], 0.5) and np.isclose(s.cov[0, 0], 0.25)


def test_mean_cov_double_loop_oracle():
    m = random_measure(np.random.default_rng(2), 20, 3)
    w, x = m.weights, m.points
    a = np.zeros(3)
    for i in range(m.n):
        a += w[i] * x[i]
    cov = np.zeros((3, 3))
    for i in range(m.n):
        for p in range(3):
            for q in range(3):
                cov[p, q] += w[i] * (x[i, p] - a[p]) * (x[i, q] - a[q])
    s = mean_cov(m)
    assert np.max(np.abs(s.mean - a)) < 1e-12
    assert np.max(np.abs(s.cov - cov)) < 1e-12
    assert abs(s.trace_cov - np.trace(s.cov)) < 1e-12


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_mean_cov_affine_equivariance(seed):
    rng = np.random.default_rng(seed)
    m = random_measure(rng, 12, 3)
    a = rng.standard_normal((3, 3))
    c = rng.standard_normal(3)
    s = mean_cov(m)
    t = mean_cov(m.pushforward(a, c))
    assert np.allclose(t.mean, a @ s.mean + c, atol=1e-10)
    assert np.allclose(t.cov, a @ s.cov @ a.T, atol=1e-10)


def test_third_moment_examples():
    v = np.array([1.0, -2.0, 0.5])
    assert np.allclose(third_moment(DiscreteMeasure.from_points([v, -v])), 0)
    assert np.allclose(third_moment(DiscreteMeasure.point_mass(v)), 0)


def test_third_moment_triple_loop_oracle():
    m = random_measure(np.random.default_rng(3), 10, 3)
    w = m.weights
    xc = m.points - w @ m.points
    ref = np.zeros((3, 3, 3))
    for n in range(m.n):
        for i in range(3):
            for j in range(3):
                for k in range(3):
                    ref[i, j, k] += w[n] * xc[n, i] * xc[n, j] * xc[n, k]
    t = third_moment(m)
    assert np.max(np.abs(t - ref)) < 1e-12
    assert np.allclose(t, np.transpose(t, (1, 0, 2))) and np.allclose(t, np.transpose(t, (2, 1, 0)))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_third_moment_vanishes_for_symmetric(seed):
    rng = np.random.default_rng(seed)
    pts = rng.standard_normal((5, 2))
    w = rng.uniform(0.1, 1, 5)
    c = rng.standard_normal(2)
    m = DiscreteMeasure.from_points(np.vstack([c + pts, c - pts]), np.concatenate([w, w]))
    assert np.allclose(third_moment(m), 0, atol=1e-12)


def test_discretize_degenerate():
    m = discretize_gaussian(GaussianMeasure([1.0, 2.0], np.zeros((2, 2))), 5, 0)
    assert m.n == 1 and np.allclose(m.points[0], [1, 2])


def test_discretize_clt():
    n = 10 ** 4
    m = discretize_gaussian(GaussianMeasure([0.0, 0.0], np.eye(2)), n, 4)
    assert np.all(np.abs(mean_cov(m).mean) < 4 / np.sqrt(n))
    assert m.is_uniform()


def test_discretize_deterministic():
    g = GaussianMeasure([0.0, 1.0], [[1.0, 0.3], [0.3, 2.0]])
    assert np.array_equal(discretize_gaussian(g, 50, 9).points, discretize_gaussian(g, 50, 9).points)


def test_discretize_moment_match():
    g = GaussianMeasure([1.0, -1.0], [[2.0, 0.4], [0.4, 0.5]])
    s = mean_cov(discretize_gaussian(g, 300, 1, moment_match=True))
    assert np.allclose(s.mean, g.mean, atol=1e-12) and np.allclose(s.cov, g.cov, atol=1e-12)


def test_discretize_non_psd():
    g = GaussianMeasure.__new__(GaussianMeasure)
    object.__setattr__(g, "mean", np.zeros(2))
    object.__setattr__(g, "cov", np.diag([1.0, -1.0]))
    with pytest.raises(NotPSD):
        discretize_gaussian(g, 10, 0)


def test_low_discrepancy_examples():
    p = low_discrepancy(1, 3)
    assert p.shape == (1, 3) and np.all(np.abs(p) <= 1)
    # van der Corput base 2: 1/2, 1/4, 3/4, 1/8
    assert np.allclose(low_discrepancy(4, 1)[:, 0], [0.0, -0.5, 0.5, -0.75])
    assert np.all(np.abs(low_discrepancy(4096, 2).mean(axis=0)) < 0.02)


def test_low_discrepancy_distinct_and_pure():
    p = low_discrepancy(500, 3)
    assert np.unique(p, axis=0).shape[0] == 500
    assert np.array_equal(p, low_discrepancy(500, 3))
    assert np.array_equal(low_discrepancy(10, 2), p[:10, :2])


def test_independence_cost_examples():
    assert independence_cost(DiscreteMeasure.point_mass([0.0]), DiscreteMeasure.point_mass([1.0])) == 1.0
    d = 3
    g = GaussianMeasure(np.zeros(d), np.eye(d))
    assert np.isclose(independence_cost(g, g), 2 * d)
    with pytest.raises(InvalidInput):
        independence_cost(GaussianMeasure([0.0], [[1.0]]), g)


def test_independence_cost_double_sum():
    rng = np.random.default_rng(6)
    mu, nu = random_measure(rng, 15, 2), random_measure(rng, 15, 2)
    ref = sum(mu.weights[i] * nu.weights[j] * np.sum((mu.points[i] - nu.points[j]) ** 2)
              for i in range(15) for j in range(15))
    assert abs(independence_cost(mu, nu) - ref) < 1e-10


def test_independence_cost_self():
    m = random_measure(np.random.default_rng(7), 9, 3)
    assert abs(independence_cost(m, m) - 2 * mean_cov(m).trace_cov) < 1e-10


def test_pca_line():
    t = np.linspace(-1, 1, 11)[:, None]
    direction = np.array([1.0, 2.0, -2.0]) / 3
    comps, mean = pca(DiscreteMeasure.from_points(t * direction + 1.0), 1)
    assert np.isclose(abs(comps[:, 0] @ direction), 1.0)
    assert np.allclose(mean, 1.0)


def test_pca_isotropic_and_composition():
    pts = low_discrepancy(4096, 3)
    m = DiscreteMeasure.from_points(pts)
    s = mean_cov(m)
    lam = spectral_decompose(s.cov).eigenvalues
    assert (lam.max() - lam.min()) / lam.max() < 0.05
    comps, _ = pca(m, 2)
    explained = np.einsum("ik,ij,jk->k", comps, s.cov, comps)
    assert np.allclose(explained, lam[:2], atol=1e-10)
    assert np.allclose(comps.T @ comps, np.eye(2), atol=1e-12)
    with pytest.raises(InvalidInput):
        pca(m, 4)
