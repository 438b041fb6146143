import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cishmap import fcm, synthetic
from cishmap.errors import DegenerateClusterError
from cishmap.fcm import FcmConfig

from oracles import naive_centroids, naive_fit


# -- examples ------------------------------------------------------------------

def test_centroids_symmetric_pair():
    u = np.full((2, 2), 0.5)
    for m in (1.3, 2.0, 3.0):
        np.testing.assert_allclose(fcm.update_centroids(np.array([[0.0], [1.0]]), u, m), [[0.5], [0.5]])


def test_centroids_hard_memberships_are_means():
    x = np.array([[0.0, 0.0], [2.0, 0.0], [10.0, 10.0], [12.0, 14.0], [11.0, 12.0]])
    u = np.array([[1, 0], [1, 0], [0, 1], [0, 1], [0, 1]], float)
    np.testing.assert_allclose(fcm.update_centroids(x, u, 1.8), [[1, 0], [11, 12]])


@pytest.mark.parametrize("seed", range(10))
def test_centroids_match_double_loop(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((9, 2))
    u = fcm.initial_partition(9, 3, seed)
    np.testing.assert_allclose(fcm.update_centroids(x, u, 1.7), naive_centroids(x, u, 1.7), rtol=1e-12)


def test_degenerate_cluster():
    with pytest.raises(DegenerateClusterError):
        fcm.update_centroids(np.zeros((3, 2)), np.array([[1, 0], [1, 0], [1, 0]], float), 2.0)


def test_memberships_examples():
    u = fcm.update_memberships(np.array([[0.0, 0.0]]), np.array([[-1.0, 0.0], [1.0, 0.0]]), 1.8)
    np.testing.assert_allclose(u, [[0.5, 0.5]])
    u = fcm.update_memberships(np.array([[0.0, 0.0]]), np.array([[0.0, 0.0], [1.0, 0.0]]), 1.8)
    np.testing.assert_array_equal(u, [[1.0, 0.0]])
    u = fcm.update_memberships(np.array([[0.0]]), np.array([[1.0], [-2.0]]), 2.0)
    np.testing.assert_allclose(u, [[0.8, 0.2]], rtol=1e-12)


def test_memberships_split_among_coincident_centroids():
    u = fcm.update_memberships(np.array([[1.0, 1.0]]), np.array([[1.0, 1.0], [0.0, 5.0], [1.0, 1.0]]), 1.8)
    np.testing.assert_array_equal(u, [[0.5, 0.0, 0.5]])


def test_fpc_examples():
    assert fcm.fpc(np.array([[0.8, 0.2], [0.6, 0.4]])) == pytest.approx(0.6, abs=1e-15)
    assert fcm.fpc(np.eye(4)[[0, 1, 3, 3, 2]]) == 1.0
    assert fcm.fpc(np.full((6, 5), 0.2)) == pytest.approx(0.2, abs=1e-15)


@pytest.mark.parametrize("kw", [{"c": 1}, {"m": 1.0}, {"tol": 0.0}, {"max_iter": 0}])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        FcmConfig(**kw)


def test_collapsed_cluster_is_reported():
    # two data locations, three clusters and a sharp m: one centroid's
    # memberships underflow to exactly zero within a few sweeps
    x = np.zeros((11, 2))
    x[9, 0] = 1.0
    with pytest.raises(DegenerateClusterError):
        fcm.fcm_fit(x, FcmConfig(c=3, m=1.25, seed=0))


def test_too_few_points():
    with pytest.raises(ValueError):
        fcm.fcm_fit(np.zeros((2, 2)), FcmConfig(c=3))


# -- fits ------------------------------------------------------------------------

def _blobs(seed=0, n=60, sigma=0.1):
    rng = np.random.default_rng(seed)
    a = rng.normal([0, 0], sigma, (n, 2))
    b = rng.normal([10 * sigma * 10, 0], sigma, (n, 2))
    return np.vstack([a, b]), np.repeat([0, 1], n)


def test_two_blobs_get_confident_memberships():
    x, truth = _blobs()
    res = fcm.fcm_fit(x, FcmConfig(c=2))
    for k in (0, 1):
        u = res.u[truth == k]
        j = int(np.argmax(u.mean(axis=0)))
        assert np.all(u[:, j] > 0.9)


def test_identical_points():
    res = fcm.fcm_fit(np.tile([[0.3, -1.2]], (10, 1)), FcmConfig(c=2))
    np.testing.assert_allclose(res.centroids, [[0.3, -1.2], [0.3, -1.2]], atol=1e-15)
    np.testing.assert_allclose(res.u, 0.5)


@pytest.mark.parametrize("seed", range(5))
def test_fit_matches_naive_implementation(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((25, 2))
    u0 = fcm.initial_partition(25, 3, seed)
    res = fcm.fcm_fit(x, FcmConfig(c=3, m=1.6, tol=1e-300, max_iter=15), u0=u0)
    assert res.iterations == 15
    cen, u = naive_fit(x, u0, 1.6, 15)
    np.testing.assert_allclose(res.u, u, atol=1e-6)
    np.testing.assert_allclose(res.centroids, cen, atol=1e-6)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(3, 30), st.just(2)), elements=st.floats(-100, 100)),
       st.integers(2, 3), st.floats(1.1, 3.0), st.integers(0, 1000))
def test_partition_invariants(x, c, m, seed):
    try:
        res = fcm.fcm_fit(x, FcmConfig(c=c, m=m, seed=seed, max_iter=50))
    except DegenerateClusterError:
        # near-coincident data can starve a cluster until its memberships
        # underflow to zero; that is reported, never returned as NaN
        return
    np.testing.assert_allclose(res.u.sum(axis=1), 1.0, atol=1e-9)
    assert np.all(res.u >= 0) and np.all(res.u <= 1)
    assert np.all(np.isfinite(res.centroids))
    assert 1.0 / c - 1e-12 <= res.fpc <= 1.0 + 1e-12


@pytest.mark.parametrize("seed", range(3))
def test_permutation_equivariance(seed):
    rng = np.random.default_rng(seed)
    x = np.vstack([rng.normal(mu, 0.3, (20, 2)) for mu in ([0, 0], [3, 0], [0, 3])])
    u0 = fcm.initial_partition(len(x), 3, seed)
    base = fcm.fcm_fit(x, FcmConfig(c=3), u0=u0)
    for perm in itertools.permutations(range(3)):
        res = fcm.fcm_fit(x, FcmConfig(c=3), u0=u0[:, perm])
        np.testing.assert_allclose(res.u, base.u[:, perm], atol=1e-12)
        np.testing.assert_allclose(res.centroids, base.centroids[list(perm)], atol=1e-12)


def test_converged_state_is_a_fixpoint():
    x, _ = _blobs(seed=2)
    cfg = FcmConfig(c=3)
    res = fcm.fcm_fit(x, cfg)
    assert res.iterations < cfg.max_iter
    again = fcm.update_memberships(x, fcm.update_centroids(x, res.u, cfg.m), cfg.m)
    assert np.abs(again - res.u).max() < cfg.tol


def test_fpc_falls_with_cluster_count_on_gradient_cloud():
    x = synthetic.gradient_cloud(300, seed=0)
    (_, f2), (_, f7) = fcm.sweep(x, [2, 7])
    assert f2 > f7


def test_fit_is_deterministic():
    x, _ = _blobs(seed=4)
    a = fcm.fcm_fit(x, FcmConfig(c=4, seed=9))
    b = fcm.fcm_fit(x, FcmConfig(c=4, seed=9))
    assert a.u.tobytes() == b.u.tobytes()
