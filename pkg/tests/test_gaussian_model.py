import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gaussrio.gaussian_model import (
    DEFAULT_S_MIN,
    Assignment,
    FitConfig,
    Gaussian,
    GaussianModel,
    ModelFitError,
    assign_points,
    bisecting_kmeans,
    covariance_of,
    default_gaussian_count,
    fit_model,
    init_model,
    model_loss,
    read_model,
    transform_to_local,
    write_model,
)
from gaussrio.geom import rotvec_to_quat

from conftest import unit_quats, vec3
from oracles import exhaustive_two_means, mahalanobis_sq, model_loss_numeric_grads, random_small_model, rel_err

LN2 = np.log(2.0)
scales = st.tuples(*(st.floats(-3.0, 2.0),) * 3).map(np.array)


def single(mu=(0, 0, 0), s=(0, 0, 0), q=(1, 0, 0, 0), s_min=DEFAULT_S_MIN, s_disc=DEFAULT_S_MIN):
    return GaussianModel([mu], [s], [q], s_min, s_disc)


# -- initialization -----------------------------------------------------------


def test_single_cluster_is_cloud_mean(rng):
    pts = rng.normal(size=(100, 3))
    m = init_model(pts, 1)
    np.testing.assert_allclose(m.mu[0], pts.mean(0), atol=1e-12)


def test_two_clusters_match_exhaustive_oracle(rng):
    pts = np.vstack([rng.normal(size=(6, 3)) * 0.3, rng.normal(size=(6, 3)) * 0.3 + [5, 0, 0]])
    oracle = exhaustive_two_means(pts)
    got = init_model(pts, 2).mu
    got = got[np.argsort(got[:, 0])]
    oracle = oracle[np.argsort(oracle[:, 0])]
    assert np.linalg.norm(got - oracle, axis=1).max() < 0.2


def test_init_scales_and_rotations(rng):
    m = init_model(rng.normal(size=(200, 3)), 7)
    assert np.all(m.log_scales == 0)
    np.testing.assert_array_equal(m.rot, np.tile([1.0, 0, 0, 0], (7, 1)))


def test_too_many_gaussians_reduced(rng, caplog):
    with caplog.at_level(logging.WARNING):
        m = init_model(rng.normal(size=(5, 3)), 9)
    assert len(m) == 5
    assert "using 5" in caplog.text


def test_empty_cloud_rejected():
    with pytest.raises(ValueError):
        init_model(np.zeros((0, 3)), 1)


def test_default_count():
    assert default_gaussian_count(5) == 1
    assert default_gaussian_count(250) == 25
    assert default_gaussian_count(100000) == 150


def test_bisecting_kmeans_deterministic(rng):
    pts = rng.normal(size=(300, 3))
    np.testing.assert_array_equal(bisecting_kmeans(pts, 12, seed=3), bisecting_kmeans(pts, 12, seed=3))


def test_bisecting_kmeans_duplicate_points():
    c = bisecting_kmeans(np.ones((10, 3)), 3)
    assert len(c) == 3
    np.testing.assert_allclose(c, 1.0)


# -- assignment ---------------------------------------------------------------


def test_assign_single_gaussian(rng):
    a = assign_points(single(), rng.normal(size=(20, 3)))
    assert np.all(a.labels == 0)


def test_assign_tie_goes_to_lowest_index():
    m = GaussianModel([[-1, 0, 0], [1, 0, 0]], np.zeros((2, 3)), np.tile([1.0, 0, 0, 0], (2, 1)))
    assert assign_points(m, [[0, 0, 0]]).labels[0] == 0


def test_assign_nearest_center():
    m = GaussianModel([[0, 0, 0], [10, 0, 0]], np.zeros((2, 3)), np.tile([1.0, 0, 0, 0], (2, 1)))
    assert assign_points(m, [[2, 0, 0]]).labels[0] == 0


def test_assign_ignores_covariance():
    # Mahalanobis would prefer the wide Gaussian; assignment must stay Euclidean
    m = GaussianModel([[0, 0, 0], [3, 0, 0]], [[-2, -2, -2], [2, 2, 2]], np.tile([1.0, 0, 0, 0], (2, 1)))
    assert assign_points(m, [[1.4, 0, 0]]).labels[0] == 0


@given(st.integers(1, 8), st.integers(1, 60), st.integers(0, 2**31))
def test_assignment_is_partition(n, m, seed):
    r = np.random.default_rng(seed)
    a = Assignment(r.integers(0, n, size=m), n)
    members = np.sort(np.concatenate(a.groups))
    np.testing.assert_array_equal(members, np.arange(m))
    for j, g in enumerate(a.groups):
        assert np.all(a.labels[g] == j)


# -- closed forms -------------------------------------------------------------


def test_local_transform_examples():
    g = Gaussian([1, 2, 3], [0, 0, 0], [1, 0, 0, 0])
    np.testing.assert_array_equal(transform_to_local(g, [1, 2, 3]), 0)
    assert np.linalg.norm(transform_to_local(g, [2, 2, 3])) == pytest.approx(1.0)
    g = Gaussian([0, 0, 0], [LN2, 0, 0], [1, 0, 0, 0])
    np.testing.assert_allclose(transform_to_local(g, [2, 0, 0]), [1, 0, 0], atol=1e-15)


def test_covariance_examples():
    np.testing.assert_allclose(covariance_of(Gaussian([0, 0, 0], [0, 0, 0], [1, 0, 0, 0])), np.eye(3))
    np.testing.assert_allclose(covariance_of(Gaussian([0, 0, 0], [LN2] * 3, [1, 0, 0, 0])), 4 * np.eye(3))
    q = rotvec_to_quat([0, 0, np.pi / 2])
    np.testing.assert_allclose(covariance_of(Gaussian([0, 0, 0], [LN2, 0, 0], q)), np.diag([1, 4, 1]), atol=1e-12)


@given(vec3, scales, unit_quats())
def test_covariance_spd_with_floor(mu, s, q):
    g = Gaussian(mu, s, q * 2.5)
    C = covariance_of(g)
    np.testing.assert_allclose(C, C.T, atol=1e-12)
    ev = np.linalg.eigvalsh(C)
    assert ev.min() >= np.exp(2 * DEFAULT_S_MIN) * (1 - 1e-6)
    np.testing.assert_allclose(np.sort(ev), np.sort(np.exp(2 * g.effective_log_scales)), rtol=1e-9)
    assert abs(np.linalg.norm(g.unit_rot) - 1) < 1e-9


@given(vec3, scales, unit_quats())
def test_half_logdet_is_scale_sum(mu, s, q):
    g = Gaussian(mu, s, q)
    _, logdet = np.linalg.slogdet(covariance_of(g))
    assert 0.5 * logdet == pytest.approx(g.effective_log_scales.sum(), abs=1e-9)


@given(vec3, scales, unit_quats(), vec3)
def test_local_norm_is_mahalanobis(mu, s, q, p):
    g = Gaussian(mu, s, q)
    lhs = 0.5 * mahalanobis_sq(g.mu, covariance_of(g), p)
    rhs = 0.5 * float(transform_to_local(g, p) @ transform_to_local(g, p))
    assert lhs == pytest.approx(rhs, rel=1e-8, abs=1e-8)


def test_model_arrays_match_single_gaussian_forms(rng):
    m = GaussianModel(rng.normal(size=(5, 3)), rng.normal(size=(5, 3)), rng.normal(size=(5, 4)))
    for j, g in enumerate(m.gaussians):
        np.testing.assert_allclose(m.covariances()[j], covariance_of(g), atol=1e-12)
        p = rng.normal(size=3)
        np.testing.assert_allclose(m.whitening()[j] @ (p - g.mu), transform_to_local(g, p), atol=1e-12)


# -- loss ---------------------------------------------------------------------


def test_loss_examples():
    one = Assignment([0], 1)
    assert model_loss(single(s_disc=0.0), one, [[0, 0, 0]]).loss == 0.0
    assert model_loss(single(s_disc=0.0), one, [[2, 0, 0]]).loss == pytest.approx(2.0)
    m = single(s=[LN2] * 3, s_disc=LN2)
    assert model_loss(m, one, [[0, 0, 0]]).loss == pytest.approx(3 * LN2)


def test_disc_prior_active():
    m = single(s=[0.5, 1.0, 1.5], s_disc=0.2)
    assert model_loss(m, Assignment([0], 1), [[0, 0, 0]]).loss == pytest.approx(3.0 + 0.3)


def test_empty_gaussian_contributes_only_priors():
    m = GaussianModel([[0, 0, 0], [9, 9, 9]], [[0, 0, 0], [0.1, 0.2, 0.3]], np.tile([1.0, 0, 0, 0], (2, 1)), s_disc=0.0)
    res = model_loss(m, Assignment([0, 0], 2), [[1, 0, 0], [0, 1, 0]])
    assert res.per_gaussian[1] == pytest.approx(0.6 + 0.1)
    np.testing.assert_array_equal(res.grad_mu[1], 0.0)
    assert np.isfinite(res.loss)


def test_duplicating_points_keeps_mahalanobis_term(rng):
    m = GaussianModel(rng.normal(size=(2, 3)), rng.normal(size=(2, 3)) * 0.3, rng.normal(size=(2, 4)))
    cloud = rng.normal(size=(10, 3))
    a = assign_points(m, cloud)
    doubled = np.vstack([cloud, cloud])
    r1 = model_loss(m, a, cloud)
    r2 = model_loss(m, Assignment(np.concatenate([a.labels, a.labels]), 2), doubled)
    np.testing.assert_allclose(r1.per_gaussian, r2.per_gaussian, rtol=1e-12)


def test_gradients_match_finite_differences(rng):
    for _ in range(20):
        model, a, cloud = random_small_model(rng)
        res = model_loss(model, a, cloud)
        g_mu, g_s, g_q = model_loss_numeric_grads(model, a, cloud)
        assert rel_err(res.grad_mu, g_mu).max() < 1e-4
        assert rel_err(res.grad_log_scales, g_s).max() < 1e-4
        assert rel_err(res.grad_rot, g_q).max() < 1e-4


def test_scale_gradient_zero_below_clamp():
    m = single(s=[-5.0, 0.0, 0.0])
    res = model_loss(m, Assignment([0], 1), [[0.3, 0.2, 0.1]])
    assert res.grad_log_scales[0, 0] == 0.0


# -- fitting ------------------------------------------------------------------


def test_fit_recovers_covariance(rng):
    pts = rng.multivariate_normal([1, -2, 0.5], np.diag([4.0, 1.0, 0.25]), size=1000)
    oracle = np.sort(np.linalg.eigvalsh(np.cov(pts.T, bias=True)))
    m = init_model(pts, 1, s_disc=10.0)
    res = fit_model(m, pts, FitConfig(epochs=200))
    got = np.sort(np.linalg.eigvalsh(res.model.covariances()[0]))
    assert np.all(np.abs(got - oracle) / oracle < 0.15)


def test_planar_cloud_gives_thin_gaussians(rng):
    pts = np.column_stack([rng.uniform(-3, 3, 600), rng.uniform(-3, 3, 600), 0.05 * rng.normal(size=600)])
    m = init_model(pts, 10)
    res = fit_model(m, pts, FitConfig(epochs=500, lr_scale=0.03, lr_rot=0.03))
    smallest = np.linalg.eigvalsh(res.model.covariances())[:, 0]
    # per-Gaussian PCA of the assigned points is the oracle for the flat direction
    a = assign_points(res.model, pts)
    pca = np.array([np.linalg.eigvalsh(np.cov(pts[g].T, bias=True))[0] for g in a.groups if len(g) > 3])
    assert np.median(smallest) <= 0.01
    assert pca.max() <= 0.01


def test_converged_fit_is_fixed_point(rng):
    pts = rng.multivariate_normal([0, 0, 0], np.diag([1.0, 0.5, 0.2]), size=300)
    m = fit_model(init_model(pts, 1, s_disc=10.0), pts, FitConfig(epochs=2000, tol=0.0, patience=10**6)).model
    losses = fit_model(m, pts, FitConfig(epochs=20, lr_mu=1e-5, lr_scale=1e-5, lr_rot=1e-5)).losses
    assert np.abs(np.diff(losses)).max() < 1e-6


def test_fit_keeps_invariants(rng):
    pts = rng.normal(size=(200, 3)) * [3.0, 1.0, 0.01]
    res = fit_model(init_model(pts, 8), pts, FitConfig(epochs=60, lr_scale=0.1))
    m = res.model
    assert np.all(m.log_scales >= m.s_min)
    np.testing.assert_allclose(np.linalg.norm(m.rot, axis=1), 1.0, atol=1e-12)
    assert res.losses[-1] < res.losses[0]
    # non-increasing over a trailing window
    w = 10
    assert min(res.losses[-w:]) <= min(res.losses[-2 * w : -w]) + 1e-9


def test_fit_early_stop(rng):
    pts = rng.normal(size=(50, 3))
    res = fit_model(init_model(pts, 1, s_disc=10.0), pts, FitConfig(epochs=5000))
    assert len(res.losses) < 5000


def test_nonfinite_loss_names_gaussian(rng):
    # a diverged Gaussian
    m = GaussianModel([[0, 0, 0], [5, 5, np.nan]], np.zeros((2, 3)), np.tile([1.0, 0, 0, 0], (2, 1)))
    with pytest.raises(ModelFitError) as e:
        fit_model(m, rng.normal(size=(10, 3)))
    assert e.value.gaussian == 1


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31))
def test_clamp_holds_after_every_step(seed):
    r = np.random.default_rng(seed)
    pts = r.normal(size=(40, 3)) * [1.0, 1.0, 1e-4]
    m = init_model(pts, 2, s_disc=-10.0)
    for _ in range(5):
        m = fit_model(m, pts, FitConfig(epochs=3, lr_scale=0.5)).model
        assert np.all(m.effective_log_scales >= m.s_min)
        assert np.all(m.log_scales >= m.s_min)


def test_model_dump_roundtrip(tmp_path, rng):
    m = GaussianModel(rng.normal(size=(4, 3)), rng.normal(size=(4, 3)), rng.normal(size=(4, 4)))
    write_model(m, tmp_path / "m.txt")
    lines = (tmp_path / "m.txt").read_text().splitlines()
    assert len(lines) == 4 and all(len(l.split()) == 10 for l in lines)
    back = read_model(tmp_path / "m.txt")
    np.testing.assert_allclose(back.covariances(), m.covariances(), rtol=1e-7, atol=1e-9)
