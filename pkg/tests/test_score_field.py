import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import multivariate_normal

from sgpp_lab import geometry as g
from sgpp_lab import score_field as sf
from sgpp_lab.errors import TimeOutOfRange

times = st.floats(0.02, 0.98)
coords = st.floats(-2, 2, allow_nan=False)


def test_single_atom_score_is_linear_pull():
    f = sf.DiscreteSupportScore([[1.0, 2.0]])
    x = np.array([0.3, -0.4])
    t = 0.4
    assert np.allclose(f.score(x, t), ((1 - t) * np.array([1.0, 2.0]) - x) / t ** 2)


def test_log_density_matches_scipy_mixture():
    atoms = np.array([[0.0, 0.0], [1.0, 0.5], [-0.5, 1.0]])
    w = np.array([0.2, 0.5, 0.3])
    f = sf.DiscreteSupportScore(atoms, w)
    x, t = np.array([0.1, 0.7]), 0.35
    ref = sum(wi * multivariate_normal((1 - t) * a, t * t * np.eye(2)).pdf(x) for a, wi in zip(atoms, w))
    assert f.log_density(x, t) == pytest.approx(np.log(ref), rel=1e-12)


def test_gmm_log_density_matches_scipy():
    means = [[0.0, 0.0], [1.0, 1.0]]
    covs = [[[0.2, 0.05], [0.05, 0.1]], np.eye(2) * 0.3]
    f = sf.GmmScore(means, covs, [0.4, 0.6])
    x, t = np.array([0.5, -0.2]), 0.3
    ref = sum(w * multivariate_normal((1 - t) * np.array(mu), (1 - t) ** 2 * np.array(c) + t * t * np.eye(2)).pdf(x)
              for mu, c, w in zip(means, covs, [0.4, 0.6]))
    assert f.log_density(x, t) == pytest.approx(np.log(ref), rel=1e-12)


@settings(max_examples=60, deadline=None)
@given(coords, coords, times)
def test_score_is_gradient_of_log_density(x, y, t):
    f = sf.from_manifold(g.two_moons(), 64)
    p = np.array([x, y])
    h = 1e-5
    fd = np.array([(f.log_density(p + h * e, t) - f.log_density(p - h * e, t)) / (2 * h) for e in np.eye(2)])
    a = f.score(p, t)
    assert np.linalg.norm(a - fd) <= 1e-5 * max(1.0, np.linalg.norm(a))


@settings(max_examples=60, deadline=None)
@given(coords, coords, times)
def test_ve_transform_recovers_score(x, y, t):
    for f in (sf.DiscreteSupportScore([[0.0, 0.0], [1.0, 0.0]]),
              sf.GmmScore([[0.0, 1.0]], [np.eye(2) * 0.1])):
        p = np.array([x, y])
        a = f.score(p, t)
        assert np.allclose(sf.rf_score_via_ve(f, p, t), a, rtol=1e-10, atol=1e-12)


def test_batched_evaluation_matches_rowwise():
    f = sf.from_manifold(g.circle(), 128)
    X = np.random.default_rng(0).normal(size=(7, 2))
    batch = f.score(X, 0.3)
    rows = np.stack([f.score(x, 0.3) for x in X])
    assert np.array_equal(batch, rows)


def test_tweedie_matches_direct_posterior_mean():
    f = sf.from_manifold(g.circle(), 64)
    x = np.array([0.3, 0.4])
    assert np.allclose(sf.posterior_mean(f, x, 0.3), f.posterior_mean(x, 0.3), atol=1e-13)


def test_velocity_of_point_mass_at_origin():
    # data at the origin: x_t = t z and v = dx/dt = x / t
    f = sf.DiscreteSupportScore([[0.0, 0.0]])
    x = np.array([0.3, -0.6])
    assert np.allclose(sf.rf_velocity(f, x, 0.5), x / 0.5)


@pytest.mark.parametrize("t", [0.0, 1.0, -0.1, 1.5])
def test_time_must_be_open_interval(t):
    f = sf.DiscreteSupportScore([[0.0, 0.0]])
    with pytest.raises(TimeOutOfRange):
        f.score(np.zeros(2), t)


def test_weights_must_sum_to_one():
    with pytest.raises(ValueError):
        sf.DiscreteSupportScore([[0.0, 0.0], [1.0, 0.0]], [0.5, 0.6])


def test_gmm_rejects_indefinite_covariance():
    with pytest.raises(ValueError):
        sf.GmmScore([[0.0, 0.0]], [[[1.0, 2.0], [2.0, 1.0]]])


def test_discretised_manifold_weights_follow_density():
    m = g.circle(density=g.VonMises(2.0, 0.0))
    f = sf.from_manifold(m, 400)
    ang = np.arctan2(f.atoms[:, 1], f.atoms[:, 0])
    ref = np.exp(2.0 * np.cos(ang))
    assert np.allclose(f.weights, ref / ref.sum(), rtol=1e-12)


def test_decomposition_residual_shrinks_on_uniform_segment():
    m = g.segment()
    f = sf.from_manifold(m, 2048)
    for t in (0.1, 0.05):
        x = (1 - t) * np.array([0.2, 0.0]) + np.array([0.0, 0.05])
        r = sf.decomposition_residual(m, f, x, t)
        assert r.residual_norm / (0.05 / t ** 2) <= 0.5


def test_decomposition_ratios_regression():
    # frozen from a reference run on the unit circle, |n| = 0.05, angle 0.3 * 2 pi
    m = g.circle()
    f = sf.from_manifold(m, 4096)
    par = 0.3 * 2 * np.pi
    out = []
    for t in (0.2, 0.1, 0.05, 0.025):
        x = (1 - t) * m.pieces[0].point(par) + 0.05 * m.pieces[0].normal(par)
        out.append(sf.decomposition_residual(m, f, x, t).residual_norm / (0.05 / t ** 2))
    assert np.allclose(out, [0.022041417, 0.005536499, 0.0012992986, 0.00031174150], rtol=1e-6)


@pytest.mark.parametrize("t", [0.2, 0.1, 0.05])
def test_uniform_circle_score_matches_bessel_form(t):
    # p_t(x) ~ exp(-(rho^2 + R^2) / 2t^2) I0(rho R / t^2) with R = 1 - t
    from scipy.special import ive

    m = g.circle()
    f = sf.from_manifold(m, 4096)
    R = 1 - t
    x = (R + 0.05) * np.array([np.cos(1.1), np.sin(1.1)])
    rho = np.linalg.norm(x)
    z = rho * R / t ** 2
    radial = -rho / t ** 2 + R / t ** 2 * ive(1, z) / ive(0, z)
    assert np.allclose(f.score(x, t), radial * x / rho, rtol=1e-8)
    predicted = -0.05 / t ** 2 - 0.5 / R
    r = sf.decomposition_residual(m, f, x, t)
    assert r.residual_norm == pytest.approx(abs(radial - predicted), rel=1e-5)
