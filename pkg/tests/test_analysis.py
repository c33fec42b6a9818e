import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sgpp_lab import analysis as an
from sgpp_lab import geometry as g
from sgpp_lab import guidance as gd
from sgpp_lab import samplers as s
from sgpp_lab import score_field as sf
from sgpp_lab.errors import NoConvergence, UnassignableState


# --------------------------------------------------------------------------
# contraction

def _descent(f, m, x_ref, sigma, fraction=0.5, seed=0, steps=30):
    grid = s.make_time_grid(0.9, 1e-3, steps, "geometric")
    return s.run_sgpp_descent(f, m, grid, gd.GuidanceParams(sigma, x_ref), 2,
                              s.StepRule("fraction", fraction), rng=s.RngStream(seed))


def test_unit_contraction_on_the_manifold_needs_no_forcing(circle):
    m, f = circle
    tr = _descent(f, m, [1.0, 0.0], 0.2)
    rep = an.normal_trace(tr, m)
    assert np.allclose(rep.lam, 1.0)
    assert rep.violations == 0
    assert rep.calibrated_C_N >= 0
    assert len(rep.rows()) == len(tr) - 1


def test_contraction_with_frozen_constant(circle):
    from sgpp_lab.verification import FROZEN_C_N
    m, f = circle
    for seed, x_ref in enumerate([[1.2, 0.3], [0.0, 1.1], [-0.7, -0.6]]):
        tr = _descent(f, m, x_ref, 0.2, seed=seed)
        assert an.normal_trace(tr, m, FROZEN_C_N[("circle", 0.2)]).violations == 0


def test_oversized_steps_break_the_bound(circle):
    from sgpp_lab.verification import FROZEN_C_N
    m, f = circle
    tr = s.run_sgpp_descent(f, m, s.make_time_grid(0.9, 1e-3, 30, "geometric"),
                            gd.GuidanceParams(0.2, [1.2, 0.3]), 2, s.StepRule("fraction", 1.5),
                            rng=[s.RngStream(0)])[0]
    rep = an.normal_trace(tr, m, FROZEN_C_N[("circle", 0.2)])
    assert rep.violations > 0
    assert np.all(rep.lam > 2.0)


def test_contraction_requires_full_recording(circle):
    m, f = circle
    grid = s.make_time_grid(0.9, 0.1, 4)
    tr = s.run_sgpp_descent(f, m, grid, gd.GuidanceParams(0.2, [1.0, 0.0]), record_every=2,
                            rng=s.RngStream(0))
    with pytest.raises(ValueError):
        an.normal_trace(tr, m)
    ode = s.integrate_posterior_ode(f, grid, gd.GuidanceParams(0.2, [1.0, 0.0]), rng=s.RngStream(0))
    with pytest.raises(ValueError):
        an.normal_trace(ode, m)


def test_calibration_is_the_max_over_trajectories(circle):
    m, f = circle
    trs = [_descent(f, m, x, 0.2, seed=i) for i, x in enumerate([[1.3, 0.0], [0.0, 0.8]])]
    c = an.calibrate_forcing_constant(trs, m)
    assert c == max(an.normal_trace(tr, m).calibrated_C_N for tr in trs)
    assert all(an.normal_trace(tr, m, c).violations == 0 for tr in trs)


# --------------------------------------------------------------------------
# drift

def test_drift_vanishes_at_the_map_on_a_uniform_circle(circle):
    m, f = circle
    t = 0.2
    p = gd.GuidanceParams(0.2, [2.0, 0.0])
    # point on M_t at the MAP angle: tangential fidelity pull and density gradient both vanish
    rep = an.drift_probe(f, m, t, p, [[1 - t, 0.0]], 1e-4)
    assert np.linalg.norm(rep.v_tan) <= 1e-9
    assert rep.n_norm[0] <= 1e-12


def test_drift_error_grows_with_normal_offset(circle):
    m, f = circle
    t = 0.1
    p = gd.GuidanceParams(0.2, [0.0, 2.0])
    eta = 0.05 * gd.max_stable_step(t, 0.2)
    angles = np.linspace(0.2, 1.2, 6)
    errs = []
    for depth in (0.05, 0.1, 0.2):
        r = (1 - t) * (1 - depth)
        pts = r * np.stack([np.cos(angles), np.sin(angles)], axis=1)
        rep = an.drift_probe(f, m, t, p, pts, eta)
        assert np.allclose(rep.n_norm, (1 - t) * depth)
        errs.append(rep.relative_error.max())
    assert errs[0] < errs[1] < errs[2]


def test_drift_slack_reports_what_the_bound_needs(segment):
    m, f = segment
    t = 0.2
    p = gd.GuidanceParams(0.2, [0.3, 0.5])
    eta = 0.5 * gd.max_stable_step(t, 0.2)
    pts = np.array([[-0.3, 0.05], [0.0, -0.08], [0.4, 0.1]])
    rep = an.drift_probe(f, m, t, p, pts, eta)
    c = max(0.0, float(rep.implied_slack.max()))
    assert an.drift_probe(f, m, t, p, pts, eta, c).violations == 0


# --------------------------------------------------------------------------
# MAP oracle and fixed point

def test_map_of_uniform_circle_is_radial():
    sol = an.map_oracle(g.circle(), [2.0, 0.0], 0.2)
    assert np.linalg.norm(sol.argmax_point - [1.0, 0.0]) <= sol.grid_resolution


def test_map_with_flat_fidelity_is_the_density_mode():
    m = g.circle(density=g.VonMises(4.0, 1.0))
    sol = an.map_oracle(m, [0.0, 0.0], 1e6)
    assert abs(sol.argmax_param - 1.0) <= sol.grid_resolution


def test_map_sits_between_mode_and_reference():
    m = g.circle(density=g.VonMises(2.0, 0.0))
    sol = an.map_oracle(m, [0.0, 1.3], 0.3)
    assert 0.0 < sol.argmax_param < np.pi / 2


def test_map_refinement_moves_less_than_a_cell():
    m = g.two_moons()
    a = an.map_oracle(m, [0.4, 0.9], 0.1, 1000)
    b = an.map_oracle(m, [0.4, 0.9], 0.1, 100_000)
    assert np.linalg.norm(a.argmax_point - b.argmax_point) <= a.grid_resolution
    with pytest.raises(ValueError):
        an.map_oracle(m, [0.0, 0.0], 0.1, 999)


def test_fixed_point_of_two_pulls():
    m = g.segment()
    f = sf.DiscreteSupportScore([[0.0, 0.0]])
    fp = an.fixed_point_solve(f, m, 0.5, gd.GuidanceParams(0.5, [1.0, 0.0]))
    assert np.allclose(fp.x_star, [2.0 / 9.0, 0.0], atol=1e-9)
    assert fp.n_star_norm <= 1e-12


def test_fixed_point_no_convergence():
    m = g.segment()
    f = sf.DiscreteSupportScore([[0.0, 0.0]])
    with pytest.raises(NoConvergence):
        an.fixed_point_solve(f, m, 0.5, gd.GuidanceParams(0.5, [1.0, 0.0]), max_iters=3,
                             eta_step=1e-3)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.05, 0.9), st.floats(0.05, 2.0), st.floats(-1.0, 1.0), st.floats(-1.0, 1.0))
def test_fixed_point_is_stationary(t, sigma, a, b):
    m = g.segment()
    f = sf.DiscreteSupportScore([[-0.5, 0.0], [0.5, 0.0]], [0.3, 0.7])
    p = gd.GuidanceParams(sigma, [a, b])
    tol = 1e-10
    eta = 0.5 * gd.max_stable_step(t, sigma)
    fp = an.fixed_point_solve(f, m, t, p, tol=tol)
    assert np.linalg.norm(gd.sgpp_force(f, fp.x_star, t, p).total) * eta <= 2 * tol


@settings(max_examples=100, deadline=None)
@given(st.floats(1e-3, 0.999), st.floats(1e-3, 10.0))
def test_equilibrium_factor_is_below_both_variances(t, sigma):
    v = an.normal_equilibrium_factor(t, sigma)
    s2 = gd.sigma_p_of_t(t, sigma) ** 2
    assert v <= min(t * t, s2) * (1 + 1e-12)
    assert v == pytest.approx(1 / (1 / t ** 2 + 1 / s2), rel=1e-12)


# --------------------------------------------------------------------------
# posterior frequencies

def test_posterior_oracle_values():
    atoms = [[0.0, 0.0], [1.0, 0.0]]
    w = an.posterior_oracle_discrete(atoms, [0.5, 0.5], [0.0, 0.0], 0.5)
    assert w[0] == pytest.approx(0.8807970779778823, abs=1e-12)
    assert np.allclose(an.posterior_oracle_discrete(atoms, [0.5, 0.5], [0.5, 0.0], 0.3), 0.5)
    assert np.allclose(an.posterior_oracle_discrete(atoms, [0.2, 0.8], [0.5, 0.0], 1e8), [0.2, 0.8])


def test_frequency_check_accepts_oracle_draws_and_rejects_wrong_oracle():
    atoms = np.array([[0.0, 0.0], [1.0, 0.0]])
    rng = np.random.default_rng(0)
    w = np.array([0.8807970779778823, 1 - 0.8807970779778823])
    pick = rng.choice(2, size=2000, p=w)
    X = atoms[pick] + 1e-4 * rng.standard_normal((2000, 2))
    rep = an.posterior_frequency_check(X, atoms, w)
    assert rep.passed and rep.well_separated
    assert rep.counts.sum() == 2000
    assert not an.posterior_frequency_check(X, atoms, [0.5, 0.5]).passed


def test_unassignable_terminal_states():
    atoms = np.array([[0.0, 0.0], [1.0, 0.0]])
    with pytest.raises(UnassignableState):
        an.posterior_frequency_check(np.array([[0.5, 0.4], [0.0, 0.0]]), atoms, [0.5, 0.5])


# --------------------------------------------------------------------------
# hard limit

def test_hard_limit_error_decreases(circle):
    m, f = circle
    errs = an.hard_limit_error(f, np.array([0.3, 0.2]), 0.5, [0.0, 1.0], [1e-1, 1e-2, 1e-3])
    e = [v for _, v in errs]
    assert e[0] > e[1] > e[2]
    # quadratic in sigma
    assert e[1] / e[0] == pytest.approx(e[2] / e[1], rel=0.05)
    assert e[2] / e[1] == pytest.approx(1e-2, rel=0.05)


def test_hard_limit_at_the_reference_anchor(circle):
    m, f = circle
    y0 = np.array([0.0, 1.0])
    t = 0.5
    errs = an.hard_limit_error(f, y0, t, y0, [1e-1, 1e-2, 1e-3])
    # at x = y0 the reference pull is -(1 - t) sigma^2 / s^2 * y0 exactly
    for sigma, e in errs:
        s2 = gd.sigma_p_of_t(t, sigma) ** 2
        assert e == pytest.approx((1 - t) * sigma ** 2 / s2, rel=1e-10)
    with pytest.raises(ValueError):
        an.hard_limit_error(f, y0, t, y0, [1e-3, 1e-1])
