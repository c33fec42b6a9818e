"""Reference testbeds and the property checks run by ``sgpp-lab verify``.

Each ``check_*`` function takes its thresholds as arguments, runs one
property on a fixed testbed and returns a :class:`CheckResult`.  The
frozen constants below come from :func:`calibrate_forcing_constant_for`
(see ``demos/calibrate_constants.py``) and are regression values, not
tuning knobs.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from functools import lru_cache, partial

import numpy as np

from . import analysis, geometry, guidance, samplers
from .score_field import DiscreteSupportScore, GmmScore, decomposition_residual, from_manifold, rf_score_via_ve

__all__ = [
    "CheckResult", "testbed", "TESTBEDS", "FROZEN_C_N", "CALIBRATION_DEPTH", "DESCENT_GRID",
    "calibrate_forcing_constant_for", "descent_ensemble",
    "check_score_gradient", "check_rf_ve", "check_decomposition", "check_contraction",
    "check_stability_asymptotics", "check_fixed_point_map", "check_posterior_frequencies",
    "check_hard_limit", "check_locking", "check_dps_trend", "CHECKS",
]

ATOMS = 512

# proximal width used by the contraction check on each testbed
CONTRACTION_SIGMA_P = {"circle": 0.2, "two_moons": 0.2}

# (testbed, sigma_p) -> tube depth of the calibration references
CALIBRATION_DEPTH = {
    ("circle", 0.2): 0.5,
    ("two_moons", 0.2): 0.2,
    ("circle", 0.05): 0.5,
    ("circle_vonmises", 0.05): 0.5,
}

# Calibrated forcing constants (192 references, seed 1000), keyed as above.
FROZEN_C_N = {
    ("circle", 0.2): 13.700781775149204,
    ("two_moons", 0.2): 6.0844437786502725,
    ("circle", 0.05): 200.72673893195721,
    ("circle_vonmises", 0.05): 200.16784221331136,
}

DESCENT_GRID = dict(t_start=0.9, t_end=1e-3, steps=60, spacing="geometric")
DESCENT_STEPS_PER_T = 2


@dataclass
class CheckResult:
    name: str
    passed: bool
    metric: float
    threshold: float
    detail: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self):
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] {self.name}: metric={self.metric:.6g} threshold={self.threshold:.6g} ({self.seconds:.2f}s)"


def _timed(fn):
    def wrapper(*args, **kwargs):
        t0 = time.perf_counter()
        res = fn(*args, **kwargs)
        res.seconds = time.perf_counter() - t0
        return res
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


# --------------------------------------------------------------------------
# testbeds

TESTBEDS = {
    "circle": lambda: geometry.circle(),
    "circle_vonmises": lambda: geometry.circle(density=geometry.VonMises(2.0, 0.0), name="circle_vonmises"),
    "segment": lambda: geometry.segment(),
    "segment_vonmises": lambda: geometry.segment(density=geometry.VonMises(1.0, 0.0), name="segment_vonmises"),
    "two_moons": lambda: geometry.two_moons(),
}


@lru_cache(maxsize=None)
def testbed(name, atom_count=ATOMS):
    """``(manifold, field)`` for a named testbed; cached, both immutable."""
    m = TESTBEDS[name]()
    return m, from_manifold(m, atom_count)


def two_atom_field():
    return DiscreteSupportScore([[0.0, 0.0], [1.0, 0.0]], [0.5, 0.5])


def descent_ensemble(name, x_refs, sigma_p, master_seed, step_rule=samplers.StepRule()):
    """One proximal-descent path per reference point; stream ``i`` for ``x_refs[i]``."""
    m, f = testbed(name)
    grid = samplers.make_time_grid(**DESCENT_GRID)
    out = []
    for i, x in enumerate(x_refs):
        p = guidance.GuidanceParams(sigma_p, x)
        out.extend(samplers.run_sgpp_descent(f, m, grid, p, DESCENT_STEPS_PER_T, step_rule,
                                             rng=[samplers.RngStream(master_seed, i)]))
    return out


def calibrate_forcing_constant_for(name, sigma_p, depth, count=128, seed=1000):
    """Forcing constant from a calibration ensemble: ``count`` references
    uniform in the tube of the given depth plus ``count // 2`` on its boundary."""
    m, _ = testbed(name)
    rng = np.random.default_rng(seed)
    inner, _ = geometry.tube_points(m, count, depth, rng)
    edge, _ = geometry.tube_points(m, count // 2, depth, rng, boundary=True)
    x_refs = np.concatenate([inner, edge])
    return analysis.calibrate_forcing_constant(descent_ensemble(name, x_refs, sigma_p, seed), m)


# --------------------------------------------------------------------------
# checks

@_timed
def check_score_gradient(probes=100, rtol=1e-5, seed=0):
    """Analytic scores against central differences of the log density."""
    rng = np.random.default_rng(seed)
    fields = {
        "discrete": testbed("circle_vonmises", 256)[1],
        "gmm": GmmScore([[0.0, 0.0], [1.0, 0.5], [-1.0, 1.0]],
                        [np.eye(2) * 0.1, [[0.2, 0.05], [0.05, 0.1]], np.eye(2) * 0.3],
                        [0.3, 0.3, 0.4]),
    }
    worst = {}
    for kind, f in fields.items():
        w = 0.0
        for _ in range(probes):
            t = rng.uniform(0.05, 0.95)
            x = 1.2 * rng.standard_normal(2)
            a = f.score(x, t)
            h = 1e-4 * t
            fd = np.array([(f.log_density(x + h * e, t) - f.log_density(x - h * e, t)) / (2 * h)
                           for e in np.eye(2)])
            w = max(w, np.linalg.norm(a - fd) / np.linalg.norm(a))
        worst[kind] = w
    metric = max(worst.values())
    return CheckResult("score_gradient", metric <= rtol, metric, rtol, worst)


@_timed
def check_rf_ve(probes=100, rtol=1e-10, seed=1):
    """Score through the variance-exploding transform against the direct score."""
    rng = np.random.default_rng(seed)
    fields = {"discrete": testbed("two_moons")[1],
              "gmm": GmmScore([[0.0, 0.0], [1.0, 1.0]], [np.eye(2) * 0.2, np.eye(2) * 0.05])}
    worst = {}
    for kind, f in fields.items():
        w = 0.0
        for _ in range(probes):
            t = rng.uniform(0.01, 0.99)
            x = 1.5 * rng.standard_normal(2)
            a = f.score(x, t)
            w = max(w, np.linalg.norm(rf_score_via_ve(f, x, t) - a) / np.linalg.norm(a))
        worst[kind] = w
    metric = max(worst.values())
    return CheckResult("rf_ve_equivalence", metric <= rtol, metric, rtol, worst)


@_timed
def check_decomposition(times=(0.2, 0.1, 0.05, 0.025), offset=0.05,
                        testbeds=("circle", "segment_vonmises"), positions=(0.3, 0.8)):
    """``residual / (|n| / t^2)`` must strictly decrease along ``times`` for
    every testbed and chart position (fraction of the parameter range)."""
    ratios = {}
    ok = True
    for name in testbeds:
        m, f = testbed(name, 4096)
        piece = m.pieces[0]
        lo, hi = piece.param_range
        for u in positions:
            par = lo + u * (hi - lo)
            seq = []
            for t in times:
                x = (1 - t) * piece.point(par) + offset * piece.normal(par)
                r = decomposition_residual(m, f, x, t)
                seq.append(r.residual_norm / (offset / t ** 2))
            ratios[f"{name}@{u}"] = seq
            ok &= bool(np.all(np.diff(seq) < 0))
    worst = max(max(np.diff(s)) for s in ratios.values())
    return CheckResult("score_decomposition", ok, worst, 0.0, ratios)


@_timed
def check_contraction(testbeds=("circle", "two_moons"), count=64, master_seed=0,
                      fraction=0.5, control_fraction=1.5, control_count=4, sigma_p=None):
    """Zero contraction violations at ``fraction`` of the stability bound and
    at least one violation for the oversized-step control."""
    detail = {}
    violations = 0
    control = 0
    for name in testbeds:
        sig = CONTRACTION_SIGMA_P[name] if sigma_p is None else sigma_p
        depth = CALIBRATION_DEPTH[(name, sig)]
        c_n = FROZEN_C_N[(name, sig)]
        m, _ = testbed(name)
        x_refs, _ = geometry.tube_points(m, count, depth, np.random.default_rng(master_seed))
        ens = descent_ensemble(name, x_refs, sig, master_seed, samplers.StepRule("fraction", fraction))
        v = sum(analysis.normal_trace(tr, m, c_n).violations for tr in ens)
        neg = descent_ensemble(name, x_refs[:control_count], sig, master_seed,
                               samplers.StepRule("fraction", control_fraction))
        cv = sum(analysis.normal_trace(tr, m, c_n).violations for tr in neg)
        detail[name] = {"C_N": c_n, "violations": v, "control_violations": cv}
        violations += v
        control += cv
    passed = violations == 0 and control >= 1
    return CheckResult("normal_contraction", passed, violations, 0, detail)


@_timed
def check_stability_asymptotics(t=1e-3, sigma_p=0.2, lo=0.99, hi=1.0):
    r = guidance.max_stable_step(t, sigma_p) / (2 * t * t)
    return CheckResult("stability_asymptotics", lo <= r <= hi, r, lo, {"ratio": r})


@_timed
def check_fixed_point_map(t=0.05, sigma_p=0.05, grid_points=10_000, max_cells=2.0,
                          sweep=(0.2, 0.1, 0.05)):
    """Projection of the fixed point against the brute-force MAP on ``M_t``,
    and ``n* / t^2`` against the frozen forcing constant over ``sweep``."""
    cases = {"circle": np.array([1.2, 0.3]), "circle_vonmises": np.array([0.0, 1.3])}
    detail = {}
    ok = True
    worst = 0.0
    for name, x_ref in cases.items():
        m, f = testbed(name)
        p = guidance.GuidanceParams(sigma_p, x_ref)
        fp = analysis.fixed_point_solve(f, m, t, p)
        mt = geometry.scale_manifold(m, 1 - t)
        mo = analysis.map_oracle(mt, (1 - t) * x_ref, guidance.sigma_p_of_t(t, sigma_p), grid_points)
        cells = np.linalg.norm(geometry.project(mt, fp.x_star).pi - mo.argmax_point) / mo.grid_resolution
        c_n = FROZEN_C_N[(name, sigma_p)]
        ratios = [analysis.fixed_point_solve(f, m, s, p).n_star_norm / s ** 2 for s in sweep]
        detail[name] = {"cells": float(cells), "n_over_t2": ratios, "C_N": c_n}
        ok &= cells <= max_cells and max(ratios) <= c_n
        worst = max(worst, cells)
    return CheckResult("fixed_point_map", bool(ok), worst, max_cells, detail)


@_timed
def check_posterior_frequencies(likelihood="gaussian", count=2000, master_seed=7, sigma_p=0.5,
                                steps=8000, n_sigma=3.0, oracle=None, jobs=1):
    """SGPP-SDE terminal assignments on two atoms against exact Bayes weights."""
    f = two_atom_field()
    x_ref = np.array([0.0, 0.0])
    p = guidance.GuidanceParams(sigma_p, x_ref)
    grid = samplers.make_time_grid(1 - samplers.EPS_START, samplers.EPS_END, steps)
    gen = partial(samplers.integrate_sgpp_sde, f, grid, p, likelihood=likelihood,
                  record_every=steps)
    ens = samplers.run_ensemble(gen, count, master_seed, jobs)
    if oracle is None:
        oracle = analysis.posterior_oracle_discrete(f.atoms, f.weights, x_ref, sigma_p)
    rep = analysis.posterior_frequency_check(ens, f.atoms, oracle, n_sigma)
    metric = float(np.max(np.abs(rep.frequencies - rep.oracle)))
    return CheckResult(f"posterior_frequencies[{likelihood}]", rep.passed, metric,
                       float(rep.half_width[0]),
                       {"frequencies": rep.frequencies.tolist(), "oracle": rep.oracle.tolist()})


@_timed
def check_hard_limit(sigmas=(1e-1, 1e-2, 1e-3), rel_tol=1e-3, sign_tol=1e-12, seed=3):
    m, f = testbed("circle")
    rng = np.random.default_rng(seed)
    t = 0.5
    x = rng.standard_normal(2)
    y0 = np.array([0.0, 1.0])
    errs = [e for _, e in analysis.hard_limit_error(f, x, t, y0, sigmas)]
    target = np.linalg.norm((x - y0) / t)
    v = rng.standard_normal(2)
    sign = np.linalg.norm(guidance.rf_inversion_field(v, x, 1 - t, y0, 1.0)
                          + guidance.hard_limit_velocity(x, t, y0))
    ok = bool(np.all(np.diff(errs) < 0) and errs[-1] <= rel_tol * target and sign <= sign_tol)
    return CheckResult("hard_limit", ok, errs[-1] / target, rel_tol,
                       {"errors": errs, "sign_identity": float(sign)})


def _rf_ensemble(t_stop, count, master_seed, eta, gamma, steps, y0):
    m, f = testbed("circle")
    grid = samplers.make_time_grid(1 - samplers.EPS_START, samplers.EPS_END, steps)
    streams = [samplers.RngStream(master_seed, i) for i in range(count)]
    return samplers.run_rf_inversion(f, grid, y0, eta, gamma, t_stop, rng=streams, m=m)


@_timed
def check_locking(count=64, master_seed=11, eta=0.8, gamma=0.5, steps=1000, lock_tol=1e-2,
                  lock_fraction=0.95, nd_tol=0.05, nd_fraction=0.9):
    """Guidance to t=0 locks onto the reference; stopping at 0.1 lands on
    the manifold farther from it."""
    y0 = np.array([0.0, 1.0])
    locked = _rf_ensemble(0.0, count, master_seed, eta, gamma, steps, y0)
    free = _rf_ensemble(0.1, count, master_seed, eta, gamma, steps, y0)
    d_lock = np.array([np.linalg.norm(tr.terminal - y0) for tr in locked])
    d_free = np.array([np.linalg.norm(tr.terminal - y0) for tr in free])
    nd_free = np.array([tr.normal_distance[-1] for tr in free])
    frac_lock = float(np.mean(d_lock <= lock_tol))
    frac_nd = float(np.mean(nd_free <= nd_tol))
    ok = frac_lock >= lock_fraction and frac_nd >= nd_fraction and d_free.mean() > d_lock.mean()
    return CheckResult("geometric_locking", bool(ok), frac_lock, lock_fraction,
                       {"locked_fraction": frac_lock, "on_manifold_fraction": frac_nd,
                        "mean_dist_locked": float(d_lock.mean()), "mean_dist_free": float(d_free.mean())})


def dps_off_fraction(trajs, nd_tol=0.05):
    return float(np.mean([tr.diverged or tr.normal_distance[-1] > nd_tol for tr in trajs]))


@_timed
def check_dps_trend(sigmas=(1.0, 0.5, 0.1, 0.05), count=64, master_seed=5, steps=500,
                    step_scale=1.0, nd_tol=0.05):
    m, f = testbed("two_moons")
    grid = samplers.make_time_grid(1 - samplers.EPS_START, samplers.EPS_END, steps)
    x_ref = np.array([0.0, 1.0])
    streams = [samplers.RngStream(master_seed, i) for i in range(count)]
    fr = []
    for s in sigmas:
        trs = samplers.run_dps(f, grid, x_ref, s, step_scale, rng=streams, m=m)
        fr.append(dps_off_fraction(trs, nd_tol))
    ok = bool(np.all(np.diff(fr) >= 0))
    return CheckResult("dps_instability_trend", ok, fr[-1], fr[0], {"fractions": dict(zip(sigmas, fr))})


CHECKS = {
    "score_gradient": check_score_gradient,
    "rf_ve_equivalence": check_rf_ve,
    "score_decomposition": check_decomposition,
    "normal_contraction": check_contraction,
    "stability_asymptotics": check_stability_asymptotics,
    "fixed_point_map": check_fixed_point_map,
    "posterior_frequencies": check_posterior_frequencies,
    "hard_limit": check_hard_limit,
    "geometric_locking": check_locking,
    "dps_instability_trend": check_dps_trend,
}
