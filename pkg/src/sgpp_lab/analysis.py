"""Checks that turn trajectories and fields into pass/fail evidence.

Contraction of the normal displacement, the tangential drift bound, the
fixed point of the proximal update against a brute-force MAP search,
posterior frequencies against exact Bayes weights, and the hard-guidance
limit.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy.special import softmax

from . import geometry
from .errors import NoConvergence, UnassignableState
from .guidance import (
    GuidanceParams,
    max_stable_step,
    posterior_velocity,
    sgpp_force,
    sigma_p_of_t,
)
from .samplers import Method, Trajectory
from .score_field import check_time

__all__ = [
    "ContractionReport", "normal_trace", "calibrate_forcing_constant",
    "DriftReport", "drift_bound_check", "drift_probe", "MapSolution", "map_oracle",
    "FixedPoint", "fixed_point_solve", "normal_equilibrium_factor",
    "posterior_oracle_discrete", "FrequencyReport", "posterior_frequency_check",
    "hard_limit_error",
]


# --------------------------------------------------------------------------
# normal contraction

@dataclass(eq=False)
class ContractionReport:
    """Per-step contraction data; arrays are aligned by update index."""

    t: np.ndarray
    eta: np.ndarray
    n_before: np.ndarray
    n_after: np.ndarray
    lam: np.ndarray
    bound_rhs: np.ndarray
    satisfied: np.ndarray
    calibrated_C_N: float

    @property
    def violations(self):
        return int(np.count_nonzero(~self.satisfied))

    @property
    def excess(self):
        """Per-step forcing implied by the data, ``(n_after - (1 - lam) n_before) / eta``."""
        return (self.n_after - (1.0 - self.lam) * self.n_before) / self.eta

    def rows(self):
        return [
            {"t": float(t), "eta": float(e), "n": float(nb), "n_next": float(na),
             "lambda": float(lam), "bound_rhs": float(b), "satisfied": bool(s)}
            for t, e, nb, na, lam, b, s in zip(self.t, self.eta, self.n_before, self.n_after,
                                               self.lam, self.bound_rhs, self.satisfied)
        ]


def _update_steps(traj: Trajectory):
    if traj.step_sizes is None or traj.params is None:
        raise ValueError("trajectory carries no step sizes; use run_sgpp_descent output")
    if traj.meta.get("record_every", 1) != 1:
        raise ValueError("trajectory must record every update (record_every=1)")
    return traj.times[1:], traj.step_sizes[1:]


def normal_trace(traj: Trajectory, m: geometry.Manifold, c_n=None, rtol=1e-9) -> ContractionReport:
    """Contraction report for a proximal-descent trajectory.

    Both ``|n_k|`` and ``|n_{k+1}|`` are measured against ``M_t`` at the time
    of the update, so the comparison isolates the update itself from the
    motion of the manifold between grid times.  Requires a trajectory with
    every update recorded.  Without ``c_n`` the forcing constant is
    calibrated on this trajectory alone.
    """
    times, etas = _update_steps(traj)
    p = traj.params
    K = len(times)
    n_before, n_after, lam = np.empty(K), np.empty(K), np.empty(K)
    for k, (t, eta) in enumerate(zip(times, etas)):
        mt = geometry.scale_manifold(m, 1.0 - t)
        d = geometry.project_many(mt, traj.points[k:k + 2]).distance
        n_before[k], n_after[k] = d
        curv = 1.0 / (t * t)
        if p.active(t):
            curv += 1.0 / sigma_p_of_t(t, p.sigma_p) ** 2
        lam[k] = eta * curv
    if c_n is None:
        c_n = max(0.0, float(np.max((n_after - (1.0 - lam) * n_before) / etas))) if K else 0.0
    rhs = (1.0 - lam) * n_before + etas * c_n
    ok = n_after <= rhs + rtol * np.maximum(1.0, np.abs(rhs))
    return ContractionReport(times.copy(), etas.copy(), n_before, n_after, lam, rhs, ok, float(c_n))


def calibrate_forcing_constant(trajectories: Sequence[Trajectory], m: geometry.Manifold) -> float:
    """Smallest ``C_N`` for which every step of every trajectory satisfies the bound."""
    return max(normal_trace(tr, m).calibrated_C_N for tr in trajectories)


# --------------------------------------------------------------------------
# tangential drift

@dataclass(eq=False)
class DriftReport:
    t: np.ndarray
    eta: np.ndarray
    n_norm: np.ndarray
    measured: np.ndarray     # (K, D)
    v_tan: np.ndarray        # (K, D)
    error: np.ndarray
    bound: np.ndarray
    slack: float
    satisfied: np.ndarray

    @property
    def violations(self):
        return int(np.count_nonzero(~self.satisfied))

    @property
    def relative_error(self):
        vn = np.linalg.norm(self.v_tan, axis=-1)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(vn > 0, self.error / vn, 0.0)

    @property
    def implied_slack(self):
        """``(error - bound) / eta`` per step; its maximum calibrates ``c``."""
        return (self.error - self.bound) / self.eta


def _ideal_velocity(mt, pr, t, p: GuidanceParams):
    """Tangential density gradient plus the tangential fidelity pull at ``pi``."""
    T = pr.tangent_basis
    grad = geometry.intrinsic_log_density_gradient(mt, pr)
    v = grad
    if p.active(t):
        d = pr.pi - (1.0 - t) * p.x_ref
        v = v - (T.T @ (T @ d)) / sigma_p_of_t(t, p.sigma_p) ** 2
    return v


def drift_bound_check(traj: Trajectory, m: geometry.Manifold, c=0.0, rtol=1e-9) -> DriftReport:
    """Compare the tangential motion of the projection with the ideal velocity.

    For each update at time t the measured drift is ``(pi_{k+1} - pi_k) / eta_k``
    with both projections onto ``M_t``.  The step passes when
    ``|measured - v_tan| <= kappa |n_k| / (1 - kappa |n_k|) |v_tan| + c eta_k``.
    Steps whose projection is ambiguous are not expected in the tube and
    raise.
    """
    times, etas = _update_steps(traj)
    p = traj.params
    K, D = len(times), traj.points.shape[1]
    meas, ideal = np.empty((K, D)), np.empty((K, D))
    nn, bound = np.empty(K), np.empty(K)
    for k, (t, eta) in enumerate(zip(times, etas)):
        mt = geometry.scale_manifold(m, 1.0 - t)
        a = geometry.project(mt, traj.points[k])
        b = geometry.project(mt, traj.points[k + 1])
        meas[k] = (b.pi - a.pi) / eta
        ideal[k] = _ideal_velocity(mt, a, t, p)
        nn[k] = a.distance
        kn = mt.kappa_max * a.distance
        bound[k] = kn / (1.0 - kn) * np.linalg.norm(ideal[k]) if kn < 1 else np.inf
    err = np.linalg.norm(meas - ideal, axis=-1)
    rhs = bound + c * etas
    ok = err <= rhs + rtol * np.maximum(1.0, rhs)
    return DriftReport(times.copy(), etas.copy(), nn, meas, ideal, err, bound, float(c), ok)


def drift_probe(field, m: geometry.Manifold, t, p: GuidanceParams, points, eta, c=0.0) -> DriftReport:
    """Drift check for single updates from controlled starting points.

    Each row of ``points`` takes one proximal step of size ``eta`` at time
    ``t``; the report has one entry per row.
    """
    X = np.atleast_2d(np.asarray(points, dtype=float))
    X1 = X + eta * sgpp_force(field, X, t, p).total
    parts = []
    for x, x1 in zip(X, X1):
        tr = Trajectory(Method.SGPP_DESCENT, np.array([t, t]), np.stack([x, x1]), None, p,
                        (0, 0), step_sizes=np.array([np.nan, eta]))
        parts.append(drift_bound_check(tr, m, c))
    cat = lambda name: np.concatenate([getattr(r, name) for r in parts])
    return DriftReport(cat("t"), cat("eta"), cat("n_norm"), cat("measured"), cat("v_tan"),
                       cat("error"), cat("bound"), float(c), cat("satisfied"))


# --------------------------------------------------------------------------
# fixed point and MAP

class MapSolution(NamedTuple):
    argmax_point: np.ndarray
    argmax_param: float
    objective_value: float
    grid_resolution: float
    piece: int = 0


def map_oracle(m: geometry.Manifold, x_ref, sigma_p, grid_points=10_000) -> MapSolution:
    """Brute-force maximiser of ``log p_M(y) - |y - x_ref|^2 / (2 sigma_p^2)`` over ``y`` in M.

    The chart parameters of each piece are sampled uniformly, with the
    points shared between pieces in proportion to arclength.
    ``grid_resolution`` is the largest arclength spacing used.
    """
    if grid_points < 1000:
        raise ValueError("grid_points must be >= 1000")
    x_ref = np.asarray(x_ref, dtype=float)
    lengths = np.array([pc.length for pc in m.pieces])
    counts = np.maximum(2, np.round(grid_points * lengths / lengths.sum()).astype(int))
    best = None
    resolution = 0.0
    for j, (pc, n) in enumerate(zip(m.pieces, counts)):
        lo, hi = pc.param_range
        params = np.linspace(lo, hi, n, endpoint=not pc.full)
        resolution = max(resolution, (hi - lo) / (n if pc.full else n - 1) * pc.arclength_per_param())
        pts = pc.point(params)
        d = pts - x_ref
        obj = m.log_density(j, params) - (d * d).sum(axis=-1) / (2.0 * sigma_p ** 2)
        i = int(np.argmax(obj))
        if best is None or obj[i] > best[2]:
            best = (pts[i], float(params[i]), float(obj[i]), j)
    pt, param, val, j = best
    return MapSolution(pt.copy(), param, val, float(resolution), j)


class FixedPoint(NamedTuple):
    x_star: np.ndarray
    n_star_norm: float
    iterations: int


def normal_equilibrium_factor(t, sigma_p):
    """``t^2 s^2 / (t^2 + s^2)`` with ``s = sigma_p(t)``; multiplies ``C_N`` in the normal bound."""
    s2 = sigma_p_of_t(t, sigma_p) ** 2
    return t * t * s2 / (t * t + s2)


def fixed_point_solve(field, m: geometry.Manifold, t, p: GuidanceParams, max_iters=20_000,
                      tol=1e-10, eta_step=None, x_init=None) -> FixedPoint:
    """Iterate the proximal update at fixed ``t`` until ``|dx| <= tol``.

    The default step is half the stability bound and the default start is
    the projection of ``(1 - t) x_ref`` onto ``M_t``.
    """
    check_time(t)
    mt = geometry.scale_manifold(m, 1.0 - t)
    eta = 0.5 * max_stable_step(t, p.sigma_p) if eta_step is None else eta_step
    if x_init is None:
        x_init = geometry.project_many(mt, (1.0 - t) * p.x_ref[None]).pi[0]
    x = np.array(x_init, dtype=float)
    for it in range(1, max_iters + 1):
        dx = eta * sgpp_force(field, x, t, p).total
        x = x + dx
        if np.linalg.norm(dx) <= tol:
            n = geometry.project_many(mt, x[None]).distance[0]
            return FixedPoint(x, float(n), it)
    raise NoConvergence(f"no fixed point within {max_iters} iterations at t={t} (last |dx|={np.linalg.norm(dx):.3g})")


# --------------------------------------------------------------------------
# posterior frequencies

def posterior_oracle_discrete(atoms, weights, x_ref, sigma_p):
    """Exact Bayes weights of the atoms given a Gaussian observation of ``x_ref``."""
    atoms = np.asarray(atoms, dtype=float)
    d = atoms - np.asarray(x_ref, dtype=float)
    with np.errstate(divide="ignore"):
        logw = np.log(np.asarray(weights, dtype=float))
    return softmax(logw - (d * d).sum(axis=-1) / (2.0 * sigma_p ** 2))


@dataclass(eq=False)
class FrequencyReport:
    counts: np.ndarray
    frequencies: np.ndarray
    oracle: np.ndarray
    half_width: np.ndarray
    within: np.ndarray
    terminal_spread: float
    min_separation: float

    @property
    def passed(self):
        return bool(np.all(self.within))

    @property
    def well_separated(self):
        return self.min_separation >= 10.0 * self.terminal_spread


def posterior_frequency_check(ensemble, atoms, oracle_weights, n_sigma=3.0) -> FrequencyReport:
    """Assign terminal states to their nearest atom and compare with the oracle.

    Each atom passes when its empirical frequency lies within ``n_sigma``
    binomial standard deviations of the oracle weight.  A state farther
    than half the minimum atom separation from every atom is unassignable.
    """
    atoms = np.asarray(atoms, dtype=float)
    oracle = np.asarray(oracle_weights, dtype=float)
    X = np.stack([tr.terminal if isinstance(tr, Trajectory) else np.asarray(tr, dtype=float)
                  for tr in ensemble])
    if len(atoms) > 1:
        gap = atoms[:, None] - atoms[None]
        sep = np.sqrt((gap * gap).sum(-1))
        min_sep = float(sep[~np.eye(len(atoms), dtype=bool)].min())
    else:
        min_sep = np.inf
    diff = X[:, None] - atoms[None]
    dist = np.sqrt((diff * diff).sum(-1))
    nearest = np.argmin(dist, axis=1)
    dmin = dist[np.arange(len(X)), nearest]
    if np.isfinite(min_sep):
        bad = np.flatnonzero(dmin > 0.5 * min_sep)
        if len(bad):
            raise UnassignableState(
                f"{len(bad)} terminal states lie farther than {0.5 * min_sep:g} from every atom "
                f"(first: {X[bad[0]]})")
    M = len(X)
    counts = np.bincount(nearest, minlength=len(atoms))
    freq = counts / M
    hw = n_sigma * np.sqrt(oracle * (1.0 - oracle) / M)
    within = np.abs(freq - oracle) <= hw
    return FrequencyReport(counts, freq, oracle, hw, within, float(dmin.max()), min_sep)


# --------------------------------------------------------------------------
# hard-guidance limit

def hard_limit_error(field, x, t, y0, sigma_list):
    """Distance between the reference-driven velocity and ``(x - y0) / t``.

    The reference-driven part is the conditional velocity with the prior
    score's contribution removed.  Returns ``[(sigma_p, error), ...]``.
    """
    check_time(t)
    sig = np.asarray(sigma_list, dtype=float)
    if np.any(np.diff(sig) >= 0):
        raise ValueError("sigma_list must be strictly decreasing")
    x = np.asarray(x, dtype=float)
    y0 = np.asarray(y0, dtype=float)
    target = (x - y0) / t
    prior_term = t / (1.0 - t) * field.score(x, t)
    out = []
    for s in sig:
        p = GuidanceParams(float(s), y0)
        cond = posterior_velocity(field, x, t, p) + prior_term
        out.append((float(s), float(np.linalg.norm(cond - target))))
    return out
