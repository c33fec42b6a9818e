"""Time grids, seeded streams and the trajectory generators.

Every sampler integrates a *batch* of paths at once.  Pass a single
:class:`RngStream` to get one :class:`Trajectory` back (divergence raises
:class:`~sgpp_lab.errors.DivergedTrajectory`), or a sequence of streams to
get a list (divergence is recorded in ``Trajectory.status``).  Each path
draws only from its own stream and every reduction runs along a per-path
axis, so a path's bits do not depend on the batch it was integrated in.
"""

from __future__ import annotations

import enum
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import geometry
from .errors import BadRange, DivergedTrajectory, OutsideTube, StepTooCoarse, ZeroSteps
from .guidance import (
    GuidanceParams,
    dps_step,
    max_stable_step,
    posterior_velocity,
    rf_inversion_field,
    sde_coefficients,
    sgpp_force,
)
from .score_field import rf_velocity

EPS_START = 1e-3
EPS_END = 1e-3
DIVERGENCE_RADIUS = 1e6

__all__ = [
    "Method", "TimeGrid", "RngStream", "Trajectory", "StepRule",
    "make_time_grid", "run_sgpp_descent", "integrate_posterior_ode",
    "integrate_sgpp_sde", "run_rf_inversion", "run_dps", "run_ensemble",
]


class Method(str, enum.Enum):
    SGPP_DESCENT = "SGPP_DESCENT"
    POSTERIOR_ODE = "POSTERIOR_ODE"
    SGPP_SDE = "SGPP_SDE"
    DPS = "DPS"
    RF_INVERSION = "RF_INVERSION"


@dataclass(frozen=True, eq=False)
class TimeGrid:
    times: np.ndarray
    spacing: str = "uniform"

    def __post_init__(self):
        times = np.array(self.times, dtype=float)
        if times.ndim != 1 or len(times) < 2:
            raise ZeroSteps("a time grid needs at least two times")
        if np.any(np.diff(times) >= 0):
            raise BadRange("grid times must be strictly decreasing")
        if times[-1] <= 0 or times[0] >= 1:
            raise BadRange("grid times must lie in (0, 1)")
        times.setflags(write=False)
        object.__setattr__(self, "times", times)

    def __len__(self):
        return len(self.times)

    def __iter__(self):
        return iter(self.times)

    def __getitem__(self, k):
        return self.times[k]

    @property
    def steps(self):
        return len(self.times) - 1


def make_time_grid(t_start, t_end, steps, spacing="uniform") -> TimeGrid:
    """Decreasing grid ``t_start = t_0 > ... > t_steps = t_end``.

    The endpoints are clamped to ``[EPS_END, 1 - EPS_START]``.  Geometric
    spacing keeps ``t_{k+1} / t_k`` constant, which concentrates points near
    ``t_end``.
    """
    if steps < 1:
        raise ZeroSteps(f"steps must be >= 1, got {steps}")
    if not 0.0 < t_end < t_start < 1.0:
        raise BadRange(f"need 0 < t_end < t_start < 1, got ({t_start}, {t_end})")
    t_start = min(t_start, 1.0 - EPS_START)
    t_end = max(t_end, EPS_END)
    if not t_end < t_start:
        raise BadRange("grid collapses after clamping to the open interval")
    if spacing == "uniform":
        times = np.linspace(t_start, t_end, steps + 1)
    elif spacing == "geometric":
        times = t_start * (t_end / t_start) ** (np.arange(steps + 1) / steps)
    else:
        raise ValueError(f"unknown spacing {spacing!r}")
    times[0], times[-1] = t_start, t_end
    return TimeGrid(times, spacing)


@dataclass(frozen=True)
class RngStream:
    """Independent random stream ``stream_id`` of ``master_seed``."""

    master_seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(self.master_seed, spawn_key=(self.stream_id,))
        return np.random.default_rng(seq)


@dataclass(frozen=True)
class StepRule:
    """Step size for proximal descent: ``fixed`` or a ``fraction`` of the stability bound."""

    kind: str = "fraction"
    value: float = 0.5

    def __post_init__(self):
        if self.kind not in ("fixed", "fraction"):
            raise ValueError(f"unknown step rule {self.kind!r}")
        if not self.value > 0:
            raise ValueError("step rule value must be > 0")

    @classmethod
    def parse(cls, text):
        kind, _, value = str(text).partition(":")
        return cls(kind.strip(), float(value or 0.5))

    def __str__(self):
        return f"{self.kind}:{self.value!r}"

    def size(self, t, sigma_p, guided=True):
        if self.kind == "fixed":
            return self.value
        if guided:
            return self.value * max_stable_step(t, sigma_p)
        return self.value * 2.0 * t * t


@dataclass(eq=False)
class Trajectory:
    """Records of one path, ordered by non-increasing time."""

    method: Method
    times: np.ndarray
    points: np.ndarray
    normal_distance: np.ndarray | None
    params: GuidanceParams | None
    seed: tuple
    status: str = "ok"
    step_sizes: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.times)

    @property
    def records(self):
        nd = self.normal_distance
        return [(float(t), x, None if nd is None else float(nd[k]))
                for k, (t, x) in enumerate(zip(self.times, self.points))]

    @property
    def terminal(self):
        return self.points[-1]

    @property
    def diverged(self):
        return self.status == "diverged"


def _as_streams(rng):
    if isinstance(rng, RngStream):
        return [rng], True
    if rng is None:
        return [RngStream(0, 0)], True
    streams = list(rng)
    if not streams or not all(isinstance(s, RngStream) for s in streams):
        raise TypeError("rng must be an RngStream or a non-empty sequence of them")
    return streams, False


class _Batch:
    """Shared bookkeeping: noise, records, divergence and normal distances."""

    def __init__(self, method, rng, dim, params=None, manifold=None, record_every=1, meta=None):
        if record_every < 1:
            raise ValueError("record_every must be >= 1")
        self.method = method
        self.streams, self.single = _as_streams(rng)
        self.gens = [s.generator() for s in self.streams]
        self.dim = dim
        self.params = params
        self.manifold = manifold
        self.record_every = record_every
        self.meta = dict(meta or {})
        self.meta["record_every"] = record_every
        M = len(self.streams)
        self.alive = np.ones(M, dtype=bool)
        self.n_records = np.zeros(M, dtype=int)
        self._times, self._points, self._nd, self._eta = [], [], [], []
        self._counter = 0

    @property
    def size(self):
        return len(self.streams)

    def normal(self, *shape):
        return np.stack([g.standard_normal(shape) for g in self.gens])

    def _normal_distance(self, t, X):
        if self.manifold is None:
            return None
        mt = geometry.scale_manifold(self.manifold, 1.0 - t)
        return geometry.project_many(mt, X).distance

    def _record(self, t, X, eta):
        self._times.append(float(t))
        self._points.append(X.copy())
        self._nd.append(self._normal_distance(t, X))
        self._eta.append(eta)
        self.n_records[self.alive] += 1

    def start(self, t, X):
        self._record(t, X, None)
        return X

    def advance(self, t, X_old, X_new, last=False, eta=None):
        """Accept an update; paths that left the ball are frozen and marked."""
        bad = ~np.all(np.isfinite(X_new), axis=-1)
        bad |= np.linalg.norm(np.where(np.isfinite(X_new), X_new, 0.0), axis=-1) > DIVERGENCE_RADIUS
        bad &= self.alive
        if np.any(bad):
            self.alive &= ~bad
        X = np.where(self.alive[:, None], X_new, X_old)
        self._counter += 1
        if last or self._counter % self.record_every == 0:
            self._record(t, X, eta)
        return X

    def finish(self):
        T = np.array(self._times)
        P = np.stack(self._points, axis=1)  # (M, K, D)
        has_nd = self.manifold is not None
        ND = np.stack(self._nd, axis=1) if has_nd else None
        has_eta = any(e is not None for e in self._eta)
        E = np.array([np.nan if e is None else e for e in self._eta]) if has_eta else None
        out = []
        for i, s in enumerate(self.streams):
            k = self.n_records[i]
            out.append(Trajectory(
                method=self.method,
                times=T[:k].copy(),
                points=P[i, :k].copy(),
                normal_distance=None if ND is None else ND[i, :k].copy(),
                params=self.params,
                seed=(s.master_seed, s.stream_id),
                status="ok" if self.alive[i] else "diverged",
                step_sizes=None if E is None else E[:k].copy(),
                meta=dict(self.meta),
            ))
        if self.single:
            traj = out[0]
            if traj.diverged:
                raise DivergedTrajectory(
                    f"{self.method.value} path left the ball of radius {DIVERGENCE_RADIUS:g}", traj)
            return traj
        return out


def _broadcast_init(x_init, M, D):
    x = np.asarray(x_init, dtype=float)
    if x.shape == (D,):
        return np.tile(x, (M, 1))
    if x.shape == (M, D):
        return x.copy()
    raise ValueError(f"x_init must have shape ({D},) or ({M}, {D})")


# --------------------------------------------------------------------------
# samplers

def run_sgpp_descent(field_, m, grid: TimeGrid, p: GuidanceParams, steps_per_t=1,
                     step_rule=StepRule(), rng=None, tau=None, delta=None, record_every=1,
                     x_init=None):
    """Proximal gradient descent along a decreasing time grid.

    Starts from ``(1 - t_0) x_ref + t_0 Z`` (or ``x_init``) and performs ``steps_per_t``
    updates at every grid time.  Records the state after every update along
    with the step size; normal distances are measured against ``M_t`` for
    the time the update used.
    """
    if steps_per_t < 1:
        raise ValueError("steps_per_t must be >= 1")
    if m is not None and tau is not None and delta is not None:
        if not geometry.validate_tube(m, tau, delta):
            raise OutsideTube(f"tau={tau} violates tau * kappa_max <= 1 - delta={delta}")
    D = len(p.x_ref)
    b = _Batch(Method.SGPP_DESCENT, rng, D, p, m, record_every,
               {"steps_per_t": steps_per_t, "step_rule": str(step_rule)})
    t0 = grid[0]
    if x_init is None:
        X = (1.0 - t0) * p.x_ref + t0 * b.normal(D)
    else:
        X = _broadcast_init(x_init, b.size, D)
    X = b.start(t0, X)
    n_updates = len(grid) * steps_per_t
    k = 0
    for t in grid:
        guided = p.active(t)
        eta = step_rule.size(t, p.sigma_p, guided)
        for _ in range(steps_per_t):
            k += 1
            force = sgpp_force(field_, X, t, p).total if guided else field_.score(X, t)
            X = b.advance(t, X, X + eta * force, last=k == n_updates, eta=eta)
    return b.finish()


def _default_init(b, t0, D, x_init):
    if x_init is None:
        return t0 * b.normal(D)
    return _broadcast_init(x_init, b.size, D)


def integrate_posterior_ode(field_, grid: TimeGrid, p: GuidanceParams, x_init=None,
                            rng=None, m=None, record_every=1):
    """Explicit Euler on the conditional flow; unconditional below ``t_stop``."""
    D = len(p.x_ref)
    b = _Batch(Method.POSTERIOR_ODE, rng, D, p, m, record_every)
    X = b.start(grid[0], _default_init(b, grid[0], D, x_init))
    for k in range(grid.steps):
        t, dt = grid[k], grid[k + 1] - grid[k]
        v = posterior_velocity(field_, X, t, p) if p.active(t) else rf_velocity(field_, X, t)
        X = b.advance(grid[k + 1], X, X + dt * v, last=k == grid.steps - 1)
    return b.finish()


def integrate_sgpp_sde(field_, grid: TimeGrid, p: GuidanceParams, use_mixture=False, eta=None,
                       rng=None, m=None, likelihood="gaussian", x_init=None, record_every=1,
                       noise_chunk=512):
    """Euler-Maruyama on the guided reverse SDE.

    Increment ``drift * dt + diffusion * sqrt(|dt|) * xi`` with ``dt < 0``.
    Below ``t_stop`` the drift uses the unconditional score only.
    """
    t0, t1 = grid[0], grid[1]
    if np.sqrt(2 * t0 / (1 - t0)) * np.sqrt(t0 - t1) > 0.5:
        raise StepTooCoarse(
            f"diffusion * sqrt(dt) = {np.sqrt(2 * t0 / (1 - t0) * (t0 - t1)):.3g} > 0.5 at t={t0}")
    D = len(p.x_ref)
    b = _Batch(Method.SGPP_SDE, rng, D, p, m, record_every,
               {"use_mixture": use_mixture, "likelihood": likelihood,
                "eta": p.eta if eta is None else eta})
    X = b.start(t0, _default_init(b, t0, D, x_init))
    noise = None
    for k in range(grid.steps):
        j = k % noise_chunk
        if j == 0:
            noise = b.normal(min(noise_chunk, grid.steps - k), D)
        t, dt = grid[k], grid[k + 1] - grid[k]
        if p.active(t):
            drift, diff = sde_coefficients(field_, X, t, p, use_mixture, eta, likelihood)
        else:
            drift = -X / (1 - t) - 2 * t / (1 - t) * field_.score(X, t)
            diff = np.sqrt(2 * t / (1 - t))
        X_new = X + drift * dt + diff * np.sqrt(-dt) * noise[:, j]
        X = b.advance(grid[k + 1], X, X_new, last=k == grid.steps - 1)
    return b.finish()


def run_rf_inversion(field_, grid: TimeGrid, y0, eta, gamma, t_stop=0.0, rng=None, m=None,
                     record_every=1):
    """Inversion baseline.

    Forward phase: unconditional Euler from ``y0`` up the grid, then
    ``x <- (1 - gamma) x + gamma Z``.  Reverse phase: Euler on the
    controlled field in inversion time ``tau = 1 - t`` with weight ``eta``
    for ``t >= t_stop`` and zero afterwards.  Only the reverse phase is
    recorded; the inverted noise is kept in ``meta``.
    """
    if not (0.0 <= gamma <= 1.0 and 0.0 <= eta <= 1.0):
        raise ValueError("gamma and eta must lie in [0, 1]")
    y0 = np.asarray(y0, dtype=float)
    D = len(y0)
    b = _Batch(Method.RF_INVERSION, rng, D, None, m, record_every,
               {"eta": eta, "gamma": gamma, "t_stop": t_stop, "y0": y0.tolist()})
    X = np.tile(y0, (b.size, 1))
    times = grid.times
    for k in range(grid.steps, 0, -1):
        X = X + (times[k - 1] - times[k]) * rf_velocity(field_, X, times[k])
    X = (1.0 - gamma) * X + gamma * b.normal(D)
    X = b.start(times[0], X)
    for k in range(grid.steps):
        t = times[k]
        w = eta if t >= t_stop else 0.0
        v_tau = -rf_velocity(field_, X, t)
        V = rf_inversion_field(v_tau, X, 1.0 - t, y0, w)
        X = b.advance(times[k + 1], X, X + (t - times[k + 1]) * V, last=k == grid.steps - 1)
    return b.finish()


def run_dps(field_, grid: TimeGrid, x_ref, sigma_obs, step_scale, rng=None, m=None,
            record_every=1):
    """Posterior-sampling baseline: Euler on the unconditional flow from
    ``t_0 Z`` with the finite-difference DPS correction at every step."""
    if not sigma_obs > 0:
        raise ValueError("sigma_obs must be > 0")
    x_ref = np.asarray(x_ref, dtype=float)
    D = len(x_ref)
    b = _Batch(Method.DPS, rng, D, None, m, record_every,
               {"sigma_obs": sigma_obs, "step_scale": step_scale, "x_ref": x_ref.tolist()})
    X = b.start(grid[0], grid[0] * b.normal(D))
    for k in range(grid.steps):
        t, dt = grid[k], grid[k] - grid[k + 1]
        with np.errstate(over="ignore", invalid="ignore"):
            X_new = dps_step(field_, X, t, step_scale, x_ref, sigma_obs, dt)
        X = b.advance(grid[k + 1], X, X_new, last=k == grid.steps - 1)
    return b.finish()


def run_ensemble(generator: Callable, count: int, master_seed: int, jobs: int = 1,
                 first_stream: int = 0) -> list:
    """Run ``count`` paths; path ``i`` uses stream ``first_stream + i``.

    ``generator`` is called as ``generator(rng=[streams...])`` and must
    return a list of trajectories, e.g. ``functools.partial(integrate_sgpp_sde,
    field, grid, params)``.  With ``jobs > 1`` contiguous chunks run on a
    thread pool; the output order and bits do not depend on ``jobs``.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    streams = [RngStream(master_seed, first_stream + i) for i in range(count)]
    jobs = max(1, min(int(jobs), count))
    if jobs == 1:
        return list(generator(rng=streams))
    chunks = [list(c) for c in np.array_split(np.arange(count), jobs)]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        parts = list(pool.map(lambda idx: generator(rng=[streams[i] for i in idx]), chunks))
    return [traj for part in parts for traj in part]
