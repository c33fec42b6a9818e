"""Exact geometry of one-dimensional data manifolds.

A manifold is a finite union of *pieces* (circular arcs and straight
segments) carrying a probability density per unit arclength.  Arcs live in
the plane of the first two ambient coordinates, shifted by their center, so
the same objects work for any ambient dimension ``D >= 2``.

Every piece has a chart parameter: the polar angle for arcs and the
arclength from the first endpoint for segments.  Densities are written in
terms of an *angular coordinate* of the chart (the angle itself for arcs,
``pi * (2 s / L - 1)`` for segments), which makes a homothety act on the
geometry alone while the density is transported with conserved mass.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy import integrate, special

from .errors import AmbiguousProjection, NonPositiveFactor, OutsideTube

TIE_TOL = 1e-9
TWO_PI = 2.0 * np.pi

__all__ = [
    "Uniform", "VonMises", "Arc", "Segment", "Manifold",
    "ProjectionResult", "ProjectionBatch", "CurvatureData",
    "circle", "segment", "arc_union", "two_moons",
    "project", "project_many", "curvature_data", "scale_manifold",
    "validate_tube", "intrinsic_log_density_gradient", "tube_points",
]


def _frozen_array(x, ndim=1):
    a = np.array(x, dtype=float)
    if a.ndim != ndim:
        raise ValueError(f"expected a {ndim}-d array, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("coordinates must be finite")
    a.setflags(write=False)
    return a


# --------------------------------------------------------------------------
# densities along a piece

@dataclass(frozen=True)
class Uniform:
    """Constant density along the piece."""

    def log_unnormalized(self, angle):
        return np.zeros_like(np.asarray(angle, dtype=float))


@dataclass(frozen=True)
class VonMises:
    """Density proportional to ``exp(concentration * cos(angle - mode))``."""

    concentration: float
    mode: float = 0.0

    def __post_init__(self):
        if not self.concentration >= 0:
            raise ValueError("concentration must be >= 0")

    def log_unnormalized(self, angle):
        return self.concentration * np.cos(np.asarray(angle, dtype=float) - self.mode)


# --------------------------------------------------------------------------
# pieces

@dataclass(frozen=True, eq=False)
class Arc:
    """Circular arc ``center + radius * (cos a, sin a, 0, ...)`` for ``a`` in [start, stop].

    An arc spanning ``2*pi`` is a full circle; its chart parameter is taken
    modulo ``2*pi`` and it has no boundary.
    """

    center: np.ndarray
    radius: float
    start: float = 0.0
    stop: float = TWO_PI

    def __post_init__(self):
        object.__setattr__(self, "center", _frozen_array(self.center))
        if self.center.shape[0] < 2:
            raise ValueError("arcs need an ambient dimension of at least 2")
        if not self.radius > 0:
            raise ValueError("radius must be > 0")
        span = self.stop - self.start
        if not 0 < span <= TWO_PI + 1e-12:
            raise ValueError("arc angular interval must be nonempty and at most 2*pi")

    @property
    def dim(self):
        return self.center.shape[0]

    @property
    def span(self):
        return self.stop - self.start

    @property
    def full(self):
        return self.span >= TWO_PI - 1e-12

    @property
    def length(self):
        return self.radius * self.span

    @property
    def curvature(self):
        return 1.0 / self.radius

    @property
    def param_range(self):
        return self.start, self.stop

    def arclength_per_param(self):
        return self.radius

    def angle(self, param):
        return np.asarray(param, dtype=float)

    def point(self, param):
        param = np.asarray(param, dtype=float)
        out = np.broadcast_to(self.center, param.shape + (self.dim,)).copy()
        out[..., 0] += self.radius * np.cos(param)
        out[..., 1] += self.radius * np.sin(param)
        return out

    def tangent(self, param):
        param = np.asarray(param, dtype=float)
        out = np.zeros(param.shape + (self.dim,))
        out[..., 0] = -np.sin(param)
        out[..., 1] = np.cos(param)
        return out

    def mean_curvature(self, param):
        # unit normal toward the center, scaled by 1/r
        param = np.asarray(param, dtype=float)
        out = np.zeros(param.shape + (self.dim,))
        out[..., 0] = -np.cos(param) / self.radius
        out[..., 1] = -np.sin(param) / self.radius
        return out

    def normal(self, param):
        # outward unit normal
        return -self.radius * self.mean_curvature(param)

    def scaled(self, factor):
        return Arc(self.center * factor, self.radius * factor, self.start, self.stop)

    def _project(self, X):
        w = X - self.center
        rho = np.hypot(w[:, 0], w[:, 1])
        phi = np.arctan2(w[:, 1], w[:, 0])
        delta = np.mod(phi - self.start, TWO_PI)
        ambiguous = rho < TIE_TOL
        if self.full:
            param = self.start + delta
            boundary = np.zeros(len(X), dtype=bool)
        else:
            inside = delta <= self.span
            d_start = np.linalg.norm(X - self.point(self.start), axis=-1)
            d_stop = np.linalg.norm(X - self.point(self.stop), axis=-1)
            end = np.where(d_start <= d_stop, self.start, self.stop)
            param = np.where(inside, self.start + delta, end)
            boundary = ~inside
            ambiguous = ambiguous | (boundary & (np.abs(d_start - d_stop) < TIE_TOL))
        pi = self.point(param)
        return pi, param, boundary, ambiguous


@dataclass(frozen=True, eq=False)
class Segment:
    """Straight segment from ``start`` to ``end``; chart parameter is arclength."""

    start: np.ndarray
    end: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "start", _frozen_array(self.start))
        object.__setattr__(self, "end", _frozen_array(self.end))
        if self.start.shape != self.end.shape:
            raise ValueError("segment endpoints must have the same dimension")
        if np.linalg.norm(self.end - self.start) == 0:
            raise ValueError("segment endpoints must be distinct")

    @property
    def dim(self):
        return self.start.shape[0]

    @property
    def length(self):
        return float(np.linalg.norm(self.end - self.start))

    @property
    def direction(self):
        return (self.end - self.start) / self.length

    @property
    def full(self):
        return False

    @property
    def curvature(self):
        return 0.0

    @property
    def param_range(self):
        return 0.0, self.length

    def arclength_per_param(self):
        return 1.0

    def angle(self, param):
        return np.pi * (2.0 * np.asarray(param, dtype=float) / self.length - 1.0)

    def point(self, param):
        param = np.asarray(param, dtype=float)
        return self.start + param[..., None] * self.direction

    def tangent(self, param):
        param = np.asarray(param, dtype=float)
        return np.broadcast_to(self.direction, param.shape + (self.dim,)).copy()

    def mean_curvature(self, param):
        param = np.asarray(param, dtype=float)
        return np.zeros(param.shape + (self.dim,))

    def normal(self, param):
        # in-plane unit normal, the tangent rotated by +90 degrees
        t = self.tangent(param)
        out = np.zeros_like(t)
        out[..., 0], out[..., 1] = -t[..., 1], t[..., 0]
        return out

    def scaled(self, factor):
        return Segment(self.start * factor, self.end * factor)

    def _project(self, X):
        s = ((X - self.start) * self.direction).sum(axis=-1)
        param = np.clip(s, 0.0, self.length)
        boundary = (s < 0.0) | (s > self.length)
        return self.point(param), param, boundary, np.zeros(len(X), dtype=bool)


# --------------------------------------------------------------------------
# manifold

def _log_normalizer(piece, density):
    """log of the integral of exp(log_unnormalized) over the piece in arclength."""
    if isinstance(density, Uniform):
        return float(np.log(piece.length))
    if isinstance(density, VonMises) and isinstance(piece, Arc) and piece.full:
        k = density.concentration
        return float(np.log(TWO_PI * piece.radius) + np.log(special.i0e(k)) + k)
    lo, hi = piece.param_range
    # shift by the max of the exponent before integrating
    shift = getattr(density, "concentration", 0.0)
    val, _ = integrate.quad(
        lambda u: np.exp(density.log_unnormalized(piece.angle(u)) - shift),
        lo, hi, epsabs=0.0, epsrel=1e-13, limit=200)
    return float(np.log(val * piece.arclength_per_param()) + shift)


@dataclass(frozen=True, eq=False)
class Manifold:
    """A union of pieces with a mixture density per unit arclength.

    The density at a point of piece ``j`` is ``weights[j] * p_j(param)``
    where ``p_j`` integrates to one over piece ``j``.
    """

    pieces: tuple
    densities: tuple
    weights: tuple
    name: str = ""
    _log_norms: tuple = field(default=(), repr=False)

    def __post_init__(self):
        pieces = tuple(self.pieces)
        densities = tuple(self.densities)
        weights = tuple(float(w) for w in self.weights)
        if not pieces:
            raise ValueError("a manifold needs at least one piece")
        if not (len(pieces) == len(densities) == len(weights)):
            raise ValueError("pieces, densities and weights must have equal length")
        if len({p.dim for p in pieces}) != 1:
            raise ValueError("all pieces must share the ambient dimension")
        if min(weights) < 0 or abs(sum(weights) - 1.0) > 1e-12:
            raise ValueError("piece weights must be >= 0 and sum to 1")
        object.__setattr__(self, "pieces", pieces)
        object.__setattr__(self, "densities", densities)
        object.__setattr__(self, "weights", weights)
        if len(self._log_norms) != len(pieces):
            object.__setattr__(self, "_log_norms",
                               tuple(_log_normalizer(p, d) for p, d in zip(pieces, densities)))

    @property
    def dim(self):
        return self.pieces[0].dim

    @property
    def kappa_max(self):
        return max(p.curvature for p in self.pieces)

    @property
    def length(self):
        return sum(p.length for p in self.pieces)

    def log_density(self, piece, param):
        """Log density per unit arclength at chart parameter ``param`` of ``piece``."""
        p = self.pieces[piece]
        with np.errstate(divide="ignore"):
            logw = np.log(self.weights[piece])
        return (logw + self.densities[piece].log_unnormalized(p.angle(param))
                - self._log_norms[piece])

    def point(self, piece, param):
        return self.pieces[piece].point(param)

    def outline(self, points_per_unit_length=64):
        """Polylines tracing every piece, for plotting."""
        out = []
        for p in self.pieces:
            n = max(8, int(np.ceil(p.length * points_per_unit_length)))
            lo, hi = p.param_range
            out.append(p.point(np.linspace(lo, hi, n + 1)))
        return out


def circle(center=(0.0, 0.0), radius=1.0, density=None, name="circle"):
    return Manifold((Arc(center, radius),), (density or Uniform(),), (1.0,), name)


def segment(start=(-1.0, 0.0), end=(1.0, 0.0), density=None, name="segment"):
    return Manifold((Segment(start, end),), (density or Uniform(),), (1.0,), name)


def arc_union(arcs: Sequence[Arc], densities=None, weights=None, name="arcs"):
    arcs = tuple(arcs)
    if densities is None:
        densities = (Uniform(),) * len(arcs)
    if weights is None:
        total = sum(a.length for a in arcs)
        weights = tuple(a.length / total for a in arcs)
    return Manifold(arcs, tuple(densities), tuple(weights), name)


def two_moons(radius=1.0, offset=(1.0, 0.5), densities=None, weights=None):
    """Two interleaved half circles: the upper one centred at the origin,
    the lower one centred at ``offset`` and opening upward."""
    upper = Arc((0.0, 0.0), radius, 0.0, np.pi)
    lower = Arc(offset, radius, np.pi, TWO_PI)
    return arc_union((upper, lower), densities, weights, name="two_moons")


# --------------------------------------------------------------------------
# projection

@dataclass(frozen=True, eq=False)
class ProjectionResult:
    pi: np.ndarray
    n: np.ndarray
    distance: float
    tangent_basis: np.ndarray  # (d, D) orthonormal rows
    chart_param: np.ndarray    # (d,)
    piece: int = 0
    on_boundary: bool = False


class ProjectionBatch(NamedTuple):
    pi: np.ndarray        # (M, D)
    n: np.ndarray         # (M, D)
    distance: np.ndarray  # (M,)
    piece: np.ndarray     # (M,) int
    param: np.ndarray     # (M,)
    on_boundary: np.ndarray
    ambiguous: np.ndarray


def project_many(m: Manifold, X) -> ProjectionBatch:
    """Vectorised nearest-point projection of ``X`` with shape ``(M, D)``.

    Never raises on ties; they are reported in ``ambiguous``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[-1] != m.dim:
        raise ValueError(f"points have dimension {X.shape[-1]}, manifold has {m.dim}")
    results = [p._project(X) for p in m.pieces]
    pis = np.stack([r[0] for r in results])              # (P, M, D)
    dists = np.linalg.norm(X[None] - pis, axis=-1)       # (P, M)
    best = np.argmin(dists, axis=0)
    idx = np.arange(len(X))
    ambiguous = np.stack([r[3] for r in results])[best, idx]
    if len(m.pieces) > 1:
        srt = np.sort(dists, axis=0)
        ambiguous = ambiguous | (srt[1] - srt[0] < TIE_TOL)
    pi = pis[best, idx]
    return ProjectionBatch(
        pi=pi,
        n=X - pi,
        distance=dists[best, idx],
        piece=best,
        param=np.stack([r[1] for r in results])[best, idx],
        on_boundary=np.stack([r[2] for r in results])[best, idx],
        ambiguous=ambiguous,
    )


def project(m: Manifold, x, tau=None) -> ProjectionResult:
    """Nearest point of ``m`` to ``x`` with the normal and tangent frame.

    Raises
    ------
    AmbiguousProjection
        Two candidate projections lie within ``TIE_TOL`` of the same distance.
    OutsideTube
        ``tau`` is given and the distance is ``>= tau``.
    """
    x = np.asarray(x, dtype=float)
    b = project_many(m, x[None])
    if b.ambiguous[0]:
        raise AmbiguousProjection(f"projection of {x} onto {m.name or 'manifold'} is not unique")
    dist = float(b.distance[0])
    if tau is not None and dist >= tau:
        raise OutsideTube(f"distance {dist:.6g} is not inside the tube of radius {tau}")
    piece = int(b.piece[0])
    param = float(b.param[0])
    pi = b.pi[0]
    return ProjectionResult(
        pi=pi,
        n=x - pi,
        distance=dist,
        tangent_basis=m.pieces[piece].tangent(param)[None, :],
        chart_param=np.array([param]),
        piece=piece,
        on_boundary=bool(b.on_boundary[0]),
    )


# --------------------------------------------------------------------------
# curvature, scaling, tube

@dataclass(frozen=True, eq=False)
class CurvatureData:
    kappa_max: float
    mean_curvature: np.ndarray
    shape_operator_norm: float


def curvature_data(m: Manifold, pr: ProjectionResult) -> CurvatureData:
    """Curvature at ``pr.pi``.

    For a curve the shape operator in direction ``n`` is the scalar
    ``<n, H>``; its norm equals ``kappa * |n|`` whenever ``n`` lies in the
    osculating plane (always the case in two dimensions).
    """
    piece = m.pieces[pr.piece]
    param = float(pr.chart_param[0])
    H = piece.mean_curvature(param)
    return CurvatureData(
        kappa_max=float(piece.curvature),
        mean_curvature=H,
        shape_operator_norm=float(abs(H @ pr.n)),
    )


def scale_manifold(m: Manifold, factor: float) -> Manifold:
    """Homothety about the origin.  Curvature scales by ``1/factor``; the
    density is transported so each piece keeps its mass."""
    if not (np.isfinite(factor) and factor > 0):
        raise NonPositiveFactor(f"scale factor must be > 0, got {factor}")
    if factor == 1.0:
        return m
    # arclength normalisers pick up log(factor); no re-integration needed
    return Manifold(tuple(p.scaled(factor) for p in m.pieces), m.densities, m.weights, m.name,
                    tuple(z + np.log(factor) for z in m._log_norms))


def validate_tube(m: Manifold, tau: float, delta: float) -> bool:
    """True iff ``tau * kappa_max <= 1 - delta``."""
    return bool(tau * m.kappa_max <= 1.0 - delta)


def intrinsic_log_density_gradient(m: Manifold, pr: ProjectionResult, step=1e-4):
    """Tangential gradient of the on-manifold log density at ``pr.pi``.

    Central difference along the chart with ``step`` measured in arclength.
    """
    piece = m.pieces[pr.piece]
    param = float(pr.chart_param[0])
    dp = step / piece.arclength_per_param()
    dlog = (m.log_density(pr.piece, param + dp) - m.log_density(pr.piece, param - dp)) / (2 * step)
    return float(dlog) * pr.tangent_basis[0]


def tube_points(m: Manifold, count: int, depth: float, rng: np.random.Generator, boundary=False):
    """Random points within normal distance ``depth`` of the manifold.

    A piece is chosen in proportion to its length, a chart parameter
    uniformly, and a signed offset uniformly in ``[-depth, depth]`` along the
    unit normal (``boundary=True``: offset ``+-depth`` exactly).  Returns
    ``(points, foot_points)``.
    """
    lengths = np.array([p.length for p in m.pieces])
    pieces = rng.choice(len(m.pieces), size=count, p=lengths / lengths.sum())
    u = rng.uniform(size=count)
    off = rng.uniform(-depth, depth, size=count)
    if boundary:
        off = np.where(off < 0, -depth, depth)
    feet = np.empty((count, m.dim))
    normals = np.empty((count, m.dim))
    for j, p in enumerate(m.pieces):
        sel = pieces == j
        lo, hi = p.param_range
        params = lo + u[sel] * (hi - lo)
        feet[sel] = p.point(params)
        normals[sel] = p.normal(params)
    return feet + off[:, None] * normals, feet
