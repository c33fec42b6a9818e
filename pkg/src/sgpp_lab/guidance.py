"""Guidance vector fields for rectified-flow posterior sampling.

Everything here is a pure function of a score field, a point (or a batch of
points with shape ``(..., D)``), a time and a :class:`GuidanceParams`.
Samplers decide *when* guidance is active (``t >= t_stop``); these functions
always return the raw field.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from .errors import TauOutOfRange, TimeOutOfRange
from .score_field import DiscreteSupportScore, check_time, rf_velocity, posterior_mean

__all__ = [
    "GuidanceParams", "GuidanceForce", "sigma_p_of_t", "likelihood_score",
    "log_likelihood", "proximal_objective", "sgpp_force", "sgpp_step",
    "max_stable_step", "mixture_score", "posterior_velocity",
    "conditional_velocity", "exact_likelihood_score", "sde_coefficients",
    "rf_inversion_field", "hard_limit_velocity", "dps_guidance_gradient",
    "dps_step",
]


@dataclass(frozen=True, eq=False)
class GuidanceParams:
    """Guidance hyperparameters.

    sigma_p
        Proximal standard deviation in data units; must be > 0.
    eta
        Geometric-mixture weight in [0, 1].
    x_ref
        Reference point.
    t_stop
        Guidance is switched off for ``t < t_stop``.
    """

    sigma_p: float
    x_ref: np.ndarray
    eta: float = 0.0
    t_stop: float = 0.0

    def __post_init__(self):
        x_ref = np.array(self.x_ref, dtype=float)
        if x_ref.ndim != 1 or not np.all(np.isfinite(x_ref)):
            raise ValueError("x_ref must be a finite 1-d vector")
        x_ref.setflags(write=False)
        object.__setattr__(self, "x_ref", x_ref)
        if not (np.isfinite(self.sigma_p) and self.sigma_p > 0):
            raise ValueError(f"sigma_p must be > 0, got {self.sigma_p}")
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError(f"eta must lie in [0, 1], got {self.eta}")
        if not 0.0 <= self.t_stop < 1.0:
            raise ValueError(f"t_stop must lie in [0, 1), got {self.t_stop}")

    def active(self, t):
        return t >= self.t_stop

    def with_(self, **changes):
        return replace(self, **changes)

    def as_dict(self):
        return {"sigma_p": self.sigma_p, "eta": self.eta, "t_stop": self.t_stop,
                "x_ref": self.x_ref.tolist()}


class GuidanceForce(NamedTuple):
    total: np.ndarray
    score_part: np.ndarray
    fidelity_part: np.ndarray


def sigma_p_of_t(t, sigma_p):
    """Standard deviation of the proximal relaxation carried to time t."""
    if not 0.0 <= t <= 1.0:
        raise TimeOutOfRange(f"t must lie in [0, 1], got {t}")
    return float(np.sqrt((1.0 - t) ** 2 * sigma_p ** 2 + t * t))


def _anchor_offset(x, t, p):
    return np.asarray(x, dtype=float) - (1.0 - t) * p.x_ref


def log_likelihood(x, t, p):
    """Unnormalised Gaussian log-likelihood of the reference given ``x``."""
    d = _anchor_offset(x, t, p)
    return -(d * d).sum(axis=-1) / (2.0 * sigma_p_of_t(t, p.sigma_p) ** 2)


def likelihood_score(x, t, p):
    if not 0.0 <= t < 1.0:
        raise TimeOutOfRange(f"t must lie in [0, 1), got {t}")
    return -_anchor_offset(x, t, p) / sigma_p_of_t(t, p.sigma_p) ** 2


def proximal_objective(field, x, t, p):
    """Fidelity potential minus the generative log density."""
    return -log_likelihood(x, t, p) - field.log_density(x, t)


def sgpp_force(field, x, t, p) -> GuidanceForce:
    """Negative gradient of the proximal objective, split into its parts."""
    check_time(t)
    score_part = field.score(x, t)
    fidelity_part = likelihood_score(x, t, p)
    return GuidanceForce(score_part + fidelity_part, score_part, fidelity_part)


def sgpp_step(field, x, t, eta_step, p):
    """One proximal gradient step ``x + eta_step * force``."""
    check_time(t)
    if not eta_step > 0:
        raise ValueError("eta_step must be > 0")
    return np.asarray(x, dtype=float) + eta_step * sgpp_force(field, x, t, p).total


def max_stable_step(t, sigma_p):
    """Exclusive upper bound ``2 / (1/t^2 + 1/sigma_p(t)^2)`` on the step size."""
    check_time(t)
    return 2.0 / (1.0 / (t * t) + 1.0 / sigma_p_of_t(t, sigma_p) ** 2)


def mixture_score(field, x, t, p):
    """``(1 - eta) * score + eta * likelihood_score``."""
    check_time(t)
    return (1.0 - p.eta) * field.score(x, t) + p.eta * likelihood_score(x, t, p)


def posterior_velocity(field, x, t, p):
    """Drift of the conditional flow: unconditional score plus likelihood score."""
    check_time(t)
    x = np.asarray(x, dtype=float)
    post = field.score(x, t) + likelihood_score(x, t, p)
    return -x / (1.0 - t) - t / (1.0 - t) * post


def conditional_velocity(x, t, p):
    """Velocity driven by the likelihood score alone (the reference pull)."""
    check_time(t)
    x = np.asarray(x, dtype=float)
    return -x / (1.0 - t) - t / (1.0 - t) * likelihood_score(x, t, p)


def exact_likelihood_score(field: DiscreteSupportScore, x, t, p):
    """Gradient of ``log p(x_ref | X_t = x)`` under the true conditional law.

    For finite support ``p(x_ref | x_t) = sum_i P(i | x_t) N(x_ref; a_i, sigma_p^2)``,
    whose gradient is the score of the posterior-reweighted atoms minus the
    prior score.  Unlike :func:`likelihood_score` this does not assume a
    flat prior.
    """
    check_time(t)
    d = field.atoms - p.x_ref
    post = field.reweighted(-(d * d).sum(axis=-1) / (2.0 * p.sigma_p ** 2))
    return post.score(x, t) - field.score(x, t)


def sde_coefficients(field, x, t, p, use_mixture=False, eta=None, likelihood="gaussian"):
    """Drift and scalar diffusion of the guided reverse SDE.

    ``drift = -x/(1-t) - 2t/(1-t) * s`` where ``s`` is the posterior score
    (``use_mixture=False``) or the geometric mixture with weight ``eta``.
    ``likelihood="exact"`` replaces the Gaussian likelihood score by
    :func:`exact_likelihood_score` (finite-support fields only).
    """
    check_time(t)
    x = np.asarray(x, dtype=float)
    prior = field.score(x, t)
    if likelihood == "gaussian":
        lik = likelihood_score(x, t, p)
    elif likelihood == "exact":
        lik = exact_likelihood_score(field, x, t, p)
    else:
        raise ValueError(f"unknown likelihood {likelihood!r}")
    if use_mixture:
        w = p.eta if eta is None else eta
        s = (1.0 - w) * prior + w * lik
    else:
        s = prior + lik
    drift = -x / (1.0 - t) - 2.0 * t / (1.0 - t) * s
    return drift, float(np.sqrt(2.0 * t / (1.0 - t)))


def rf_inversion_field(v_uncond, x, tau, y0, eta):
    """Controlled velocity in inversion time ``tau = 1 - t``:
    ``(1 - eta) v_uncond + eta (y0 - x) / (1 - tau)``."""
    if not 0.0 <= tau < 1.0:
        raise TauOutOfRange(f"tau must lie in [0, 1), got {tau}")
    x = np.asarray(x, dtype=float)
    return (1.0 - eta) * np.asarray(v_uncond) + eta * (np.asarray(y0) - x) / (1.0 - tau)


def hard_limit_velocity(x, t, y0):
    """``(x - y0) / t``, the reference pull as sigma_p -> 0."""
    check_time(t)
    return (np.asarray(x, dtype=float) - np.asarray(y0)) / t


def _fd_step(x):
    return 1e-4 * (1.0 + np.linalg.norm(x, axis=-1))


def dps_guidance_gradient(field, x, t, x_ref, sigma_obs):
    """Gradient of ``|x_ref - x0_hat(x)|^2 / (2 sigma_obs^2)``.

    The Jacobian of the Tweedie estimate is taken by central differences
    (2D + 1 field evaluations).
    """
    check_time(t)
    x = np.asarray(x, dtype=float)
    D = x.shape[-1]
    x0_hat = posterior_mean(field, x, t)
    resid = (x0_hat - np.asarray(x_ref)) / sigma_obs ** 2
    h = _fd_step(x)[..., None]
    grad = np.empty_like(x)
    for j in range(D):
        e = np.zeros(D)
        e[j] = 1.0
        col = (posterior_mean(field, x + h * e, t) - posterior_mean(field, x - h * e, t)) / (2 * h)
        grad[..., j] = (col * resid).sum(axis=-1)
    return grad


def dps_step(field, x, t, eta_step, x_ref, sigma_obs, dt):
    """Unconditional Euler step from t to ``t - dt`` minus the scaled DPS gradient."""
    check_time(t)
    if not sigma_obs > 0:
        raise ValueError("sigma_obs must be > 0")
    x = np.asarray(x, dtype=float)
    return (x - dt * rf_velocity(field, x, t)
            - eta_step * dps_guidance_gradient(field, x, t, x_ref, sigma_obs))
