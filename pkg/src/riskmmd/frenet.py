"""Setpoint sampling and the polynomial Frenet planner.

A setpoint vector ``b = (v_set, d_set)`` is expanded into a quintic lateral
profile and a cubic speed profile over the planning horizon, then mapped to
bounded acceleration and steering through differential flatness.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .vehicle import ControlSequence, FrenetState

V_EPS = 0.1


@dataclass(frozen=True)
class SetpointVector:
    v_set: float
    d_set: float

    def as_array(self):
        return np.array([self.v_set, self.d_set], dtype=float)


@dataclass
class SamplingDistribution:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float).reshape(2)
        self.cov = np.asarray(self.cov, dtype=float).reshape(2, 2)
        if not np.allclose(self.cov, self.cov.T, rtol=0, atol=1e-12):
            raise ValueError("covariance must be symmetric")

    def copy(self):
        return SamplingDistribution(self.mean.copy(), self.cov.copy())


@dataclass
class FrenetProfiles:
    """Desired profiles sampled at ``t = 0, dt, ..., H dt`` (H + 1 points).

    ``v`` is the longitudinal rate ds/dt and ``d_dot`` the lateral rate.
    Arrays carry an optional leading batch dimension.
    """

    t: np.ndarray
    s: np.ndarray
    d: np.ndarray
    v: np.ndarray
    d_dot: np.ndarray


def sample_setpoints(dist, n, rng, v_max=15.0):
    """Draw n setpoints from the Gaussian, clipping speeds to ``[0, v_max]``.

    ``rng`` is a seed or a ``numpy.random.Generator``. Returns an (n, 2) array.
    """
    try:
        L = np.linalg.cholesky(dist.cov)
    except np.linalg.LinAlgError as exc:
        raise ValueError("sampling covariance is not positive definite") from exc
    rng = np.random.default_rng(rng)
    b = dist.mean + rng.standard_normal((n, 2)) @ L.T
    b[:, 0] = np.clip(b[:, 0], 0.0, v_max)
    return b


@lru_cache(maxsize=32)
def _quintic_inverse(T):
    # rows: d(T), d'(T), d''(T) in terms of c3, c4, c5
    M = np.array([[T**3, T**4, T**5],
                  [3 * T**2, 4 * T**3, 5 * T**4],
                  [6 * T, 12 * T**2, 20 * T**3]])
    return np.linalg.inv(M)


def expand_batch(b, x0, p):
    """Vectorized ``expand_trajectory`` for an (n, 2) setpoint array."""
    if p.horizon < 2:
        raise ValueError("the Frenet planner needs a horizon of at least 2")
    b = np.atleast_2d(np.asarray(b, dtype=float))
    x = x0.as_array() if isinstance(x0, FrenetState) else np.asarray(x0, dtype=float)
    s0, d0, psi0, psi_dot0, speed0 = x
    v0 = speed0 * np.cos(psi0)
    dd0 = speed0 * np.sin(psi0)
    # lateral acceleration carried over from the yaw rate keeps re-plans C2
    ddd0 = v0 * psi_dot0
    T = p.horizon * p.dt
    t = p.dt * np.arange(p.horizon + 1)
    tau = t / T

    v_set = b[:, :1]
    d_set = b[:, 1:2]
    v = v0 + (v_set - v0) * (3 * tau**2 - 2 * tau**3)
    s = s0 + v0 * t + (v_set - v0) * T * (tau**3 - 0.5 * tau**4)

    c2 = 0.5 * ddd0
    rhs = np.stack([d_set[:, 0] - d0 - dd0 * T - c2 * T**2,
                    np.full(b.shape[0], -dd0 - 2 * c2 * T),
                    np.full(b.shape[0], -2 * c2)], axis=1)
    c = rhs @ _quintic_inverse(T).T
    c3, c4, c5 = c[:, :1], c[:, 1:2], c[:, 2:3]
    d = d0 + dd0 * t + c2 * t**2 + c3 * t**3 + c4 * t**4 + c5 * t**5
    d_dot = dd0 + 2 * c2 * t + 3 * c3 * t**2 + 4 * c4 * t**3 + 5 * c5 * t**4
    return FrenetProfiles(t, s, d, v, d_dot)


def expand_trajectory(b, x0, p):
    arr = b.as_array() if isinstance(b, SetpointVector) else np.asarray(b, dtype=float)
    prof = expand_batch(arr[None], x0, p)
    return FrenetProfiles(prof.t, prof.s[0], prof.d[0], prof.v[0], prof.d_dot[0])


def flatness_batch(prof, p):
    """Acceleration and steering arrays (n, H) recovered from profiles.

    Vehicle speed is ``hypot(v, d_dot)`` and heading ``atan2(d_dot, v)``;
    both are finite-differenced on the time grid so an explicit-Euler rollout
    reproduces them at the grid points.
    """
    v = np.atleast_2d(prof.v)
    dd = np.atleast_2d(prof.d_dot)
    speed = np.hypot(v, dd)
    psi = np.arctan2(dd, v)
    a = np.diff(speed, axis=1) / p.dt
    psi_rate = np.diff(psi, axis=1) / p.dt
    theta = np.arctan(p.wheelbase * psi_rate / np.maximum(speed[:, :-1], V_EPS))
    return (np.clip(a, p.a_min, p.a_max), np.clip(theta, p.theta_min, p.theta_max))


def flatness_controls(prof, p):
    a, theta = flatness_batch(prof, p)
    return ControlSequence(a[0], theta[0])


def controls_for(b, x0, p):
    """Setpoints (n, 2) straight to control arrays ``(a, theta)`` of shape (n, H)."""
    return flatness_batch(expand_batch(b, x0, p), p)
