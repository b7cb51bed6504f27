"""Safety constraints, constraint residuals and the two risk estimates.

The worst-case constraint of a trajectory is

    h(x) = max_k max(h_obs_k, h_lane_k)

where each ellipse contributes ``1 - ((s - s_o)/a)^2 - ((d - d_o)/b)^2`` and
the lane part is ``max(d - d_ub, d_lb - d)``. ``h <= 0`` means safe.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from ._backend import kernels as _k
from .kernels import WeightedSampleSet, mmd_squared
from .vehicle import draw_noise, perturb_initial, simulate


@dataclass(frozen=True)
class Obstacle:
    """Ellipse with semi-axes ``a`` (along s) and ``b`` (along d).

    The center moves with constant velocity ``(vs, vd)`` unless an explicit
    per-step ``path`` of shape (H, 2) is given.
    """

    s: float
    d: float
    a: float = 4.0
    b: float = 1.8
    vs: float = 0.0
    vd: float = 0.0
    path: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.a <= 0 or self.b <= 0:
            raise ValueError("ellipse semi-axes must be positive")

    def centers(self, horizon, dt, t0=0.0):
        if self.path is not None:
            path = np.asarray(self.path, dtype=float)
            if path.shape != (horizon, 2):
                raise ValueError(
                    f"obstacle path has shape {path.shape}, trajectory horizon is {horizon}")
            return path
        t = t0 + dt * np.arange(1, horizon + 1)
        return np.column_stack([self.s + self.vs * t, self.d + self.vd * t])


@dataclass(frozen=True)
class Scene:
    d_lb: float = -1.75
    d_ub: float = 5.25
    d1: float = 0.0
    d2: float = 3.5
    v_d: float = 5.0
    obstacles: tuple = ()

    def __post_init__(self):
        if not self.d_lb < self.d1 < self.d2 < self.d_ub:
            raise ValueError("lane layout must satisfy d_lb < d1 < d2 < d_ub")
        if self.v_d <= 0:
            raise ValueError("desired speed must be positive")
        object.__setattr__(self, "obstacles", tuple(self.obstacles))

    def obstacle_arrays(self, horizon, dt, t0=0.0):
        if not self.obstacles:
            return np.zeros((0, horizon, 2)), np.ones((0, 2))
        centers = np.stack([o.centers(horizon, dt, t0) for o in self.obstacles])
        axes = np.array([[o.a, o.b] for o in self.obstacles], dtype=float)
        return centers, axes

    def with_obstacles(self, obstacles):
        return Scene(self.d_lb, self.d_ub, self.d1, self.d2, self.v_d, tuple(obstacles))


@dataclass(frozen=True)
class DiracConfig:
    """Sample approximation of the point mass at zero.

    ``n_samples=None`` uses as many samples as there are residuals.
    """

    n_samples: int = None
    epsilon_std: float = 1e-5

    def __post_init__(self):
        if self.epsilon_std < 0:
            raise ValueError("epsilon_std must be nonnegative")
        if self.n_samples is not None and self.n_samples < 1:
            raise ValueError("n_samples must be positive")


def _states(traj):
    return np.asarray(getattr(traj, "states", traj), dtype=float)


def constraint_h_batch(states, scene, include_lane, dt=0.1, t0=0.0):
    """Worst-case constraint value for each trajectory in ``states`` (R, H, 5)."""
    states = np.asarray(states, dtype=float)
    H = states.shape[-2]
    centers, axes = scene.obstacle_arrays(H, dt, t0)
    pos = np.ascontiguousarray(states.reshape(-1, H, states.shape[-1])[:, :, :2])
    h = _k.constraint_h(pos, centers, axes, scene.d_lb, scene.d_ub, bool(include_lane))
    return h.reshape(states.shape[:-2])


def constraint_h(traj, scene, include_lane=False, dt=0.1, t0=0.0):
    """Worst-case safety constraint of a single (H, 5) trajectory.

    Returns ``-inf`` when no constraint part is active.
    """
    states = _states(traj)
    if states.ndim != 2:
        raise ValueError("expected a single (H, 5) trajectory")
    return float(constraint_h_batch(states[None], scene, include_lane, dt, t0)[0])


def residual(h):
    return np.maximum(0.0, h) if np.ndim(h) else max(0.0, float(h))


def dirac_samples(n, dc, rng):
    return dc.epsilon_std * rng.standard_normal(n)


def risk_mmd(residuals, beta, sigma, dc=DiracConfig(), rng_seed=0):
    """Squared MMD between the weighted residual sample and a point mass at 0."""
    residuals = np.asarray(residuals, dtype=float)
    beta = np.asarray(beta, dtype=float)
    n = dc.n_samples or residuals.size
    deltas = dirac_samples(n, dc, np.random.default_rng(rng_seed))
    X = WeightedSampleSet(residuals, beta)
    Y = WeightedSampleSet.uniform(deltas)
    return mmd_squared(X, Y, sigma)


def risk_mmd_batch(residuals, beta, sigma, deltas):
    """Vectorized ``risk_mmd`` for (B, N) residuals sharing one delta sample.

    ``sigma`` may be a scalar or a length-B array.
    """
    r = np.asarray(residuals, dtype=float)
    w = np.asarray(beta, dtype=float)
    sig = np.broadcast_to(np.asarray(sigma, dtype=float), r.shape[:1])[:, None]
    dl = np.asarray(deltas, dtype=float)
    xx = np.einsum("bi,bij,bj->b", w, np.exp(-np.abs(r[:, :, None] - r[:, None, :]) / sig[:, :, None]), w)
    yy = np.exp(-np.abs(dl[None, :, None] - dl[None, None, :]) / sig[:, :, None]).mean(axis=(1, 2))
    xy = np.einsum("bi,bi->b", w, np.exp(-np.abs(r[:, :, None] - dl[None, None, :]) / sig[:, :, None]).mean(axis=2))
    return np.maximum(xx + yy - 2.0 * xy, 0.0)


def cvar_count(n, alpha):
    return max(1, math.ceil((1.0 - alpha) * n - 1e-9))


def risk_cvar(residuals, alpha=0.9):
    """Empirical CVaR: mean of the ``ceil((1 - alpha) N)`` largest residuals."""
    r = np.asarray(residuals, dtype=float).ravel()
    if r.size == 0:
        raise ValueError("CVaR of an empty sample")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    k = cvar_count(r.size, alpha)
    return float(np.sort(r)[::-1][:k].mean())


def risk_cvar_batch(residuals, alpha=0.9):
    r = np.asarray(residuals, dtype=float)
    k = cvar_count(r.shape[-1], alpha)
    return -np.sort(-r, axis=-1)[..., :k].mean(axis=-1) + 0.0


def ground_truth_collision_rate(x0, u, scene, nm, p, M, rng_seed, t0=0.0):
    """Fraction of M independent noisy rollouts of ``u`` that hit an obstacle.

    Lane bounds are ignored.
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    x0 = np.asarray(getattr(x0, "as_array", lambda: x0)(), dtype=float)
    rng = np.random.default_rng(rng_seed)
    ea, et = draw_noise(u.a, u.theta, nm, rng, size=M)
    init = perturb_initial(x0, p, rng, M)
    states = simulate(init, u.a + ea, u.theta + et, p)
    h = constraint_h_batch(states, scene, include_lane=False, dt=p.dt, t0=t0)
    return float(np.mean(h > 0))
