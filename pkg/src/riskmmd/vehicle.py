"""Frenet-frame kinematic bicycle, control-dependent noise and batched rollouts.

State layout everywhere is ``(s, d, psi, psi_dot, v)``. Trajectories are
arrays of shape ``(H, 5)`` holding the H states reached after each control,
the initial state excluded.
"""

from dataclasses import dataclass, field

import numpy as np

from ._backend import kernels as _k

S, D, PSI, PSI_DOT, V = range(5)
BETA_PARAM_FLOOR = 1e-3


@dataclass(frozen=True)
class FrenetState:
    s: float = 0.0
    d: float = 0.0
    psi: float = 0.0
    psi_dot: float = 0.0
    v: float = 0.0

    def __post_init__(self):
        if not np.all(np.isfinite(self.as_array())):
            raise ValueError(f"non-finite state {self}")
        if self.v < 0:
            object.__setattr__(self, "v", 0.0)

    def as_array(self):
        return np.array([self.s, self.d, self.psi, self.psi_dot, self.v])

    @classmethod
    def from_array(cls, x):
        return cls(*map(float, x))


@dataclass(frozen=True)
class VehicleParams:
    wheelbase: float = 2.5
    dt: float = 0.1
    horizon: int = 40
    a_min: float = -4.0
    a_max: float = 2.0
    theta_min: float = -0.5
    theta_max: float = 0.5
    init_std: tuple = (0.0, 0.0, 0.0, 0.0, 0.0)
    #: reference-path curvature; the model supports it but everything here
    #: runs on straight references
    kappa: float = 0.0

    def __post_init__(self):
        if self.wheelbase <= 0 or self.dt <= 0 or self.horizon < 1:
            raise ValueError("wheelbase and dt must be positive and horizon >= 1")
        if not (self.a_min <= self.a_max and self.theta_min <= self.theta_max):
            raise ValueError("control bounds are inverted")
        if len(self.init_std) != 5 or min(self.init_std) < 0:
            raise ValueError("init_std needs five nonnegative entries")


@dataclass(frozen=True)
class ControlSequence:
    a: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float).ravel()
        th = np.asarray(self.theta, dtype=float).ravel()
        if a.shape != th.shape:
            raise ValueError("acceleration and steering sequences differ in length")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "theta", th)

    def __len__(self):
        return self.a.size

    def within(self, p):
        return bool(np.all((self.a >= p.a_min) & (self.a <= p.a_max)
                           & (self.theta >= p.theta_min) & (self.theta <= p.theta_max)))

    def sq_norm(self):
        return float(self.a @ self.a + self.theta @ self.theta)


@dataclass(frozen=True)
class NoiseModel:
    family: str = "gaussian"
    c_a1: float = 0.0
    c_a2: float = 0.0
    c_th1: float = 0.0
    c_th2: float = 0.0

    def __post_init__(self):
        fam = self.family.lower()
        if fam not in ("gaussian", "beta"):
            raise ValueError(f"unknown noise family {self.family!r}")
        object.__setattr__(self, "family", fam)
        if min(self.c_a1, self.c_a2, self.c_th1, self.c_th2) < 0:
            raise ValueError("noise constants must be nonnegative")

    @property
    def is_zero(self):
        return self.c_a1 == self.c_a2 == self.c_th1 == self.c_th2 == 0.0


@dataclass
class StateTrajectory:
    states: np.ndarray
    controls: ControlSequence = field(default=None, repr=False)


@dataclass
class RolloutBatch:
    """N^2 rollouts of one control sequence.

    ``matrix`` holds the flattened ``(s, d)`` rows, ordered row-major in
    ``(i, j)`` where i indexes the acceleration-noise sample and j the
    steering-noise sample.
    """

    matrix: np.ndarray
    states: np.ndarray
    eps_a: np.ndarray
    eps_theta: np.ndarray


def step(x, a, theta, p):
    """One explicit-Euler step of the Frenet kinematic bicycle."""
    arr = x.as_array() if isinstance(x, FrenetState) else np.asarray(x, dtype=float)
    if not (np.all(np.isfinite(arr)) and np.isfinite(a) and np.isfinite(theta)):
        raise ValueError("step received non-finite input")
    s, d, psi, _, v = arr
    sdot = v * np.cos(psi) / (1.0 - d * p.kappa)
    psidot = v * np.tan(theta) / p.wheelbase - p.kappa * sdot
    return FrenetState(
        s + p.dt * sdot,
        d + p.dt * v * np.sin(psi),
        psi + p.dt * psidot,
        psidot,
        max(v + p.dt * a, 0.0),
    )


def draw_noise(a, theta, nm, rng, size=()):
    """Vectorized noise draw.

    ``a`` and ``theta`` broadcast against ``size + a.shape``. Draw order is
    fixed: acceleration terms first, then steering.
    """
    a = np.asarray(a, dtype=float)
    theta = np.asarray(theta, dtype=float)
    shape = tuple(np.atleast_1d(size)) if size != () else ()
    shape = shape + np.broadcast_shapes(a.shape, theta.shape)
    if nm.family == "gaussian":
        ea = np.abs(nm.c_a1 * a) * rng.standard_normal(shape) + nm.c_a2 * rng.standard_normal(shape)
        et = (np.abs(nm.c_th1 * theta) * rng.standard_normal(shape)
              + nm.c_th2 * rng.standard_normal(shape))
    elif nm.family == "beta":
        pa, pb = _beta_params(a)
        ea = nm.c_a1 * rng.beta(pa, pb, shape) + nm.c_a2 * rng.standard_normal(shape)
        pa, pb = _beta_params(theta)
        et = nm.c_th1 * rng.beta(pa, pb, shape) + nm.c_th2 * rng.standard_normal(shape)
    else:  # pragma: no cover - guarded by NoiseModel
        raise ValueError(f"unknown noise family {nm.family!r}")
    return ea, et


def _beta_params(u):
    mag = np.abs(u)
    return np.maximum(2.0 * mag, BETA_PARAM_FLOOR), np.maximum(5.0 * mag, BETA_PARAM_FLOOR)


def sample_noise(u, nm, rng_seed):
    """One per-timestep independent noise sequence for each control channel."""
    rng = np.random.default_rng(rng_seed)
    return draw_noise(u.a, u.theta, nm, rng)


def simulate(x0, a, theta, p):
    """Roll out controls from a batch of initial states.

    ``x0`` is (R, 5) and ``a``/``theta`` are (R, H); returns (R, H, 5).
    """
    x0 = np.ascontiguousarray(np.atleast_2d(x0), dtype=float)
    a = np.ascontiguousarray(np.atleast_2d(a), dtype=float)
    theta = np.ascontiguousarray(np.atleast_2d(theta), dtype=float)
    return _k.rollout(x0, a, theta, p.wheelbase, p.dt, p.kappa)


def perturb_initial(x0, p, rng, shape):
    """Initial states drawn from a diagonal Gaussian around ``x0``.

    ``shape`` gives the leading dimensions; ``x0`` broadcasts against them.
    The draw is consumed from ``rng`` even when every std is zero so that the
    stream layout does not depend on the parameters.
    """
    shape = tuple(np.atleast_1d(shape))
    z = rng.standard_normal(shape + (5,))
    out = np.asarray(x0, dtype=float) + np.asarray(p.init_std, dtype=float) * z
    out[..., V] = np.maximum(out[..., V], 0.0)
    return out


def flatten_positions(states):
    """``(..., H, 5)`` trajectories to ``(..., 2H)`` rows of interleaved (s, d)."""
    pos = states[..., :2]
    return pos.reshape(pos.shape[:-2] + (-1,))


def rollout_batch(x0, u, nm, p, N, rng_seed):
    """N^2 rollouts pairing N acceleration-noise and N steering-noise samples."""
    if N < 1:
        raise ValueError("N must be >= 1")
    x0 = x0.as_array() if isinstance(x0, FrenetState) else np.asarray(x0, dtype=float)
    rng = np.random.default_rng(rng_seed)
    ea, et = draw_noise(u.a, u.theta, nm, rng, size=N)
    init = perturb_initial(x0, p, rng, N * N)
    ii, jj = np.divmod(np.arange(N * N), N)
    states = simulate(init, u.a + ea[ii], u.theta + et[jj], p)
    return RolloutBatch(flatten_positions(states), states, ea, et)
