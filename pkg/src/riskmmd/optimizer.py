"""Sampling-based risk-aware trajectory optimizer.

Each iteration draws setpoints, turns them into controls, scores every
candidate by expected state cost, risk and control effort, keeps the ``n_c``
lowest-risk candidates, takes the ``n_e`` cheapest of those and refits the
setpoint Gaussian with exponentially weighted averages.
"""

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .frenet import SamplingDistribution, controls_for, sample_setpoints
from .reduced_set import DistillConfig, distill_many
from .risk import (DiracConfig, constraint_h_batch, dirac_samples, residual,
                   risk_cvar_batch, risk_mmd_batch)
from .vehicle import (ControlSequence, FrenetState, perturb_initial, simulate,
                      draw_noise, flatten_positions)

log = logging.getLogger(__name__)

RISK_KINDS = ("mmd", "cvar", "det", "none")
#: risks closer than this are ties, broken by total cost
RISK_DECIMALS = 10


@dataclass(frozen=True)
class OptimizerConfig:
    n: int = 100
    n_c: int = 30
    n_e: int = 10
    iters: int = 10
    N: int = 4
    gamma: float = 1.0
    eta: float = 0.7
    w1: float = 1.0
    w2: float = 1000.0
    w3: float = 1.0
    risk_kind: str = "mmd"
    distill: DistillConfig = field(default_factory=lambda: DistillConfig(cem_samples=32, cem_iters=4))
    dirac: DiracConfig = field(default_factory=DiracConfig)
    cvar_alpha: float = 0.9
    #: kernel width in residual space; None reuses the distilled trajectory width
    residual_sigma: float = 0.1
    include_lane: bool = False
    cov_floor: float = 1e-4
    init_std: tuple = (2.0, 1.5)
    v_max: float = 15.0

    def __post_init__(self):
        if not 1 <= self.n_e <= self.n_c <= self.n:
            raise ValueError("need 1 <= n_e <= n_c <= n")
        if self.iters < 1 or self.N < 1:
            raise ValueError("iters and N must be positive")
        if self.gamma <= 0 or not 0.0 <= self.eta <= 1.0:
            raise ValueError("gamma must be positive and eta within [0, 1]")
        if min(self.w1, self.w2, self.w3) < 0:
            raise ValueError("cost weights must be nonnegative")
        if self.risk_kind not in RISK_KINDS:
            raise ValueError(f"risk_kind must be one of {RISK_KINDS}")
        if self.cov_floor <= 0:
            raise ValueError("cov_floor must be positive")

    def replace(self, **kw):
        return replace(self, **kw)


@dataclass
class CandidateScore:
    setpoint: np.ndarray
    controls: ControlSequence
    risk: float
    expected_cost: float
    control_cost: float
    total: float
    #: constraint values of the rollouts the risk was computed from
    h_values: np.ndarray = field(default=None, repr=False)
    beta: np.ndarray = field(default=None, repr=False)
    sigma: float = float("nan")


@dataclass
class BatchScores:
    b: np.ndarray
    a: np.ndarray
    theta: np.ndarray
    risk: np.ndarray
    expected: np.ndarray
    control: np.ndarray
    total: np.ndarray
    h: np.ndarray
    beta: np.ndarray
    sigma: np.ndarray
    n_failed: int = 0

    def candidate(self, q):
        return CandidateScore(self.b[q].copy(), ControlSequence(self.a[q], self.theta[q]),
                              float(self.risk[q]), float(self.expected[q]),
                              float(self.control[q]), float(self.total[q]),
                              self.h[q].copy(), self.beta[q].copy(), float(self.sigma[q]))


@dataclass
class OptimizeResult:
    controls: ControlSequence
    best: CandidateScore
    trace: list
    dist: SamplingDistribution


def state_cost_batch(states, scene, dt):
    """State cost for trajectories of shape (..., H, 5)."""
    states = np.asarray(states, dtype=float)
    if states.shape[-2] < 3:
        raise ValueError("state cost needs a horizon of at least 3")
    s = states[..., 0]
    d = states[..., 1]
    v = states[..., 4]
    track = ((v - scene.v_d) ** 2 + np.abs(d - scene.d1) * np.abs(d - scene.d2)).sum(axis=-1)
    s_acc = (s[..., 2:] - 2.0 * s[..., 1:-1] + s[..., :-2]) / dt**2
    d_acc = (d[..., 2:] - 2.0 * d[..., 1:-1] + d[..., :-2]) / dt**2
    return track + (s_acc**2 + d_acc**2).sum(axis=-1)


def state_cost(traj, scene, dt=0.1):
    """Speed tracking + two-lane attraction + squared second differences.

    Second differences are the central ``(x[k+1] - 2 x[k] + x[k-1]) / dt^2``
    over interior steps of the H-state trajectory.
    """
    return float(state_cost_batch(getattr(traj, "states", traj), scene, dt))


def score_batch(b, x0, scene, nm, p, cfg, rng, t0=0.0):
    """Score an (n, 2) array of setpoints. ``rng`` is a numpy Generator."""
    x0 = x0.as_array() if isinstance(x0, FrenetState) else np.asarray(x0, dtype=float)
    b = np.atleast_2d(np.asarray(b, dtype=float))
    n = b.shape[0]
    N = cfg.N
    H = p.horizon
    a, theta = controls_for(b, x0, p)
    kind = cfg.risk_kind
    n_failed = 0

    if kind in ("det", "none"):
        states = simulate(np.repeat(x0[None], n, axis=0), a, theta, p)[:, None]
        h = constraint_h_batch(states, scene, cfg.include_lane, p.dt, t0)
        beta = np.ones((n, 1))
        sigma = np.full(n, np.nan)
        risk = residual(h[:, 0]) if kind == "det" else np.zeros(n)
        used = states
    elif kind == "cvar":
        ea, et = _expand_noise(a, theta, nm, rng, N)
        init = perturb_initial(x0, p, rng, (n, N))
        states = simulate(init.reshape(-1, 5), (a[:, None] + ea).reshape(-1, H),
                          (theta[:, None] + et).reshape(-1, H), p).reshape(n, N, H, 5)
        h = constraint_h_batch(states, scene, cfg.include_lane, p.dt, t0)
        beta = np.full((n, N), 1.0 / N)
        sigma = np.full(n, np.nan)
        risk = risk_cvar_batch(residual(h), cfg.cvar_alpha)
        used = states
    else:
        ea, et = _expand_noise(a, theta, nm, rng, N)
        init = perturb_initial(x0, p, rng, (n, N * N))
        ii, jj = np.divmod(np.arange(N * N), N)
        states = simulate(init.reshape(-1, 5),
                          (a[:, None] + ea[:, ii]).reshape(-1, H),
                          (theta[:, None] + et[:, jj]).reshape(-1, H), p).reshape(n, N * N, H, 5)
        sel, beta, sig_traj, disc, fails = distill_many(flatten_positions(states), N,
                                                        cfg.distill, rng)
        n_failed = int(np.count_nonzero(~np.isfinite(disc)))
        used = np.take_along_axis(states, sel[:, :, None, None], axis=1)
        h = constraint_h_batch(used, scene, cfg.include_lane, p.dt, t0)
        deltas = dirac_samples(cfg.dirac.n_samples or N, cfg.dirac, rng)
        sigma = sig_traj if cfg.residual_sigma is None else np.full(n, cfg.residual_sigma)
        risk = risk_mmd_batch(residual(h), beta, sigma, deltas)
        risk = np.where(np.isfinite(disc), risk, np.inf)

    expected = state_cost_batch(used, scene, p.dt).mean(axis=1)
    control = (a**2).sum(axis=1) + (theta**2).sum(axis=1)
    total = cfg.w1 * expected + cfg.w2 * risk + cfg.w3 * control
    if n_failed:
        log.warning("%d of %d candidates failed distillation", n_failed, n)
    return BatchScores(b, a, theta, risk, expected, control, total, h, beta, sigma, n_failed)


def _expand_noise(a, theta, nm, rng, N):
    """N noise samples per candidate: arrays of shape (n, N, H)."""
    shape = (a.shape[0], N, a.shape[1])
    return draw_noise(np.broadcast_to(a[:, None, :], shape),
                      np.broadcast_to(theta[:, None, :], shape), nm, rng)


def score_candidate(b, x0, scene, nm, p, cfg, rng_seed, t0=0.0):
    rng = np.random.default_rng(rng_seed)
    return score_batch(np.atleast_2d(b), x0, scene, nm, p, cfg, rng, t0).candidate(0)


def select_elites(risk, total, n_c, n_e):
    """Indices of the constraint-elite set and of the elite set.

    The constraint-elite set holds the ``n_c`` lowest risks (ties broken by
    total cost, then index); the elite set the ``n_e`` cheapest of those.
    """
    key = np.round(np.asarray(risk, dtype=float), RISK_DECIMALS)
    ce = np.lexsort((np.arange(key.size), total, key))[:n_c]
    e = ce[np.argsort(total[ce], kind="stable")][:n_e]
    return ce, e


def update_distribution(dist, b, c, gamma, eta, cov_floor=1e-4):
    """Exponentially weighted refit of the setpoint Gaussian, blended by eta."""
    if eta == 0:
        return dist.copy()
    b = np.atleast_2d(np.asarray(b, dtype=float))
    c = np.asarray(c, dtype=float)
    ok = np.isfinite(c)
    if not ok.any():
        return dist.copy()
    b, c = b[ok], c[ok]
    t = np.exp(-(c - c.min()) / gamma)
    w = t / t.sum()
    mean = (1.0 - eta) * dist.mean + eta * (w @ b)
    diff = b - mean
    cov = (1.0 - eta) * dist.cov + eta * (diff.T * w) @ diff
    cov = 0.5 * (cov + cov.T)
    evals, evecs = np.linalg.eigh(cov)
    if evals.min() < cov_floor:
        cov = (evecs * np.maximum(evals, cov_floor)) @ evecs.T
        cov = 0.5 * (cov + cov.T)
    return SamplingDistribution(mean, cov)


def initial_distribution(x0, scene, cfg):
    d0 = x0.d if isinstance(x0, FrenetState) else float(np.asarray(x0)[1])
    return SamplingDistribution([scene.v_d, d0], np.diag(np.square(cfg.init_std)))


def optimize(x0, scene, nm, p, cfg, rng_seed, dist=None, t0=0.0):
    """Run the sampling optimizer and return the best-ever candidate."""
    x0 = x0 if isinstance(x0, FrenetState) else FrenetState.from_array(x0)
    if cfg.risk_kind in ("det", "none"):
        nm = None
    dist = dist.copy() if dist is not None else initial_distribution(x0, scene, cfg)
    best = None
    trace = []
    total_failed = 0
    for it in range(cfg.iters):
        rng = np.random.default_rng([int(rng_seed), it])
        b = sample_setpoints(dist, cfg.n, rng, cfg.v_max)
        sc = score_batch(b, x0, scene, nm, p, cfg, rng, t0)
        total_failed += sc.n_failed
        ce, e = select_elites(sc.risk, sc.total, cfg.n_c, cfg.n_e)
        q = e[0]
        if best is None or sc.total[q] < best.total:
            best = sc.candidate(q)
        trace.append({
            "iteration": it,
            "best_total": float(sc.total[q]),
            "mean_elite_total": float(np.mean(sc.total[e])),
            "best_ever_total": best.total,
            "best_ever_risk": best.risk,
            "constraint_elite": ce,
            "elite": e,
        })
        dist = update_distribution(dist, b[e], sc.total[e], cfg.gamma, cfg.eta, cfg.cov_floor)
    if not np.isfinite(best.total):
        raise RuntimeError(f"no finite candidate after {cfg.iters} iterations "
                           f"({total_failed} distillation failures)")
    return OptimizeResult(best.controls, best, trace, dist)
