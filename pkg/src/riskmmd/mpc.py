"""Receding-horizon execution of the risk-aware optimizer and episode metrics.

Each step plans from the current state, applies the first control perturbed
by a fresh draw of the true process noise, advances the world and checks for
collisions and lane violations at the realized state.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .frenet import SamplingDistribution
from .optimizer import initial_distribution, optimize
from .risk import constraint_h_batch
from .vehicle import FrenetState, draw_noise, perturb_initial, simulate

log = logging.getLogger(__name__)

STATUSES = ("reached_goal", "collided", "max_steps", "aborted")


@dataclass
class EpisodeLog:
    """Per-step record of one MPC run.

    Arrays are indexed by step; ``states[k]`` is the state reached after
    applying ``controls[k]``.
    """

    controls: np.ndarray
    states: np.ndarray
    risk: np.ndarray
    cost: np.ndarray
    collision: np.ndarray
    lane_violation: np.ndarray
    status: str
    seed: int = 0
    reason: str = ""

    def __post_init__(self):
        if self.status not in STATUSES:
            raise ValueError(f"unknown terminal status {self.status!r}")

    @property
    def n_steps(self):
        return int(self.states.shape[0])

    @property
    def collided(self):
        return self.status == "collided"

    @property
    def reached_goal(self):
        return self.status == "reached_goal"

    def speeds(self):
        return self.states[:, 4] if self.n_steps else np.zeros(0)

    def records(self):
        """Per-step dictionaries suitable for line-delimited output."""
        out = []
        for k in range(self.n_steps):
            out.append({
                "step": k,
                "a": float(self.controls[k, 0]),
                "theta": float(self.controls[k, 1]),
                "state": [float(x) for x in self.states[k]],
                "risk": float(self.risk[k]),
                "cost": float(self.cost[k]),
                "collision": bool(self.collision[k]),
                "lane_violation": float(self.lane_violation[k]),
            })
        return out


@dataclass(frozen=True)
class MetricsReport:
    collision_pct: float
    lane_violation_pct: float
    avg_speed: float
    max_speed: float
    episodes: int
    excluded: int = 0

    def __post_init__(self):
        if not 0.0 <= self.collision_pct <= 100.0:
            raise ValueError(f"collision_pct={self.collision_pct} outside [0, 100]")
        if self.lane_violation_pct < 0:
            raise ValueError("lane_violation_pct must be nonnegative")
        if self.avg_speed > self.max_speed + 1e-12:
            raise ValueError("avg_speed exceeds max_speed")

    def as_dict(self):
        return {"collision_pct": self.collision_pct,
                "lane_violation_pct": self.lane_violation_pct,
                "avg_speed": self.avg_speed, "max_speed": self.max_speed,
                "episodes": self.episodes, "excluded": self.excluded}


def _lane_violation(d, v, scene, dt):
    return max(0.0, d - scene.d_ub, scene.d_lb - d) * v * dt


def _step_seed(seed, k):
    return int(np.random.SeedSequence([int(seed), int(k)]).generate_state(1)[0])


def run_episode(scene, nm, p, cfg, route_length, rng_seed, x0=None, max_steps=1000,
                cov_reset=0.5, observe_noise=True):
    """Drive along the route with re-planning at every step.

    Args:
        scene: static or pre-declared moving obstacles and lane layout.
        nm: true process noise, also used by the planner's rollouts.
        p: vehicle parameters; ``p.horizon`` is the planning horizon.
        cfg: optimizer configuration.
        route_length: goal arc length in meters.
        rng_seed: episode seed; fixes the world noise and every plan.
        x0: start state, defaults to the right lane at rest speed ``v_d / 2``.
        observe_noise: plan from the true state perturbed by ``p.init_std``
            at every step, so the planner's initial-state distribution is
            the actual state uncertainty. Collisions are checked on the
            true state.

    Returns:
        EpisodeLog with exactly one terminal status.
    """
    if route_length <= 0:
        raise ValueError("route_length must be positive")
    if max_steps < 1:
        raise ValueError("max_steps must be >= 1")
    if x0 is None:
        x0 = FrenetState(0.0, scene.d1, 0.0, 0.0, 0.5 * scene.v_d)
    x = x0.as_array() if isinstance(x0, FrenetState) else np.asarray(x0, dtype=float)
    world = np.random.default_rng([int(rng_seed), 0x3A11])
    x = perturb_initial(x, p, world, ())
    init = initial_distribution(x, scene, cfg)
    dist = None
    controls, states, risk, cost, coll, lane = [], [], [], [], [], []
    status, reason = "max_steps", ""

    for k in range(max_steps):
        t0 = k * p.dt
        x_obs = perturb_initial(x, p, world, ()) if observe_noise else x
        try:
            res = optimize(x_obs, scene, nm, p, cfg, _step_seed(rng_seed, k), dist=dist, t0=t0)
        except (RuntimeError, ValueError, np.linalg.LinAlgError) as exc:
            status, reason = "aborted", f"step {k}: {exc}"
            log.warning("episode %s aborted: %s", rng_seed, reason)
            break
        a0 = float(res.controls.a[0])
        th0 = float(res.controls.theta[0])
        if nm is not None and not nm.is_zero:
            ea, et = draw_noise(a0, th0, nm, world)
            a_true, th_true = a0 + float(ea), th0 + float(et)
        else:
            a_true, th_true = a0, th0
        x = simulate(x[None], np.array([[a_true]]), np.array([[th_true]]), p)[0, 0]
        hit = bool(constraint_h_batch(x[None, None], scene, False, p.dt, t0)[0] > 0)

        controls.append((a0, th0))
        states.append(x.copy())
        risk.append(res.best.risk)
        cost.append(res.best.total)
        coll.append(hit)
        lane.append(_lane_violation(x[1], x[4], scene, p.dt))

        # warm start: setpoints are steady-state targets, so shifting the plan
        # one step leaves the mean in place; the covariance is re-inflated
        mean = res.dist.mean.copy()
        mean[0] = np.clip(mean[0], 0.0, cfg.v_max)
        cov = (1.0 - cov_reset) * res.dist.cov + cov_reset * init.cov
        dist = SamplingDistribution(mean, 0.5 * (cov + cov.T))

        if hit:
            status = "collided"
            break
        if x[0] >= route_length:
            status = "reached_goal"
            break

    H = len(states)
    return EpisodeLog(
        controls=np.array(controls, dtype=float).reshape(H, 2),
        states=np.array(states, dtype=float).reshape(H, 5),
        risk=np.array(risk, dtype=float),
        cost=np.array(cost, dtype=float),
        collision=np.array(coll, dtype=bool),
        lane_violation=np.array(lane, dtype=float),
        status=status, seed=int(rng_seed), reason=reason)


def compute_metrics(logs, route_length):
    """Aggregate episode logs into collision, lane-violation and speed metrics.

    Aborted episodes are excluded and counted separately.
    """
    logs = list(logs)
    if not logs:
        raise ValueError("compute_metrics needs at least one episode log")
    if route_length <= 0:
        raise ValueError("route_length must be positive")
    used = [g for g in logs if g.status != "aborted" and g.n_steps > 0]
    if not used:
        raise ValueError("every episode was aborted")
    collided = sum(g.collided for g in used)
    lane = np.mean([100.0 * g.lane_violation.sum() / route_length for g in used])
    avg = np.mean([g.speeds().mean() for g in used])
    mx = np.mean([g.speeds().max() for g in used])
    return MetricsReport(100.0 * collided / len(used), float(lane), float(avg), float(mx),
                         len(used), len(logs) - len(used))
