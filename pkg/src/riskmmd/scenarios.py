"""Scene generators for the trajectory-optimization and MPC benchmarks."""

import numpy as np

from .risk import Obstacle, Scene
from .vehicle import FrenetState

LANES = dict(d_lb=-1.75, d_ub=5.25, d1=0.0, d2=3.5)


def random_static_scene(seed, n_obstacles=3, v_d=5.0, a=4.0, b=1.8):
    """Random two-lane scene with static ellipses ahead of the ego vehicle.

    The first obstacle always sits in the ego lane 15-22 m ahead; the rest are
    placed at random 15-40 m ahead. Obstacles in different lanes are kept at least
    ``2 a + 6`` m apart longitudinally so that a gap always exists.
    Returns ``(x0, scene)``.
    """
    rng = np.random.default_rng([0x5EED, int(seed)])
    lanes = (LANES["d1"], LANES["d2"])
    ego_lane = int(rng.integers(2))
    x0 = FrenetState(0.0, lanes[ego_lane] + rng.uniform(-0.3, 0.3), 0.0, 0.0,
                     rng.uniform(3.0, 6.0))
    obstacles = [Obstacle(rng.uniform(15.0, 22.0), lanes[ego_lane] + rng.uniform(-0.4, 0.4), a, b)]
    while len(obstacles) < n_obstacles:
        lane = int(rng.integers(2))
        cand = Obstacle(rng.uniform(15.0, 40.0), lanes[lane] + rng.uniform(-0.4, 0.4), a, b)
        clash = any(abs(cand.s - o.s) < 2 * a + 6.0 and abs(cand.d - o.d) > 1.5
                    for o in obstacles)
        if not clash:
            obstacles.append(cand)
    return x0, Scene(v_d=v_d, obstacles=tuple(obstacles), **LANES)


def corridor(length=200.0, n_obstacles=8, first=25.0, v_d=5.0, a=3.5, b=1.6):
    """Straight two-lane corridor with obstacles alternating between lanes.

    Obstacles are spread evenly from ``first`` to ``length - 15`` m, starting
    in the ego lane. Returns ``(x0, scene)``.
    """
    s = np.linspace(first, length - 15.0, n_obstacles)
    lanes = (LANES["d1"], LANES["d2"])
    obstacles = tuple(Obstacle(float(si), lanes[i % 2], a, b) for i, si in enumerate(s))
    x0 = FrenetState(0.0, LANES["d1"], 0.0, 0.0, 0.5 * v_d)
    return x0, Scene(v_d=v_d, obstacles=obstacles, **LANES)
