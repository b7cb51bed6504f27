import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from riskmmd.frenet import SamplingDistribution
from riskmmd.optimizer import (OptimizerConfig, optimize, score_candidate, select_elites,
                               state_cost, update_distribution)
from riskmmd.risk import Obstacle, Scene, constraint_h
from riskmmd.vehicle import FrenetState, NoiseModel, VehicleParams, simulate

P = VehicleParams()
NM = NoiseModel("gaussian", 0.1, 0.001, 0.1, 0.001)
FAST = OptimizerConfig(n=60, n_c=20, n_e=8, iters=4, N=2)


def const_traj(v, d, H=40, dt=0.1):
    x = np.zeros((H, 5))
    x[:, 0] = v * dt * np.arange(1, H + 1)
    x[:, 1] = d
    x[:, 4] = v
    return x


class TestStateCost:
    def test_on_lane_at_speed(self):
        assert state_cost(const_traj(5.0, 0.0), Scene(v_d=5.0)) == 0.0

    def test_between_lanes(self):
        scene = Scene(v_d=5.0)
        assert state_cost(const_traj(5.0, 1.75), scene) == pytest.approx(40 * 1.75**2, abs=1e-9)

    @pytest.mark.parametrize("seed", range(3))
    def test_loop_oracle(self, seed):
        r = np.random.default_rng(seed)
        x = r.normal(size=(12, 5))
        scene = Scene(v_d=4.0)
        ref = 0.0
        for k in range(12):
            ref += (x[k, 4] - 4.0) ** 2 + abs(x[k, 1] - 0.0) * abs(x[k, 1] - 3.5)
        for k in range(1, 11):
            ref += ((x[k + 1, 0] - 2 * x[k, 0] + x[k - 1, 0]) / 0.01) ** 2
            ref += ((x[k + 1, 1] - 2 * x[k, 1] + x[k - 1, 1]) / 0.01) ** 2
        assert state_cost(x, scene) == pytest.approx(ref, rel=1e-12, abs=1e-10)

    def test_short_horizon(self):
        with pytest.raises(ValueError):
            state_cost(np.zeros((2, 5)), Scene())


class TestScoreCandidate:
    x0 = FrenetState(0, 0, 0, 0, 5)

    @pytest.mark.parametrize("kind", ["mmd", "cvar"])
    def test_obstacle_free_risk_is_zero(self, kind):
        cfg = FAST.replace(risk_kind=kind)
        for b in ([5, 0], [8, 3.5], [0.0, -1.0]):
            assert score_candidate(np.array(b, float), self.x0, Scene(), NM, P, cfg, 1).risk < 1e-3

    def test_control_only_cost(self):
        cfg = FAST.replace(w1=0.0, w2=0.0)
        c = score_candidate(np.array([7.0, 2.0]), self.x0, Scene(), NM, P, cfg, 0)
        assert c.total == cfg.w3 * c.control_cost
        assert c.control_cost == pytest.approx(c.controls.sq_norm(), rel=1e-14)

    def test_recomposition(self):
        scene = Scene(obstacles=[Obstacle(15, 0.5)])
        c = score_candidate(np.array([6.0, 0.0]), self.x0, scene, NM, P, FAST, 3)
        assert c.total == FAST.w1 * c.expected_cost + FAST.w2 * c.risk + FAST.w3 * c.control_cost

    @pytest.mark.parametrize("kind", ["mmd", "cvar", "det"])
    def test_deterministic(self, kind):
        scene = Scene(obstacles=[Obstacle(15, 0.5)])
        cfg = FAST.replace(risk_kind=kind)
        a = score_candidate(np.array([6.0, 1.0]), self.x0, scene, NM, P, cfg, 5)
        b = score_candidate(np.array([6.0, 1.0]), self.x0, scene, NM, P, cfg, 5)
        assert a.total == b.total and np.array_equal(a.controls.a, b.controls.a)

    def test_mmd_uses_N_reduced_rollouts(self):
        scene = Scene(obstacles=[Obstacle(15, 0.5)])
        c = score_candidate(np.array([6.0, 0.0]), self.x0, scene, NM, P, FAST.replace(N=3), 0)
        assert c.h_values.shape == (3,) and abs(c.beta.sum() - 1) < 1e-9

    def test_cvar_uses_N_rollouts(self):
        c = score_candidate(np.array([6.0, 0.0]), self.x0, Scene(), NM, P,
                            FAST.replace(N=5, risk_kind="cvar"), 0)
        assert c.h_values.shape == (5,)


class TestElites:
    def test_inclusion(self, rng):
        risk = rng.random(50).round(1)
        total = rng.random(50)
        ce, e = select_elites(risk, total, 20, 5)
        assert set(e) <= set(ce) <= set(range(50))
        assert len(ce) == 20 and len(e) == 5
        assert risk[ce].max() <= np.sort(risk)[19]

    def test_ties_broken_by_cost(self):
        ce, e = select_elites(np.zeros(5), np.array([3.0, 1.0, 2.0, 0.0, 4.0]), 3, 2)
        assert list(ce) == [3, 1, 2] and list(e) == [3, 1]


class TestUpdate:
    dist = SamplingDistribution([5.0, 0.0], np.diag([4.0, 2.25]))
    b = np.array([[6.0, 1.0], [4.0, -1.0], [5.5, 3.0]])

    def test_eta_zero(self):
        out = update_distribution(self.dist, self.b, np.array([1.0, 2.0, 3.0]), 1.0, 0.0)
        assert np.array_equal(out.mean, self.dist.mean) and np.array_equal(out.cov, self.dist.cov)

    def test_equal_costs(self):
        out = update_distribution(self.dist, self.b, np.full(3, 7.0), 1.0, 1.0)
        assert np.allclose(out.mean, self.b.mean(axis=0), atol=1e-12)

    def test_two_elites_hand_evaluation(self):
        b = self.b[:2]
        out = update_distribution(self.dist, b, np.array([0.0, 2.0 * np.log(2)]), 2.0, 1.0)
        assert np.allclose(out.mean, (2 * b[0] + b[1]) / 3, atol=1e-12)

    @given(arrays(int, 6, elements=st.integers(0, 2**20)), st.integers(-2**20, 2**20),
           st.floats(0.1, 10), st.floats(0.0, 1.0))
    def test_shift_invariance_exact(self, c, shift, gamma, eta):
        # costs on a dyadic grid make every cost difference exact in floating point
        c = c / 1024.0
        b = np.random.default_rng(0).normal(size=(6, 2))
        a = update_distribution(self.dist, b, c, gamma, eta)
        s = update_distribution(self.dist, b, c + shift / 1024.0, gamma, eta)
        assert np.array_equal(a.mean, s.mean) and np.array_equal(a.cov, s.cov)

    @given(arrays(float, 6, elements=st.floats(0, 100)), st.floats(-1e3, 1e3),
           st.floats(0.1, 10), st.floats(0.0, 1.0))
    def test_shift_invariance_float(self, c, shift, gamma, eta):
        b = np.random.default_rng(0).normal(size=(6, 2))
        a = update_distribution(self.dist, b, c, gamma, eta)
        s = update_distribution(self.dist, b, c + shift, gamma, eta)
        assert np.allclose(a.mean, s.mean, rtol=0, atol=1e-9)
        assert np.allclose(a.cov, s.cov, rtol=0, atol=1e-9)

    @given(arrays(float, (5, 2), elements=st.floats(-10, 10)),
           arrays(float, 5, elements=st.floats(0, 50)), st.floats(0.0, 1.0))
    def test_covariance_floor(self, b, c, eta):
        out = update_distribution(self.dist, b, c, 1.0, eta, cov_floor=1e-4)
        assert np.array_equal(out.cov, out.cov.T)
        assert np.linalg.eigvalsh(out.cov).min() >= 1e-4 * (1 - 1e-9)


class TestOptimize:
    x0 = FrenetState(0, 0, 0, 0, 5)

    def test_tracks_speed_on_empty_road(self):
        res = optimize(self.x0, Scene(v_d=5.0), NM, P, FAST, 0)
        traj = simulate(self.x0.as_array()[None], res.controls.a[None],
                        res.controls.theta[None], P)[0]
        assert np.all(np.abs(traj[20:, 4] - 5.0) < 0.5)

    @pytest.mark.parametrize("kind", ["mmd", "cvar", "det"])
    def test_avoids_blocking_obstacle(self, kind):
        scene = Scene(v_d=5.0, obstacles=[Obstacle(14.0, 0.0, 4.0, 1.8)])
        res = optimize(self.x0, scene, NM, P, OptimizerConfig(N=2, risk_kind=kind), 1)
        traj = simulate(self.x0.as_array()[None], res.controls.a[None],
                        res.controls.theta[None], P)[0]
        assert constraint_h(traj, scene) < 0

    def test_best_ever_monotone_and_elite_inclusion(self):
        scene = Scene(obstacles=[Obstacle(14.0, 0.0)])
        res = optimize(self.x0, scene, NM, P, FAST, 2)
        best = [t["best_ever_total"] for t in res.trace]
        assert all(b1 <= b0 for b0, b1 in zip(best, best[1:]))
        for t in res.trace:
            assert set(t["elite"]) <= set(t["constraint_elite"])

    def test_deterministic(self):
        scene = Scene(obstacles=[Obstacle(14.0, 0.0)])
        a = optimize(self.x0, scene, NM, P, FAST, 4)
        b = optimize(self.x0, scene, NM, P, FAST, 4)
        assert np.array_equal(a.controls.a, b.controls.a) and a.best.total == b.best.total

    def test_none_equals_det_without_risk_weight(self):
        scene = Scene(obstacles=[Obstacle(40.0, 3.5)])
        a = optimize(self.x0, scene, NM, P, FAST.replace(risk_kind="none", w2=0.0), 3)
        b = optimize(self.x0, scene, None, P, FAST.replace(risk_kind="det", w2=0.0), 3)
        assert np.array_equal(a.controls.a, b.controls.a)

    def test_unavoidable_collision_raises_risk(self):
        wall = Scene(obstacles=[Obstacle(12.0, 1.75, 3.0, 6.0)])
        blocked = optimize(self.x0, wall, NM, P, FAST, 0).best.risk
        free = optimize(self.x0, Scene(), NM, P, FAST, 0).best.risk
        assert blocked >= free

    def test_config_validation(self):
        with pytest.raises(ValueError):
            OptimizerConfig(n=10, n_c=20)
        with pytest.raises(ValueError):
            OptimizerConfig(risk_kind="bogus")
