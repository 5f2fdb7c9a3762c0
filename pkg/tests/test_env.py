import numpy as np
import pytest

from routelab.demands import BimodalParams
from routelab.env import EnvConfig, EnvError, RoutingEnv, make_sequence_pools, shortest_path_routing
from routelab.graph import build_network, simulate_routing
from routelab.lp import solve_optimal_umax


@pytest.fixture
def bitriangle():
    """Bidirected triangle, so every vertex pair is routable."""
    caps = {}
    for u, v in [(0, 1), (1, 2), (0, 2)]:
        caps[(u, v)] = 1.0
        caps[(v, u)] = 1.0
    return build_network(3, list(caps), caps)


def env_config(topologies, **kw):
    defaults = dict(memory_length=5, cycle_length=10, sequence_length=60, seed=0)
    defaults.update(kw)
    return EnvConfig(topologies=tuple(topologies), **defaults)


class TestEnvConfig:
    def test_length_must_exceed_memory(self, triangle):
        with pytest.raises(EnvError, match="exceed"):
            env_config([triangle], memory_length=5, sequence_length=5)

    def test_needs_topology(self):
        with pytest.raises(EnvError, match="topology"):
            env_config([])

    def test_unknown_mode(self, triangle):
        with pytest.raises(EnvError, match="mode"):
            env_config([triangle], mode="batch")


class TestSequencePools:
    def test_pool_sizes_and_determinism(self, triangle, ring5):
        cfg = env_config([triangle, ring5])
        pools = make_sequence_pools(cfg)
        assert len(pools) == 2
        for train, test in pools:
            assert len(train) == 7
            assert len(test) == 3
        again = make_sequence_pools(cfg)
        assert np.array_equal(pools[0][0][0].matrices[0], again[0][0][0].matrices[0])

    def test_train_test_disjoint(self, triangle):
        cfg = env_config([triangle])
        train, test = make_sequence_pools(cfg)[0]
        train_bytes = {seq.matrices[0].tobytes() for seq in train}
        for seq in test:
            assert seq.matrices[0].tobytes() not in train_bytes


class TestResetAndStep:
    def test_reset_deterministic_in_seed(self, triangle, ring5):
        cfg = env_config([triangle, ring5])
        env = RoutingEnv(cfg)
        a = env.reset(seed=4)
        b = env.reset(seed=4)
        assert a.network is b.network
        for x, y in zip(a.history, b.history):
            assert np.array_equal(x, y)

    def test_all_topologies_visited(self, triangle, ring5):
        cfg = env_config([triangle, ring5])
        env = RoutingEnv(cfg)
        seen = set()
        for s in range(100):
            env.reset(seed=s)
            seen.add(env._net.vertex_count)
        assert seen == {3, 5}

    def test_episode_scores_length_minus_memory_steps(self, ring5):
        cfg = env_config([ring5])
        env = RoutingEnv(cfg)
        obs = env.reset(seed=0)
        steps = 0
        done = False
        while not done:
            action = np.zeros(ring5.edge_count)
            result = env.step(action)
            done = result.done
            steps += 1
        # bimodal matrices are never all-zero in practice, so every timestep
        # after the warm-up window is scored
        assert steps == 60 - 5

    def test_observation_history_is_recent_window(self, ring5):
        cfg = env_config([ring5], memory_length=3)
        env = RoutingEnv(cfg)
        obs = env.reset(seed=1)
        assert len(obs.history) == 3
        seq = env._seq
        for i, dm in enumerate(obs.history):
            assert np.array_equal(dm, seq.matrices[env._t - 3 + i])

    def test_scored_matrix_not_in_observation(self, ring5):
        """The reward is computed on the upcoming matrix, never one the agent saw."""
        cfg = env_config([ring5])
        env = RoutingEnv(cfg)
        obs = env.reset(seed=2)
        scored = env._seq.matrices[env._t]
        for dm in obs.history:
            assert not np.array_equal(dm, scored)

    def test_reward_bounded_by_optimum(self, ring5):
        cfg = env_config([ring5])
        env = RoutingEnv(cfg)
        env.reset(seed=3)
        rng = np.random.default_rng(0)
        for _ in range(10):
            result = env.step(rng.uniform(-1, 1, ring5.edge_count))
            assert result.reward <= -1.0 + 1e-6
            if result.done:
                env.reset(seed=rng.integers(1000))

    def test_reward_definition_matches_lp(self, bitriangle):
        cfg = env_config([bitriangle])
        env = RoutingEnv(cfg)
        env.reset(seed=0)
        dm = env._seq.matrices[env._t]
        result = env.step(np.zeros(bitriangle.edge_count))
        u_opt = solve_optimal_umax(bitriangle, dm).u_max_optimal
        assert result.info["u_max_optimal"] == pytest.approx(u_opt)
        assert result.reward == pytest.approx(-result.info["u_max_agent"] / u_opt)

    def test_step_after_done_raises(self, bitriangle):
        cfg = env_config([bitriangle], sequence_length=7, memory_length=5)
        env = RoutingEnv(cfg)
        env.reset(seed=0)
        done = False
        while not done:
            done = env.step(np.zeros(bitriangle.edge_count)).done
        with pytest.raises(EnvError, match="reset"):
            env.step(np.zeros(bitriangle.edge_count))

    def test_non_finite_action_rejected(self, bitriangle):
        env = RoutingEnv(env_config([bitriangle]))
        env.reset(seed=0)
        action = np.zeros(bitriangle.edge_count)
        action[0] = np.nan
        with pytest.raises(EnvError, match="non-finite"):
            env.step(action)

    def test_lp_cache_reused_across_cycle(self, bitriangle):
        cfg = env_config([bitriangle], cycle_length=5)
        env = RoutingEnv(cfg)
        env.reset(seed=0)
        done = False
        while not done:
            done = env.step(np.zeros(bitriangle.edge_count)).done
        # one LP per distinct matrix in the cycle, not per timestep
        assert len(env._lp_cache) <= 5


class TestIterativeMode:
    def test_one_weight_per_call_then_score(self, bitriangle):
        cfg = env_config([bitriangle], mode="iterative")
        env = RoutingEnv(cfg)
        obs = env.reset(seed=0)
        assert obs.edge_state is not None
        assert obs.edge_state.target_index == 0
        rewards = []
        for i in range(bitriangle.edge_count):
            result = env.step(np.array([0.5, 0.0]))
            rewards.append(result.reward)
            if i < bitriangle.edge_count - 1:
                assert result.observation.edge_state.target_index == i + 1
                assert result.observation.edge_state.set_flags[: i + 1].sum() == i + 1
        assert rewards[:-1] == [0.0] * (bitriangle.edge_count - 1)
        assert rewards[-1] < 0.0
        # edge state resets for the next timestep
        assert result.observation.edge_state.target_index == 0
        assert result.observation.edge_state.set_flags.sum() == 0

    def test_action_shape_checked(self, bitriangle):
        env = RoutingEnv(env_config([bitriangle], mode="iterative"))
        env.reset(seed=0)
        with pytest.raises(EnvError, match="2-vector"):
            env.step(np.zeros(3))


class TestNoLeakage:
    def test_test_pool_sequences_unseen_in_training(self, triangle):
        cfg = env_config([triangle])
        pools = make_sequence_pools(cfg)
        train_env = RoutingEnv(cfg, train=True, pools=pools)
        test_env = RoutingEnv(cfg, train=False, pools=pools)
        train_seen = set()
        for s in range(50):
            train_env.reset(seed=s)
            train_seen.add(train_env._seq.matrices[0].tobytes())
        for s in range(50):
            test_env.reset(seed=s)
            assert test_env._seq.matrices[0].tobytes() not in train_seen


class TestShortestPathRouting:
    def test_triangle_direct_edge(self, triangle):
        dm = np.zeros((3, 3))
        dm[0, 2] = 1.0
        routing = shortest_path_routing(triangle, dm)
        assert routing.ratios == {(0, 2): {(0, 2): 1.0}}

    def test_single_path_per_flow(self, ring5):
        rng = np.random.default_rng(0)
        dm = rng.uniform(0, 1, (5, 5)) * (1 - np.eye(5))
        routing = shortest_path_routing(ring5, dm)
        for ratios in routing.ratios.values():
            assert all(r == 1.0 for r in ratios.values())

    def test_never_better_than_lp(self, ring5):
        rng = np.random.default_rng(1)
        dm = rng.uniform(0, 1, (5, 5)) * (1 - np.eye(5))
        u_sp = simulate_routing(ring5, dm, shortest_path_routing(ring5, dm)).u_max
        u_opt = solve_optimal_umax(ring5, dm).u_max_optimal
        assert u_sp >= u_opt - 1e-9

    def test_ratio_two_on_forced_bottleneck(self):
        # two flows share the only shortest path edge while the optimum splits
        # one of them over a longer detour
        caps = {}
        for u, v in [(0, 1), (1, 3), (0, 2), (2, 3)]:
            caps[(u, v)] = 1.0
        caps[(0, 3)] = 1.0
        net = build_network(4, list(caps), caps)
        dm = np.zeros((4, 4))
        dm[0, 3] = 3.0
        u_sp = simulate_routing(net, dm, shortest_path_routing(net, dm)).u_max
        u_opt = solve_optimal_umax(net, dm).u_max_optimal
        assert u_sp / u_opt == pytest.approx(3.0)

    def test_unreachable_flow_raises(self):
        caps = {(0, 1): 1.0, (2, 1): 1.0}
        net = build_network(3, list(caps), caps)
        dm = np.zeros((3, 3))
        dm[0, 2] = 1.0
        with pytest.raises(EnvError, match="sink"):
            shortest_path_routing(net, dm)
