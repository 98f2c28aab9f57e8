import numpy as np
import pytest

from pulsezero import alphazero as az
from pulsezero import environments as envs
from pulsezero import quantum as q
from pulsezero.errors import (
    DomainError,
    InvalidInputError,
    NodeExhaustedError,
    SearchSpaceExhausted,
)
from pulsezero.network import PolicyValueNetwork, ReplayBuffer, TrainingConfig, encoding_dim
from pulsezero.records import Budget


def tiny_network(env, seed=0, width=16, layers=2):
    return PolicyValueNetwork(
        input_dim=encoding_dim(env.dim),
        action_count=env.action_count,
        hidden_width=width,
        torso_layers=layers,
        rng=np.random.default_rng(seed),
    )


def fresh_node(action_count=3, priors=None, state=None):
    node = az.TreeNode(state, action_count)
    node.install_priors(
        np.full(action_count, 1.0 / action_count) if priors is None else np.asarray(priors)
    )
    return node


def two_action_env(fidelities=(0.2, 0.9), horizon=1):
    """Single-qubit env whose actions have known terminal fidelities."""
    tables = []
    for f in fidelities:
        theta = np.arccos(np.sqrt(f))
        tables.append(q.expm_hermitian(theta * q.PAULI_X, 1.0))
    return envs.TableEnvironment(np.array(tables), horizon, np.eye(2, dtype=complex))


class TestSelectChild:
    def test_symmetric_fresh_node_breaks_tie_to_zero(self):
        node = fresh_node(4)
        assert az.select_child(node, 1.0) == 0

    def test_q_dominates_at_equal_uncertainty(self):
        node = fresh_node(2)
        node.visit_counts[:] = [5, 5]
        node.total_values[:] = [4.5, 0.5]
        node.mean_values[:] = [0.9, 0.1]
        assert az.select_child(node, 1.0) == 0

    def test_matches_direct_formula_oracle(self):
        node = fresh_node(3)
        node.visit_counts[:] = [3, 1, 0]
        node.total_values[:] = [1.5, 0.6, 0.0]
        node.mean_values[:] = [0.5, 0.6, 0.0]
        c = 1.0
        # independent scorer, straight from the definition
        total = node.visit_counts.sum()
        scores = [
            node.mean_values[a]
            + c * node.priors[a] * np.sqrt(total) / (1 + node.visit_counts[a])
            for a in range(3)
        ]
        assert az.select_child(node, c) == int(np.argmax(scores))

    def test_exhausted_children_are_skipped(self):
        env = two_action_env()
        node = az.TreeNode(env.initial_state(), 2)
        node.install_priors(np.array([0.9, 0.1]))
        child0 = az._make_child(node, 0, env)
        child0.exhausted = True
        assert az.select_child(node, 1.0) == 1

    def test_all_exhausted_raises(self):
        env = two_action_env()
        node = az.TreeNode(env.initial_state(), 2)
        node.install_priors(np.array([0.5, 0.5]))
        for a in range(2):
            az._make_child(node, a, env).exhausted = True
        with pytest.raises(NodeExhaustedError):
            az.select_child(node, 1.0)

    def test_unexpanded_node_rejected(self):
        node = az.TreeNode(None, 2)
        with pytest.raises(InvalidInputError):
            az.select_child(node, 1.0)


class TestExpandAndEvaluate:
    def test_terminal_returns_true_fidelity_without_network(self):
        env = two_action_env(horizon=1)
        root = az.TreeNode(env.initial_state(), 2)
        leaf = az._make_child(root, 1, env)
        assert leaf.terminal
        value = az.expand_and_evaluate(leaf, network=None, horizon=env.horizon)
        assert value == pytest.approx(0.9, abs=1e-12)

    def test_priors_sum_to_one(self):
        env = two_action_env(horizon=2)
        net = tiny_network(env)
        node = az.TreeNode(env.initial_state(), 2)
        az.expand_and_evaluate(node, net, env.horizon)
        assert node.priors.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(node.priors >= 0)

    def test_double_expansion_rejected(self):
        env = two_action_env(horizon=2)
        net = tiny_network(env)
        node = az.TreeNode(env.initial_state(), 2)
        az.expand_and_evaluate(node, net, env.horizon)
        with pytest.raises(InvalidInputError):
            az.expand_and_evaluate(node, net, env.horizon)


class TestBackup:
    def test_single_backup(self):
        node = fresh_node(2)
        az.backup([(node, 1)], 0.7)
        assert node.visit_counts[1] == 1
        assert node.total_values[1] == pytest.approx(0.7)
        assert node.mean_values[1] == pytest.approx(0.7)

    def test_mean_of_two_backups(self):
        node = fresh_node(2)
        az.backup([(node, 0)], 0.4)
        az.backup([(node, 0)], 0.8)
        assert node.mean_values[0] == pytest.approx(0.6)

    def test_q_equals_w_over_n_after_many_backups(self):
        rng = np.random.default_rng(0)
        node = fresh_node(5)
        logged = {a: [] for a in range(5)}
        for _ in range(1000):
            a = int(rng.integers(5))
            v = float(rng.uniform(0, 1))
            logged[a].append(v)
            az.backup([(node, a)], v)
        for a in range(5):
            if logged[a]:
                assert node.visit_counts[a] == len(logged[a])
                assert abs(node.mean_values[a] - np.sum(logged[a]) / len(logged[a])) < 1e-12
                assert abs(node.mean_values[a] * node.visit_counts[a] - node.total_values[a]) < 1e-9


class TestRootPolicy:
    def test_proportional_at_tau_one(self):
        pi = az.root_policy(np.array([10.0, 30.0, 0.0]), tau=1.0)
        assert np.allclose(pi, [0.25, 0.75, 0.0])

    def test_deterministic_mode_one_hot(self):
        pi = az.root_policy(np.array([10.0, 30.0, 5.0]), tau=0.5)
        assert np.array_equal(pi, [0.0, 1.0, 0.0])

    def test_power_law(self):
        # tau = 0.5 squares the counts: (1, 4, 16)/21
        pi = az.root_policy(np.array([1.0, 2.0, 4.0]), tau=0.5, deterministic_threshold=0.1)
        assert np.allclose(pi, np.array([1.0, 4.0, 16.0]) / 21.0, atol=1e-12)

    def test_no_visits_rejected(self):
        with pytest.raises(DomainError):
            az.root_policy(np.zeros(3), tau=1.0)

    def test_deterministic_tie_breaks_low(self):
        pi = az.root_policy(np.array([7.0, 7.0]), tau=0.1)
        assert np.array_equal(pi, [1.0, 0.0])


class TestRootNoise:
    def test_epsilon_zero_is_identity(self):
        node = fresh_node(3, priors=[0.2, 0.3, 0.5])
        before = node.priors.copy()
        az.add_root_noise(node, np.random.default_rng(0), epsilon=0.0)
        assert np.array_equal(node.priors, before)

    def test_noised_priors_stay_on_simplex(self):
        node = fresh_node(60)
        az.add_root_noise(node, np.random.default_rng(1), alpha=0.03, epsilon=0.25)
        assert abs(node.priors.sum() - 1.0) < 1e-9
        assert np.all(node.priors >= 0)

    def test_seeded_noise_reproducible(self):
        a = fresh_node(6, priors=np.full(6, 1 / 6))
        b = fresh_node(6, priors=np.full(6, 1 / 6))
        az.add_root_noise(a, np.random.default_rng(7))
        az.add_root_noise(b, np.random.default_rng(7))
        assert np.array_equal(a.priors, b.priors)


class TestMarkExhausted:
    def test_terminal_flagging_and_propagation(self):
        env = two_action_env(horizon=1)
        root = az.TreeNode(env.initial_state(), 2)
        root.install_priors(np.array([0.5, 0.5]))
        c0 = az._make_child(root, 0, env)
        c1 = az._make_child(root, 1, env)
        az.mark_exhausted(c0)
        assert c0.exhausted and not root.exhausted
        az.mark_exhausted(c1)
        assert root.exhausted


class TestRunEpisode:
    def test_one_step_argmax_selects_best_action(self):
        env = two_action_env((0.2, 0.9), horizon=1)
        net = tiny_network(env, seed=1)
        config = az.SearchConfig(simulations=50)
        result = az.run_episode(
            env, net, config, np.random.default_rng(0), tau=0.1
        )
        assert result.actions == (1,)
        assert result.terminal_fidelity == pytest.approx(0.9, abs=1e-12)

    def test_exhaustive_unique_enumeration(self):
        env = envs.toy_digital_environment(horizon=3)
        net = tiny_network(env, seed=2)
        config = az.SearchConfig(simulations=16)
        rng = np.random.default_rng(3)
        root = az.TreeNode(env.initial_state(), env.action_count)
        seen = []
        for k in range(8):
            assert not root.exhausted  # exhaustion arrives exactly at episode 8
            result = az.run_episode(env, net, config, rng, root=root, tau=1.0)
            seen.append(result.actions)
        assert root.exhausted
        assert sorted(seen) == sorted(
            [(a, b, c) for a in range(2) for b in range(2) for c in range(2)]
        )
        with pytest.raises(SearchSpaceExhausted):
            az.run_episode(env, net, config, rng, root=root, tau=1.0)

    def test_replay_records_share_terminal_outcome(self):
        env = envs.toy_digital_environment(horizon=4)
        net = tiny_network(env, seed=4)
        buffer = ReplayBuffer(100)
        result = az.run_episode(
            env, net, az.SearchConfig(simulations=8), np.random.default_rng(5),
            replay_buffer=buffer,
        )
        assert len(buffer) == 4 == len(result.actions)
        _, _, z = buffer.sample(32, np.random.default_rng(6))
        assert np.all(z == z[0])
        assert z[0] == pytest.approx(result.terminal_fidelity)

    def test_stored_policies_are_simplex(self):
        env = envs.toy_digital_environment(horizon=5)
        net = tiny_network(env, seed=7)
        result = az.run_episode(
            env, net, az.SearchConfig(simulations=12), np.random.default_rng(8)
        )
        for pi in result.policies:
            assert abs(pi.sum() - 1.0) < 1e-9
            assert np.all(pi >= 0)


class TestInvariants:
    def test_root_visit_conservation(self):
        env = envs.toy_digital_environment(horizon=4)
        net = tiny_network(env, seed=9)
        config = az.SearchConfig(simulations=2)
        root = az.TreeNode(env.initial_state(), env.action_count)
        az.expand_and_evaluate(root, net, env.horizon)
        for n_sims in [1, 10, 29]:
            before = root.visit_counts.sum()
            for _ in range(n_sims):
                az._simulate(root, env, net, config)
            assert root.visit_counts.sum() == before + n_sims

    def test_q_w_n_consistency_after_search(self):
        env = envs.toy_digital_environment(horizon=4)
        net = tiny_network(env, seed=10)
        root = az.TreeNode(env.initial_state(), env.action_count)
        az.expand_and_evaluate(root, net, env.horizon)
        for _ in range(200):
            az._simulate(root, env, net, az.SearchConfig(simulations=2))

        def check(node):
            if not node.expanded:
                return
            visited = node.visit_counts > 0
            assert np.all(
                np.abs(
                    node.mean_values[visited] * node.visit_counts[visited]
                    - node.total_values[visited]
                )
                < 1e-12
            )
            for child in node.children.values():
                check(child)

        check(root)

    def test_simulations_must_be_at_least_two(self):
        with pytest.raises(DomainError):
            az.SearchConfig(simulations=1)


class TestTrainingDriver:
    def test_episode_budget_yields_exact_record_count(self):
        env = envs.toy_digital_environment(horizon=5)
        net = tiny_network(env, seed=11)
        run = az.training_driver(
            env, net, Budget(units=10), np.random.default_rng(12),
            config=az.SearchConfig(simulations=8),
            training=TrainingConfig(min_fill=10, batch_size=8),
        )
        assert len(run.records) == 10
        assert not run.exhausted

    def test_sequences_pairwise_distinct(self):
        env = envs.toy_digital_environment(horizon=5)
        net = tiny_network(env, seed=13)
        run = az.training_driver(
            env, net, Budget(units=15), np.random.default_rng(14),
            config=az.SearchConfig(simulations=8),
        )
        sequences = [r.sequence for r in run.records]
        assert len(set(sequences)) == len(sequences)

    def test_exhaustion_stops_cleanly(self):
        env = envs.toy_digital_environment(horizon=3)
        net = tiny_network(env, seed=15)
        run = az.training_driver(
            env, net, Budget(units=50), np.random.default_rng(16),
            config=az.SearchConfig(simulations=8),
        )
        assert run.exhausted
        assert len(run.records) == 8  # all distinct sequences, then a clean stop

    def test_driver_determinism(self):
        def one_run():
            env = envs.toy_digital_environment(horizon=4)
            net = tiny_network(env, seed=17)
            return az.training_driver(
                env, net, Budget(units=6), np.random.default_rng(18),
                config=az.SearchConfig(simulations=8),
                training=TrainingConfig(min_fill=8, batch_size=4),
            )

        a, b = one_run(), one_run()
        assert [r.sequence for r in a.records] == [r.sequence for r in b.records]
        assert [r.infidelity for r in a.records] == [r.infidelity for r in b.records]

    def test_tau_schedule(self):
        config = az.SearchConfig()
        assert config.tau_for_episode(0) == 1.0
        assert config.tau_for_episode(100) == pytest.approx(1 / 1.1)
        # the deterministic switch engages near episode 112
        assert config.tau_for_episode(111) >= 0.90
        assert config.tau_for_episode(112) < 0.90
