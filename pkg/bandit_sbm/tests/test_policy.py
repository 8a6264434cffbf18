"""
Tests for the cooperative UCB decision rules and estimator updates
"""
import logging
import math

import numpy as np
import pytest

from bandit_sbm.errors import ConfigurationError
from bandit_sbm.graph import BlockModel, GraphSample, sample_graph
from bandit_sbm.policy import (
    ForcedExploration,
    HomoNetworkState,
    HomoPayload,
    SbmNetworkState,
    UpdateRule,
    burnin_arms,
    burnin_finalize,
    burnin_step,
    default_c1,
    homo_exchange,
    homo_merge,
    homo_select_arms,
    homo_ucb_index,
    lagging_agents,
    local_ucb_step,
    rule1_update,
    rule2_update,
    sbm_select_arm,
    sbm_select_arms,
    sbm_update,
)


def payload(sender, count, total, round_):
    return HomoPayload(sender=sender, counts=np.array([count]), sums=np.array([total]), round=round_)


def learning_round(state, t, rewards, graph, rule=UpdateRule.RULE1, tau=1, c1=0.02):
    """One learning round with externally supplied rewards for the chosen arms"""
    arms = sbm_select_arms(state, t, c1)
    state.record_pull(arms, rewards[np.arange(state.n_agents), arms])
    batch = state.emit(t)
    sbm_update(rule, state, batch, graph, t, tau)
    return arms


class TestHomoUcbIndex:
    """Tests for the single-cluster UCB index"""

    def test_zero_bonus_at_first_round(self):
        state = HomoNetworkState(1, 1)
        state.own_count[0, 0] = 5
        state.own_sum[0, 0] = 2.0
        assert homo_ucb_index(state, 0, 0, 1) == pytest.approx(0.4)

    def test_bonus_arithmetic(self):
        """Test ln t = 4, count 4, mean 0.5 gives 1.5"""
        state = HomoNetworkState(1, 1)
        state.own_count[0, 0] = 4
        state.own_sum[0, 0] = 2.0
        assert homo_ucb_index(state, 0, 0, math.exp(4)) == pytest.approx(1.5)

    def test_untried_arm_is_infinite(self):
        assert homo_ucb_index(HomoNetworkState(1, 2), 0, 1, 10) == math.inf

    def test_untried_arms_selected_first(self):
        state = HomoNetworkState(1, 3)
        state.record_pull(np.array([0]), np.array([0.9]))
        assert homo_select_arms(state, 2).tolist() == [1]


class TestHomoMerge:
    """Tests for peer snapshot replacement"""

    def test_empty_inbox(self):
        state = HomoNetworkState(2, 1)
        homo_merge(state, 0, [])
        assert state.merged_count().tolist() == [[0], [0]]

    def test_replacement_semantics(self):
        """Test a new snapshot replaces rather than adds to the old one"""
        state = HomoNetworkState(2, 1)
        homo_merge(state, 0, [payload(1, 2, 0.8, 3)])
        assert state.merged_count()[0, 0] == 2
        homo_merge(state, 0, [payload(1, 3, 1.2, 4)])
        assert state.merged_count()[0, 0] == 3
        assert state.merged_mean()[0, 0] == pytest.approx(0.4)

    def test_newest_round_retained(self):
        state = HomoNetworkState(2, 1)
        homo_merge(state, 0, [payload(1, 2, 0.4, 5), payload(1, 6, 1.8, 7)])
        assert state.peer_count[0, 1, 0] == 6
        assert state.last_contact[0, 1] == 7

    def test_stale_payload_ignored(self):
        state = HomoNetworkState(2, 1)
        homo_merge(state, 0, [payload(1, 6, 1.8, 7), payload(1, 2, 0.4, 5)])
        assert state.peer_count[0, 1, 0] == 6

    def test_own_payload_skipped(self):
        state = HomoNetworkState(2, 1)
        homo_merge(state, 0, [payload(0, 9, 9.0, 1)])
        assert state.merged_count()[0, 0] == 0

    def test_exchange_along_edges(self):
        state = HomoNetworkState(3, 1)
        state.record_pull(np.zeros(3, dtype=int), np.array([0.1, 0.2, 0.3]))
        homo_exchange(state, GraphSample.from_edges(3, [(0, 1)]), 1)
        assert state.merged_count()[:, 0].tolist() == [2, 2, 1]
        assert state.last_contact[0, 1] == 1 and state.last_contact[0, 2] == -1


class TestLocalUcb:
    """Tests for the no-communication baseline"""

    def test_lowest_untried_arm(self):
        state = HomoNetworkState(1, 3)
        state.record_pull(np.array([0]), np.array([0.5]))
        assert local_ucb_step(state, 0, 2, 0.02) == 1

    def test_dominant_mean(self):
        state = HomoNetworkState(1, 2)
        for _ in range(5):
            state.record_pull(np.array([0]), np.array([0.9]))
            state.record_pull(np.array([1]), np.array([0.1]))
        assert local_ucb_step(state, 0, 11, 0.02) == 0

    def test_default_c1(self):
        assert default_c1(0.1) == pytest.approx(0.02)


class TestBurnin:
    """Tests for the round-robin burn-in"""

    def test_round_robin_arm(self):
        assert burnin_arms(SbmNetworkState(2, 3), 7).tolist() == [1, 1]

    def test_counts_after_full_cycles(self):
        state = SbmNetworkState(2, 3)
        for t in range(1, 7):
            burnin_step(state, t, np.zeros(2), GraphSample.complete(2))
        assert state.n.tolist() == [[2, 2, 2], [2, 2, 2]]

    def test_contact_frequency_running_average(self):
        state = SbmNetworkState(2, 1)
        burnin_step(state, 1, np.zeros(2), GraphSample.complete(2))
        burnin_step(state, 2, np.zeros(2), GraphSample.empty(2))
        assert state.contact_frequency[0, 1] == pytest.approx(0.5)
        assert state.contact_frequency[0, 0] == 1.0

    def test_incremental_local_mean(self):
        state = SbmNetworkState(1, 1)
        for t, reward in enumerate([0.2, 0.4, 0.9], 1):
            burnin_step(state, t, np.array([reward]), GraphSample.empty(1))
        assert state.bar_mu[0, 0] == pytest.approx(0.5)

    def test_finalize_single_agent(self):
        state = SbmNetworkState(1, 2)
        burnin_step(state, 1, np.array([0.3]), GraphSample.empty(1))
        burnin_step(state, 2, np.array([0.7]), GraphSample.empty(1))
        burnin_finalize(state)
        np.testing.assert_allclose(state.tilde_mu, state.bar_mu)

    def test_finalize_equal_weights(self):
        """Test two connected agents with means 0.2 and 0.6 both start at 0.4"""
        state = SbmNetworkState(2, 1)
        burnin_step(state, 1, np.array([0.2, 0.6]), GraphSample.complete(2))
        burnin_finalize(state)
        np.testing.assert_allclose(state.tilde_mu, [[0.4], [0.4]])
        assert state.N.tolist() == state.n.tolist() == state.Ntilde.tolist()

    def test_finalize_unseen_peer_gets_no_weight(self, caplog):
        state = SbmNetworkState(3, 1)
        burnin_step(state, 1, np.array([0.3, 0.6, 0.9]), GraphSample.from_edges(3, [(0, 1)]))
        with caplog.at_level(logging.WARNING):
            burnin_finalize(state)
        assert state.tilde_mu[0, 0] == pytest.approx(0.3)
        assert state.tilde_mu[2, 0] == pytest.approx(0.9)
        assert "never contacted" in caplog.text


class TestSbmSelectArm:
    """Tests for learning-period arm selection"""

    def test_ucb_branch(self):
        state = SbmNetworkState(1, 2)
        state.N[:] = 10
        state.Ntilde[:] = 10
        state.tilde_mu[:] = [0.9, 0.1]
        assert sbm_select_arm(state, 0, 1000, 0.02) == 0

    def test_forced_branch(self):
        """Test N lagging Ntilde by more than K forces arm t mod K"""
        state = SbmNetworkState(1, 2)
        state.N[:] = [10, 10]
        state.Ntilde[:] = [10, 13]
        state.tilde_mu[:] = [0.9, 0.1]
        assert sbm_select_arm(state, 0, 5, 0.02) == 1

    def test_uniform_forced_exploration(self):
        state = SbmNetworkState(3, 4)
        state.N[:] = 1
        state.Ntilde[:] = 20
        arms = sbm_select_arms(state, 9, 0.02, ForcedExploration.UNIFORM, np.random.default_rng(0))
        assert np.all((arms >= 0) & (arms < 4))

    def test_uniform_needs_generator(self):
        state = SbmNetworkState(1, 2)
        state.N[:] = 1
        state.Ntilde[:] = 10
        with pytest.raises(ValueError):
            sbm_select_arms(state, 3, 0.02, ForcedExploration.UNIFORM)

    def test_ties_break_low(self):
        state = SbmNetworkState(1, 3)
        state.N[:] = 5
        state.Ntilde[:] = 5
        assert sbm_select_arm(state, 0, 10, 0.02) == 0


class TestRule1:
    """Tests for agent-level weighting"""

    def test_two_agent_single_step(self):
        """Test one update of an always-connected pair against a hand calculation"""
        state = SbmNetworkState(2, 1)
        burnin_step(state, 1, np.array([0.2, 0.6]), GraphSample.complete(2))
        burnin_finalize(state)

        state.record_pull(np.array([0, 0]), np.array([0.4, 0.8]))
        batch = state.emit(2)
        rule1_update(state, batch, GraphSample.complete(2), 2)

        # P' = 1/4 per contacted agent, d = 1/4: 0.25*0.4*2 + 0.25*(0.3 + 0.7)
        np.testing.assert_allclose(state.tilde_mu, [[0.45], [0.45]])
        assert state.N.tolist() == [[2], [2]]
        assert state.Ntilde.tolist() == [[2], [2]]

    def test_isolated_agents_use_own_values(self):
        state = SbmNetworkState(2, 1)
        burnin_step(state, 1, np.array([0.2, 0.6]), GraphSample.empty(2))
        burnin_finalize(state)

        state.record_pull(np.array([0, 0]), np.array([0.4, 0.8]))
        batch = state.emit(2)
        rule1_update(state, batch, GraphSample.empty(2), 2)

        # self weight 1/4 on own global estimate, d = 3/8 on own local mean
        np.testing.assert_allclose(state.tilde_mu, [[0.25 * 0.2 + 0.375 * 0.3], [0.25 * 0.6 + 0.375 * 0.7]])

    def test_weights_normalize(self):
        """Test constant rewards on a connected system stay constant"""
        m_agents = 10
        state = SbmNetworkState(m_agents, 1)
        ones = np.ones(m_agents)
        burnin_step(state, 1, ones, GraphSample.complete(m_agents))
        burnin_finalize(state)
        learning_round(state, 2, np.ones((m_agents, 1)), GraphSample.complete(m_agents))
        np.testing.assert_allclose(state.tilde_mu, np.ones((m_agents, 1)), atol=1e-12)

    def test_counts_monotone(self, rng):
        bm = BlockModel.planted(5, 1, 0.5, 0.0)
        state = SbmNetworkState(5, 3)
        for t in range(1, 4):
            burnin_step(state, t, rng.random(5), sample_graph(bm, rng))
        burnin_finalize(state)
        previous = (state.n.copy(), state.N.copy(), state.Ntilde.copy())
        for t in range(4, 60):
            learning_round(state, t, rng.random((5, 3)), sample_graph(bm, rng))
            for before, after in zip(previous, (state.n, state.N, state.Ntilde)):
                assert np.all(after >= before)
            previous = (state.n.copy(), state.N.copy(), state.Ntilde.copy())


class TestRule2:
    """Tests for cluster-level aggregation"""

    def test_cluster_mean(self):
        """Test a two-agent cluster with local means 0.2 and 0.6 averages to 0.4"""
        state = SbmNetworkState(2, 1, assignment=[0, 0])
        burnin_step(state, 1, np.array([0.2, 0.6]), GraphSample.complete(2))
        burnin_finalize(state)
        np.testing.assert_allclose(state.hat_mu, [[0.4], [0.4]])

    def test_needs_assignment(self):
        state = SbmNetworkState(2, 1)
        batch = state.emit(1)
        with pytest.raises(ConfigurationError):
            rule2_update(state, batch, GraphSample.complete(2), 1)

    def test_label_out_of_range(self):
        with pytest.raises(ConfigurationError):
            SbmNetworkState(3, 1, assignment=[0, 1, 2], n_clusters=2)

    def test_single_cluster_counts_whole_system(self):
        state = SbmNetworkState(3, 2, assignment=[0, 0, 0])
        for t in range(1, 3):
            burnin_step(state, t, np.full(3, 0.5), GraphSample.complete(3))
        burnin_finalize(state)
        learning_round(state, 3, np.full((3, 2), 0.5), GraphSample.complete(3), rule=UpdateRule.RULE2)
        np.testing.assert_array_equal(state.N, np.tile(state.n.sum(axis=0), (3, 1)))

    def test_tau_skips_aggregation(self):
        state = SbmNetworkState(2, 1, assignment=[0, 1])
        burnin_step(state, 1, np.array([0.2, 0.6]), GraphSample.complete(2))
        burnin_finalize(state)
        before = state.tilde_mu.copy()
        learning_round(state, 3, np.array([[0.9], [0.9]]), GraphSample.complete(2), rule=UpdateRule.RULE2, tau=2)
        np.testing.assert_array_equal(state.tilde_mu, before)
        assert state.snap_bar_mu[0, 1, 0] == pytest.approx(0.75)

    def test_cluster_consensus_with_complete_graphs(self, rng):
        """Test agents of one cluster share N, hat and tilde-bar estimates"""
        m_agents, k_arms = 6, 3
        state = SbmNetworkState(m_agents, k_arms, assignment=[0, 0, 0, 1, 1, 1])
        complete = GraphSample.complete(m_agents)
        for t in range(1, 7):
            burnin_step(state, t, rng.random(m_agents), complete)
        burnin_finalize(state)
        for t in range(7, 40):
            learning_round(state, t, rng.random((m_agents, k_arms)), complete, rule=UpdateRule.RULE2)
            for members in ([0, 1, 2], [3, 4, 5]):
                for name in ("N", "hat_mu", "tilde_bar_mu"):
                    values = getattr(state, name)[members]
                    np.testing.assert_allclose(values, np.tile(values[0], (3, 1)), atol=1e-12)

    def test_count_ordering(self, rng):
        """Test n <= N <= Ntilde after every update"""
        bm = BlockModel.planted(6, 2, 0.7, 0.3)
        state = SbmNetworkState(6, 2, assignment=bm.assignment, n_clusters=2)
        for t in range(1, 5):
            burnin_step(state, t, rng.random(6), sample_graph(bm, rng))
        burnin_finalize(state)
        for t in range(5, 50):
            learning_round(state, t, rng.random((6, 2)), sample_graph(bm, rng), rule=UpdateRule.RULE2)
            assert np.all(state.n <= state.N)
            assert np.all(state.N <= state.Ntilde)


class TestStatisticRelay:
    """Tests for hop-by-hop relay of local counts and means"""

    @pytest.fixture
    def relayed_path(self):
        """Edge (0,1) in round 1, edge (1,2) in round 2: agent 2 hears of 0 only through 1"""
        state = SbmNetworkState(3, 1, assignment=[0, 0, 0])
        burnin_step(state, 1, np.array([0.1, 0.2, 0.3]), GraphSample.from_edges(3, [(0, 1)]))
        burnin_step(state, 2, np.array([0.5, 0.6, 0.7]), GraphSample.from_edges(3, [(1, 2)]))
        return state

    def test_relay_reaches_non_neighbor(self, relayed_path):
        state = relayed_path
        assert state.last_contact[2, 0] == -1
        assert state.snap_n[2, 0, 0] == 0
        assert state.known_round[2, 0] == 1
        assert state.known_n[2, 0, 0] == 1
        assert state.known_bar_mu[2, 0, 0] == pytest.approx(0.1)

    def test_cluster_aggregates_use_relayed_statistics(self, relayed_path):
        """Test N and hat of agent 2 include agent 0's relayed round-1 statistics"""
        state = relayed_path
        burnin_finalize(state)
        state.record_pull(np.zeros(3, dtype=int), np.array([0.8, 0.8, 0.8]))
        batch = state.emit(3)
        rule2_update(state, batch, GraphSample.empty(3), 3)
        # agent 0 at round 1 (n=1), agent 1 at round 2 (n=2), self now (n=3)
        assert state.N[2, 0] == 6
        assert state.hat_mu[2, 0] == pytest.approx((0.1 + 0.4 + 0.6) / 3)

    def test_merge_keeps_latest_entry(self):
        state = SbmNetworkState(3, 1, assignment=[0, 0, 0])
        complete = GraphSample.complete(3)
        burnin_step(state, 1, np.zeros(3), complete)
        burnin_step(state, 2, np.ones(3), complete)
        burnin_step(state, 3, np.ones(3), GraphSample.from_edges(3, [(0, 1)]))
        assert state.known_round[0].tolist() == [3, 3, 2]
        assert state.known_n[0, :, 0].tolist() == [3, 3, 2]

    def test_neighbor_global_count_rescaled_to_cluster_size(self):
        """Test a size-2 cluster's Ñ of 10 reaches a singleton cluster as 5"""
        state = SbmNetworkState(3, 1, assignment=[0, 0, 1])
        burnin_step(state, 1, np.zeros(3), GraphSample.complete(3))
        burnin_finalize(state)
        state.Ntilde[0] = 10
        batch = state.emit(2)
        rule2_update(state, batch, GraphSample.from_edges(3, [(0, 2)]), 2)
        assert state.Ntilde[:, 0].tolist() == [10, 2, 5]


class TestForcedExplorationRate:
    """Forced exploration stays rare under sparse intra-cluster graphs"""

    def test_lagging_threshold_is_k_below(self):
        state = SbmNetworkState(3, 2, assignment=[0, 0, 0])
        state.N = np.array([[5, 5], [5, 5], [5, 5]])
        state.Ntilde = np.array([[6, 7], [5, 6], [7, 5]])
        assert lagging_agents(state).tolist() == [True, False, True]

    @pytest.mark.parametrize("p_intra", [0.5, 1.0])
    def test_rule2_mostly_plays_ucb(self, p_intra):
        rng = np.random.default_rng(3)
        m_agents, k_arms = 10, 5
        bm = BlockModel.planted(m_agents, 2, p_intra, 0.5)
        cluster_means = np.array([[0.75, 0.5, 0.4, 0.6, 0.3], [0.65, 0.55, 0.35, 0.5, 0.35]])
        means = cluster_means[bm.assignment]
        state = SbmNetworkState(m_agents, k_arms, assignment=bm.assignment, n_clusters=2)
        for t in range(1, 3 * k_arms + 1):
            burnin_step(state, t, means[:, t % k_arms] + 0.1 * rng.standard_normal(m_agents), sample_graph(bm, rng))
        burnin_finalize(state)

        forced, mature = 0, 0
        for t in range(3 * k_arms + 1, 800):
            if t > 300:
                forced += int(lagging_agents(state).sum())
                mature += m_agents
            noise = 0.1 * rng.standard_normal((m_agents, k_arms))
            learning_round(state, t, means + noise, sample_graph(bm, rng), rule=UpdateRule.RULE2)
        assert forced / mature < 0.05


class TestRuleEquivalence:
    """Rule 1 and Rule 2 coincide when every agent is its own cluster"""

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_lockstep_singleton_clusters(self, seed):
        rng = np.random.default_rng(seed)
        m_agents, k_arms = 5, 3
        bm = BlockModel.planted(m_agents, m_agents, 1.0, 0.4)
        means = rng.random((m_agents, k_arms))
        rule1 = SbmNetworkState(m_agents, k_arms)
        rule2 = SbmNetworkState(m_agents, k_arms, assignment=np.arange(m_agents), n_clusters=m_agents)

        for t in range(1, 7):
            graph = sample_graph(bm, rng)
            rewards = rng.random(m_agents)
            burnin_step(rule1, t, rewards, graph)
            burnin_step(rule2, t, rewards, graph)
        burnin_finalize(rule1)
        burnin_finalize(rule2)

        for t in range(7, 200):
            graph = sample_graph(bm, rng)
            noise = 0.1 * rng.standard_normal((m_agents, k_arms))
            arms1 = learning_round(rule1, t, means + noise, graph, rule=UpdateRule.RULE1)
            arms2 = learning_round(rule2, t, means + noise, graph, rule=UpdateRule.RULE2)
            np.testing.assert_array_equal(arms1, arms2)
            np.testing.assert_allclose(rule1.tilde_mu, rule2.tilde_mu, rtol=0, atol=1e-12)
            np.testing.assert_array_equal(rule1.N, rule2.N)
            np.testing.assert_array_equal(rule1.Ntilde, rule2.Ntilde)
