"""
Tests for episode orchestration, batches and event monitoring
"""
import numpy as np
import pytest

from bandit_sbm.config import Algorithm, ExperimentConfig
from bandit_sbm.environment import cumulative_regret, global_stats
from bandit_sbm.errors import DetectionStatus
from bandit_sbm.sim import (
    checkpoint_rounds,
    event_frequencies,
    run_batch,
    run_episode,
    summarize,
)


@pytest.fixture
def small_config(experiment_data):
    return ExperimentConfig.model_validate(experiment_data)


def config_with(data, **overrides):
    data.update(overrides)
    return ExperimentConfig.model_validate(data)


class TestCheckpointRounds:
    def test_every_round_for_short_horizons(self):
        assert checkpoint_rounds(10, 100).tolist() == list(range(1, 11))

    def test_evenly_spaced(self):
        points = checkpoint_rounds(1000, 100)
        assert points.size == 100
        assert points[0] == 10 and points[-1] == 1000

    def test_ends_at_horizon(self):
        assert checkpoint_rounds(37, 5)[-1] == 37


class TestRunEpisode:
    """Tests for single seeded episodes"""

    def test_burnin_only_is_round_robin(self, experiment_data):
        cfg = config_with(experiment_data, T=6, algorithms=["rule1"])
        result = run_episode(cfg, seed=1)
        np.testing.assert_array_equal(result.counts, np.full((4, 3), 2))
        assert result.burnin_length == 6

    def test_deterministic(self, small_config):
        first = run_episode(small_config, seed=11)
        second = run_episode(small_config, seed=11)
        np.testing.assert_array_equal(first.regret_trace, second.regret_trace)
        np.testing.assert_array_equal(first.counts, second.counts)

    def test_seeds_differ(self, experiment_data):
        rewards = {"sigma": 0.5, "cluster_means": [[0.5, 0.55, 0.2], [0.3, 0.6, 0.4]]}
        cfg = config_with(experiment_data, T=300, rewards=rewards)
        assert not np.array_equal(run_episode(cfg, 1).counts, run_episode(cfg, 2).counts)

    def test_single_arm_has_no_regret(self, experiment_data):
        rewards = {"sigma": 0.1, "cluster_means": [[0.5], [0.3]]}
        cfg = config_with(experiment_data, K=1, L=2, rewards=rewards)
        result = run_episode(cfg, seed=3)
        assert result.final_regret == 0.0
        assert result.total_regret == 0.0

    def test_every_agent_pulls_every_round(self, small_config):
        result = run_episode(small_config, seed=5)
        assert result.counts.sum() == small_config.M * small_config.T

    def test_trace_matches_counts(self, small_config):
        result = run_episode(small_config, seed=5)
        bm = small_config.build_block_model()
        stats = global_stats(small_config.build_reward_model(bm), bm)
        assert result.final_regret == pytest.approx(cumulative_regret(result.counts, stats))
        assert result.total_regret == pytest.approx(small_config.M * result.final_regret)
        assert np.all(np.diff(result.regret_trace) >= 0)

    @pytest.mark.parametrize("algorithm", ["local_ucb", "rule1", "rule2_known", "rule2_detected"])
    def test_clustered_algorithms_run(self, small_config, algorithm):
        result = run_episode(small_config, seed=2, algorithm=Algorithm(algorithm))
        assert result.algorithm == Algorithm(algorithm)
        assert result.regret_trace.shape == (small_config.T,)

    def test_homo_ucb_single_cluster(self, experiment_data):
        cfg = config_with(
            experiment_data, C=1, algorithms=["homo_ucb"],
            rewards={"sigma": 0.1, "cluster_means": [[0.5, 0.7, 0.2]]},
        )
        result = run_episode(cfg, seed=2)
        assert result.burnin_length == 0
        assert result.counts[:, 1].sum() > result.counts[:, 2].sum()

    def test_detected_clusters_recorded(self, small_config):
        result = run_episode(small_config, seed=4, algorithm=Algorithm.RULE2_DETECTED)
        assert result.detected_assignment.shape == (4,)
        assert isinstance(result.detection_status, DetectionStatus)
        assert result.detection_iterations >= 0
        record = result.to_record(checkpoint_rounds(small_config.T))
        assert record["detected_assignment"] == result.detected_assignment.tolist()

    def test_full_trace_keeps_arm_history(self, experiment_data):
        cfg = config_with(experiment_data, full_trace=True)
        result = run_episode(cfg, seed=1)
        assert result.arm_history.shape == (cfg.T, cfg.M)
        assert "regret_trace" in result.to_record(checkpoint_rounds(cfg.T), full_trace=True)

    def test_rules_agree_with_singleton_clusters(self, experiment_data):
        """Test Rule 1 and Rule 2 with known labels coincide when C = M"""
        means = [[0.5, 0.7, 0.2], [0.3, 0.6, 0.4], [0.6, 0.5, 0.1], [0.2, 0.8, 0.3]]
        cfg = config_with(experiment_data, C=4, rewards={"sigma": 0.1, "cluster_means": means})
        rule1 = run_episode(cfg, seed=9, algorithm=Algorithm.RULE1)
        rule2 = run_episode(cfg, seed=9, algorithm=Algorithm.RULE2_KNOWN)
        np.testing.assert_array_equal(rule1.counts, rule2.counts)
        np.testing.assert_allclose(rule1.regret_trace, rule2.regret_trace)

    def test_forced_fraction_recorded_for_clustered_rules(self, small_config):
        result = run_episode(small_config, seed=3, algorithm=Algorithm.RULE2_KNOWN)
        assert 0.0 <= result.forced_fraction <= 1.0
        record = result.to_record(checkpoint_rounds(small_config.T))
        assert record["forced_fraction"] == result.forced_fraction

    def test_rule2_rarely_forced_on_sparse_clusters(self, experiment_data):
        """Test forced exploration stays rare at p_intra = q_inter = 0.5"""
        experiment_data.pop("L")
        cfg = config_with(
            experiment_data, M=10, C=2, K=5, T=2000,
            graph={"p_intra": 0.5, "q_inter": 0.5},
            rewards={"sigma": 0.1, "min_gap": 0.1, "seed": 2},
        )
        result = run_episode(cfg, seed=1, algorithm=Algorithm.RULE2_KNOWN)
        assert result.forced_fraction < 0.05

    def test_static_edge_list(self, experiment_data, tmp_path):
        (tmp_path / "edges.txt").write_text("0 1\n1 2\n2 3\n", encoding="utf-8")
        cfg = config_with(experiment_data, graph={"edge_list": "edges.txt"})
        result = run_episode(cfg, seed=1, base_dir=tmp_path)
        assert event_frequencies([result]).graph_connected == 1.0


class TestRunBatch:
    """Tests for multi-seed batches"""

    def test_summary_shape(self, small_config):
        summary, results = run_batch(small_config, [1, 2, 3])
        assert summary.n_runs == 3
        assert summary.checkpoints.tolist() == list(range(1, 101))
        assert np.all(summary.ci_lower <= summary.mean)
        assert np.all(summary.mean <= summary.ci_upper)
        assert [r.seed for r in results] == [1, 2, 3]

    def test_seed_order_irrelevant(self, small_config):
        first, _ = run_batch(small_config, [1, 2, 3])
        second, _ = run_batch(small_config, [3, 1, 2])
        np.testing.assert_array_equal(first.mean, second.mean)
        np.testing.assert_array_equal(first.half_width, second.half_width)

    def test_single_run_is_degenerate(self, small_config):
        summary, _ = run_batch(small_config, [5])
        assert summary.degenerate
        np.testing.assert_array_equal(summary.half_width, 0.0)

    def test_duplicate_seeds(self, small_config):
        with pytest.raises(ValueError, match="distinct"):
            run_batch(small_config, [1, 1])

    def test_summarize_empty(self):
        with pytest.raises(ValueError):
            summarize([], np.array([1]))

    def test_half_width_formula(self, small_config):
        summary, results = run_batch(small_config, [1, 2, 3, 4])
        finals = np.array([r.final_regret for r in results])
        assert summary.final_mean == pytest.approx(finals.mean())
        assert summary.half_width[-1] == pytest.approx(1.96 * finals.std(ddof=1) / 2)

    @pytest.mark.integration
    def test_process_pool_matches_serial(self, small_config):
        serial, _ = run_batch(small_config, [1, 2, 3], jobs=1)
        pooled, _ = run_batch(small_config, [1, 2, 3], jobs=2)
        np.testing.assert_array_equal(serial.mean, pooled.mean)


class TestEventFrequencies:
    """Tests for connectivity event monitoring"""

    def test_complete_graphs(self, small_config):
        _, results = run_batch(small_config, [1, 2])
        freq = event_frequencies(results)
        assert freq.graph_connected == 1.0
        assert freq.quotient_connected == 1.0
        assert freq.window_connected == 1.0

    def test_disconnected_clusters(self, experiment_data):
        cfg = config_with(experiment_data, graph={"p_intra": 1.0, "q_inter": 0.0})
        freq = event_frequencies([run_episode(cfg, seed=1)])
        assert freq.graph_connected == 0.0
        assert freq.quotient_connected == 0.0

    def test_tracking_disabled(self, experiment_data):
        cfg = config_with(experiment_data, track_events=False)
        assert event_frequencies([run_episode(cfg, seed=1)]).graph_connected is None
