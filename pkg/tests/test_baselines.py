import itertools

import numpy as np
import pytest

from cachesched.baselines import (
    ClusterGrid,
    SearchSpaceError,
    cluster_members,
    clustering_schedule_1,
    clustering_schedule_2,
    exhaustive_search,
)
from cachesched.belief_propagation import BpConfig, run_bp
from cachesched.channel import ChannelRealization, sample_channel
from cachesched.matching import link_schedule
from cachesched.objective import LinkParams, PowerGrid, ScheduleDecision, global_utility, user_rates
from cachesched.topology import Library, Topology, place_content

PARAMS = LinkParams()


def tiny_instance():
    return Topology.build([(0.0, 0.0)], [{0}], [(60.0, 0.0)], [0], 100.0, 300.0)


def cross_instance():
    """Two nodes and two users, everyone near everyone: 3 x 3 = 9 joint decisions."""
    nodes = [(0.0, 0.0), (90.0, 0.0)]
    caches = [{0, 1}, {0, 1}]
    users = [(30.0, 0.0), (60.0, 0.0)]
    return Topology.build(nodes, caches, users, [0, 1], 100.0, 300.0)


class TestExhaustive:
    def test_two_candidate_case(self):
        topo = tiny_instance()
        grid = PowerGrid((2.0,))
        channel = sample_channel(topo, 3.0, 0, 1)
        serve = exhaustive_search(topo, channel, [50], 1.0, grid, PARAMS)
        assert serve.serving == {0: (0, 1)}

    def test_empty_queues_mean_idle(self):
        topo = cross_instance()
        grid = PowerGrid.uniform(2.0, 2)
        channel = sample_channel(topo, 3.0, 0, 2)
        decision = exhaustive_search(topo, channel, [0, 0], 1.0, grid, PARAMS)
        assert decision.serving == {}

    def test_nine_case_hand_enumeration(self):
        topo = cross_instance()
        grid = PowerGrid((2.0,))
        # strong cross interference: every gain comparable
        gains = np.array([[2.0e-6, 1.5e-6], [1.4e-6, 2.1e-6]])
        channel = ChannelRealization(gains=gains, slot=0)
        backlog = [30, 25]
        actions = [None, (0, 1), (1, 1)]
        best_value, best_decision = -np.inf, None
        for a0, a1 in itertools.product(actions, actions):
            serving = {}
            if a0 is not None:
                serving[0] = a0
            if a1 is not None:
                serving[1] = a1
            decision = ScheduleDecision(serving)
            value = global_utility(decision, topo, channel, backlog, 1.0, grid, PARAMS)
            if value > best_value:
                best_value, best_decision = value, decision
        found = exhaustive_search(topo, channel, backlog, 1.0, grid, PARAMS)
        assert global_utility(found, topo, channel, backlog, 1.0, grid, PARAMS) == pytest.approx(
            best_value, rel=1e-12
        )
        assert found.serving == best_decision.serving

    def test_search_space_cap_names_size(self):
        topo = cross_instance()
        grid = PowerGrid.uniform(2.0, 4)
        channel = sample_channel(topo, 3.0, 0, 3)
        with pytest.raises(SearchSpaceError, match="81"):
            exhaustive_search(topo, channel, [1, 1], 1.0, grid, PARAMS, max_decisions=80)

    def test_dominates_random_decisions(self):
        lib = Library(files=5, zipf_exponent=0.8, cache_capacity=2)
        rng = np.random.default_rng(0)
        for seed in range(15):
            gen = np.random.default_rng(seed)
            nodes = gen.uniform(0, 300, size=(3, 2))
            users = gen.uniform(0, 300, size=(4, 2))
            caches = place_content(3, lib, "popularity", gen)
            requests = lib.sample_requests(4, gen)
            topo = Topology.build(nodes, caches, users, requests, 150.0, 350.0)
            if topo.n_users == 0:
                continue
            grid = PowerGrid.uniform(2.0, 2)
            channel = sample_channel(topo, 3.0, 0, seed)
            backlog = rng.integers(0, 30, size=topo.n_users)
            oracle = exhaustive_search(topo, channel, backlog, 1.0, grid, PARAMS)
            best = global_utility(oracle, topo, channel, backlog, 1.0, grid, PARAMS)
            for _ in range(20):
                serving = {}
                for m in range(topo.n_nodes):
                    if rng.random() < 0.5 and topo.servable_users[m]:
                        user = rng.choice(topo.servable_users[m])
                        serving[m] = (int(user), int(rng.integers(1, 3)))
                value = global_utility(
                    ScheduleDecision(serving), topo, channel, backlog, 1.0, grid, PARAMS
                )
                assert value <= best + 1e-9


class TestClusterGrid:
    def test_cell_assignment(self):
        grid = ClusterGrid.for_square(600.0, 3)
        assert grid.n_cells == 9
        assert grid.cell_of((10.0, 10.0)) == 0
        assert grid.cell_of((210.0, 10.0)) == 1
        assert grid.cell_of((10.0, 210.0)) == 3
        assert grid.cell_of((600.0, 600.0)) == 8  # far edge belongs to the last cell

    def test_members_partition(self):
        lib = Library(files=4, zipf_exponent=0.8, cache_capacity=2)
        rng = np.random.default_rng(5)
        topo = Topology.build(
            rng.uniform(0, 600, size=(5, 2)),
            place_content(5, lib, "popularity", rng),
            rng.uniform(0, 600, size=(8, 2)),
            lib.sample_requests(8, rng),
            100.0,
            300.0,
        )
        grid = ClusterGrid.for_square(600.0, 3)
        nodes, users = cluster_members(topo, grid)
        assert sorted(m for cell in nodes for m in cell) == list(range(topo.n_nodes))
        assert sorted(n for cell in users for n in cell) == list(range(topo.n_users))


def one_cell_instance():
    """Node and user pair living inside cell 0 of a 600 m / 3 grid."""
    return Topology.build([(20.0, 20.0)], [{0}], [(80.0, 20.0)], [0], 100.0, 300.0)


class TestClustering1:
    def test_empty_cells_idle(self):
        topo = one_cell_instance()
        grid = PowerGrid((2.0,))
        channel = sample_channel(topo, 3.0, 0, 4)
        clusters = ClusterGrid.for_square(600.0, 3)
        decision, rates, utility = clustering_schedule_1(
            topo, channel, [40], 1.0, grid, PARAMS, clusters
        )
        assert decision.serving == {0: (0, 1)}
        assert utility > 0

    def test_bandwidth_share_is_exact(self):
        topo = one_cell_instance()
        grid = PowerGrid((2.0,))
        channel = sample_channel(topo, 3.0, 0, 4)
        clusters = ClusterGrid.for_square(600.0, 3)
        _, rates, _ = clustering_schedule_1(topo, channel, [40], 1.0, grid, PARAMS, clusters)
        full = user_rates(ScheduleDecision({0: (0, 1)}), topo, channel, grid, PARAMS)
        assert rates[0] == pytest.approx(full[0] / 9.0, rel=1e-12)

    def test_idle_when_unprofitable(self):
        topo = one_cell_instance()
        grid = PowerGrid((2.0,))
        channel = sample_channel(topo, 3.0, 0, 4)
        clusters = ClusterGrid.for_square(600.0, 3)
        decision, rates, utility = clustering_schedule_1(
            topo, channel, [0], 1.0, grid, PARAMS, clusters
        )
        assert decision.serving == {} and utility == 0.0

    def test_straddling_pairs_ineligible_and_isolated(self):
        # node in cell 0 could serve a user sitting in cell 1; clustering ignores it
        topo = Topology.build(
            [(150.0, 20.0), (250.0, 20.0)],
            [{0}, {0}],
            [(230.0, 20.0)],
            [0],
            100.0,
            300.0,
        )
        grid = PowerGrid((2.0,))
        clusters = ClusterGrid.for_square(600.0, 3)
        gains = np.array([[3e-6], [4e-6]])
        channel = ChannelRealization(gains=gains, slot=0)
        decision, rates, _ = clustering_schedule_1(topo, channel, [40], 1.0, grid, PARAMS, clusters)
        assert decision.serving == {1: (0, 1)}
        # perturbing the boundary-crossing gain changes nothing
        perturbed = ChannelRealization(gains=np.array([[9e-6], [4e-6]]), slot=0)
        decision2, rates2, _ = clustering_schedule_1(
            topo, perturbed, [40], 1.0, grid, PARAMS, clusters
        )
        assert decision2.serving == decision.serving
        assert np.array_equal(rates, rates2)


class TestClustering2:
    def test_single_populated_cell_equals_whole_network_at_share(self):
        topo = one_cell_instance()
        grid = PowerGrid.uniform(2.0, 2)
        channel = sample_channel(topo, 3.0, 0, 9)
        clusters = ClusterGrid.for_square(600.0, 3)
        bp_cfg = BpConfig(iterations=3)
        decision, rates, utility = clustering_schedule_2(
            topo, channel, [25], 1.0, grid, PARAMS, clusters, bp_cfg
        )
        share_params = PARAMS.with_bandwidth(PARAMS.bandwidth_hz / 9.0)
        marginals = run_bp(topo, channel, [25], 1.0, bp_cfg, grid, share_params)
        reference = link_schedule(marginals, topo, channel, [25], 1.0, grid, share_params)
        assert decision.serving == reference.decision.serving
        assert utility == pytest.approx(reference.utility, rel=1e-12)
        assert np.allclose(rates, user_rates(reference.decision, topo, channel, grid, share_params))

    def test_cross_cell_gains_never_read(self):
        # two populated cells; zeroing inter-cell gains leaves everything unchanged
        topo = Topology.build(
            [(50.0, 50.0), (350.0, 50.0)],
            [{0}, {1}],
            [(90.0, 50.0), (390.0, 50.0)],
            [0, 1],
            100.0,
            300.0,
        )
        grid = PowerGrid.uniform(2.0, 2)
        clusters = ClusterGrid.for_square(600.0, 3)
        bp_cfg = BpConfig(iterations=3)
        channel = sample_channel(topo, 3.0, 0, 10)
        isolated = channel.gains.copy()
        isolated[0, 1] = 0.0
        isolated[1, 0] = 0.0
        a = clustering_schedule_2(topo, channel, [20, 20], 1.0, grid, PARAMS, clusters, bp_cfg)
        b = clustering_schedule_2(
            topo, ChannelRealization(isolated, 0), [20, 20], 1.0, grid, PARAMS, clusters, bp_cfg
        )
        assert a[0].serving == b[0].serving
        assert np.array_equal(a[1], b[1])
        assert a[2] == b[2]
