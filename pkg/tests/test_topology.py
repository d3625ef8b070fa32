import json

import numpy as np
import pytest

from cachesched.topology import (
    ConfigurationError,
    Library,
    Region,
    Topology,
    build_d2d_topology,
    build_helper_topology,
    generate_ppp_points,
    helper_positions,
    place_content,
    split_active_devices,
)


def small_library(**kw):
    defaults = dict(files=10, zipf_exponent=0.8, cache_capacity=3)
    defaults.update(kw)
    return Library(**defaults)


class TestRegion:
    def test_square_area(self):
        assert Region.square(600.0).bbox_area == 600.0 * 600.0

    def test_degenerate_rectangle_is_empty(self):
        region = Region.rectangle(0.0, 0.0, 0.0, 5.0)
        points = generate_ppp_points(region, 10.0, np.random.default_rng(0))
        assert len(points) == 0

    def test_invalid_regions(self):
        with pytest.raises(ConfigurationError):
            Region.square(0.0)
        with pytest.raises(ConfigurationError):
            Region.disk_union([(0, 0)], 0.0)

    def test_disk_contains(self):
        region = Region.disk_union([(0.0, 0.0)], 1.0)
        mask = region.contains(np.array([[0.5, 0.0], [1.0, 0.0], [1.01, 0.0]]))
        assert mask.tolist() == [True, True, False]


class TestPpp:
    def test_expected_count_600m_square(self):
        # intensity 0.04e-2 over 600 x 600 -> mean 144
        rng = np.random.default_rng(42)
        region = Region.square(600.0)
        counts = [len(generate_ppp_points(region, 0.04e-2, rng)) for _ in range(300)]
        assert abs(np.mean(counts) - 144.0) < 3.0

    def test_expected_count_scales_with_area(self):
        # intensity 0.01e-2 on area A -> mean 1e-4 * A
        rng = np.random.default_rng(7)
        region = Region.rectangle(0.0, 500.0, 0.0, 400.0)
        counts = [len(generate_ppp_points(region, 0.01e-2, rng)) for _ in range(400)]
        assert abs(np.mean(counts) - 1e-4 * 500 * 400) < 1.5

    def test_disk_union_restriction(self):
        rng = np.random.default_rng(3)
        region = Region.disk_union([(0.0, 0.0), (100.0, 0.0)], 10.0)
        counts = []
        for _ in range(300):
            pts = generate_ppp_points(region, 0.05, rng)
            assert region.contains(pts).all()
            counts.append(len(pts))
        assert abs(np.mean(counts) - 0.05 * 2 * np.pi * 100.0) < 2.0

    def test_positive_intensity_required(self):
        with pytest.raises(ConfigurationError):
            generate_ppp_points(Region.square(10.0), 0.0, np.random.default_rng(0))

    def test_deterministic_given_seed(self):
        region = Region.square(100.0)
        a = generate_ppp_points(region, 0.01, np.random.default_rng(5))
        b = generate_ppp_points(region, 0.01, np.random.default_rng(5))
        assert np.array_equal(a, b)


class TestLibrary:
    def test_popularity_normalized(self):
        lib = Library(files=100, zipf_exponent=0.8, cache_capacity=10)
        assert abs(lib.popularity.sum() - 1.0) <= 1e-12
        assert lib.popularity[0] > lib.popularity[-1]

    def test_capacity_bounds(self):
        with pytest.raises(ConfigurationError):
            Library(files=5, cache_capacity=6)


class TestPlacement:
    def test_full_capacity_caches_everything(self):
        lib = Library(files=4, zipf_exponent=0.8, cache_capacity=4)
        caches = place_content(3, lib, "popularity", np.random.default_rng(0))
        assert all(c == frozenset(range(4)) for c in caches)

    def test_explicit_passthrough(self):
        lib = small_library()
        caches = place_content(2, lib, "explicit", np.random.default_rng(0),
                               explicit={0: [1, 2], 1: [0]})
        assert caches[0] == frozenset({1, 2})
        assert caches[1] == frozenset({0})

    def test_explicit_rejects_over_capacity_and_unknown(self):
        lib = small_library()
        rng = np.random.default_rng(0)
        with pytest.raises(ConfigurationError):
            place_content(1, lib, "explicit", rng, explicit={0: [0, 1, 2, 3]})
        with pytest.raises(ConfigurationError):
            place_content(1, lib, "explicit", rng, explicit={0: [99]})
        with pytest.raises(ConfigurationError):
            place_content(2, lib, "explicit", rng, explicit={0: [1]})

    def test_popularity_weighting(self):
        # Monte-Carlo: the most popular file must be cached far more often than the least
        lib = Library(files=100, zipf_exponent=0.8, cache_capacity=10)
        rng = np.random.default_rng(11)
        caches = place_content(10_000, lib, "popularity", rng)
        top = sum(1 for c in caches if 0 in c)
        bottom = sum(1 for c in caches if 99 in c)
        assert top > bottom

    def test_each_cache_has_exact_capacity(self):
        lib = small_library()
        for policy in ("popularity", "uniform"):
            caches = place_content(20, lib, policy, np.random.default_rng(2))
            assert all(len(c) == lib.cache_capacity for c in caches)


class TestHelperScenario:
    def test_helper_locations(self):
        pos = helper_positions(100.0)
        assert pos[0] == pytest.approx((0.0, 0.0))
        assert pos[1] == pytest.approx((166.6667, 0.0), abs=0.01)
        assert pos[2] == pytest.approx((83.3333, 144.3376), abs=0.01)

    def test_ranges_follow_coverage_radius(self):
        lib = Library(files=3, zipf_exponent=0.8, cache_capacity=3)
        topo = build_helper_topology(100.0, 0.01e-2, lib, np.random.default_rng(1))
        assert topo.signal_range == 100.0
        assert topo.interference_range == 300.0
        assert topo.n_nodes <= 3

    def test_all_users_servable(self):
        lib = small_library()
        topo = build_helper_topology(100.0, 0.02e-2, lib, np.random.default_rng(3))
        assert all(len(topo.source_nodes[n]) >= 1 for n in range(topo.n_users))
        assert all(len(topo.servable_users[m]) >= 1 for m in range(topo.n_nodes))


class TestNeighborSets:
    def build_two_node_case(self):
        # user 0: 99 m from node 0 which caches its file -> signal link
        #         250 m from node 1 which does not cache it -> interference only
        nodes = [(0.0, 0.0), (0.0, -151.0)]
        caches = [{0}, {1}]
        users = [(0.0, 99.0), (0.0, -150.0)]
        requests = [0, 1]
        return Topology.build(nodes, caches, users, requests, 100.0, 300.0)

    def test_signal_and_interference_membership(self):
        topo = self.build_two_node_case()
        assert 0 in topo.servable_users[0] and 0 in topo.source_nodes[0]
        assert 0 in topo.nearby_users[1] and 1 in topo.nearby_nodes[0]
        assert 0 not in topo.servable_users[1] and 1 not in topo.source_nodes[0]

    def test_symmetry_invariant(self):
        rng = np.random.default_rng(0)
        lib = small_library()
        for seed in range(25):
            topo = _random_topology(seed, lib)
            for m in range(topo.n_nodes):
                for n in topo.nearby_users[m]:
                    assert m in topo.nearby_nodes[n]
                for n in topo.servable_users[m]:
                    assert m in topo.source_nodes[n]
                    assert set(topo.servable_users[m]) <= set(topo.nearby_users[m])

    def test_signal_implies_cache_hit_and_distance(self):
        lib = small_library()
        for seed in range(25):
            topo = _random_topology(seed, lib)
            for m in range(topo.n_nodes):
                for n in topo.servable_users[m]:
                    assert int(topo.requests[n]) in topo.caches[m]
                    assert topo.distances[m, n] <= topo.signal_range

    def test_pruning_invariant(self):
        lib = small_library()
        for seed in range(25):
            topo = _random_topology(seed, lib)
            assert all(len(topo.source_nodes[n]) >= 1 for n in range(topo.n_users))
            assert all(len(topo.servable_users[m]) >= 1 for m in range(topo.n_nodes))

    def test_closed_ball_boundary(self):
        # exactly at signal range counts as inside
        topo = Topology.build([(0.0, 0.0)], [{0}], [(100.0, 0.0)], [0], 100.0, 300.0)
        assert topo.servable_users[0] == (0,)

    def test_range_ordering_enforced(self):
        with pytest.raises(ConfigurationError):
            Topology.build([(0.0, 0.0)], [{0}], [(1.0, 0.0)], [0], 300.0, 100.0)


def _random_topology(seed, lib, side=400.0, n_nodes=4, n_users=8):
    rng = np.random.default_rng(seed)
    nodes = rng.uniform(0, side, size=(n_nodes, 2))
    users = rng.uniform(0, side, size=(n_users, 2))
    caches = place_content(n_nodes, lib, "popularity", rng)
    requests = lib.sample_requests(n_users, rng)
    return Topology.build(nodes, caches, users, requests, 150.0, 350.0)


class TestD2dScenario:
    def test_thinning_split_expectations(self):
        # 600 m square at 0.04e-2 split with p=0.2 -> about 28.8 users, 115.2 nodes
        rng = np.random.default_rng(9)
        region = Region.square(600.0)
        users, nodes = [], []
        for _ in range(200):
            pts = generate_ppp_points(region, 0.04e-2, rng)
            u, c = split_active_devices(pts, 0.2, rng)
            users.append(len(u))
            nodes.append(len(c))
        assert abs(np.mean(users) - 28.8) < 1.5
        assert abs(np.mean(nodes) - 115.2) < 3.0

    def test_zero_activity_means_no_users(self):
        pts = np.random.default_rng(0).uniform(0, 100, size=(50, 2))
        users, nodes = split_active_devices(pts, 0.0, np.random.default_rng(1))
        assert len(users) == 0 and len(nodes) == 50

    def test_deterministic_build(self):
        lib = small_library()
        a = build_d2d_topology(300.0, 0.04e-2, 0.2, lib, np.random.default_rng(12))
        b = build_d2d_topology(300.0, 0.04e-2, 0.2, lib, np.random.default_rng(12))
        assert a.to_json() == b.to_json()


class TestSerialization:
    def test_round_trip(self, tmp_path):
        lib = small_library()
        topo = _random_topology(5, lib)
        path = tmp_path / "scenario.json"
        topo.to_json(path)
        again = Topology.from_json(path)
        assert again.to_json() == topo.to_json()
        assert np.array_equal(again.requests, topo.requests)

    def test_schema_fields(self):
        lib = small_library()
        data = json.loads(_random_topology(6, lib).to_json())
        assert data["format"] == "cachesched-topology-v1"
        assert {"id", "x", "y", "cache"} <= set(data["nodes"][0])
        assert {"id", "x", "y", "file"} <= set(data["users"][0])

    def test_rejects_unknown_format(self):
        with pytest.raises(ConfigurationError):
            Topology.from_dict({"format": "something-else"})


class TestRestrict:
    def test_restriction_is_induced_subgraph(self):
        lib = small_library()
        topo = _random_topology(8, lib, n_nodes=6, n_users=10)
        node_ids = list(range(0, topo.n_nodes, 2))
        user_ids = list(range(0, topo.n_users, 2))
        sub, kept_nodes, kept_users = topo.restrict(node_ids, user_ids)
        assert set(kept_nodes) <= set(node_ids)
        assert set(kept_users) <= set(user_ids)
        for i, m in enumerate(kept_nodes):
            for j, n in enumerate(kept_users):
                orig = n in topo.servable_users[m]
                assert (j in sub.servable_users[i]) == orig
