from __future__ import annotations

from collections import deque

import numpy as np
import pytest

from angkit.graph_ops import (
    build_adjacency,
    build_operators,
    k_hop_reachability,
    normalize_rows,
)


def bfs_ball(adjacency: np.ndarray, start: int, radius: int) -> set[int]:
    """Vertices within graph distance `radius` of `start` (BFS oracle)."""
    dist = {start: 0}
    queue = deque([start])
    while queue:
        u = queue.popleft()
        if dist[u] == radius:
            continue
        for v in np.flatnonzero(adjacency[u]):
            if v != u and v not in dist:
                dist[v] = dist[u] + 1
                queue.append(v)
    return set(dist)


def random_tree_adjacency(rng, num_vertices: int) -> np.ndarray:
    """Uniform random attachment tree with self-loops."""
    a = np.eye(num_vertices)
    for v in range(1, num_vertices):
        parent = int(rng.integers(0, v))
        a[v, parent] = a[parent, v] = 1.0
    return a


class TestBuildAdjacency:
    def test_two_joint_bone(self):
        from angkit.core_types import parse_schema

        topo = parse_schema("""
            num_joints = 2
            edges = 0-1
            center_pair = 1, 0
            bone_parent = -1, 0
            adjacent_pairs =
            angle local
            angle center_unfixed
            angle center_fixed
            angle pair hands
            angle pair elbows
            angle pair knees
            angle pair feet
            endpoint_pairs = hands:0-1 elbows:0-1 knees:0-1 feet:0-1
        """)
        np.testing.assert_array_equal(build_adjacency(topo), [[1, 1], [1, 1]])

    def test_kinect25_row_sums_are_degree_plus_one(self, topo):
        a = build_adjacency(topo)
        degree = np.zeros(25)
        for i, j in topo.edges:
            degree[i] += 1
            degree[j] += 1
        np.testing.assert_array_equal(a.sum(axis=1), degree + 1)
        np.testing.assert_array_equal(a, a.T)


class TestKHopReachability:
    def test_path_graph_k1_is_adjacency(self):
        a = np.array([[1, 1, 0], [1, 1, 1], [0, 1, 1]], dtype=float)
        np.testing.assert_array_equal(k_hop_reachability(a, 1), a)

    def test_path_graph_k2_saturates(self):
        a = np.array([[1, 1, 0], [1, 1, 1], [0, 1, 1]], dtype=float)
        np.testing.assert_array_equal(k_hop_reachability(a, 2), np.ones((3, 3)))

    def test_k_below_one_rejected(self):
        with pytest.raises(ValueError):
            k_hop_reachability(np.eye(2), 0)

    def test_matches_bfs_balls_on_random_trees(self, rng):
        for _ in range(60):
            n = int(rng.integers(2, 26))
            a = random_tree_adjacency(rng, n)
            for k in (1, 2, 3, n):
                reach = k_hop_reachability(a, k)
                for start in range(n):
                    ball = bfs_ball(a, start, k)
                    np.testing.assert_array_equal(
                        np.flatnonzero(reach[start]), sorted(ball)
                    )

    def test_monotone_in_k_with_fixed_point_at_diameter(self, rng):
        a = random_tree_adjacency(rng, 12)
        prev = k_hop_reachability(a, 1)
        for k in range(2, 13):
            cur = k_hop_reachability(a, k)
            assert np.all(cur >= prev)
            prev = cur
        np.testing.assert_array_equal(prev, np.ones((12, 12)))  # tree diameter < V


class TestNormalizeRows:
    def test_two_by_two(self):
        np.testing.assert_array_equal(
            normalize_rows(np.ones((2, 2))), [[0.5, 0.5], [0.5, 0.5]]
        )

    def test_identity_fixed(self):
        np.testing.assert_array_equal(normalize_rows(np.eye(3)), np.eye(3))

    def test_row_sums_one(self, rng):
        b = (rng.random((10, 10)) < 0.3).astype(float)
        np.fill_diagonal(b, 1.0)
        out = normalize_rows(b)
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-12)

    def test_zero_row_rejected(self):
        with pytest.raises(ValueError, match="zero row"):
            normalize_rows(np.array([[1.0, 0.0], [0.0, 0.0]]))


class TestOperators:
    def test_constant_vector_preserved_with_zero_mask(self, topo):
        ops = build_operators(topo, num_scales=4)
        const = np.full(25, 3.7)
        for op in ops:
            assert np.all(op.mask == 0.0)
            np.testing.assert_allclose((op.normalized + op.mask) @ const, const, atol=1e-9)

    def test_base_properties(self, topo):
        for op in build_operators(topo, num_scales=3):
            np.testing.assert_array_equal(op.base, op.base.T)
            np.testing.assert_array_equal(np.diag(op.base), np.ones(25))
            np.testing.assert_allclose(op.normalized.sum(axis=1), 1.0, atol=1e-9)
