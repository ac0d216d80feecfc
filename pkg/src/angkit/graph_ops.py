"""Adjacency matrices, k-hop reachability, and normalized graph operators.

V is at most a few dozen, so everything is dense float64. Reachability is
cumulative: entry (i, j) of scale k is 1 iff the graph distance between
joints i and j is at most k, which with self-loops equals the binarized
k-th boolean power of the adjacency matrix.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core_types import SkeletonTopology


@dataclass
class GraphOperator:
    """One spatial-aggregation scale: reachability, its row-normalized
    form, and an additive learnable mask (zero-initialized; trained
    in place by the optimizer)."""

    scale: int
    base: np.ndarray        # (V, V) binary, symmetric, unit diagonal
    normalized: np.ndarray  # (V, V), rows sum to 1
    mask: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if self.mask is None:
            self.mask = np.zeros_like(self.normalized)


def build_adjacency(topology: SkeletonTopology) -> np.ndarray:
    """Binary adjacency with self-loops: A[i,j] = 1 iff bone (i,j) or i=j."""
    v = topology.num_joints
    a = np.eye(v, dtype=np.float64)
    for i, j in topology.edges:
        a[i, j] = 1.0
        a[j, i] = 1.0
    return a


def k_hop_reachability(adjacency: np.ndarray, k: int) -> np.ndarray:
    """Binary matrix with (i,j) = 1 iff graph distance(i,j) <= k."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    a = (np.asarray(adjacency) != 0).astype(np.int64)
    reach = a.copy()
    for _ in range(k - 1):
        reach = ((reach @ a) > 0).astype(np.int64)
    return reach.astype(np.float64)


def normalize_rows(matrix: np.ndarray) -> np.ndarray:
    """Divide each row by its sum (D^-1 B); preserves constant vectors."""
    matrix = np.asarray(matrix, dtype=np.float64)
    sums = matrix.sum(axis=1)
    if np.any(sums == 0):
        raise ValueError(f"zero row(s) at {np.flatnonzero(sums == 0).tolist()}")
    return matrix / sums[:, None]


def build_operators(topology: SkeletonTopology, num_scales: int) -> list[GraphOperator]:
    """One GraphOperator per scale k = 1..num_scales."""
    if num_scales < 1:
        raise ValueError("num_scales must be >= 1")
    adjacency = build_adjacency(topology)
    ops = []
    for k in range(1, num_scales + 1):
        base = k_hop_reachability(adjacency, k)
        ops.append(GraphOperator(scale=k, base=base, normalized=normalize_rows(base)))
    return ops
