"""Dynamic graphs with a planted periodic edge pattern plus uniform noise."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .graph import DynamicGraph, graph_from_edge_lists


@dataclass(frozen=True)
class SyntheticSpec:
    nodes: int = 60
    snapshots: int = 20
    planted: int = 40
    period: int = 4
    persistence: int = 3
    noise: float = 0.002  # probability of each non-planted pair per snapshot
    dropout: float = 0.0  # probability a scheduled planted edge is missing
    feature_dim: int = 64

    def __post_init__(self):
        pairs = self.nodes * (self.nodes - 1) // 2
        if self.nodes < 2 or self.snapshots < 2:
            raise ConfigError("synthetic graph needs >= 2 nodes and >= 2 snapshots")
        if self.period < 1 or self.persistence < 1:
            raise ConfigError("period and persistence must be >= 1")
        if not 0 <= self.planted <= pairs:
            raise ConfigError(f"cannot plant {self.planted} edges among {self.nodes} nodes")

    def scheduled(self, t: int) -> bool:
        """Planted edges appear at multiples of the period and persist a while."""
        return t % self.period < self.persistence


@dataclass(frozen=True)
class SyntheticGraph:
    graph: DynamicGraph
    planted: np.ndarray  # (planted, 2) ground-truth pairs, u < v
    spec: SyntheticSpec

    def is_planted(self, u: int, v: int) -> bool:
        a, b = min(u, v), max(u, v)
        return bool(((self.planted[:, 0] == a) & (self.planted[:, 1] == b)).any())


def generate_synthetic(spec: SyntheticSpec, seed: int) -> SyntheticGraph:
    rng = np.random.default_rng(seed)
    n = spec.nodes
    iu, ju = np.triu_indices(n, k=1)
    chosen = rng.choice(len(iu), size=spec.planted, replace=False)
    chosen.sort()
    planted = np.column_stack([iu[chosen], ju[chosen]])
    planted_mask = np.zeros(len(iu), dtype=bool)
    planted_mask[chosen] = True
    lists = []
    for t in range(spec.snapshots):
        edges = []
        if spec.scheduled(t):
            keep = rng.random(len(planted)) >= spec.dropout
            edges += [tuple(e) for e in planted[keep].tolist()]
        noisy = (rng.random(len(iu)) < spec.noise) & ~planted_mask
        edges += list(zip(iu[noisy].tolist(), ju[noisy].tolist()))
        lists.append(sorted(edges))
    graph = graph_from_edge_lists(lists, n, spec.feature_dim)
    return SyntheticGraph(graph, planted, spec)
