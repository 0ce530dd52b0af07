"""Second-order biased random walks and the per-snapshot walk cache.

Each node's global context is summarized as the ``top_k`` nodes it visits
most often across ``walks_per_node`` walks of ``walk_length`` steps.
"""

from __future__ import annotations

import bisect
import csv
import io
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, ConsistencyError, InputError
from .graph import DynamicGraph, Snapshot


@dataclass(frozen=True)
class WalkConfig:
    p: float = 1.0
    q: float = 2.0
    walks_per_node: int = 50
    walk_length: int = 5
    top_k: int = 5

    def __post_init__(self):
        problems = []
        if not self.p > 0:
            problems.append(f"p must be > 0, got {self.p}")
        if not self.q > 0:
            problems.append(f"q must be > 0, got {self.q}")
        for name in ("walks_per_node", "walk_length", "top_k"):
            if getattr(self, name) < 1:
                problems.append(f"{name} must be >= 1, got {getattr(self, name)}")
        if problems:
            raise ConfigError("; ".join(problems))


def _adjacency(graph) -> sp.csr_matrix:
    if isinstance(graph, Snapshot):
        return graph.adjacency
    return sp.csr_matrix(graph)


class _Neighbors:
    """Sorted neighbor lists plus sets for O(1) distance-1 checks."""

    def __init__(self, a: sp.csr_matrix):
        a = sp.csr_matrix(a)
        a.sort_indices()
        self.lists = [a.indices[a.indptr[u]:a.indptr[u + 1]].tolist() for u in range(a.shape[0])]
        self.sets = [set(x) for x in self.lists]


def transition_weights(nbrs: _Neighbors, prev: int | None, cur: int, p: float, q: float):
    """Unnormalized weights over ``cur``'s neighbors given the previous node."""
    cand = nbrs.lists[cur]
    if prev is None:
        return cand, [1.0] * len(cand)
    back = nbrs.sets[prev]
    weights = []
    for v in cand:
        if v == prev:
            weights.append(1.0 / p)
        elif v in back:
            weights.append(1.0)
        else:
            weights.append(1.0 / q)
    return cand, weights


def _walk(nbrs: _Neighbors, source: int, cfg: WalkConfig, rng: np.random.Generator) -> list[int]:
    path = [source]
    prev = None
    cur = source
    for _ in range(cfg.walk_length):
        cand, w = transition_weights(nbrs, prev, cur, cfg.p, cfg.q)
        if not cand:
            break
        cum = np.cumsum(w).tolist()
        i = bisect.bisect_right(cum, rng.random() * cum[-1])
        nxt = cand[min(i, len(cand) - 1)]
        prev, cur = cur, nxt
        path.append(nxt)
    return path


def biased_walk(graph, source: int, cfg: WalkConfig, rng: np.random.Generator) -> list[int]:
    """One walk starting at ``source`` (position 0); ``[source]`` if isolated."""
    return _walk(_Neighbors(_adjacency(graph)), source, cfg, rng)


def _summarize(counts: Counter, top_k: int) -> list[int]:
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return [node for node, _ in ranked[:top_k]]


def _summary(nbrs: _Neighbors, source: int, cfg: WalkConfig, rng) -> list[int]:
    counts: Counter = Counter()
    for _ in range(cfg.walks_per_node):
        path = _walk(nbrs, source, cfg, rng)
        counts.update(x for x in path[1:] if x != source)
    return _summarize(counts, cfg.top_k)


def walk_summary(graph, source: int, cfg: WalkConfig, rng: np.random.Generator) -> list[int]:
    """Most frequently visited nodes over all walks from ``source``.

    Source occurrences are not counted; ties go to the smaller node id.
    """
    return _summary(_Neighbors(_adjacency(graph)), source, cfg, rng)


def source_rng(seed: int, snapshot: int, source: int) -> np.random.Generator:
    return np.random.default_rng([seed, snapshot, source])


@dataclass
class WalkCache:
    top_k: int
    entries: dict[int, dict[int, tuple[int, ...]]] = field(default_factory=dict)

    def __eq__(self, other):
        return (isinstance(other, WalkCache) and self.top_k == other.top_k
                and self.entries == other.entries)

    def summary(self, t: int, u: int) -> tuple[int, ...]:
        try:
            return self.entries[t][u]
        except KeyError:
            raise ConsistencyError(f"walk cache has no entry for node {u} in snapshot {t}") from None

    def sequences(self, snapshot: Snapshot) -> tuple[np.ndarray, np.ndarray]:
        """Fixed-length node sequences for every node plus an (n, 1) activity mask.

        Short summaries are right-padded with the source id; isolated nodes
        get their own id repeated and a zero mask.
        """
        n = snapshot.num_nodes
        deg = snapshot.degree
        seq = np.repeat(np.arange(n, dtype=np.int64)[:, None], self.top_k, axis=1)
        mask = np.zeros((n, 1))
        table = self.entries.get(snapshot.index, {})
        for u in np.nonzero(deg > 0)[0].tolist():
            if u not in table:
                raise ConsistencyError(
                    f"walk cache has no entry for active node {u} in snapshot {snapshot.index}")
            s = table[u]
            if s:
                seq[u, :len(s)] = s
                mask[u, 0] = 1.0
        return seq, mask


def build_cache(graph: DynamicGraph, cfg: WalkConfig, seed: int, path=None) -> WalkCache:
    """Walk summaries for every known node of every snapshot, optionally persisted."""
    cache = WalkCache(cfg.top_k)
    for snap in graph.snapshots:
        nbrs = _Neighbors(snap.adjacency)
        table = {}
        for u in sorted(snap.nodes):
            if nbrs.lists[u]:
                table[u] = tuple(_summary(nbrs, u, cfg, source_rng(seed, snap.index, u)))
            else:
                table[u] = ()
        cache.entries[snap.index] = table
    if path is not None:
        save_cache(cache, path)
    return cache


def save_cache(cache: WalkCache, path) -> None:
    path = Path(path)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["snapshot", "source"] + [f"n{i + 1}" for i in range(cache.top_k)])
    for t in sorted(cache.entries):
        for u in sorted(cache.entries[t]):
            s = list(cache.entries[t][u])
            w.writerow([t, u] + s + [""] * (cache.top_k - len(s)))
    try:
        path.write_text(buf.getvalue(), encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot write walk cache {path}: {exc}") from exc


def load_cache(path) -> WalkCache:
    path = Path(path)
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise InputError(f"cannot read walk cache {path}: {exc}") from exc
    if not rows or rows[0][:2] != ["snapshot", "source"]:
        raise InputError(f"{path}: not a walk cache file")
    cache = WalkCache(len(rows[0]) - 2)
    for lineno, row in enumerate(rows[1:], start=2):
        try:
            t, u = int(row[0]), int(row[1])
            s = tuple(int(x) for x in row[2:] if x != "")
        except (ValueError, IndexError):
            raise InputError(f"{path}:{lineno}: malformed cache row") from None
        cache.entries.setdefault(t, {})[u] = s
    return cache
