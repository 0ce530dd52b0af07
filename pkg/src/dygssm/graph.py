"""Snapshot graphs: binning timestamped edges, normalization, negatives."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, ContractError, InputError

log = logging.getLogger(__name__)

# Snapshot counts per public dataset, used when no explicit count is given.
DATASET_SNAPSHOTS = {
    "bitcoin-alpha": 226,
    "bitcoin-otc": 262,
    "dblp": 27,
    "reddit-title": 178,
    "uci": 28,
}


@dataclass(frozen=True)
class Snapshot:
    index: int
    nodes: frozenset[int]
    edges: tuple[tuple[int, int], ...]
    adjacency: sp.csr_matrix
    features: np.ndarray | None = None

    @property
    def num_nodes(self) -> int:
        return self.adjacency.shape[0]

    @property
    def degree(self) -> np.ndarray:
        return np.asarray(self.adjacency.sum(axis=1)).ravel()

    def neighbors(self, u: int) -> np.ndarray:
        a = self.adjacency
        return a.indices[a.indptr[u]:a.indptr[u + 1]]

    @cached_property
    def neighbor_sets(self) -> list[set[int]]:
        a = self.adjacency
        return [set(a.indices[a.indptr[u]:a.indptr[u + 1]].tolist()) for u in range(a.shape[0])]

    def positive_edges(self) -> np.ndarray:
        """Distinct non-self-loop edges in their stored direction, shape (E, 2)."""
        seen = set()
        out = []
        for u, v in self.edges:
            if u == v or (u, v) in seen:
                continue
            seen.add((u, v))
            out.append((u, v))
        return np.array(out, dtype=np.int64).reshape(-1, 2)


@dataclass(frozen=True)
class DynamicGraph:
    snapshots: tuple[Snapshot, ...]
    node_count: int
    feature_dim: int = 64
    node_ids: tuple = field(default=())  # original id of each dense index

    def __len__(self) -> int:
        return len(self.snapshots)

    def __getitem__(self, t: int) -> Snapshot:
        return self.snapshots[t]

    @property
    def num_edges(self) -> int:
        return sum(len(s.edges) for s in self.snapshots)


@dataclass(frozen=True)
class NormalizedAdjacency:
    matrix: sp.csr_matrix
    degree: np.ndarray


def symmetric_adjacency(edges, n: int) -> sp.csr_matrix:
    """0/1 symmetric adjacency with zero diagonal."""
    if len(edges):
        e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        e = e[e[:, 0] != e[:, 1]]
        rows = np.concatenate([e[:, 0], e[:, 1]])
        cols = np.concatenate([e[:, 1], e[:, 0]])
    else:
        rows = cols = np.zeros(0, dtype=np.int64)
    a = sp.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n)).tocsr()
    a.data[:] = 1.0
    a.sort_indices()
    return a


def make_snapshot(index: int, edges, n: int, nodes=None) -> Snapshot:
    edges = tuple((int(u), int(v)) for u, v in edges)
    if nodes is None:
        nodes = {x for e in edges for x in e}
    return Snapshot(index, frozenset(nodes), edges, symmetric_adjacency(edges, n))


def graph_from_edge_lists(edge_lists, n: int, feature_dim: int = 64,
                          cumulative: bool = False) -> DynamicGraph:
    """Build a DynamicGraph from per-snapshot edge lists over nodes 0..n-1."""
    snaps = []
    active: set[int] = set()
    acc: list[tuple[int, int]] = []
    for t, edges in enumerate(edge_lists):
        edges = [(int(u), int(v)) for u, v in edges]
        for u, v in edges:
            if not (0 <= u < n and 0 <= v < n):
                raise InputError(f"edge ({u}, {v}) outside node universe of size {n}")
        active.update(x for e in edges for x in e)
        if cumulative:
            acc.extend(edges)
            edges = list(acc)
        snaps.append(make_snapshot(t, edges, n, nodes=set(active)))
    return DynamicGraph(tuple(snaps), n, feature_dim, tuple(range(n)))


def partition_snapshots(edges, T: int, n: int | None = None, feature_dim: int = 64,
                        cumulative: bool = False) -> DynamicGraph:
    """Split ``(u, v, timestamp)`` edges into ``T`` equal-width time bins.

    Bin ``k`` holds timestamps in ``[lo + k*w, lo + (k+1)*w)``; the maximum
    timestamp goes into the last bin.
    """
    if len(edges) == 0:
        raise InputError("edge list is empty")
    if T < 2:
        raise ConfigError(f"snapshot count must be >= 2, got {T}")
    arr = np.asarray([(e[0], e[1]) for e in edges], dtype=np.int64)
    ts = np.asarray([e[2] for e in edges], dtype=np.float64)
    lo, hi = ts.min(), ts.max()
    if lo == hi:
        raise ConfigError("all timestamps are equal; cannot bin into snapshots")
    width = (hi - lo) / T
    bins = np.minimum(((ts - lo) / width).astype(np.int64), T - 1)
    if n is None:
        n = int(arr.max()) + 1
    order = np.argsort(ts, kind="stable")
    lists: list[list[tuple[int, int]]] = [[] for _ in range(T)]
    for i in order:
        lists[bins[i]].append((int(arr[i, 0]), int(arr[i, 1])))
    return graph_from_edge_lists(lists, n, feature_dim, cumulative)


def normalize_adjacency(a) -> NormalizedAdjacency:
    """D^-1/2 A D^-1/2 with zero rows/columns for zero-degree nodes."""
    if isinstance(a, Snapshot):
        a = a.adjacency
    a = sp.csr_matrix(a, dtype=np.float64)
    if (a != a.T).nnz:
        raise ContractError("adjacency is not symmetric")
    deg = np.asarray(a.sum(axis=1)).ravel()
    inv = np.zeros_like(deg)
    nz = deg > 0
    inv[nz] = 1.0 / np.sqrt(deg[nz])
    d = sp.diags(inv)
    return NormalizedAdjacency(sp.csr_matrix(d @ a @ d), deg)


def negative_sample(snapshot: Snapshot, u: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """``k`` distinct nodes from the snapshot that are neither ``u`` nor its neighbors."""
    if u not in snapshot.nodes:
        raise InputError(f"node {u} is not in snapshot {snapshot.index}")
    banned = set(snapshot.neighbors(u).tolist())
    banned.add(u)
    eligible = np.array(sorted(x for x in snapshot.nodes if x not in banned), dtype=np.int64)
    if len(eligible) < k:
        raise InputError(
            f"node {u} in snapshot {snapshot.index} has {len(eligible)} eligible "
            f"negatives, {k} requested")
    return rng.choice(eligible, size=k, replace=False)


def training_negatives(snapshot: Snapshot, pos: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One uniformly drawn non-neighbor per positive edge, same source."""
    pool = np.array(sorted(snapshot.nodes), dtype=np.int64)
    nbrs = snapshot.neighbor_sets
    out = np.empty_like(pos)
    for i, u in enumerate(pos[:, 0].tolist()):
        for _ in range(64):
            w = int(pool[rng.integers(len(pool))])
            if w != u and w not in nbrs[u]:
                break
        else:
            eligible = [x for x in pool.tolist() if x != u and x not in nbrs[u]]
            if not eligible:
                raise InputError(f"node {u} in snapshot {snapshot.index} has no eligible negatives")
            w = eligible[rng.integers(len(eligible))]
        out[i] = (u, w)
    return out


# ------------------------------------------------------------------------- I/O


def _sniff_delimiter(line: str) -> str | None:
    if "," in line:
        return ","
    if "\t" in line:
        return "\t"
    return None  # whitespace


def _id_key(x: str):
    try:
        return (0, int(x), x)
    except ValueError:
        return (1, 0, x)


def read_edge_list(path) -> tuple[list[tuple[int, int, float]], list[str]]:
    """Parse ``source,target,timestamp[,weight]`` rows.

    Returns edges over dense 0-based ids and the original id of each dense
    index (sorted numerically when ids are integers).
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read edge list {path}: {exc}") from exc
    raw = []
    delim = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith(("#", "%")):
            continue
        if delim is None:
            delim = _sniff_delimiter(line) or " "
        parts = line.split() if delim == " " else [p.strip() for p in line.split(delim)]
        if len(parts) < 3:
            raise InputError(f"{path}:{lineno}: expected source,target,timestamp")
        try:
            ts = float(parts[2])
        except ValueError:
            if not raw:
                continue  # header
            raise InputError(f"{path}:{lineno}: bad timestamp {parts[2]!r}") from None
        if not parts[0] or not parts[1]:
            raise InputError(f"{path}:{lineno}: empty node id")
        raw.append((parts[0], parts[1], ts))
    if not raw:
        raise InputError(f"{path}: no edges")
    ids = sorted({x for r in raw for x in r[:2]}, key=_id_key)
    index = {x: i for i, x in enumerate(ids)}
    return [(index[s], index[d], ts) for s, d, ts in raw], ids


def load_dataset(path, T: int | None = None, feature_dim: int = 64,
                 cumulative: bool = False) -> DynamicGraph:
    edges, ids = read_edge_list(path)
    if T is None:
        key = Path(path).stem.lower().replace("_", "-")
        if key not in DATASET_SNAPSHOTS:
            raise ConfigError(f"no snapshot count given and {key!r} is not a known dataset")
        T = DATASET_SNAPSHOTS[key]
    g = partition_snapshots(edges, T, n=len(ids), feature_dim=feature_dim, cumulative=cumulative)
    return DynamicGraph(g.snapshots, g.node_count, feature_dim, tuple(ids))


def write_node_mapping(path, node_ids) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["original_id", "index"])
        for i, x in enumerate(node_ids):
            w.writerow([x, i])


def write_snapshots(directory, graph: DynamicGraph) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for s in graph.snapshots:
        p = directory / f"snapshot_{s.index:04d}.csv"
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["source", "target"])
        w.writerows(s.edges)
        p.write_text(buf.getvalue(), encoding="utf-8")
        paths.append(p)
    return paths


def read_snapshots(directory, n: int, feature_dim: int = 64) -> DynamicGraph:
    """Inverse of :func:`write_snapshots` (files already hold any accumulation)."""
    directory = Path(directory)
    files = sorted(directory.glob("snapshot_*.csv"))
    if not files:
        raise InputError(f"no snapshot files in {directory}")
    lists = []
    for p in files:
        with open(p, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))[1:]
        try:
            lists.append([(int(u), int(v)) for u, v in rows])
        except ValueError as exc:
            raise InputError(f"{p}: malformed edge row ({exc})") from exc
    return graph_from_edge_lists(lists, n, feature_dim)


def summary_line(graph: DynamicGraph) -> str:
    return f"{graph.node_count:,} nodes, {graph.num_edges:,} edges, {len(graph):,} snapshots"
