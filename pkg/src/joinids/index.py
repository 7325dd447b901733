"""Imputation index over the repository.

Rows are packed into clusters with sort-tile-recursive (STR) packing, the
clustering with the best query/cluster overlap is chosen, and the clusters
become leaves of a bulk-loaded tree over the determinant attributes ``U_j``.
Every node keeps an equi-depth histogram of the dependent attribute.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .model import ConfigurationError, Repository
from .rules import DDRule, ImputationLattice, QueryRange

DEFAULT_LAMBDA = 10
DEFAULT_LEAF_CAPACITIES = (16, 32, 64)
DEFAULT_CLUSTER_SAMPLES = 100
DEFAULT_FANOUT = 16


@dataclass
class Cluster:
    ids: np.ndarray
    lo: np.ndarray
    hi: np.ndarray

    @property
    def n(self) -> int:
        return len(self.ids)


@dataclass
class Clustering:
    clusters: list[Cluster]
    leaf_capacity: int
    min_size: int

    def __len__(self) -> int:
        return len(self.clusters)


@dataclass
class Histogram:
    """Consecutive buckets ``[edges[f], edges[f+1]]`` with counts (or masses)."""

    edges: np.ndarray
    counts: np.ndarray

    @property
    def n_buckets(self) -> int:
        return len(self.counts)

    @property
    def total(self) -> float:
        return float(self.counts.sum())

    @classmethod
    def equi_depth(cls, values: np.ndarray, lam: int) -> "Histogram":
        if lam < 1:
            raise ConfigurationError("bucket count lambda must be >= 1")
        v = np.sort(np.asarray(values, dtype=float))
        n = len(v)
        if lam == 1 or n == 0:
            return cls(np.array([v[0], v[-1]]) if n else np.array([0.0, 0.0]), np.array([n]))
        cut = [v[(f * n) // lam] for f in range(1, lam)]
        edges = np.concatenate(([v[0]], cut, [v[-1]]))
        return cls(edges, cls._bin(edges, v))

    @staticmethod
    def _bin(edges: np.ndarray, values: np.ndarray, weights: np.ndarray | None = None) -> np.ndarray:
        # left-closed buckets; the last one is closed on both sides
        idx = np.searchsorted(edges, values, side="right") - 1
        idx = np.clip(idx, 0, len(edges) - 2)
        return np.bincount(idx, weights=weights, minlength=len(edges) - 1)

    @classmethod
    def of_masses(cls, edges: np.ndarray, values: np.ndarray, weights: np.ndarray) -> "Histogram":
        """Instance mass per bucket on fixed edges; values outside are clamped."""
        return cls(np.asarray(edges, dtype=float), cls._bin(edges, values, weights))


@dataclass
class IndexNode:
    node_id: int
    lo: np.ndarray  # box over the indexed attributes
    hi: np.ndarray
    count: int
    span: tuple[float, float]  # dependent-attribute interval of the subtree
    histogram: Histogram
    children: list["IndexNode"] = field(default_factory=list)
    ids: np.ndarray | None = None  # set on leaves only
    parent: "IndexNode | None" = field(default=None, repr=False)

    @property
    def is_leaf(self) -> bool:
        return self.ids is not None


@dataclass
class RangeResult:
    rows: np.ndarray
    frontier: list[IndexNode]
    nodes_visited: int
    span: tuple[float, float] | None  # union of frontier dependent spans

    @property
    def node_ids(self) -> tuple[int, ...]:
        return tuple(n.node_id for n in self.frontier)


def _str_groups(points: np.ndarray, ids: np.ndarray, capacity: int, dim: int = 0) -> list[np.ndarray]:
    """Sort-tile-recursive packing into groups of balanced size <= capacity."""
    n = len(ids)
    if n <= capacity:
        return [ids]
    k = points.shape[1]
    n_groups = math.ceil(n / capacity)
    order = np.argsort(points[ids, dim], kind="stable")
    ids = ids[order]
    if dim == k - 1:
        return [g for g in np.array_split(ids, n_groups)]
    slabs = math.ceil(n_groups ** (1.0 / (k - dim)))
    out = []
    for slab in np.array_split(ids, slabs):
        out.extend(_str_groups(points, slab, capacity, dim + 1))
    return out


def str_clustering(repo: Repository, attrs: Sequence[int], leaf_capacity: int) -> Clustering:
    if leaf_capacity < 2:
        raise ConfigurationError("leaf capacity must be >= 2")
    pts = repo.rows[:, list(attrs)]
    groups = _str_groups(pts, np.arange(len(repo)), leaf_capacity)
    clusters = [Cluster(np.sort(g), pts[g].min(axis=0), pts[g].max(axis=0)) for g in groups if len(g)]
    return Clustering(clusters, leaf_capacity, max(1, leaf_capacity // 4))


def candidate_clusterings(
    repo: Repository, attrs: Sequence[int], capacities: Sequence[int] = DEFAULT_LEAF_CAPACITIES
) -> list[Clustering]:
    return [str_clustering(repo, attrs, m) for m in capacities]


def sample_queries(
    repo: Repository,
    attrs: Sequence[int],
    rules: Sequence[DDRule],
    s: int,
    rng: np.random.Generator,
) -> list[tuple[np.ndarray, np.ndarray]]:
    """``s`` repository rows, each turned into one box per rule over ``attrs``.

    Attributes of ``attrs`` a rule does not constrain stay unbounded.
    """
    if s < 1:
        raise ConfigurationError("need at least one sample query")
    schema = repo.schema
    pos = {j: k for k, j in enumerate(attrs)}
    picks = rng.choice(len(repo), size=min(s, len(repo)), replace=len(repo) < s)
    out = []
    for i in picks:
        row = repo.rows[i]
        for r in rules:
            lo = np.full(len(attrs), -np.inf)
            hi = np.full(len(attrs), np.inf)
            for name, e in r.determinants:
                j = schema.index(name)
                lo[pos[j]] = row[j] - e
                hi[pos[j]] = row[j] + e
            out.append((lo, hi))
    return out


def clustering_score(
    repo: Repository, attrs: Sequence[int], clustering: Clustering, queries: Sequence[tuple[np.ndarray, np.ndarray]]
) -> float:
    pts = repo.rows[:, list(attrs)]
    los = np.array([c.lo for c in clustering.clusters])
    his = np.array([c.hi for c in clustering.clusters])
    score = 0.0
    for qlo, qhi in queries:
        hit = np.all((los <= qhi) & (his >= qlo), axis=1)
        for k in np.flatnonzero(hit):
            c = clustering.clusters[k]
            p = pts[c.ids]
            inside = np.count_nonzero(np.all((p >= qlo) & (p <= qhi), axis=1))
            score += inside / c.n
    return score


def select_clusters(
    repo: Repository,
    attrs: Sequence[int],
    candidates: Sequence[Clustering],
    queries: Sequence[tuple[np.ndarray, np.ndarray]],
) -> Clustering:
    """Clustering with the largest summed in-query fraction over intersected clusters."""
    if not candidates:
        raise ConfigurationError("no candidate clusterings to choose from")
    if len(candidates) == 1:
        return candidates[0]
    scored = [(clustering_score(repo, attrs, c, queries), -len(c), i) for i, c in enumerate(candidates)]
    best = max(scored)
    return candidates[best[2]]


class ImputationIndex:
    """Tree over the determinant attributes ``attrs`` for imputing ``dependent``."""

    def __init__(
        self,
        repo: Repository,
        attrs: Sequence[int],
        dependent: int,
        lam: int = DEFAULT_LAMBDA,
        clustering: Clustering | None = None,
        fanout: int = DEFAULT_FANOUT,
    ):
        if lam < 1:
            raise ConfigurationError("bucket count lambda must be >= 1")
        if fanout < 2:
            raise ConfigurationError("fanout must be >= 2")
        self.repo = repo
        self.attrs = tuple(attrs)
        self.dependent = dependent
        self.lam = lam
        self.points = repo.rows[:, list(self.attrs)]
        self.values = repo.rows[:, dependent]
        if clustering is None:
            clustering = str_clustering(repo, self.attrs, DEFAULT_LEAF_CAPACITIES[0])
        self.clustering = clustering
        self.nodes: list[IndexNode] = []
        self.leaves = [self._make_leaf(c.ids) for c in clustering.clusters]
        self.root = self._pack(self.leaves, fanout) if self.leaves else None
        # flat copies for vectorised frontier search; leaves hold node ids 0..L-1
        self._node_lo = np.array([n.lo for n in self.nodes]).reshape(len(self.nodes), len(self.attrs))
        self._node_hi = np.array([n.hi for n in self.nodes]).reshape(len(self.nodes), len(self.attrs))
        self._fanout = np.array([len(n.children) for n in self.nodes], dtype=np.int64)
        self.leaf_of = np.empty(len(repo), dtype=np.int64)
        for lf in self.leaves:
            self.leaf_of[lf.ids] = lf.node_id

    def _new_node(self, ids: np.ndarray, lo, hi, children=None, leaf_ids=None) -> IndexNode:
        vals = self.values[ids]
        node = IndexNode(
            len(self.nodes),
            np.asarray(lo, dtype=float),
            np.asarray(hi, dtype=float),
            len(ids),
            (float(vals.min()), float(vals.max())),
            Histogram.equi_depth(vals, self.lam),
            children or [],
            leaf_ids,
        )
        for ch in node.children:
            ch.parent = node
        self.nodes.append(node)
        return node

    def _make_leaf(self, ids: np.ndarray) -> IndexNode:
        p = self.points[ids]
        return self._new_node(ids, p.min(axis=0), p.max(axis=0), leaf_ids=ids)

    def _subtree_ids(self, node: IndexNode) -> np.ndarray:
        if node.is_leaf:
            return node.ids
        return np.concatenate([self._subtree_ids(c) for c in node.children])

    def _pack(self, level: list[IndexNode], fanout: int) -> IndexNode:
        while len(level) > 1:
            centers = np.array([(n.lo + n.hi) / 2 for n in level])
            groups = _str_groups(centers, np.arange(len(level)), fanout)
            nxt = []
            for g in groups:
                kids = [level[i] for i in g]
                ids = np.concatenate([self._subtree_ids(k) for k in kids])
                lo = np.min([k.lo for k in kids], axis=0)
                hi = np.max([k.hi for k in kids], axis=0)
                nxt.append(self._new_node(ids, lo, hi, children=kids))
            level = nxt
        return level[0]

    def _bounds(self, query: QueryRange) -> tuple[np.ndarray, np.ndarray]:
        lo = np.full(len(self.attrs), -np.inf)
        hi = np.full(len(self.attrs), np.inf)
        pos = {j: k for k, j in enumerate(self.attrs)}
        for j, a, b in zip(query.attrs, query.lo, query.hi):
            if j not in pos:
                raise ConfigurationError(f"column {j} is not indexed by this index {self.attrs}")
            lo[pos[j]] = max(lo[pos[j]], a)
            hi[pos[j]] = min(hi[pos[j]], b)
        return lo, hi

    def frontier(self, query: QueryRange) -> tuple[list[IndexNode], int]:
        """Leaves whose boxes intersect the query, without reading their rows.

        Equivalent to a top-down traversal that skips disjoint subtrees (a
        leaf intersecting the query has every ancestor intersecting it too);
        the visit count is what that traversal would report.
        """
        if self.root is None:
            return [], 0
        qlo, qhi = self._bounds(query)
        hit = np.all((self._node_lo <= qhi) & (self._node_hi >= qlo), axis=1)
        n_leaves = len(self.leaves)
        visited = 1 + int(self._fanout[n_leaves:][hit[n_leaves:]].sum())
        return [self.leaves[i] for i in np.flatnonzero(hit[:n_leaves])], visited

    def rows_in(self, leaves: Sequence[IndexNode], query: QueryRange) -> np.ndarray:
        if not leaves:
            return np.empty(0, dtype=np.int64)
        qlo, qhi = self._bounds(query)
        ids = np.concatenate([lf.ids for lf in leaves])
        p = self.points[ids]
        return np.sort(ids[np.all((p >= qlo) & (p <= qhi), axis=1)])

    def range_query(self, query: QueryRange) -> RangeResult:
        leaves, visited = self.frontier(query)
        return RangeResult(self.rows_in(leaves, query), leaves, visited, frontier_span(leaves))

    def covering_node(self, leaves: Sequence[IndexNode]) -> IndexNode | None:
        """Lowest node whose subtree holds every given leaf."""
        if not leaves:
            return None
        paths = []
        for lf in leaves:
            path, n = [], lf
            while n is not None:
                path.append(n)
                n = n.parent
            paths.append(path[::-1])
        common = None
        for level in zip(*paths):
            if all(n is level[0] for n in level):
                common = level[0]
            else:
                break
        return common

    def iter_nodes(self):
        return iter(self.nodes)


def frontier_span(leaves: Sequence[IndexNode]) -> tuple[float, float] | None:
    if not leaves:
        return None
    return min(lf.span[0] for lf in leaves), max(lf.span[1] for lf in leaves)


def build_index(
    repo: Repository,
    attrs: Sequence[int],
    dependent: int,
    lam: int = DEFAULT_LAMBDA,
    clustering: Clustering | None = None,
    fanout: int = DEFAULT_FANOUT,
) -> ImputationIndex:
    return ImputationIndex(repo, attrs, dependent, lam, clustering, fanout)


def build_indexes(
    repo: Repository,
    lattices: dict[int, ImputationLattice],
    lam: int = DEFAULT_LAMBDA,
    leaf_capacities: Sequence[int] = DEFAULT_LEAF_CAPACITIES,
    cluster_samples: int = DEFAULT_CLUSTER_SAMPLES,
    seed: int = 0,
) -> dict[int, ImputationIndex]:
    rng = np.random.default_rng(seed)
    out = {}
    for dep, lat in sorted(lattices.items()):
        attrs = lat.union_attrs
        cands = candidate_clusterings(repo, attrs, leaf_capacities)
        queries = sample_queries(repo, attrs, lat.rules, cluster_samples, rng) if len(cands) > 1 else []
        chosen = select_clusters(repo, attrs, cands, queries)
        out[dep] = build_index(repo, attrs, dep, lam, chosen)
    return out


@dataclass(frozen=True)
class SubMBR:
    start: int  # first bucket (inclusive)
    stop: int  # last bucket (exclusive)
    beta: float
    lo: float
    hi: float


def _prefix(hist: Histogram, threshold: float) -> int:
    """Smallest f with cumulative mass / total > threshold (f buckets)."""
    cum = np.cumsum(hist.counts)
    total = cum[-1]
    for f in range(len(cum)):
        if cum[f] / total > threshold:
            return f + 1
    return len(cum)


def _run(hist: Histogram, stop: int) -> SubMBR:
    cum = np.cumsum(hist.counts)
    beta = 1.0 if stop == hist.n_buckets else float(cum[stop - 1] / cum[-1])
    return SubMBR(0, stop, beta, float(hist.edges[0]), float(hist.edges[stop]))


def select_sub_mbr_x(hist: Histogram, alpha: float) -> SubMBR:
    """Prefix run with mass > 1-alpha, greedily extended while it stays narrow.

    A bucket is added while (its width / full span) / (its mass fraction) < 1.
    """
    if hist.total <= 0:
        raise ConfigurationError("histogram is empty")
    stop = _prefix(hist, 1 - alpha)
    total = hist.total
    span = float(hist.edges[-1] - hist.edges[0])
    while stop < hist.n_buckets:
        d_beta = float(hist.counts[stop]) / total
        if d_beta <= 0:
            break
        width = float(hist.edges[stop + 1] - hist.edges[stop])
        d_width = width / span if span > 0 else 0.0
        if d_width / d_beta < 1:
            stop += 1
        else:
            break
    return _run(hist, stop)


def select_sub_mbr_y(hist: Histogram, beta_x: float, alpha: float) -> SubMBR:
    if hist.total <= 0:
        raise ConfigurationError("histogram is empty")
    return _run(hist, _prefix(hist, (1 - alpha) / beta_x))


def select_sub_mbr_pair(hist_x: Histogram, hist_y: Histogram, alpha: float) -> tuple[SubMBR, SubMBR]:
    if not 0 < alpha < 1:
        raise ConfigurationError("alpha must lie in (0, 1) for sub-MBR selection")
    s_x = select_sub_mbr_x(hist_x, alpha)
    return s_x, select_sub_mbr_y(hist_y, s_x.beta, alpha)
