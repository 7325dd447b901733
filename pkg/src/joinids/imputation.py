"""Imputation of incomplete objects through DD rules and the repository index.

Imputation runs in stages so the engine can stop early:

* ``start``       -- rule selection only, the box leaves missing attributes at [0, 1]
* ``locate``      -- first query with matching rows, box cut to its leaves
* ``materialize`` -- candidates and instances built from those rows

Each missing attribute carries an ordered list of fallback queries: the
selected lattice node at 1x, 2x, 4x and 8x its determinant widths, then
every other applicable node. The first query that matches at least one
repository row wins, so staged and one-shot imputation agree exactly.
Because ``locate`` already settles on that query, the located box holds
every instance built later and never has to grow.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .index import ImputationIndex, IndexNode, frontier_span
from .model import (
    DEFAULT_CANDIDATE_CAP,
    MBR,
    ImputationState,
    ImputedObject,
    IncompleteObject,
    StateError,
    build_instances,
    merge_candidates,
)
from .rules import ImputationLattice, LatticeNode, NeighborhoodCounter, QueryRange, select_rule

WIDEN_STEPS = 3


@dataclass
class _AttrPlan:
    queries: list[QueryRange]
    nodes: list[LatticeNode]
    selected: bool  # False when the rule selection found no node with cnt >= 1
    cursor: int = 0
    frontier: list[IndexNode] = field(default_factory=list)
    rows: np.ndarray | None = None


@dataclass
class ImputationStats:
    started: int = 0
    located: int = 0
    materialized: int = 0
    unimputable: int = 0
    fallback_used: int = 0
    leaf_rows_read: int = 0


class Imputer:
    def __init__(
        self,
        lattices: dict[int, ImputationLattice],
        indexes: dict[int, ImputationIndex],
        counters: dict[tuple[int, ...], NeighborhoodCounter],
        cap: int = DEFAULT_CANDIDATE_CAP,
        widen_steps: int = WIDEN_STEPS,
    ):
        self.lattices = lattices
        self.indexes = indexes
        self.counters = counters
        self.cap = cap
        self.widen_steps = widen_steps
        self.stats = ImputationStats()

    def _plan(self, obj: IncompleteObject, j: int) -> _AttrPlan | None:
        lattice = self.lattices.get(j)
        if lattice is None:
            return None
        applicable = [n for n in lattice.traversal() if n.applicable(obj)]
        if not applicable:
            return None
        chosen = select_rule(lattice, obj, self.counters)
        head = chosen[0] if chosen else applicable[0]
        queries = [head.query_range(obj, 2.0**k) for k in range(self.widen_steps + 1)]
        nodes = [head] * len(queries)
        for n in applicable:
            if n is not head:
                queries.append(n.query_range(obj))
                nodes.append(n)
        return _AttrPlan(queries, nodes, chosen is not None)

    def _fail(self, io: ImputedObject) -> ImputedObject:
        io.unimputable = True
        io.plan = {}
        self.stats.unimputable += 1
        return io

    def start(self, obj: IncompleteObject) -> ImputedObject:
        self.stats.started += 1
        if obj.is_complete:
            return ImputedObject.complete(obj)
        lo = tuple(0.0 if v is None else v for v in obj.values)
        hi = tuple(1.0 if v is None else v for v in obj.values)
        io = ImputedObject(obj, ImputationState.RANGE, MBR(lo, hi))
        for j in obj.missing:
            plan = self._plan(obj, j)
            if plan is None:
                return self._fail(io)
            io.plan[j] = plan
        return io

    def locate(self, io: ImputedObject) -> ImputedObject:
        if io.unimputable or io.state is not ImputationState.RANGE:
            return io
        self.stats.located += 1
        mbr = io.mbr
        refs: list[int] = []
        for j, plan in io.plan.items():
            index = self.indexes[j]
            while plan.cursor < len(plan.queries):
                query = plan.queries[plan.cursor]
                leaves, _ = index.frontier(query)
                if leaves:
                    rows = index.rows_in(leaves, query)
                    self.stats.leaf_rows_read += sum(lf.count for lf in leaves)
                    if rows.size:
                        break
                plan.cursor += 1
            else:
                return self._fail(io)
            plan.rows = rows
            plan.frontier = leaves
            lo, hi = frontier_span(leaves)
            mbr = mbr.with_interval(j, lo, hi)
            refs.extend(n.node_id for n in leaves)
        io.mbr = mbr
        io.node_refs = tuple(refs)
        io.state = ImputationState.NODE
        return io

    def materialize(self, io: ImputedObject) -> ImputedObject:
        if io.unimputable or io.state is ImputationState.INSTANCE:
            return io
        if io.state is ImputationState.RANGE:
            self.locate(io)
            if io.unimputable:
                return io
        self.stats.materialized += 1
        candidates = {}
        for j, plan in io.plan.items():
            index = self.indexes[j]
            rows = plan.rows
            if plan.cursor > 0:
                self.stats.fallback_used += 1
            candidates[j] = merge_candidates(index.values[rows], self.cap)
            used = [index.nodes[i] for i in np.unique(index.leaf_of[rows])]
            home = index.covering_node(used)
            io.edges[j] = home.histogram.edges
        io.candidates = candidates
        io.points, io.probs = build_instances(io.source, candidates)
        io.mbr = MBR.of_points(io.points)
        io.state = ImputationState.INSTANCE
        return io

    def complete(self, io: ImputedObject) -> ImputedObject:
        return self.materialize(io)

    def impute(self, obj: IncompleteObject) -> ImputedObject:
        return self.materialize(self.start(obj))

    def query_used(self, io: ImputedObject, j: int) -> QueryRange:
        if j not in io.plan:
            raise StateError(f"object {io.oid} has no imputation plan for column {j}")
        plan = io.plan[j]
        return plan.queries[plan.cursor]

    def rule_used(self, io: ImputedObject, j: int) -> LatticeNode:
        plan = io.plan[j]
        return plan.nodes[plan.cursor]


def impute(
    obj: IncompleteObject,
    lattices: dict[int, ImputationLattice],
    indexes: dict[int, ImputationIndex],
    counters: dict[tuple[int, ...], NeighborhoodCounter] | None = None,
    cap: int = DEFAULT_CANDIDATE_CAP,
) -> ImputedObject:
    """One-shot imputation of ``obj`` to INSTANCE state (or unimputable)."""
    if counters is None:
        counters = {}
        for lat in lattices.values():
            for node in lat.traversal():
                if node.attrs not in counters:
                    counters[node.attrs] = NeighborhoodCounter(indexes[lat.dependent].repo.rows, node.attrs)
    return Imputer(lattices, indexes, counters, cap).impute(obj)
