"""Sliding-window join over two incomplete streams.

Three strategies share the same imputer and the same refinement, so they
return identical join sets:

* ``joinids`` -- lazy imputation; an arriving object is only imputed as far
  as needed to show that no opposite grid cell lies within eps
* ``dd-grid`` -- every arrival is fully imputed, then probed through the grid
* ``dd-asp``  -- every arrival is fully imputed, then compared with every
  object of the opposite window
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .grid import EpsilonGrid
from .imputation import Imputer
from .index import DEFAULT_CLUSTER_SAMPLES, DEFAULT_LAMBDA, DEFAULT_LEAF_CAPACITIES, ImputationIndex, build_indexes
from .model import (
    DEFAULT_CANDIDATE_CAP,
    MBR,
    ConfigurationError,
    ImputationState,
    ImputedObject,
    IncompleteObject,
    JoinSet,
    ObjectId,
    OrderingError,
    PairKey,
    Repository,
    SchemaError,
    SlidingWindow,
)
from .prune import (
    BETA_MARGIN,
    TIE_BAND,
    JoinParams,
    join_probability,
    mindist,
    mindist_many,
    object_histogram,
    qualifies,
    sub_box_x,
    within,
)
from .rules import DDRule, ImputationLattice, NeighborhoodCounter, build_lattices

STRATEGIES = ("joinids", "dd-grid", "dd-asp")


@dataclass
class JoinStats:
    all_pairs: int = 0  # pairs formed with the opposite window on arrival
    grid_candidates: int = 0  # opposite objects in the probed cell block
    pruned_l1: int = 0
    pruned_l3: int = 0
    refined: int = 0
    deferred: int = 0

    def merge(self, other: "JoinStats") -> None:
        for k in vars(self):
            setattr(self, k, getattr(self, k) + getattr(other, k))

    @property
    def pruning_power(self) -> float:
        """Share of grid-candidate pairs removed before refinement."""
        if self.grid_candidates == 0:
            return 0.0
        return (self.pruned_l1 + self.pruned_l3) / self.grid_candidates

    @property
    def pruning_power_all(self) -> float:
        """Share of all window pairs never refined."""
        if self.all_pairs == 0:
            return 0.0
        return 1.0 - self.refined / self.all_pairs


@dataclass
class JoinDelta:
    t: int
    added: list[tuple[PairKey, float]] = field(default_factory=list)
    removed: list[tuple[PairKey, float]] = field(default_factory=list)
    unimputable: list[ObjectId] = field(default_factory=list)
    # object -> nearest opposite cell distance when it was left partially imputed
    deferred: dict[ObjectId, float] = field(default_factory=dict)
    stats: JoinStats = field(default_factory=JoinStats)


@dataclass
class Startup:
    """Offline structures: one lattice and one index per dependent attribute."""

    repo: Repository
    rules: list[DDRule]
    lattices: dict[int, ImputationLattice]
    indexes: dict[int, ImputationIndex]
    counters: dict[tuple[int, ...], NeighborhoodCounter]
    seconds: float = 0.0


def startup(
    repo: Repository,
    rules: Sequence[DDRule],
    lam: int = DEFAULT_LAMBDA,
    leaf_capacities: Sequence[int] = DEFAULT_LEAF_CAPACITIES,
    cluster_samples: int = DEFAULT_CLUSTER_SAMPLES,
    seed: int = 0,
) -> Startup:
    t0 = time.perf_counter()
    rules = list(rules)
    for r in rules:
        r.check_schema(repo.schema)
    counters: dict[tuple[int, ...], NeighborhoodCounter] = {}
    lattices = build_lattices(rules, repo, counters)
    indexes = build_indexes(repo, lattices, lam, leaf_capacities, cluster_samples, seed)
    return Startup(repo, rules, lattices, indexes, counters, time.perf_counter() - t0)


class _Side:
    """Window, live objects and ring-buffer tables for one stream.

    Row ``ts % w`` of each table describes the live object with timestamp
    ``ts``: its box, and for the sample-level test the cumulative instance
    mass over the buckets of its widest missing attribute.
    """

    def __init__(self, w: int, d: int, buckets: int):
        self.window = SlidingWindow(w)
        self.live: dict[int, ImputedObject] = {}  # timestamp -> object, imputable only
        self.w = w
        self.lo = np.zeros((w, d))
        self.hi = np.zeros((w, d))
        self.hcol = np.full(w, -1, dtype=np.int64)  # -1: no histogram, sub-box is the box
        self.hbuckets = np.zeros(w, dtype=np.int64)
        self.hcum = np.ones((w, buckets))
        self.hedges = np.zeros((w, buckets + 1))

    def put(self, io: ImputedObject) -> None:
        slot = io.timestamp % self.w
        self.lo[slot] = io.mbr.lo
        self.hi[slot] = io.mbr.hi
        self.hcol[slot] = -1
        if io.state is ImputationState.INSTANCE:
            h = object_histogram(io)
            if h is not None:
                j, hist = h
                cum = np.cumsum(hist.counts)
                nb = hist.n_buckets
                self.hcol[slot] = j
                self.hbuckets[slot] = nb
                self.hcum[slot, :nb] = cum / cum[-1]
                self.hcum[slot, nb:] = 1.0
                self.hedges[slot, : nb + 1] = hist.edges
                self.hedges[slot, nb + 1 :] = hist.edges[-1]


class JoinEngine:
    def __init__(
        self,
        setup: Startup,
        params: JoinParams,
        window: int,
        strategy: str = "joinids",
        cap: int = DEFAULT_CANDIDATE_CAP,
    ):
        if strategy not in STRATEGIES:
            raise ConfigurationError(f"unknown strategy {strategy!r}; choose from {STRATEGIES}")
        if window < 1:
            raise ConfigurationError("window size must be >= 1")
        self.setup = setup
        self.params = params
        self.w = window
        self.strategy = strategy
        self.d = setup.repo.schema.d
        self.imputer = Imputer(setup.lattices, setup.indexes, setup.counters, cap)
        self.grid = EpsilonGrid(params.eps, self.d)
        buckets = max((n.histogram.n_buckets for ix in setup.indexes.values() for n in ix.nodes), default=1)
        self.sides = {1: _Side(window, self.d, buckets), 2: _Side(window, self.d, buckets)}
        self.joins = JoinSet(params.alpha)
        self.stats = JoinStats()
        self.t: int | None = None
        self.seconds = 0.0
        self._use_l3 = params.alpha < 1

    # --- per-timestamp driver -------------------------------------------

    def step(self, t: int, new_x: IncompleteObject | None = None, new_y: IncompleteObject | None = None) -> JoinDelta:
        if self.t is not None and t <= self.t:
            raise OrderingError(f"timestamp {t} does not follow {self.t}")
        for obj, sid in ((new_x, 1), (new_y, 2)):
            if obj is None:
                continue
            if obj.timestamp != t or obj.stream_id != sid:
                raise OrderingError(f"object {obj.oid} offered at timestamp {t} for stream {sid}")
            if obj.d != self.d:
                raise SchemaError(f"object {obj.oid} has {obj.d} attributes, expected {self.d}")
        t0 = time.perf_counter()
        self.t = t
        delta = JoinDelta(t)
        for sid, side in self.sides.items():
            for old in side.window.expire(t):
                self._forget(old, sid)
                delta.removed.extend(self.joins.drop_endpoint(sid, old.timestamp))
        if new_x is not None:
            self._arrive(new_x, delta)
        if new_y is not None:
            self._arrive(new_y, delta)
        self.stats.merge(delta.stats)
        self.seconds += time.perf_counter() - t0
        return delta

    def run(self, stream1: Iterable[IncompleteObject], stream2: Iterable[IncompleteObject]) -> list[JoinDelta]:
        by_t: dict[int, list] = {}
        for obj in stream1:
            by_t.setdefault(obj.timestamp, [None, None])[0] = obj
        for obj in stream2:
            by_t.setdefault(obj.timestamp, [None, None])[1] = obj
        return [self.step(t, *by_t[t]) for t in sorted(by_t)]

    def _forget(self, io: ImputedObject, sid: int) -> None:
        self.sides[sid].live.pop(io.timestamp, None)
        self.grid.evict(io)

    # --- arrival ---------------------------------------------------------

    def _arrive(self, obj: IncompleteObject, delta: JoinDelta) -> None:
        sid = obj.stream_id
        opp = 2 if sid == 1 else 1
        side = self.sides[sid]
        delta.stats.all_pairs += len(self.sides[opp].window)
        if self.strategy == "joinids":
            io = self.imputer.start(obj)
        else:
            io = self.imputer.impute(obj)
        side.window.slide(io)
        if io.unimputable:
            delta.unimputable.append(io.oid)
            return
        if self.strategy == "dd-asp":
            side.live[io.timestamp] = io
            self._nested(io, opp, delta)
            return
        if io.state is not ImputationState.INSTANCE:
            gap = self.grid.any_candidate(io.mbr, self.params.eps, opp)
            if gap is None:
                self.imputer.locate(io)
                if io.unimputable:
                    delta.unimputable.append(io.oid)
                    return
                gap = self.grid.any_candidate(io.mbr, self.params.eps, opp)
            if gap is not None:
                block = self._block_ids(io.mbr, opp)
                delta.stats.grid_candidates += len(block)
                delta.stats.pruned_l1 += len(block)
                delta.stats.deferred += 1
                delta.deferred[io.oid] = gap
                self._file(io, side)
                return
            self.imputer.materialize(io)
            if io.unimputable:
                delta.unimputable.append(io.oid)
                return
        self._probe(io, opp, delta)
        self._file(io, side)

    def _file(self, io: ImputedObject, side: _Side) -> None:
        side.live[io.timestamp] = io
        side.put(io)
        self.grid.insert(io)

    def _block_ids(self, box: MBR, opp: int) -> set[int]:
        s = 0 if opp == 1 else 1
        cells = self.grid.cells
        return set().union(*(cells[k][s].keys() for k in self.grid.neighborhood(box)))

    def _add(self, x: ImputedObject, y: ImputedObject, p: float, delta: JoinDelta) -> None:
        if x.stream_id == 2:
            x, y = y, x
        if abs(p - self.params.alpha) <= TIE_BAND:
            ok, p = qualifies(p, x, y, self.params)
        else:
            ok = p >= self.params.alpha
        if ok:
            key = (x.timestamp, y.timestamp)
            self.joins.add(*key, p)
            delta.added.append((key, p))

    def _nested(self, io: ImputedObject, opp: int, delta: JoinDelta) -> None:
        live = self.sides[opp].live
        for ts in sorted(live):
            y = live[ts]
            x, y = (io, y) if io.stream_id == 1 else (y, io)
            delta.stats.refined += 1
            self._add(x, y, join_probability(x, y, self.params), delta)

    def _probe(self, x: ImputedObject, opp: int, delta: JoinDelta) -> None:
        eps = self.params.eps
        alpha = self.params.alpha
        grid = self.grid
        s = 0 if opp == 1 else 1
        keys = [k for k in grid.neighborhood(x.mbr) if grid.cells[k][s]]
        if not keys:
            return
        dist = grid.cell_mindist(keys, x.mbr)
        cells = grid.cells
        block = set().union(*(cells[k][s].keys() for k in keys))
        delta.stats.grid_candidates += len(block)
        near = [k for k, dd in zip(keys, dist) if dd <= eps]
        if not near:
            delta.stats.pruned_l1 += len(block)
            return
        l1 = set().union(*(cells[k][s].keys() for k in near))
        delta.stats.pruned_l1 += len(block) - len(l1)

        screen = False
        if self._use_l3:
            s_x, beta_x = sub_box_x(x, alpha)
            # a far sub-box with enough mass prunes whole cells (other side at mass 1)
            screen = beta_x > 1 - alpha + BETA_MARGIN and s_x != x.mbr
        if screen:
            sd = grid.cell_mindist(near, s_x)
            cand = set().union(*(cells[k][s].keys() for k, dd in zip(near, sd) if dd <= eps))
            delta.stats.pruned_l3 += len(l1) - len(cand)
        else:
            cand = l1
        if not cand:
            return

        side = self.sides[opp]
        ts = np.fromiter(sorted(o[1] for o in cand), dtype=np.int64, count=len(cand))
        slots = ts % self.w
        keep = mindist_many(side.lo[slots], side.hi[slots], x.mbr) <= eps
        delta.stats.pruned_l1 += int(np.count_nonzero(~keep))
        if screen:
            near_sub = mindist_many(side.lo[slots], side.hi[slots], s_x) <= eps
            delta.stats.pruned_l3 += int(np.count_nonzero(keep & ~near_sub))
            keep &= near_sub

        # objects still partially imputed are completed now
        survivors = []
        for t_y in ts[keep].tolist():
            y = side.live[t_y]
            if y.state is not ImputationState.INSTANCE:
                old = y.mbr
                self.imputer.materialize(y)
                if y.unimputable:
                    grid.evict(y)
                    del side.live[t_y]
                    delta.unimputable.append(y.oid)
                    continue
                grid.reindex(y, old)
                side.put(y)
                if mindist(x.mbr, y.mbr) > eps:
                    delta.stats.pruned_l1 += 1
                    continue
            survivors.append(t_y)
        if not survivors:
            return
        ts = np.asarray(survivors, dtype=np.int64)
        if self._use_l3:
            far = self._sample_prune(side, ts % self.w, s_x, beta_x)
            delta.stats.pruned_l3 += int(np.count_nonzero(far))
            ts = ts[~far]
        if ts.size:
            stamps = ts.tolist()
            self._refine(x, [side.live[t] for t in stamps], stamps, delta)

    def _sample_prune(self, side: _Side, slots: np.ndarray, s_x: MBR, beta_x: float) -> np.ndarray:
        """Vectorised sample-level test of ``s_x`` against each candidate's sub-box."""
        alpha = self.params.alpha
        lo = side.lo[slots]
        hi = side.hi[slots].copy()
        beta_y = np.ones(len(slots))
        col = side.hcol[slots]
        has = np.flatnonzero(col >= 0)
        if has.size:
            cum = side.hcum[slots[has]]
            nb = side.hbuckets[slots[has]]
            # buckets in the shortest prefix whose mass exceeds (1 - alpha) / beta_x
            above = cum > (1 - alpha) / beta_x
            stop = np.where(above.any(axis=1), above.argmax(axis=1) + 1, nb)
            part = stop < nb
            rows = has[part]
            st = stop[part]
            beta_y[rows] = cum[part, st - 1]
            j = col[rows]
            edge = side.hedges[slots[rows], st]
            hi[rows, j] = np.maximum(lo[rows, j], np.minimum(hi[rows, j], edge))
        enough = beta_x * beta_y > 1 - alpha + BETA_MARGIN
        return enough & (mindist_many(lo, hi, s_x) > self.params.eps)

    def _refine(self, x: ImputedObject, ys: list[ImputedObject], stamps: list[int], delta: JoinDelta) -> None:
        """Join probabilities of ``x`` with every object of ``ys`` (timestamps ``stamps``) in one pass."""
        sizes = [len(y.probs) for y in ys]
        starts = np.cumsum([0] + sizes[:-1])
        pts = np.concatenate([y.points for y in ys])
        probs = np.concatenate([y.probs for y in ys])
        close = within(x.points, pts, self.params.eps)
        per_y = np.add.reduceat(close * probs, starts, axis=1)
        p = np.clip(x.probs @ per_y, 0.0, 1.0)
        delta.stats.refined += len(ys)
        alpha = self.params.alpha
        near = np.abs(p - alpha) <= TIE_BAND
        for i in np.flatnonzero(near).tolist():
            self._add(x, ys[i], float(p[i]), delta)
        keep = np.flatnonzero((p >= alpha) & ~near).tolist()
        if not keep:
            return
        ts = [stamps[i] for i in keep]
        ps = p[keep].tolist()
        tx = x.timestamp
        if x.stream_id == 1:
            self.joins.add_many(tx, ts, ps)
            delta.added.extend(zip(((tx, t) for t in ts), ps))
        else:
            self.joins.add_many_y(tx, ts, ps)
            delta.added.extend(zip(((t, tx) for t in ts), ps))

    # --- inspection ------------------------------------------------------

    def live_objects(self) -> dict[ObjectId, ImputedObject]:
        out = {}
        for side in self.sides.values():
            for io in side.live.values():
                out[io.oid] = io
        return out

    def check_integrity(self) -> list[str]:
        problems = self.grid.check_integrity(None if self.strategy == "dd-asp" else self.live_objects())
        cutoff = (self.t or 0) - self.w
        for (tx, ty) in self.joins.pairs:
            if tx <= cutoff or ty <= cutoff:
                problems.append(f"pair ({tx}, {ty}) has an expired endpoint at t={self.t}")
            if tx not in self.sides[1].live or ty not in self.sides[2].live:
                problems.append(f"pair ({tx}, {ty}) references an object outside the windows")
        for sid, side in self.sides.items():
            stamps = [io.timestamp for io in side.window]
            if stamps and stamps[0] <= cutoff:
                problems.append(f"stream {sid} window holds expired timestamp {stamps[0]}")
        return problems


def run_strategy(
    setup: Startup,
    params: JoinParams,
    window: int,
    stream1: Sequence[IncompleteObject],
    stream2: Sequence[IncompleteObject],
    strategy: str = "joinids",
    cap: int = DEFAULT_CANDIDATE_CAP,
) -> tuple[JoinEngine, list[JoinDelta]]:
    engine = JoinEngine(setup, params, window, strategy, cap)
    return engine, engine.run(stream1, stream2)


def run_baseline_impute_then_nested(setup, params, window, stream1, stream2, cap=DEFAULT_CANDIDATE_CAP):
    return run_strategy(setup, params, window, stream1, stream2, "dd-asp", cap)


def run_baseline_impute_then_grid(setup, params, window, stream1, stream2, cap=DEFAULT_CANDIDATE_CAP):
    return run_strategy(setup, params, window, stream1, stream2, "dd-grid", cap)


def replay(deltas: Iterable[JoinDelta]) -> dict[PairKey, float]:
    """Join set after applying every delta in order."""
    js: dict[PairKey, float] = {}
    for d in deltas:
        for key, _ in d.removed:
            js.pop(key, None)
        for key, p in d.added:
            js[key] = p
    return js
