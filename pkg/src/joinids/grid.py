"""Sparse epsilon-grid with one queue per stream in every populated cell.

Cell ``k`` on an axis is the closed interval ``[k*eps, (k+1)*eps]``, so a
value on a boundary touches both neighbours. An object is referenced by
every cell its current box intersects.
"""

from __future__ import annotations

import itertools
import math
from typing import Iterator

import numpy as np

from .model import MBR, ContainmentError, ConfigurationError, ImputedObject, ObjectId, StateError

CellKey = tuple[int, ...]


def axis_cells(lo: float, hi: float, eps: float) -> range:
    """Cell coordinates whose closed interval meets ``[lo, hi]``."""
    # floor() of a float quotient can be off by one (0.6 / 0.3 < 2), so the
    # bounds are corrected with the same products the cell boxes use
    a = math.floor(lo / eps)
    while a * eps >= lo:
        a -= 1
    while (a + 1) * eps < lo:
        a += 1
    b = math.floor(hi / eps)
    while b * eps > hi:
        b -= 1
    while (b + 1) * eps <= hi:
        b += 1
    return range(a, b + 1)


def cells_for(mbr: MBR, eps: float) -> set[CellKey]:
    return set(itertools.product(*(axis_cells(a, b, eps) for a, b in zip(mbr.lo, mbr.hi))))


def cell_box(key: CellKey, eps: float) -> MBR:
    return MBR(tuple(k * eps for k in key), tuple((k + 1) * eps for k in key))


class EpsilonGrid:
    def __init__(self, eps: float, d: int):
        if not eps > 0:
            raise ConfigurationError("grid cell side must be > 0")
        self.eps = eps
        self.d = d
        # key -> [queue of stream 1, queue of stream 2]; dicts keep arrival order
        self.cells: dict[CellKey, list[dict[ObjectId, ImputedObject]]] = {}
        self.refs: dict[ObjectId, set[CellKey]] = {}
        self.boxes: dict[ObjectId, MBR] = {}

    def __len__(self) -> int:
        return len(self.refs)

    def __contains__(self, oid: ObjectId) -> bool:
        return oid in self.refs

    @staticmethod
    def _side(obj: ImputedObject) -> int:
        return 0 if obj.stream_id == 1 else 1

    def _add(self, obj: ImputedObject, keys) -> None:
        s = self._side(obj)
        for k in keys:
            cell = self.cells.get(k)
            if cell is None:
                cell = self.cells[k] = [{}, {}]
            cell[s][obj.oid] = obj

    def _remove(self, obj: ImputedObject, keys) -> None:
        s = self._side(obj)
        for k in keys:
            cell = self.cells[k]
            del cell[s][obj.oid]
            if not cell[0] and not cell[1]:
                del self.cells[k]

    def insert(self, obj: ImputedObject) -> None:
        if obj.oid in self.refs:
            raise StateError(f"object {obj.oid} is already in the grid")
        keys = cells_for(obj.mbr, self.eps)
        self._add(obj, keys)
        self.refs[obj.oid] = keys
        self.boxes[obj.oid] = obj.mbr

    def reindex(self, obj: ImputedObject, old_mbr: MBR | None = None) -> int:
        """Drops cells the (shrunken) box no longer meets; returns how many."""
        old_mbr = old_mbr if old_mbr is not None else self.boxes[obj.oid]
        if not old_mbr.contains(obj.mbr):
            raise ContainmentError(f"box of {obj.oid} grew from {old_mbr} to {obj.mbr}")
        keys = self.refs[obj.oid]
        new = cells_for(obj.mbr, self.eps)
        gone = keys - new
        self._remove(obj, gone)
        self.refs[obj.oid] = keys & new
        self.boxes[obj.oid] = obj.mbr
        return len(gone)

    def relocate(self, obj: ImputedObject) -> None:
        """Re-files an object whose box changed arbitrarily."""
        keys = self.refs[obj.oid]
        new = cells_for(obj.mbr, self.eps)
        self._remove(obj, keys - new)
        self._add(obj, new - keys)
        self.refs[obj.oid] = new
        self.boxes[obj.oid] = obj.mbr

    def evict(self, obj: ImputedObject) -> None:
        keys = self.refs.pop(obj.oid, None)
        if keys is None:
            return
        self._remove(obj, keys)
        del self.boxes[obj.oid]

    def neighborhood(self, probe: MBR) -> list[CellKey]:
        """Populated keys in the cover of ``probe`` grown by one cell per axis."""
        ranges = [axis_cells(a, b, self.eps) for a, b in zip(probe.lo, probe.hi)]
        size = math.prod(len(r) + 2 for r in ranges)
        if size > len(self.cells):
            if not self.cells:
                return []
            lo = np.array([r.start - 1 for r in ranges])
            hi = np.array([r.stop for r in ranges])
            keys = list(self.cells)
            arr = np.array(keys)
            hit = np.all((arr >= lo) & (arr <= hi), axis=1)
            return [keys[i] for i in np.flatnonzero(hit)]
        keys = itertools.product(*(range(r.start - 1, r.stop + 1) for r in ranges))
        return [k for k in keys if k in self.cells]

    def cell_mindist(self, keys: list[CellKey], probe: MBR) -> np.ndarray:
        if not keys:
            return np.empty(0)
        k = np.asarray(keys, dtype=float)
        lo = k * self.eps
        hi = (k + 1) * self.eps
        gap = np.maximum(np.maximum(lo - np.asarray(probe.hi), np.asarray(probe.lo) - hi), 0.0)
        return np.sqrt(np.sum(gap * gap, axis=1))

    def candidate_cells(
        self, probe: MBR, eps: float, opposite_stream: int
    ) -> Iterator[tuple[CellKey, dict[ObjectId, ImputedObject]]]:
        """Non-empty opposite-stream queues of cells within ``eps`` of ``probe``."""
        s = 0 if opposite_stream == 1 else 1
        keys = [k for k in self.neighborhood(probe) if self.cells[k][s]]
        dist = self.cell_mindist(keys, probe)
        for k, dd in zip(keys, dist):
            if dd <= eps:
                yield k, self.cells[k][s]

    def any_candidate(self, probe: MBR, eps: float, opposite_stream: int) -> float | None:
        """None if some opposite cell lies within ``eps``, else the nearest cell distance."""
        s = 0 if opposite_stream == 1 else 1
        ranges = [axis_cells(a, b, self.eps) for a, b in zip(probe.lo, probe.hi)]
        if math.prod(len(r) for r in ranges) <= len(self.cells):
            # a populated cell inside the cover is at distance 0
            for k in itertools.product(*ranges):
                cell = self.cells.get(k)
                if cell is not None and cell[s]:
                    return None
        keys = [k for k in self.neighborhood(probe) if self.cells[k][s]]
        dist = self.cell_mindist(keys, probe)
        if dist.size and dist.min() <= eps:
            return None
        return float(dist.min()) if dist.size else math.inf

    def check_integrity(self, live: dict[ObjectId, ImputedObject] | None = None) -> list[str]:
        """Problems found; empty when every reference matches its object's box."""
        problems = []
        seen: dict[ObjectId, set[CellKey]] = {}
        for k, (q1, q2) in self.cells.items():
            if not q1 and not q2:
                problems.append(f"empty cell {k} kept")
            for q in (q1, q2):
                for oid in q:
                    seen.setdefault(oid, set()).add(k)
        for oid, keys in self.refs.items():
            if seen.get(oid, set()) != keys:
                problems.append(f"refs of {oid} disagree with cell queues")
        for oid in seen:
            if oid not in self.refs:
                problems.append(f"{oid} in cells but not tracked")
        if live is not None:
            for oid, obj in live.items():
                if oid not in self.refs:
                    problems.append(f"live object {oid} missing from grid")
                elif self.refs[oid] != cells_for(obj.mbr, self.eps):
                    problems.append(f"cells of {oid} differ from its box cover")
            for oid in self.refs:
                if oid not in live:
                    problems.append(f"expired or unknown object {oid} still in grid")
        return problems
