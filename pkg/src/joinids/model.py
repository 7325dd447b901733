"""Domain types shared by every stage of the join pipeline.

Objects are identified by ``(stream_id, timestamp)``. Values are floats
normalised to ``[0, 1]``; a missing attribute is stored as ``None``.
"""

from __future__ import annotations

import enum
import itertools
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

ObjectId = tuple[int, int]
PairKey = tuple[int, int]

DEFAULT_CANDIDATE_CAP = 16
DEFAULT_WORLD_CAP = 10**6
VALUE_ROUNDING = 6  # candidate values equal after rounding to 1e-6 are merged


class JoinIDSError(Exception):
    """Base class for all errors raised by this package."""


class SchemaError(JoinIDSError):
    pass


class OrderingError(JoinIDSError):
    pass


class StateError(JoinIDSError):
    pass


class ConfigurationError(JoinIDSError):
    pass


class ContainmentError(JoinIDSError):
    pass


class CombinatorialBlowupError(JoinIDSError):
    """Raised when exhaustive possible-world enumeration would exceed its cap."""


@dataclass(frozen=True)
class AttributeSchema:
    names: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(self.names) < 1:
            raise SchemaError("schema needs at least one attribute")
        if len(set(self.names)) != len(self.names):
            raise SchemaError(f"duplicate attribute names in {self.names}")

    @property
    def d(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise SchemaError(f"unknown attribute {name!r}; schema has {self.names}") from None

    @classmethod
    def default(cls, d: int) -> "AttributeSchema":
        if d > 26:
            return cls(tuple(f"A{i}" for i in range(d)))
        return cls(tuple(chr(ord("A") + i) for i in range(d)))


def _check_unit(v: float) -> None:
    if not (0.0 <= v <= 1.0) or math.isnan(v):
        raise SchemaError(f"value {v!r} outside the normalised domain [0, 1]")


@dataclass(frozen=True)
class IncompleteObject:
    timestamp: int
    values: tuple[float | None, ...]
    stream_id: int = 1

    def __post_init__(self) -> None:
        present = [v for v in self.values if v is not None]
        if not present:
            raise SchemaError(f"object at t={self.timestamp} has every attribute missing")
        for v in present:
            _check_unit(v)

    @property
    def oid(self) -> ObjectId:
        return (self.stream_id, self.timestamp)

    @property
    def d(self) -> int:
        return len(self.values)

    @property
    def missing(self) -> tuple[int, ...]:
        return tuple(j for j, v in enumerate(self.values) if v is None)

    @property
    def m(self) -> int:
        return len(self.missing)

    @property
    def is_complete(self) -> bool:
        return not self.missing


@dataclass(frozen=True)
class CandidateValue:
    value: float
    confidence: float


@dataclass(frozen=True)
class Instance:
    values: tuple[float, ...]
    confidence: float


@dataclass(frozen=True)
class MBR:
    """Axis-aligned box given by closed per-attribute intervals."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.lo) != len(self.hi):
            raise SchemaError("MBR bounds differ in dimensionality")
        for a, b in zip(self.lo, self.hi):
            if a > b:
                raise SchemaError(f"MBR interval [{a}, {b}] is inverted")

    @property
    def d(self) -> int:
        return len(self.lo)

    @classmethod
    def point(cls, values: Sequence[float]) -> "MBR":
        t = tuple(float(v) for v in values)
        return cls(t, t)

    @classmethod
    def of_points(cls, points: np.ndarray) -> "MBR":
        return cls(tuple(points.min(axis=0).tolist()), tuple(points.max(axis=0).tolist()))

    def contains(self, other: "MBR") -> bool:
        return all(a <= c and d <= b for a, b, c, d in zip(self.lo, self.hi, other.lo, other.hi))

    def contains_point(self, p: Sequence[float]) -> bool:
        return all(a <= v <= b for a, b, v in zip(self.lo, self.hi, p))

    def with_interval(self, j: int, lo: float, hi: float) -> "MBR":
        new_lo = list(self.lo)
        new_hi = list(self.hi)
        new_lo[j], new_hi[j] = lo, hi
        return MBR(tuple(new_lo), tuple(new_hi))

    def volume(self) -> float:
        return math.prod(b - a for a, b in zip(self.lo, self.hi))


class ImputationState(enum.Enum):
    RANGE = "range"
    NODE = "node"
    INSTANCE = "instance"


@dataclass(eq=False)
class ImputedObject:
    """Probabilistic counterpart of an incomplete object.

    ``points`` (n x d) and ``probs`` (n,) hold the instances once the object
    reaches ``INSTANCE`` state. ``edges`` maps a missing attribute to the
    bucket boundaries of the index node its candidates were drawn from; the
    sample-level pruning builds its sub-boxes on those boundaries.
    """

    source: IncompleteObject
    state: ImputationState
    mbr: MBR
    points: np.ndarray | None = None
    probs: np.ndarray | None = None
    node_refs: tuple[int, ...] = ()
    edges: dict[int, np.ndarray] = field(default_factory=dict)
    candidates: dict[int, list[CandidateValue]] = field(default_factory=dict)
    unimputable: bool = False
    # imputation bookkeeping owned by the imputer
    plan: dict = field(default_factory=dict, repr=False)

    @property
    def oid(self) -> ObjectId:
        return self.source.oid

    @property
    def timestamp(self) -> int:
        return self.source.timestamp

    @property
    def stream_id(self) -> int:
        return self.source.stream_id

    @property
    def instances(self) -> list[Instance]:
        if self.state is not ImputationState.INSTANCE or self.points is None:
            raise StateError(f"object {self.oid} is in state {self.state.value}, not instance")
        return [
            Instance(tuple(row), float(p))
            for row, p in zip(self.points.tolist(), self.probs.tolist())
        ]

    @classmethod
    def complete(cls, obj: IncompleteObject) -> "ImputedObject":
        if not obj.is_complete:
            raise StateError(f"object {obj.oid} has missing attributes")
        pts = np.asarray([obj.values], dtype=float)
        return cls(obj, ImputationState.INSTANCE, MBR.point(obj.values), pts, np.ones(1))

    @classmethod
    def from_instances(cls, obj: IncompleteObject, instances: Sequence[Instance]) -> "ImputedObject":
        """Builds an INSTANCE-state object directly; used by fixtures and oracles."""
        pts = np.asarray([i.values for i in instances], dtype=float)
        probs = np.asarray([i.confidence for i in instances], dtype=float)
        return cls(obj, ImputationState.INSTANCE, MBR.of_points(pts), pts, probs)


def merge_candidates(values: Iterable[float], cap: int = DEFAULT_CANDIDATE_CAP) -> list[CandidateValue]:
    """Turns raw repository values into a normalised candidate distribution.

    Values equal after rounding to 1e-6 are merged (the smallest raw value
    represents the group), the ``cap`` most frequent groups are kept (ties
    go to the smaller value) and the kept confidences are renormalised.
    """
    arr = np.asarray(list(values) if not isinstance(values, np.ndarray) else values, dtype=float)
    if arr.size == 0:
        return []
    keys = np.round(arr, VALUE_ROUNDING)
    order = np.lexsort((arr, keys))
    keys, arr = keys[order], arr[order]
    uniq, first, counts = np.unique(keys, return_index=True, return_counts=True)
    reps = arr[first]
    rank = np.lexsort((reps, -counts))[:cap]
    kept_counts = counts[rank].astype(float)
    total = kept_counts.sum()
    out = [CandidateValue(float(reps[i]), float(c / total)) for i, c in zip(rank, kept_counts)]
    return out


def build_instances(
    obj: IncompleteObject, candidates: dict[int, list[CandidateValue]]
) -> tuple[np.ndarray, np.ndarray]:
    """Cross product of per-attribute candidates; confidence is the product."""
    missing = obj.missing
    if set(candidates) != set(missing):
        raise StateError(f"candidates cover {sorted(candidates)}, object misses {list(missing)}")
    base = [0.0 if v is None else v for v in obj.values]
    if not missing:
        return np.asarray([base], dtype=float), np.ones(1)
    if len(missing) == 1:
        j = missing[0]
        cands = candidates[j]
        pts = np.tile(np.asarray(base, dtype=float), (len(cands), 1))
        pts[:, j] = [c.value for c in cands]
        return pts, np.asarray([c.confidence for c in cands], dtype=float)
    rows, probs = [], []
    for combo in itertools.product(*(candidates[j] for j in missing)):
        row = list(base)
        p = 1.0
        for j, c in zip(missing, combo):
            row[j] = c.value
            p *= c.confidence
        rows.append(row)
        probs.append(p)
    return np.asarray(rows, dtype=float), np.asarray(probs, dtype=float)


class SlidingWindow:
    """Count-based window over one stream, newest entry last."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ConfigurationError("window capacity must be >= 1")
        self.capacity = capacity
        self.entries: deque[ImputedObject] = deque()

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[ImputedObject]:
        return iter(self.entries)

    @property
    def newest_timestamp(self) -> int | None:
        return self.entries[-1].timestamp if self.entries else None

    def slide(self, new_object: ImputedObject) -> ImputedObject | None:
        newest = self.newest_timestamp
        if newest is not None and new_object.timestamp <= newest:
            raise OrderingError(
                f"timestamp {new_object.timestamp} does not follow newest {newest}"
            )
        expired = None
        if len(self.entries) >= self.capacity:
            expired = self.entries.popleft()
        self.entries.append(new_object)
        return expired

    def expire(self, t: int) -> list[ImputedObject]:
        """Drops every entry older than ``t - capacity + 1``."""
        cutoff = t - self.capacity + 1
        out = []
        while self.entries and self.entries[0].timestamp < cutoff:
            out.append(self.entries.popleft())
        return out


def window_slide(window: SlidingWindow, new_object: ImputedObject) -> ImputedObject | None:
    return window.slide(new_object)


class JoinSet:
    """Live join pairs keyed by ``(timestamp in stream 1, timestamp in stream 2)``."""

    def __init__(self, alpha: float):
        self.alpha = alpha
        self.pairs: dict[PairKey, float] = {}
        self._by_x: dict[int, set[int]] = {}
        self._by_y: dict[int, set[int]] = {}

    def __len__(self) -> int:
        return len(self.pairs)

    def __contains__(self, key: PairKey) -> bool:
        return key in self.pairs

    def add(self, tx: int, ty: int, probability: float) -> None:
        if probability < self.alpha:
            raise ValueError(f"pair ({tx}, {ty}) probability {probability} below alpha")
        self.pairs[(tx, ty)] = probability
        self._by_x.setdefault(tx, set()).add(ty)
        self._by_y.setdefault(ty, set()).add(tx)

    def add_many(self, tx: int, tys: list[int], probabilities: list[float]) -> None:
        """Adds ``(tx, ty)`` for every ``ty``; same checks as :meth:`add`."""
        if probabilities and min(probabilities) < self.alpha:
            raise ValueError(f"a pair of {tx} has probability {min(probabilities)} below alpha")
        self.pairs.update(zip(((tx, ty) for ty in tys), probabilities))
        self._by_x.setdefault(tx, set()).update(tys)
        by_y = self._by_y
        for ty in tys:
            by_y.setdefault(ty, set()).add(tx)

    def add_many_y(self, ty: int, txs: list[int], probabilities: list[float]) -> None:
        """Adds ``(tx, ty)`` for every ``tx``; same checks as :meth:`add`."""
        if probabilities and min(probabilities) < self.alpha:
            raise ValueError(f"a pair of {ty} has probability {min(probabilities)} below alpha")
        self.pairs.update(zip(((tx, ty) for tx in txs), probabilities))
        self._by_y.setdefault(ty, set()).update(txs)
        by_x = self._by_x
        for tx in txs:
            by_x.setdefault(tx, set()).add(ty)

    def drop_endpoint(self, stream_id: int, timestamp: int) -> list[tuple[PairKey, float]]:
        removed = []
        if stream_id == 1:
            for ty in sorted(self._by_x.pop(timestamp, ())):
                removed.append(((timestamp, ty), self.pairs.pop((timestamp, ty))))
                self._by_y[ty].discard(timestamp)
        else:
            for tx in sorted(self._by_y.pop(timestamp, ())):
                removed.append(((tx, timestamp), self.pairs.pop((tx, timestamp))))
                self._by_x[tx].discard(timestamp)
        return removed

    def snapshot(self) -> dict[PairKey, float]:
        return dict(self.pairs)


@dataclass(frozen=True)
class PossibleWorld:
    choices: tuple[int, ...]  # instance index chosen per window object, window order
    probability: float


def enumerate_possible_worlds(
    window: Iterable[ImputedObject], cap: int = DEFAULT_WORLD_CAP
) -> list[PossibleWorld]:
    """Every cross-product world of a window in INSTANCE state (test oracle)."""
    objs = list(window)
    for o in objs:
        if o.state is not ImputationState.INSTANCE:
            raise StateError(f"object {o.oid} is not fully imputed")
    sizes = [len(o.probs) for o in objs]
    if math.prod(sizes) > cap:
        raise CombinatorialBlowupError(
            f"combinatorial blowup: {math.prod(sizes)} worlds exceed cap {cap}"
        )
    probs = [o.probs.tolist() for o in objs]
    worlds = []
    for choice in itertools.product(*(range(n) for n in sizes)):
        p = 1.0
        for k, i in enumerate(choice):
            p *= probs[k][i]
        worlds.append(PossibleWorld(choice, p))
    return worlds


@dataclass
class Repository:
    """Static table of complete rows used for imputation."""

    schema: AttributeSchema
    rows: np.ndarray

    def __post_init__(self) -> None:
        self.rows = np.asarray(self.rows, dtype=float)
        if self.rows.ndim != 2 or self.rows.shape[1] != self.schema.d:
            raise SchemaError(f"repository rows must be n x {self.schema.d}")
        if np.isnan(self.rows).any():
            raise SchemaError("repository rows may not contain missing values")
        if self.rows.size and (self.rows.min() < 0.0 or self.rows.max() > 1.0):
            raise SchemaError("repository values must lie in [0, 1]")

    def __len__(self) -> int:
        return self.rows.shape[0]
