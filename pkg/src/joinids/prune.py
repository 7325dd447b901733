"""Pruning predicates and exact join probabilities for imputed object pairs."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .index import Histogram, select_sub_mbr_x, select_sub_mbr_y
from .model import (
    DEFAULT_WORLD_CAP,
    MBR,
    ConfigurationError,
    ImputationState,
    ImputedObject,
    SchemaError,
    StateError,
    enumerate_possible_worlds,
)

# guards the beta product against summation error in the instance masses
BETA_MARGIN = 1e-12
# probabilities this close to alpha are recomputed with an exactly rounded sum
TIE_BAND = 1e-9


@dataclass(frozen=True)
class JoinParams:
    eps: float
    alpha: float

    def __post_init__(self) -> None:
        if not self.eps > 0:
            raise ConfigurationError(f"eps must be > 0, got {self.eps}")
        if not 0 < self.alpha <= 1:
            raise ConfigurationError(f"alpha must lie in (0, 1], got {self.alpha}")


def mindist(a: MBR, b: MBR) -> float:
    if a.d != b.d:
        raise SchemaError(f"mindist between {a.d}-d and {b.d}-d boxes")
    s = 0.0
    for alo, ahi, blo, bhi in zip(a.lo, a.hi, b.lo, b.hi):
        g = max(0.0, alo - bhi, blo - ahi)
        s += g * g
    return math.sqrt(s)


def mindist_many(lo: np.ndarray, hi: np.ndarray, box: MBR) -> np.ndarray:
    """mindist from each row box ``[lo[i], hi[i]]`` to ``box``."""
    blo = np.asarray(box.lo)
    bhi = np.asarray(box.hi)
    gap = np.maximum(np.maximum(lo - bhi, blo - hi), 0.0)
    return np.sqrt(np.sum(gap * gap, axis=1))


def object_level_prune(o_x: ImputedObject, o_y: ImputedObject, params: JoinParams) -> bool:
    return mindist(o_x.mbr, o_y.mbr) > params.eps


def sample_level_prune(
    s_x: MBR, beta_x: float, s_y: MBR, beta_y: float, params: JoinParams, margin: float = 0.0
) -> bool:
    return beta_x * beta_y > 1 - params.alpha + margin and mindist(s_x, s_y) > params.eps


def _check_instance(o: ImputedObject) -> None:
    if o.state is not ImputationState.INSTANCE or o.points is None:
        raise StateError(f"object {o.oid} is in state {o.state.value}; join probability needs instances")


def within(a: np.ndarray, b: np.ndarray, eps: float) -> np.ndarray:
    """``close[i, k]`` iff rows ``a[i]`` and ``b[k]`` are at most ``eps`` apart.

    The squared terms are added left to right in attribute order, so the
    outcome for a pair never depends on which other rows share the call.
    """
    g = a[:, None, :] - b[None, :, :]
    g *= g
    acc = g[:, :, 0] + g[:, :, 1] if a.shape[1] > 1 else g[:, :, 0].copy()
    for j in range(2, a.shape[1]):
        acc += g[:, :, j]
    np.sqrt(acc, out=acc)
    return acc <= eps


def join_probability(o_x: ImputedObject, o_y: ImputedObject, params: JoinParams) -> float:
    """Sum of instance-pair confidence products over pairs within eps."""
    _check_instance(o_x)
    _check_instance(o_y)
    close = within(o_x.points, o_y.points, params.eps)
    p = float(o_x.probs.dot(close.dot(o_y.probs)))
    return min(max(p, 0.0), 1.0)


def exact_join_probability(o_x: ImputedObject, o_y: ImputedObject, params: JoinParams) -> float:
    """Same sum, correctly rounded, so it is independent of evaluation order."""
    close = within(o_x.points, o_y.points, params.eps)
    i, k = np.nonzero(close)
    return min(math.fsum((o_x.probs[i] * o_y.probs[k]).tolist()), 1.0)


def qualifies(p: float, o_x: ImputedObject, o_y: ImputedObject, params: JoinParams) -> tuple[bool, float]:
    """Join decision for a computed probability, settled exactly near alpha."""
    if abs(p - params.alpha) <= TIE_BAND:
        p = exact_join_probability(o_x, o_y, params)
    return p >= params.alpha, p


def join_probability_oracle(
    o_x: ImputedObject,
    o_y: ImputedObject,
    window_1: Sequence[ImputedObject],
    window_2: Sequence[ImputedObject],
    params: JoinParams,
    cap: int = DEFAULT_WORLD_CAP,
) -> float:
    """Join probability by enumerating every possible world of both windows."""
    objs = list(window_1) + list(window_2)
    for o in objs:
        _check_instance(o)
    ix = next(i for i, o in enumerate(objs) if o is o_x)
    iy = next(i for i, o in enumerate(objs) if o is o_y)
    total = 0.0
    for world in enumerate_possible_worlds(objs, cap):
        a = objs[ix].points[world.choices[ix]]
        b = objs[iy].points[world.choices[iy]]
        if math.dist(a.tolist(), b.tolist()) <= params.eps:
            total += world.probability
    return total


def widest_missing(io: ImputedObject) -> int | None:
    best, width = None, -1.0
    for j in sorted(io.edges):
        w = io.mbr.hi[j] - io.mbr.lo[j]
        if w > width:
            best, width = j, w
    return best


def object_histogram(io: ImputedObject) -> tuple[int, Histogram] | None:
    """Instance masses of the widest missing attribute over its index-node buckets."""
    j = widest_missing(io)
    if j is None:
        return None
    return j, Histogram.of_masses(io.edges[j], io.points[:, j], io.probs)


def _box(io: ImputedObject, j: int, hist: Histogram, stop: int) -> MBR:
    lo, hi = io.mbr.lo[j], io.mbr.hi[j]
    if stop < hist.n_buckets:
        # buckets are left-closed, so instances in the run stay below this edge
        hi = max(lo, min(hi, float(hist.edges[stop])))
    return io.mbr.with_interval(j, lo, hi)


def sub_box_x(io: ImputedObject, alpha: float, hist: tuple[int, Histogram] | None = None) -> tuple[MBR, float]:
    """High-mass sub-box of a probing object and the instance mass it holds."""
    hist = hist if hist is not None else object_histogram(io)
    if hist is None:
        return io.mbr, 1.0
    j, h = hist
    sub = select_sub_mbr_x(h, alpha)
    return _box(io, j, h, sub.stop), sub.beta


def sub_box_y(
    io: ImputedObject, beta_x: float, alpha: float, hist: tuple[int, Histogram] | None = None
) -> tuple[MBR, float]:
    hist = hist if hist is not None else object_histogram(io)
    if hist is None:
        return io.mbr, 1.0
    j, h = hist
    sub = select_sub_mbr_y(h, beta_x, alpha)
    return _box(io, j, h, sub.stop), sub.beta
