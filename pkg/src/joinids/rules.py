"""Differential-dependency rules, imputation lattices and rule selection.

Rule file grammar, one rule per line (``#`` starts a comment)::

    A:0.02, B:0.02 -> D:0.05
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .model import AttributeSchema, ConfigurationError, IncompleteObject, Repository, SchemaError

# 6 geometric steps between 1/64 and 1/4 of the (unit) domain width
DEFAULT_RESOLUTIONS = tuple(np.geomspace(1 / 64, 1 / 4, 6).tolist())


@dataclass(frozen=True)
class DDRule:
    determinants: tuple[tuple[str, float], ...]
    dependent: str
    dependent_eps: float

    def __post_init__(self) -> None:
        if not self.determinants:
            raise SchemaError("a DD rule needs at least one determinant")
        names = [n for n, _ in self.determinants]
        if len(set(names)) != len(names):
            raise SchemaError(f"repeated determinant in {names}")
        if self.dependent in names:
            raise SchemaError(f"dependent {self.dependent!r} also appears as determinant")
        if self.dependent_eps < 0 or any(e < 0 for _, e in self.determinants):
            raise SchemaError("DD distance constraints must be non-negative")

    @property
    def determinant_names(self) -> tuple[str, ...]:
        return tuple(n for n, _ in self.determinants)

    @property
    def determinant_eps(self) -> dict[str, float]:
        return dict(self.determinants)

    @classmethod
    def parse(cls, line: str) -> "DDRule":
        if "->" not in line:
            raise SchemaError(f"rule {line!r} lacks '->'")
        lhs, rhs = (s.strip() for s in line.split("->", 1))

        def term(tok: str) -> tuple[str, float]:
            if ":" not in tok:
                raise SchemaError(f"term {tok!r} must be name:eps")
            name, eps = tok.rsplit(":", 1)
            try:
                return name.strip(), float(eps)
            except ValueError:
                raise SchemaError(f"bad epsilon in term {tok!r}") from None

        dets = tuple(term(t) for t in lhs.split(",") if t.strip())
        dep, dep_eps = term(rhs)
        return cls(dets, dep, dep_eps)

    def format(self) -> str:
        lhs = ",".join(f"{n}:{e:g}" for n, e in self.determinants)
        return f"{lhs} -> {self.dependent}:{self.dependent_eps:g}"

    def check_schema(self, schema: AttributeSchema) -> None:
        for n in (*self.determinant_names, self.dependent):
            schema.index(n)


def parse_rules(text: str) -> list[DDRule]:
    rules = []
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            rules.append(DDRule.parse(line))
    return rules


def load_rules(path: str | Path, schema: AttributeSchema | None = None) -> list[DDRule]:
    rules = parse_rules(Path(path).read_text())
    if schema is not None:
        for r in rules:
            r.check_schema(schema)
    return rules


@dataclass(frozen=True)
class QueryRange:
    """Closed box over a subset of attributes (by column index)."""

    attrs: tuple[int, ...]
    lo: tuple[float, ...]
    hi: tuple[float, ...]

    @property
    def center(self) -> tuple[float, ...]:
        return tuple((a + b) / 2 for a, b in zip(self.lo, self.hi))

    @property
    def half_widths(self) -> tuple[float, ...]:
        return tuple((b - a) / 2 for a, b in zip(self.lo, self.hi))

    def volume(self) -> float:
        return math.prod(b - a for a, b in zip(self.lo, self.hi))

    def contains(self, row: Sequence[float]) -> bool:
        return all(a <= row[j] <= b for j, a, b in zip(self.attrs, self.lo, self.hi))


@dataclass(frozen=True)
class LatticeNode:
    members: tuple[int, ...]  # indices of the base rules combined here
    attrs: tuple[int, ...]  # sorted determinant column indices
    eps: tuple[float, ...]  # per determinant, min over members sharing it
    level: int
    cnt: float = 0.0  # offline estimate used to order a level

    def query_range(self, obj: IncompleteObject, scale: float = 1.0) -> QueryRange:
        lo, hi = [], []
        for j, e in zip(self.attrs, self.eps):
            v = obj.values[j]
            if v is None:
                raise SchemaError(f"object {obj.oid} lacks determinant column {j}")
            lo.append(v - e * scale)
            hi.append(v + e * scale)
        return QueryRange(self.attrs, tuple(lo), tuple(hi))

    def applicable(self, obj: IncompleteObject) -> bool:
        return all(obj.values[j] is not None for j in self.attrs)


@dataclass
class ImputationLattice:
    dependent: int
    rules: list[DDRule]
    levels: list[list[LatticeNode]]  # levels[0] is level 1
    fractals: dict[tuple[int, ...], "FractalEstimate"] = field(default_factory=dict)

    @property
    def l(self) -> int:
        return len(self.rules)

    def __len__(self) -> int:
        return sum(len(lv) for lv in self.levels)

    def traversal(self) -> list[LatticeNode]:
        """Nodes from the top level down, each level in its precomputed order."""
        return [n for lv in reversed(self.levels) for n in lv]

    @property
    def union_attrs(self) -> tuple[int, ...]:
        return self.levels[-1][0].attrs


@dataclass(frozen=True)
class FractalEstimate:
    attrs: tuple[int, ...]
    d2: float
    degenerate: bool = False
    log_r: tuple[float, ...] = ()
    log_s2: tuple[float, ...] = ()


def estimate_fractal_dimension(
    points: np.ndarray | Repository,
    attrs: Sequence[int] | None = None,
    resolutions: Sequence[float] = DEFAULT_RESOLUTIONS,
) -> FractalEstimate:
    """Correlation dimension: slope of log(sum p_i^2) against log(r)."""
    if isinstance(points, Repository):
        points = points.rows
    pts = np.asarray(points, dtype=float)
    if attrs is not None:
        pts = pts[:, list(attrs)]
    if pts.ndim == 1:
        pts = pts[:, None]
    if len(pts) == 0:
        raise ConfigurationError("fractal dimension needs a non-empty point set")
    if len(resolutions) < 4:
        raise ConfigurationError("fractal fit needs at least 4 resolutions")
    key = tuple(attrs) if attrs is not None else tuple(range(pts.shape[1]))
    if np.all(pts == pts[0]):
        return FractalEstimate(key, 0.0, degenerate=True)
    n = len(pts)
    log_r, log_s = [], []
    for r in resolutions:
        cells = np.floor(pts / r).astype(np.int64)
        _, counts = np.unique(cells, axis=0, return_counts=True)
        p = counts / n
        log_r.append(math.log(r))
        log_s.append(math.log(float(np.sum(p * p))))
    slope = float(np.polyfit(log_r, log_s, 1)[0])
    return FractalEstimate(key, max(slope, 0.0), False, tuple(log_r), tuple(log_s))


def count_formula(vol_ratio: float, n_box: int, d2: float, eps: float, dims: int) -> float:
    """(Vol(Q)/Vol(cube))^(D2/dims) * (N_box - 1) * 2^D2 * eps^D2."""
    if n_box <= 1:
        return 0.0
    return vol_ratio ** (d2 / dims) * (n_box - 1) * (2.0**d2) * (eps**d2)


class NeighborhoodCounter:
    """Counts repository points inside an axis-aligned cube over a projection."""

    def __init__(self, rows: np.ndarray, attrs: Sequence[int]):
        self.attrs = tuple(attrs)
        self._tree = cKDTree(np.asarray(rows, dtype=float)[:, list(attrs)])

    def count(self, center: Sequence[float], half_side: float) -> int:
        return int(self._tree.query_ball_point(np.asarray(center), half_side, p=np.inf, return_length=True))


def estimate_count(
    repo: Repository | None,
    query: QueryRange,
    fractal: FractalEstimate,
    counter: NeighborhoodCounter | None = None,
) -> float:
    """Estimated number of repository rows inside ``query``.

    ``eps`` is the half-diagonal of the query box; the reference cube has
    the same half-diagonal and is centred on the query centre.
    """
    if fractal.attrs != query.attrs:
        raise SchemaError(f"fractal estimate over {fractal.attrs} used for query over {query.attrs}")
    if counter is None:
        if repo is None:
            raise ConfigurationError("estimate_count needs a repository or a counter")
        counter = NeighborhoodCounter(repo.rows, query.attrs)
    k = len(query.attrs)
    hw = query.half_widths
    eps = math.sqrt(sum(h * h for h in hw))
    if eps == 0.0:
        return 0.0
    half_side = eps / math.sqrt(k)
    n_box = counter.count(query.center, half_side)
    ratio = query.volume() / (2 * half_side) ** k
    return count_formula(ratio, n_box, fractal.d2, eps, k)


def _combine(schema: AttributeSchema, rules: Sequence[DDRule], members: tuple[int, ...], level: int) -> LatticeNode:
    eps: dict[int, float] = {}
    for i in members:
        for name, e in rules[i].determinants:
            j = schema.index(name)
            eps[j] = min(e, eps.get(j, math.inf))
    attrs = tuple(sorted(eps))
    return LatticeNode(members, attrs, tuple(eps[j] for j in attrs), level)


def _centroid_query(node: LatticeNode, centroid: np.ndarray) -> QueryRange:
    c = [float(centroid[j]) for j in node.attrs]
    return QueryRange(
        node.attrs,
        tuple(v - e for v, e in zip(c, node.eps)),
        tuple(v + e for v, e in zip(c, node.eps)),
    )


def _order_level(nodes: list[LatticeNode]) -> list[LatticeNode]:
    enough = sorted((n for n in nodes if n.cnt >= 1), key=lambda n: n.cnt)
    scarce = sorted((n for n in nodes if n.cnt < 1), key=lambda n: -n.cnt)
    return enough + scarce


def build_lattice(
    rules: Sequence[DDRule],
    repo: Repository,
    counters: dict[tuple[int, ...], NeighborhoodCounter] | None = None,
) -> ImputationLattice:
    if not rules:
        raise ConfigurationError("a lattice needs at least one rule")
    deps = {r.dependent for r in rules}
    if len(deps) != 1:
        raise SchemaError(f"lattice rules must share one dependent attribute, got {sorted(deps)}")
    schema = repo.schema
    for r in rules:
        r.check_schema(schema)
    dependent = schema.index(rules[0].dependent)
    counters = counters if counters is not None else {}
    centroid = repo.rows.mean(axis=0) if len(repo) else np.full(schema.d, 0.5)
    fractals: dict[tuple[int, ...], FractalEstimate] = {}
    levels = []
    for lv in range(1, len(rules) + 1):
        nodes = []
        for members in itertools.combinations(range(len(rules)), lv):
            node = _combine(schema, rules, members, lv)
            if node.attrs not in fractals:
                fractals[node.attrs] = estimate_fractal_dimension(repo.rows, node.attrs)
            if node.attrs not in counters:
                counters[node.attrs] = NeighborhoodCounter(repo.rows, node.attrs)
            cnt = estimate_count(repo, _centroid_query(node, centroid), fractals[node.attrs], counters[node.attrs])
            nodes.append(LatticeNode(node.members, node.attrs, node.eps, lv, cnt))
        levels.append(_order_level(nodes))
    return ImputationLattice(dependent, list(rules), levels, fractals)


def build_lattices(
    rules: Iterable[DDRule],
    repo: Repository,
    counters: dict[tuple[int, ...], NeighborhoodCounter] | None = None,
) -> dict[int, ImputationLattice]:
    """One lattice per dependent attribute, keyed by column index."""
    grouped: dict[str, list[DDRule]] = {}
    for r in rules:
        grouped.setdefault(r.dependent, []).append(r)
    counters = counters if counters is not None else {}
    return {
        repo.schema.index(dep): build_lattice(rs, repo, counters) for dep, rs in grouped.items()
    }


def select_rule(
    lattice: ImputationLattice,
    obj: IncompleteObject,
    counters: dict[tuple[int, ...], NeighborhoodCounter],
) -> tuple[LatticeNode, QueryRange] | None:
    """First applicable node, top level down, whose online estimate is >= 1."""
    for node in lattice.traversal():
        if not node.applicable(obj):
            continue
        q = node.query_range(obj)
        cnt = estimate_count(None, q, lattice.fractals[node.attrs], counters[node.attrs])
        if cnt >= 1:
            return node, q
    return None
