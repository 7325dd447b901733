"""Synthetic streams that obey a given set of DD rules.

Seeds follow one of the usual skyline benchmark families. Every further row
perturbs a random seed inside the rules' determinant tolerances, and each
dependent attribute is recomputed as an affine function of the mean of its
determinants. The slope is the largest one for which every rule on that
attribute holds for any pair of rows, so generated data never violates its
own rules.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from .model import AttributeSchema, ConfigurationError, IncompleteObject, Repository, SchemaError
from .prune import within
from .rules import DDRule

DISTRIBUTIONS = ("uniform", "correlated", "anti-correlated")
CORRELATED_VARIANCE = 0.05
ANTI_SPREAD = 0.0625  # std-dev of the anti-correlated plane offset
OTHER_JITTER = 0.01  # perturbation of attributes that no rule mentions

_PRESETS = {
    "uniform": ["A:0.01,B:0.01,C:0.01 -> D:0.01"],
    "correlated": ["A:0.02,B:0.02 -> E:0.05"],
    "anti-correlated": ["A:0.03,C:0.03 -> F:0.1", "B:0.02 -> F:0.05"],
}


def preset_rules(distribution: str, d: int) -> list[DDRule]:
    """Benchmark rules per family; a dependent beyond ``d`` maps to the last attribute."""
    if distribution not in _PRESETS:
        raise ConfigurationError(f"unknown distribution {distribution!r}")
    schema = AttributeSchema.default(d)
    last = schema.names[-1]
    out = []
    for line in _PRESETS[distribution]:
        r = DDRule.parse(line)
        dep = r.dependent if r.dependent in schema.names else last
        out.append(DDRule(r.determinants, dep, r.dependent_eps))
    for r in out:
        r.check_schema(schema)
    return out


def _seeds(distribution: str, n: int, d: int, rng: np.random.Generator) -> np.ndarray:
    if distribution == "uniform":
        return rng.random((n, d))
    out = np.empty((n, d))
    if distribution == "correlated":
        sd = np.sqrt(CORRELATED_VARIANCE)
        for i in range(n):
            t = rng.random()
            row = t + rng.normal(0.0, sd, d)
            bad = (row < 0) | (row > 1)
            while bad.any():
                row[bad] = t + rng.normal(0.0, sd, int(bad.sum()))
                bad = (row < 0) | (row > 1)
            out[i] = row
        return out
    if distribution == "anti-correlated":
        for i in range(n):
            while True:
                v = rng.normal(0.5, ANTI_SPREAD)
                u = rng.uniform(-0.5, 0.5, d)
                row = v + (u - u.mean())  # lies on the plane sum(x) = d * v
                if np.all((row >= 0) & (row <= 1)):
                    out[i] = row
                    break
        return out
    raise ConfigurationError(f"unknown distribution {distribution!r}")


@dataclass(frozen=True)
class DependentModel:
    """``dep = offset + slope * sign * mean(determinants) + uniform(-jitter, jitter)``."""

    dependent: int
    determinants: tuple[int, ...]
    slope: float
    sign: float
    jitter: float

    @property
    def offset(self) -> float:
        return (1 - self.slope) / 2 if self.sign > 0 else (1 + self.slope) / 2

    def apply(self, rows: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        base = rows[:, list(self.determinants)].mean(axis=1)
        v = self.offset + self.sign * self.slope * base
        if self.jitter > 0:
            v = v + rng.uniform(-self.jitter, self.jitter, len(rows))
        return np.clip(v, 0.0, 1.0)


def dependent_models(rules: Sequence[DDRule], schema: AttributeSchema, distribution: str) -> list[DependentModel]:
    grouped: dict[int, list[DDRule]] = {}
    for r in rules:
        grouped.setdefault(schema.index(r.dependent), []).append(r)
    dependents = set(grouped)
    models = []
    sign = -1.0 if distribution == "anti-correlated" else 1.0
    for dep, rs in sorted(grouped.items()):
        union = sorted({schema.index(n) for r in rs for n in r.determinant_names})
        if dependents & set(union):
            raise SchemaError("a dependent attribute may not determine another dependent")
        u = len(union)
        # worst-case spread of the mean for a pair satisfying each rule's determinants
        spreads = [(sum(e for _, e in r.determinants) + (u - len(r.determinants))) / u for r in rs]
        slope = min([1.0] + [r.dependent_eps / s for r, s in zip(rs, spreads) if s > 0])
        jitter = min(max(0.0, (r.dependent_eps - slope * s) / 2) for r, s in zip(rs, spreads))
        models.append(DependentModel(dep, tuple(union), slope, sign, jitter))
    return models


def generate(
    distribution: str,
    d: int,
    count: int,
    rules: Sequence[DDRule],
    seed_count: int,
    rng_seed: int = 0,
) -> np.ndarray:
    """``count`` rows in ``[0, 1]^d``; the first ``seed_count`` are the seeds."""
    if distribution not in DISTRIBUTIONS:
        raise ConfigurationError(f"unknown distribution {distribution!r}; choose from {DISTRIBUTIONS}")
    if not 1 <= seed_count <= count:
        raise ConfigurationError("need 1 <= seed_count <= count")
    schema = AttributeSchema.default(d)
    for r in rules:
        r.check_schema(schema)
    rng = np.random.default_rng(rng_seed)
    models = dependent_models(rules, schema, distribution)
    seeds = _seeds(distribution, seed_count, d, rng)
    for mdl in models:
        seeds[:, mdl.dependent] = mdl.apply(seeds, rng)
    if count == seed_count:
        return seeds

    det_half: dict[int, float] = {}
    for r in rules:
        for name, e in r.determinants:
            j = schema.index(name)
            det_half[j] = min(e / 2, det_half.get(j, np.inf))
    half = np.array([det_half.get(j, OTHER_JITTER) for j in range(d)])
    n = count - seed_count
    base = seeds[rng.integers(0, seed_count, n)]
    rows = np.clip(base + rng.uniform(-1.0, 1.0, (n, d)) * half, 0.0, 1.0)
    for mdl in models:
        rows[:, mdl.dependent] = mdl.apply(rows, rng)
    return np.vstack([seeds, rows])


@dataclass
class MaskedData:
    schema: AttributeSchema
    stream1: list[IncompleteObject]
    stream2: list[IncompleteObject]
    repository: Repository
    truth1: np.ndarray  # pre-mask rows, row i has timestamp i + 1
    truth2: np.ndarray


def mask(
    dataset: np.ndarray,
    m: int,
    dependents: Sequence[int],
    rng_seed: int = 0,
    stream_length: int | None = None,
    repo_size: int | None = None,
) -> MaskedData:
    """Shuffles rows into two streams and a repository, hiding ``m`` dependents per stream row."""
    data = np.asarray(dataset, dtype=float)
    n, d = data.shape
    dependents = sorted(set(dependents))
    if m < 0 or m > len(dependents):
        raise ConfigurationError(f"cannot hide {m} of {len(dependents)} dependent attributes")
    if m > d - 1:
        raise ConfigurationError("an object must keep at least one attribute")
    if stream_length is None and repo_size is None:
        stream_length = n // 3
    if stream_length is None:
        stream_length = (n - repo_size) // 2
    if repo_size is None:
        repo_size = n - 2 * stream_length
    if 2 * stream_length + repo_size > n or stream_length < 0 or repo_size < 0:
        raise ConfigurationError(f"{n} rows cannot hold two streams of {stream_length} and {repo_size} repository rows")
    rng = np.random.default_rng(rng_seed)
    perm = rng.permutation(n)
    s1 = data[perm[:stream_length]]
    s2 = data[perm[stream_length : 2 * stream_length]]
    repo = data[perm[2 * stream_length : 2 * stream_length + repo_size]]
    schema = AttributeSchema.default(d)

    def stream(rows: np.ndarray, sid: int) -> list[IncompleteObject]:
        out = []
        for i, row in enumerate(rows):
            vals: list[float | None] = row.tolist()
            if m:
                for j in rng.choice(dependents, size=m, replace=False):
                    vals[int(j)] = None
            out.append(IncompleteObject(i + 1, tuple(vals), sid))
        return out

    return MaskedData(schema, stream(s1, 1), stream(s2, 2), Repository(schema, repo), s1.copy(), s2.copy())


def groundtruth_pairs(truth1: np.ndarray, truth2: np.ndarray, eps: float, window: int, block: int = 256) -> set[tuple[int, int]]:
    """Pairs ``(tx, ty)`` sharing a window whose complete rows lie within ``eps``.

    Row ``i`` carries timestamp ``i + 1``; distances use the same float
    expression as the join refinement, so an engine run on complete rows
    reproduces this set exactly.
    """
    out = set()
    n1, n2 = len(truth1), len(truth2)
    for a in range(0, n1, block):
        b = min(n1, a + block)
        lo = max(0, a - window + 1)
        hi = min(n2, b + window - 1)
        if lo >= hi:
            continue
        close = within(truth1[a:b], truth2[lo:hi], eps)
        ii, jj = np.nonzero(close)
        tx = ii + a + 1
        ty = jj + lo + 1
        ok = np.abs(tx - ty) < window
        out.update(zip(tx[ok].tolist(), ty[ok].tolist()))
    return out


@dataclass(frozen=True)
class RuleReport:
    rule: DDRule
    pairs_checked: int
    violations: int
    tolerance: float

    @property
    def fraction(self) -> float:
        return self.violations / self.pairs_checked if self.pairs_checked else 0.0

    @property
    def passed(self) -> bool:
        return self.fraction <= self.tolerance


def validate_rule(
    rule: DDRule,
    repo: Repository,
    violation_tolerance: float = 0.01,
    max_pairs: int = 100_000,
    rng_seed: int = 0,
) -> RuleReport:
    """Share of determinant-close row pairs whose dependents are farther apart than allowed."""
    schema = repo.schema
    rule.check_schema(schema)
    cols = [schema.index(n) for n in rule.determinant_names]
    eps = np.array([e for _, e in rule.determinants])
    dep = schema.index(rule.dependent)
    scaled = repo.rows[:, cols] / np.maximum(eps, 1e-12)
    pairs = cKDTree(scaled).query_pairs(1.0 + 1e-9, p=np.inf, output_type="ndarray")
    if len(pairs) == 0:
        return RuleReport(rule, 0, 0, violation_tolerance)
    # exact determinant check on the original scale
    gap = np.abs(repo.rows[pairs[:, 0]][:, cols] - repo.rows[pairs[:, 1]][:, cols])
    pairs = pairs[np.all(gap <= eps, axis=1)]
    if len(pairs) > max_pairs:
        rng = np.random.default_rng(rng_seed)
        pairs = pairs[rng.choice(len(pairs), max_pairs, replace=False)]
    if len(pairs) == 0:
        return RuleReport(rule, 0, 0, violation_tolerance)
    dgap = np.abs(repo.rows[pairs[:, 0], dep] - repo.rows[pairs[:, 1], dep])
    return RuleReport(rule, len(pairs), int(np.count_nonzero(dgap > rule.dependent_eps)), violation_tolerance)

