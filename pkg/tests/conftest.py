from __future__ import annotations

import functools

import numpy as np
import pytest

from joinids import datagen
from joinids.engine import startup
from joinids.model import IncompleteObject, Instance, ImputedObject

# criterion number -> (passed, one-line detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")


def obj(t, values, sid=1):
    return IncompleteObject(t, tuple(values), sid)


def imputed(t, points, probs, sid=1):
    """INSTANCE-state object built directly from instance rows."""
    pts = [tuple(p) for p in points]
    base = list(pts[0])
    for j in range(len(base)):
        if any(p[j] != base[j] for p in pts):
            base[j] = None
    source = IncompleteObject(t, tuple(base), sid) if any(v is not None for v in base) else None
    if source is None:
        # every column varies; keep the first one present so the object stays valid
        base[0] = pts[0][0]
        source = IncompleteObject(t, tuple(base), sid)
    return ImputedObject.from_instances(source, [Instance(p, c) for p, c in zip(pts, probs)])


@functools.lru_cache(maxsize=None)
def workload(distribution="correlated", d=4, stream_length=400, repo_size=2000, seed=7):
    """Masked synthetic data plus its offline structures, cached per argument set."""
    rules = datagen.preset_rules(distribution, d)
    count = 2 * stream_length + repo_size
    data = datagen.generate(distribution, d, count, rules, max(1, count // 6), seed)
    deps = sorted({data_schema_index(d, r.dependent) for r in rules})
    masked = datagen.mask(data, 1, deps, seed + 1, stream_length, repo_size)
    return masked, rules, startup(masked.repository, rules)


def data_schema_index(d, name):
    from joinids.model import AttributeSchema

    return AttributeSchema.default(d).index(name)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
