import math

import numpy as np
import pytest

from conftest import obj, workload
from joinids.engine import startup
from joinids.imputation import Imputer, impute
from joinids.model import AttributeSchema, ImputationState, Repository
from joinids.rules import parse_rules

TABLE_ROWS = np.array([[0.35, 0.3, 0.2], [0.45, 0.25, 0.2], [0.4, 0.35, 0.6]])


def _setup(rows, rules_text):
    rows = np.asarray(rows, dtype=float)
    repo = Repository(AttributeSchema.default(rows.shape[1]), rows)
    return startup(repo, parse_rules(rules_text), leaf_capacities=(16,))


def _imputer(setup):
    return Imputer(setup.lattices, setup.indexes, setup.counters)


def test_worked_example_candidates():
    s = _setup(TABLE_ROWS, "A:0.1,B:0.1 -> C:0.1")
    io = impute(obj(1, [0.4, 0.3, None]), s.lattices, s.indexes, s.counters)
    assert io.state is ImputationState.INSTANCE
    got = [(c.value, c.confidence) for c in io.candidates[2]]
    assert got == [(0.2, pytest.approx(2 / 3)), (0.6, pytest.approx(1 / 3))]
    assert io.points.tolist() == [[0.4, 0.3, 0.2], [0.4, 0.3, 0.6]]


def test_counters_are_built_when_missing():
    s = _setup(TABLE_ROWS, "A:0.1,B:0.1 -> C:0.1")
    io = impute(obj(1, [0.4, 0.3, None]), s.lattices, s.indexes)
    assert len(io.probs) == 2


def test_complete_object_passes_through():
    s = _setup(TABLE_ROWS, "A:0.1,B:0.1 -> C:0.1")
    io = _imputer(s).impute(obj(1, [0.4, 0.3, 0.5]))
    assert io.state is ImputationState.INSTANCE and io.probs.tolist() == [1.0]


def test_single_matching_row():
    rows = [[0.5, 0.5, 0.5], [0.9, 0.9, 0.1]]
    s = _setup(rows, "A:0.05 -> C:0.1")
    io = _imputer(s).impute(obj(1, [0.5, 0.2, None]))
    assert [(c.value, c.confidence) for c in io.candidates[2]] == [(0.5, 1.0)]
    assert len(io.probs) == 1


def test_missing_determinant_is_unimputable():
    s = _setup(TABLE_ROWS, "A:0.1,B:0.1 -> C:0.1")
    io = _imputer(s).impute(obj(1, [0.4, None, None]))
    assert io.unimputable


def test_no_rows_anywhere_is_unimputable():
    s = _setup(TABLE_ROWS, "A:0.01 -> C:0.1")
    imp = _imputer(s)
    io = imp.impute(obj(1, [0.95, 0.3, None]))
    assert io.unimputable and imp.stats.unimputable == 1


def test_widened_query_used_when_plain_one_is_empty():
    s = _setup(TABLE_ROWS, "A:0.02 -> C:0.1")
    imp = _imputer(s)
    io = imp.impute(obj(1, [0.48, 0.3, None]))
    assert not io.unimputable
    # the nearest row sits 0.03 away, outside +-0.02 but inside +-0.04
    assert imp.query_used(io, 2).lo == pytest.approx((0.44,))
    assert imp.stats.fallback_used == 1
    assert [c.value for c in io.candidates[2]] == [0.2]


def test_staged_imputation_matches_one_shot_and_only_shrinks():
    masked, _, s = workload()
    staged, direct = _imputer(s), _imputer(s)
    for o in masked.stream1[:150]:
        io = staged.start(o)
        if io.unimputable:
            assert direct.impute(o).unimputable
            continue
        range_box = io.mbr
        staged.locate(io)
        assert io.state is ImputationState.NODE and range_box.contains(io.mbr)
        node_box = io.mbr
        staged.materialize(io)
        assert node_box.contains(io.mbr)
        ref = direct.impute(o)
        assert np.array_equal(io.points, ref.points) and np.array_equal(io.probs, ref.probs)


def test_candidates_come_from_rows_inside_the_query():
    masked, _, s = workload()
    imp = _imputer(s)
    rows = masked.repository.rows
    for o in masked.stream2[:100]:
        io = imp.impute(o)
        if io.unimputable:
            continue
        for j, cands in io.candidates.items():
            assert math.fsum(c.confidence for c in cands) == pytest.approx(1.0, abs=1e-9)
            q = imp.query_used(io, j)
            inside = rows[np.all((rows[:, list(q.attrs)] >= q.lo) & (rows[:, list(q.attrs)] <= q.hi), axis=1)]
            for c in cands:
                assert np.any(np.abs(inside[:, j] - c.value) <= 1e-6)
        assert io.probs.sum() == pytest.approx(1.0, abs=1e-9)


def test_instance_confidence_is_product_of_candidates():
    rng = np.random.default_rng(2)
    rows = rng.random((2000, 4))
    s = _setup(rows, "A:0.05 -> C:0.1\nA:0.05,B:0.05 -> D:0.1")
    io = _imputer(s).impute(obj(1, [0.5, 0.5, None, None]))
    cc = {c.value: c.confidence for c in io.candidates[2]}
    cd = {c.value: c.confidence for c in io.candidates[3]}
    for row, p in zip(io.points, io.probs):
        assert p == pytest.approx(cc[row[2]] * cd[row[3]], rel=1e-12)
