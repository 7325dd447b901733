import math

import numpy as np
import pytest

from conftest import imputed, obj
from joinids.model import MBR, ConfigurationError, ImputationState, ImputedObject, SchemaError, StateError
from joinids.prune import (
    JoinParams,
    exact_join_probability,
    join_probability,
    join_probability_oracle,
    mindist,
    mindist_many,
    object_level_prune,
    qualifies,
    sample_level_prune,
    sub_box_x,
    sub_box_y,
    widest_missing,
    within,
)

SQ_A = MBR((0.0, 0.0), (0.1, 0.1))
SQ_B = MBR((0.5, 0.5), (0.6, 0.6))


def test_params_validation():
    for eps, alpha in ((0.0, 0.5), (0.1, 0.0), (0.1, 1.5)):
        with pytest.raises(ConfigurationError):
            JoinParams(eps, alpha)
    JoinParams(0.1, 1.0)


def test_mindist_examples():
    assert mindist(SQ_A, SQ_A) == 0.0
    assert mindist(SQ_A, SQ_B) == pytest.approx(0.56569, abs=1e-5)
    assert mindist(MBR((0.0, 0.0), (0.5, 0.1)), MBR((0.2, 0.3), (0.4, 0.4))) == pytest.approx(0.2)
    with pytest.raises(SchemaError):
        mindist(SQ_A, MBR((0.0,), (1.0,)))
    lo = np.array([SQ_A.lo, SQ_B.lo])
    hi = np.array([SQ_A.hi, SQ_B.hi])
    assert mindist_many(lo, hi, SQ_A).tolist() == pytest.approx([0.0, mindist(SQ_A, SQ_B)])


def test_object_level_prune_boundaries():
    p = JoinParams(0.3, 0.5)
    far_x = ImputedObject(obj(1, [0.05, 0.05]), ImputationState.RANGE, SQ_A)
    far_y = ImputedObject(obj(1, [0.55, 0.55], 2), ImputationState.RANGE, SQ_B)
    assert object_level_prune(far_x, far_y, p)
    touch = ImputedObject(obj(2, [0.1, 0.1], 2), ImputationState.RANGE, MBR((0.1, 0.1), (0.2, 0.2)))
    assert not object_level_prune(far_x, touch, p)
    # dyadic coordinates make the gap exactly 0.5
    left = ImputedObject(obj(3, [0.125, 0.125]), ImputationState.RANGE, MBR((0.0, 0.0), (0.25, 0.25)))
    right = ImputedObject(obj(3, [0.875, 0.125], 2), ImputationState.RANGE, MBR((0.75, 0.0), (1.0, 0.25)))
    assert mindist(left.mbr, right.mbr) == 0.5
    assert not object_level_prune(left, right, JoinParams(0.5, 0.5))
    assert object_level_prune(left, right, JoinParams(0.4999, 0.5))


def test_sample_level_prune_examples():
    p = JoinParams(0.3, 0.5)
    assert sample_level_prune(SQ_A, 0.9, SQ_B, 0.9, p)
    assert not sample_level_prune(SQ_A, 1.0, SQ_B, 0.5, p)  # product equals 1 - alpha
    assert not sample_level_prune(SQ_A, 0.9, MBR((0.2, 0.2), (0.3, 0.3)), 0.9, p)


def test_join_probability_worked_example():
    ox = imputed(1, [(0.4, 0.3, 0.2), (0.4, 0.3, 0.9)], [0.5, 0.5])
    oy = imputed(1, [(0.3, 0.3, 0.2)], [1.0], sid=2)
    p = JoinParams(0.3, 0.5)
    assert join_probability(ox, oy, p) == pytest.approx(0.5)
    assert exact_join_probability(ox, oy, p) == 0.5
    assert join_probability(oy, oy, p) == 1.0
    far = imputed(2, [(0.9, 0.9, 0.9)], [1.0], sid=2)
    assert join_probability(ox, far, p) == 0.0


def test_join_probability_needs_instances():
    io = ImputedObject(obj(1, [0.2, None]), ImputationState.RANGE, MBR((0.2, 0.0), (0.2, 1.0)))
    with pytest.raises(StateError):
        join_probability(io, io, JoinParams(0.1, 0.5))


def test_within_matches_math_dist(rng):
    a = rng.random((30, 4))
    b = rng.random((40, 4))
    close = within(a, b, 0.5)
    for i in range(30):
        for k in range(40):
            assert close[i, k] == (math.dist(a[i], b[k]) <= 0.5)
    one = within(a[:, :1], b[:, :1], 0.1)
    assert one.tolist() == (np.abs(a[:, :1] - b[:, 0]) <= 0.1).tolist()


def test_qualifies_settles_ties_exactly():
    ox = imputed(1, [(0.1,), (0.9,)], [0.5, 0.5])
    oy = imputed(1, [(0.1,)], [1.0], sid=2)
    p = JoinParams(0.05, 0.5)
    ok, prob = qualifies(0.5 - 1e-12, ox, oy, p)
    assert ok and prob == 0.5
    ok, _ = qualifies(0.4, ox, oy, p)
    assert not ok


def test_oracle_single_instance_and_marginalisation():
    p = JoinParams(0.3, 0.5)
    a = imputed(1, [(0.1, 0.1)], [1.0])
    b = imputed(1, [(0.2, 0.2)], [1.0], sid=2)
    assert join_probability_oracle(a, b, [a], [b], p) == 1.0
    x = imputed(1, [(0.1, 0.1), (0.1, 0.8)], [0.3, 0.7])
    y = imputed(1, [(0.2, 0.2), (0.2, 0.6)], [0.6, 0.4], sid=2)
    extra = imputed(2, [(0.5, 0.5), (0.6, 0.6), (0.7, 0.7)], [0.2, 0.3, 0.5])
    base = join_probability_oracle(x, y, [x], [y], p)
    with_extra = join_probability_oracle(x, y, [x, extra], [y], p)
    assert base == pytest.approx(with_extra, abs=1e-12)
    assert base == pytest.approx(join_probability(x, y, p), abs=1e-12)


def _spread(t, values, probs, edges, sid=1):
    io = imputed(t, [(0.5, v) for v in values], probs, sid)
    io.edges[1] = np.asarray(edges)
    return io


def test_sub_boxes_follow_bucket_edges():
    edges = [0.0, 0.1, 0.2, 0.3, 1.0]
    io = _spread(1, [0.05, 0.15, 0.25, 0.9], [0.4, 0.3, 0.2, 0.1], edges)
    assert widest_missing(io) == 1
    s, beta = sub_box_x(io, 0.5)
    assert beta == pytest.approx(0.9) and s == MBR((0.5, 0.05), (0.5, 0.3))
    sy, by = sub_box_y(io, 0.9, 0.5)
    # mass above 0.5 / 0.9 needs the first two buckets
    assert by == pytest.approx(0.7) and sy == MBR((0.5, 0.05), (0.5, 0.2))
    whole = imputed(2, [(0.5, 0.5)], [1.0])
    assert sub_box_x(whole, 0.5) == (whole.mbr, 1.0)


def test_sub_boxes_hold_their_mass():
    rng = np.random.default_rng(9)
    for _ in range(300):
        n = int(rng.integers(1, 8))
        vals = np.sort(rng.random(n))
        probs = rng.random(n) + 0.01
        probs /= probs.sum()
        edges = np.sort(np.concatenate([[vals[0], vals[-1]], rng.uniform(vals[0], vals[-1], 4)]))
        io = _spread(1, vals.tolist(), probs.tolist(), edges)
        alpha = float(rng.uniform(0.05, 0.95))
        s, beta = sub_box_x(io, alpha)
        inside = sum(p for v, p in zip(vals, probs) if s.contains_point((0.5, v)))
        assert inside >= beta - 1e-12
