import numpy as np
import pytest

from conftest import obj, workload
from joinids.engine import (
    STRATEGIES,
    JoinEngine,
    replay,
    run_baseline_impute_then_grid,
    run_baseline_impute_then_nested,
    run_strategy,
    startup,
)
from joinids.imputation import Imputer
from joinids.model import AttributeSchema, ConfigurationError, ImputationState, OrderingError, Repository, SchemaError
from joinids.prune import JoinParams, join_probability, sample_level_prune, sub_box_x, sub_box_y
from joinids.rules import parse_rules


def _tiny_setup():
    rng = np.random.default_rng(0)
    rows = rng.random((200, 2))
    rows[:, 1] = rows[:, 0]
    repo = Repository(AttributeSchema.default(2), rows)
    return startup(repo, parse_rules("A:0.05 -> B:0.1"))


def test_complete_pair_joins_with_probability_one():
    e = JoinEngine(_tiny_setup(), JoinParams(0.3, 0.5), 5)
    d = e.step(1, obj(1, [0.2, 0.2]), obj(1, [0.3, 0.25], 2))
    assert d.added == [((1, 1), 1.0)]


def test_far_range_box_reads_no_leaves():
    e = JoinEngine(_tiny_setup(), JoinParams(0.1, 0.5), 5)
    e.step(1, new_y=obj(1, [0.9, 0.9], 2))
    before = e.imputer.stats.leaf_rows_read
    d = e.step(2, new_x=obj(2, [0.1, None]))
    assert e.imputer.stats.leaf_rows_read == before
    assert d.added == [] and (1, 2) in d.deferred
    assert e.sides[1].live[2].state is ImputationState.RANGE


def test_three_timestamp_script():
    e = JoinEngine(_tiny_setup(), JoinParams(0.2, 0.5), 2)
    d1 = e.step(1, obj(1, [0.1, 0.1]), obj(1, [0.15, 0.1], 2))
    d2 = e.step(2, obj(2, [0.9, 0.9]), obj(2, [0.5, 0.5], 2))
    d3 = e.step(3, obj(3, [0.9, 0.1]), obj(3, [0.1, 0.9], 2))
    assert [k for k, _ in d1.added] == [(1, 1)] and d1.removed == []
    assert d2.added == [] and d2.removed == []
    assert d3.added == [] and [k for k, _ in d3.removed] == [(1, 1)]
    assert e.joins.snapshot() == {}


def test_step_validation():
    e = JoinEngine(_tiny_setup(), JoinParams(0.2, 0.5), 2)
    e.step(2, obj(2, [0.1, 0.1]))
    with pytest.raises(OrderingError):
        e.step(2, new_y=obj(2, [0.1, 0.1], 2))
    with pytest.raises(OrderingError):
        e.step(3, obj(4, [0.1, 0.1]))
    with pytest.raises(OrderingError):
        e.step(3, obj(3, [0.1, 0.1], 2))
    with pytest.raises(SchemaError):
        e.step(3, obj(3, [0.1, 0.1, 0.1]))
    with pytest.raises(ConfigurationError):
        JoinEngine(_tiny_setup(), JoinParams(0.2, 0.5), 2, "bogus")
    with pytest.raises(ConfigurationError):
        JoinEngine(_tiny_setup(), JoinParams(0.2, 0.5), 0)


def test_unimputable_objects_are_flagged_and_never_joined():
    e = JoinEngine(_tiny_setup(), JoinParams(0.5, 0.5), 5, "dd-grid")
    e.step(1, new_y=obj(1, [0.5, 0.5], 2))
    d = e.step(2, new_x=obj(2, [None, 0.5]))
    assert d.unimputable == [(1, 2)] and d.added == []
    assert 2 not in e.sides[1].live and len(e.sides[1].window) == 1


def _brute_force(masked, setup, params, w, upto):
    """Join set at time ``upto`` from one-shot imputation and every window pair."""
    imp = Imputer(setup.lattices, setup.indexes, setup.counters)
    lo = upto - w + 1
    xs = [imp.impute(o) for o in masked.stream1 if lo <= o.timestamp <= upto]
    ys = [imp.impute(o) for o in masked.stream2 if lo <= o.timestamp <= upto]
    out = set()
    for x in xs:
        for y in ys:
            if not x.unimputable and not y.unimputable and join_probability(x, y, params) >= params.alpha:
                out.add((x.timestamp, y.timestamp))
    return out


@pytest.mark.parametrize("strategy", STRATEGIES)
def test_join_set_matches_recomputation(strategy):
    masked, _, setup = workload(stream_length=120, repo_size=1500)
    params, w = JoinParams(0.3, 0.5), 40
    e = JoinEngine(setup, params, w, strategy)
    for t in range(1, 121):
        e.step(t, masked.stream1[t - 1], masked.stream2[t - 1])
        if t % 30 == 0:
            assert set(e.joins.pairs) == _brute_force(masked, setup, params, w, t)
            assert e.check_integrity() == []


@pytest.mark.parametrize("distribution", ["uniform", "correlated", "anti-correlated"])
def test_strategies_agree(distribution):
    masked, _, setup = workload(distribution, stream_length=300, repo_size=2000)
    params, w = JoinParams(0.3, 0.5), 100
    runs = {s: run_strategy(setup, params, w, masked.stream1, masked.stream2, s) for s in STRATEGIES}
    base = runs["dd-asp"][1]
    for s in ("joinids", "dd-grid"):
        for a, b in zip(base, runs[s][1]):
            assert sorted(k for k, _ in a.added) == sorted(k for k, _ in b.added)
            assert sorted(k for k, _ in a.removed) == sorted(k for k, _ in b.removed)
        final = runs[s][0].joins.pairs
        assert final.keys() == runs["dd-asp"][0].joins.pairs.keys()
        for k, p in final.items():
            assert p == pytest.approx(runs["dd-asp"][0].joins.pairs[k], abs=1e-12)
    e, deltas = runs["joinids"]
    assert replay(deltas) == e.joins.pairs


def test_baseline_wrappers():
    masked, _, setup = workload(stream_length=60, repo_size=1500)
    params = JoinParams(0.3, 0.5)
    e1, _ = run_baseline_impute_then_nested(setup, params, 20, masked.stream1, masked.stream2)
    e2, _ = run_baseline_impute_then_grid(setup, params, 20, masked.stream1, masked.stream2)
    assert (e1.strategy, e2.strategy) == ("dd-asp", "dd-grid")
    assert e1.joins.pairs.keys() == e2.joins.pairs.keys()
    assert e1.stats.grid_candidates == 0 and e1.stats.refined == e1.stats.all_pairs


def test_deferred_objects_were_far_from_opposite_cells():
    masked, _, setup = workload("uniform", stream_length=300, repo_size=2000)
    params = JoinParams(0.1, 0.5)
    e = JoinEngine(setup, params, 100)
    for t in range(1, 301):
        d = e.step(t, masked.stream1[t - 1], masked.stream2[t - 1])
        for oid, gap in d.deferred.items():
            assert gap > params.eps
    assert e.stats.deferred > 0


def test_vectorised_sample_test_matches_scalar_rule():
    masked, _, setup = workload(stream_length=200, repo_size=2000)
    params = JoinParams(0.3, 0.5)
    e = JoinEngine(setup, params, 200, "dd-grid")
    for t in range(1, 201):
        e.step(t, masked.stream1[t - 1], masked.stream2[t - 1])
    side = e.sides[2]
    ys = sorted(side.live)
    slots = np.asarray(ys) % e.w
    checked = pruned = 0
    for x in list(e.sides[1].live.values())[:60]:
        s_x, beta_x = sub_box_x(x, params.alpha)
        far = e._sample_prune(side, slots, s_x, beta_x)
        for t_y, f in zip(ys, far.tolist()):
            y = side.live[t_y]
            s_y, beta_y = sub_box_y(y, beta_x, params.alpha)
            want = sample_level_prune(s_x, beta_x, s_y, beta_y, params, margin=1e-12)
            assert f == want
            checked += 1
            pruned += f
            if f:
                assert join_probability(x, y, params) < params.alpha
    assert checked > 1000 and pruned > 0


def test_pruning_stats_are_consistent():
    masked, _, setup = workload(stream_length=200, repo_size=2000)
    e, _ = run_strategy(setup, JoinParams(0.3, 0.5), 100, masked.stream1, masked.stream2)
    s = e.stats
    assert s.pruned_l1 + s.pruned_l3 + s.refined == s.grid_candidates
    assert 0 < s.pruning_power < 1 and 0 < s.pruning_power_all < 1
