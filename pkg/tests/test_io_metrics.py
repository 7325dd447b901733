import io as _io

import numpy as np
import pytest

from conftest import obj
from joinids.engine import JoinDelta
from joinids.io import (
    read_delta_log,
    read_groundtruth,
    read_repository_csv,
    read_stream_csv,
    write_delta_lines,
    write_groundtruth,
    write_repository_csv,
    write_stream_csv,
    write_summary,
)
from joinids.metrics import f1, score
from joinids.model import AttributeSchema, Repository, SchemaError


def test_stream_csv_roundtrip(tmp_path):
    schema = AttributeSchema.default(3)
    objs = [obj(1, [0.1, None, 0.3]), obj(2, [0.123456789012, 0.5, None])]
    p = tmp_path / "s.csv"
    write_stream_csv(p, schema, objs)
    assert p.read_text().splitlines()[:2] == ["timestamp,A,B,C", "1,0.1,-,0.3"]
    got_schema, got = read_stream_csv(p, 1)
    assert got_schema == schema and got == objs


def test_stream_csv_errors(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("timestamp,A,B\n1,0.1\n")
    with pytest.raises(SchemaError):
        read_stream_csv(p, 1)
    p.write_text("timestamp,A,B\n1,0.1,abc\n")
    with pytest.raises(SchemaError):
        read_stream_csv(p, 1)
    p.write_text("")
    with pytest.raises(SchemaError):
        read_stream_csv(p, 1)


def test_repository_csv_roundtrip(tmp_path):
    repo = Repository(AttributeSchema.default(2), np.array([[0.1, 0.2], [1.0 / 3, 0.0]]))
    p = tmp_path / "r.csv"
    write_repository_csv(p, repo)
    back = read_repository_csv(p)
    assert back.schema == repo.schema and np.array_equal(back.rows, repo.rows)
    p.write_text("A,B\n0.1,-\n")
    with pytest.raises(SchemaError):
        read_repository_csv(p)


def test_groundtruth_roundtrip(tmp_path):
    p = tmp_path / "g.csv"
    write_groundtruth(p, {(2, 1), (1, 3)})
    assert p.read_text().splitlines() == ["timestamp_x,timestamp_y", "1,3", "2,1"]
    assert read_groundtruth(p) == {(1, 3), (2, 1)}


def test_delta_log_roundtrip(tmp_path):
    deltas = [
        JoinDelta(1, added=[((1, 1), 1.0), ((1, 2), 0.75)]),
        JoinDelta(2, removed=[((1, 1), 1.0)], added=[((2, 2), 0.6)]),
    ]
    buf = _io.StringIO()
    assert write_delta_lines(buf, deltas) == 4
    write_summary(buf, {"algo": "joinids", "refined": 7})
    p = tmp_path / "log.txt"
    p.write_text(buf.getvalue())
    log = read_delta_log(p)
    assert log.final() == {(1, 2): 0.75, (2, 2): 0.6}
    assert log.ever_added() == {(1, 1), (1, 2), (2, 2)}
    assert log.summary == {"algo": "joinids", "refined": "7"}
    p.write_text("1,*,1,1,0.5\n")
    with pytest.raises(SchemaError):
        read_delta_log(p)


def test_f1_examples():
    assert f1(0.9, 0.95) == pytest.approx(0.9243, abs=1e-4)
    assert f1(0.0, 0.0) == 0.0
    perfect = score({(1, 1), (2, 2)}, {(1, 1), (2, 2)})
    assert (perfect.recall, perfect.precision, perfect.f1) == (1.0, 1.0, 1.0)
    empty = score(set(), {(1, 1)})
    assert (empty.recall, empty.precision, empty.f1) == (0.0, 0.0, 0.0)
    partial = score({(1, 1), (3, 3)}, {(1, 1), (2, 2)})
    assert (partial.recall, partial.precision) == (0.5, 0.5)
    assert partial.as_dict()["true_positives"] == 1
