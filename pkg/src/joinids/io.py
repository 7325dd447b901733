"""CSV readers and writers for streams, repositories, groundtruth and delta logs.

Stream CSV: header ``timestamp,A,B,...``; missing values are a literal ``-``.
Repository CSV: header ``A,B,...``; no missing values.
Groundtruth CSV: header ``timestamp_x,timestamp_y``.
Delta log: one ``t,+|-,ts_x,ts_y,probability`` line per change, then
``# key=value`` summary lines.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, TextIO

import numpy as np

from .model import AttributeSchema, IncompleteObject, PairKey, Repository, SchemaError

MISSING = "-"


def _parse_value(tok: str, where: str) -> float | None:
    tok = tok.strip()
    if tok == MISSING:
        return None
    try:
        return float(tok)
    except ValueError:
        raise SchemaError(f"bad value {tok!r} in {where}") from None


def read_stream_csv(path: str | Path, stream_id: int) -> tuple[AttributeSchema, list[IncompleteObject]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise SchemaError(f"{path} is empty")
    header = [h.strip() for h in rows[0]]
    if header and header[0].lower() == "timestamp":
        header = header[1:]
    schema = AttributeSchema(tuple(header))
    out = []
    for n, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != schema.d + 1:
            raise SchemaError(f"{path}:{n} has {len(row) - 1} values, expected {schema.d}")
        vals = tuple(_parse_value(v, f"{path}:{n}") for v in row[1:])
        out.append(IncompleteObject(int(row[0]), vals, stream_id))
    return schema, out


def write_stream_csv(path: str | Path, schema: AttributeSchema, objects: Iterable[IncompleteObject]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["timestamp", *schema.names])
        for o in objects:
            w.writerow([o.timestamp, *(MISSING if v is None else repr(float(v)) for v in o.values)])


def read_repository_csv(path: str | Path) -> Repository:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise SchemaError(f"{path} is empty")
    schema = AttributeSchema(tuple(h.strip() for h in rows[0]))
    data = []
    for n, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        vals = [_parse_value(v, f"{path}:{n}") for v in row]
        if len(vals) != schema.d or any(v is None for v in vals):
            raise SchemaError(f"{path}:{n} must hold {schema.d} present values")
        data.append(vals)
    return Repository(schema, np.asarray(data, dtype=float).reshape(-1, schema.d))


def write_repository_csv(path: str | Path, repo: Repository) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(repo.schema.names)
        for row in repo.rows.tolist():
            w.writerow([repr(v) for v in row])


def write_groundtruth(path: str | Path, pairs: Iterable[PairKey]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["timestamp_x", "timestamp_y"])
        w.writerows(sorted(pairs))


def read_groundtruth(path: str | Path) -> set[PairKey]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return {(int(a), int(b)) for a, b in rows[1:] if a}


@dataclass
class DeltaLog:
    events: list[tuple[int, str, int, int, float]] = field(default_factory=list)
    summary: dict[str, str] = field(default_factory=dict)

    def final(self) -> dict[PairKey, float]:
        js: dict[PairKey, float] = {}
        for _, op, tx, ty, p in self.events:
            if op == "+":
                js[(tx, ty)] = p
            else:
                js.pop((tx, ty), None)
        return js

    def ever_added(self) -> set[PairKey]:
        return {(tx, ty) for _, op, tx, ty, _ in self.events if op == "+"}


def write_delta_lines(fh: TextIO, deltas) -> int:
    n = 0
    for d in deltas:
        for (tx, ty), p in d.removed:
            fh.write(f"{d.t},-,{tx},{ty},{p!r}\n")
            n += 1
        for (tx, ty), p in d.added:
            fh.write(f"{d.t},+,{tx},{ty},{p!r}\n")
            n += 1
    return n


def write_summary(fh: TextIO, summary: dict) -> None:
    for k, v in summary.items():
        fh.write(f"# {k}={v}\n")


def read_delta_log(path: str | Path) -> DeltaLog:
    log = DeltaLog()
    with open(path) as fh:
        for n, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, val = line[1:].strip().partition("=")
                log.summary[key.strip()] = val.strip()
                continue
            parts = line.split(",")
            if len(parts) != 5 or parts[1] not in "+-":
                raise SchemaError(f"{path}:{n} is not a delta line")
            log.events.append((int(parts[0]), parts[1], int(parts[2]), int(parts[3]), float(parts[4])))
    return log
