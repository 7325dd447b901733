"""Command-line driver. Every flag can also be set as ``JOINIDS_<COMMAND>_<FLAG>``."""

from __future__ import annotations

import sys
import time
from pathlib import Path

import click

from . import datagen
from .engine import STRATEGIES, JoinDelta, JoinEngine, JoinStats, startup
from .io import (
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
from .metrics import score
from .model import AttributeSchema, JoinIDSError, PairKey
from .prune import JoinParams
from .rules import load_rules


def _summary_block(summary: dict) -> None:
    for k, v in summary.items():
        click.echo(f"{k}={v}")


def _stats_summary(stats: JoinStats) -> dict:
    return {
        "all_pairs": stats.all_pairs,
        "grid_candidates": stats.grid_candidates,
        "pruned_l1": stats.pruned_l1,
        "pruned_l3": stats.pruned_l3,
        "refined": stats.refined,
        "deferred": stats.deferred,
        "pruning_power_grid": f"{stats.pruning_power:.6f}",
        "pruning_power_all": f"{1.0 - stats.refined / stats.all_pairs if stats.all_pairs else 0.0:.6f}",
    }


@click.group(context_settings={"auto_envvar_prefix": "JOINIDS", "show_default": True})
def main() -> None:
    """Similarity join over two incomplete data streams."""


@main.command()
@click.option("--stream1", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--stream2", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--repo", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--rules", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--epsilon", type=float, default=0.3)
@click.option("--alpha", type=float, default=0.5)
@click.option("--window", type=int, default=2000)
@click.option("--algo", type=click.Choice(STRATEGIES), default="joinids")
@click.option("--lambda", "lam", type=int, default=10, help="histogram buckets per index node")
@click.option("--leaf-capacity", type=int, multiple=True, default=(16, 32, 64))
@click.option("--cluster-samples", type=int, default=100)
@click.option("--seed", type=int, default=0)
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="delta log path (stdout if omitted)")
@click.option("--server", default=None, help="run remotely on a joinids service at this URL")
def run(stream1, stream2, repo, rules, epsilon, alpha, window, algo, lam, leaf_capacity, cluster_samples, seed, out, server):
    """Join two stream CSVs and write the per-timestamp join deltas."""
    try:
        schema1, s1 = read_stream_csv(stream1, 1)
        schema2, s2 = read_stream_csv(stream2, 2)
        repository = read_repository_csv(repo)
        if not schema1.names == schema2.names == repository.schema.names:
            raise click.UsageError("streams and repository must share one attribute header")
        rule_list = load_rules(rules, repository.schema)
        if server:
            deltas, summary = _run_remote(server, repository, rule_list, s1, s2, epsilon, alpha, window, algo,
                                          lam, leaf_capacity, cluster_samples, seed)
        else:
            setup = startup(repository, rule_list, lam, leaf_capacity, cluster_samples, seed)
            engine = JoinEngine(setup, JoinParams(epsilon, alpha), window, algo)
            deltas = engine.run(s1, s2)
            summary = {
                "algo": algo,
                "timestamps": len(deltas),
                "startup_seconds": f"{setup.seconds:.4f}",
                "join_seconds": f"{engine.seconds:.4f}",
                **_stats_summary(engine.stats),
                "final_pairs": len(engine.joins),
            }
    except JoinIDSError as e:
        raise click.ClickException(str(e)) from e
    summary["pairs_added"] = sum(len(d.added) for d in deltas)
    summary["pairs_removed"] = sum(len(d.removed) for d in deltas)
    summary["unimputable"] = sum(len(d.unimputable) for d in deltas)
    if out:
        with open(out, "w") as fh:
            write_delta_lines(fh, deltas)
            write_summary(fh, summary)
    else:
        write_delta_lines(sys.stdout, deltas)
        write_summary(sys.stdout, summary)
    _summary_block(summary)


def _run_remote(server, repository, rules, s1, s2, epsilon, alpha, window, algo, lam, leaf_capacity,
                cluster_samples, seed, batch: int = 200):
    import httpx

    by_t: dict[int, dict] = {}
    for o in s1:
        by_t.setdefault(o.timestamp, {"t": o.timestamp})["x"] = list(o.values)
    for o in s2:
        by_t.setdefault(o.timestamp, {"t": o.timestamp})["y"] = list(o.values)
    steps = [by_t[t] for t in sorted(by_t)]
    t0 = time.perf_counter()
    with httpx.Client(base_url=server, timeout=None) as client:
        r = client.post("/sessions", json={
            "attributes": list(repository.schema.names),
            "repository": repository.rows.tolist(),
            "rules": [r.format() for r in rules],
            "epsilon": epsilon, "alpha": alpha, "window": window, "algo": algo,
            "lam": lam, "leaf_capacity": list(leaf_capacity), "cluster_samples": cluster_samples, "seed": seed,
        })
        if r.status_code != 201:
            raise click.ClickException(f"server refused session: {r.text}")
        sid = r.json()["session_id"]
        deltas = []
        try:
            for i in range(0, len(steps), batch):
                r = client.post(f"/sessions/{sid}/steps", json={"steps": steps[i:i + batch]})
                if r.status_code != 200:
                    raise click.ClickException(f"server rejected steps: {r.text}")
                for d in r.json():
                    deltas.append(JoinDelta(
                        d["t"],
                        [((p["timestamp_x"], p["timestamp_y"]), p["probability"]) for p in d["added"]],
                        [((p["timestamp_x"], p["timestamp_y"]), p["probability"]) for p in d["removed"]],
                        [tuple(o) for o in d["unimputable"]],
                    ))
            stats = client.get(f"/sessions/{sid}/stats").json()
            final = client.get(f"/sessions/{sid}/joins").json()
        finally:
            client.delete(f"/sessions/{sid}")
    summary = {
        "algo": algo,
        "server": server,
        "timestamps": len(deltas),
        "join_seconds": f"{stats['join_seconds']:.4f}",
        "wall_seconds": f"{time.perf_counter() - t0:.4f}",
        "all_pairs": stats["all_pairs"],
        "grid_candidates": stats["grid_candidates"],
        "pruned_l1": stats["pruned_l1"],
        "pruned_l3": stats["pruned_l3"],
        "refined": stats["refined"],
        "deferred": stats["deferred"],
        "pruning_power_grid": f"{stats['pruning_power']:.6f}",
        "pruning_power_all": f"{stats['pruning_power_all']:.6f}",
        "final_pairs": len(final["pairs"]),
    }
    return deltas, summary


@main.command()
@click.option("--distribution", type=click.Choice(datagen.DISTRIBUTIONS), default="correlated")
@click.option("--d", "dims", type=int, default=4)
@click.option("--m", "missing", type=int, default=1, help="missing attributes per stream object")
@click.option("--repo-size", type=int, default=30000)
@click.option("--stream-length", type=int, default=10000)
@click.option("--seeds", "seed_count", type=int, default=None, help="seed rows (default: total rows / 6)")
@click.option("--epsilon", type=float, default=0.3, help="distance threshold for the groundtruth")
@click.option("--alpha", type=float, default=0.5, help="recorded in the run hints only")
@click.option("--window", type=int, default=2000)
@click.option("--seed", type=int, default=0)
@click.option("--out-dir", type=click.Path(file_okay=False), required=True)
def generate(distribution, dims, missing, repo_size, stream_length, seed_count, epsilon, alpha, window, seed, out_dir):
    """Write synthetic streams, repository, rules and groundtruth."""
    try:
        rules = datagen.preset_rules(distribution, dims)
        count = 2 * stream_length + repo_size
        seed_count = seed_count or max(1, count // 6)
        data = datagen.generate(distribution, dims, count, rules, seed_count, seed)
        deps = sorted({AttributeSchema.default(dims).index(r.dependent) for r in rules})
        masked = datagen.mask(data, missing, deps, seed + 1, stream_length, repo_size)
    except JoinIDSError as e:
        raise click.ClickException(str(e)) from e
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_stream_csv(out / "stream1.csv", masked.schema, masked.stream1)
    write_stream_csv(out / "stream2.csv", masked.schema, masked.stream2)
    write_repository_csv(out / "repo.csv", masked.repository)
    (out / "rules.txt").write_text("".join(r.format() + "\n" for r in rules))
    truth = datagen.groundtruth_pairs(masked.truth1, masked.truth2, epsilon, window)
    write_groundtruth(out / "groundtruth.csv", truth)
    _summary_block({
        "distribution": distribution, "d": dims, "m": missing, "rows": count, "seeds": seed_count,
        "stream_length": stream_length, "repo_size": repo_size, "epsilon": epsilon, "alpha": alpha,
        "window": window, "groundtruth_pairs": len(truth), "out_dir": str(out),
    })


@main.command(name="eval")
@click.option("--log", "log_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--groundtruth", type=click.Path(exists=True, dir_okay=False), required=True)
def evaluate(log_path, groundtruth):
    """Recall, precision and F1 of a delta log against groundtruth pairs."""
    log = read_delta_log(log_path)
    truth: set[PairKey] = read_groundtruth(groundtruth)
    rep = score(log.ever_added(), truth)
    summary = {f"{k}": (f"{v:.6f}" if isinstance(v, float) else v) for k, v in rep.as_dict().items()}
    summary["final_pairs"] = len(log.final())
    for k in ("pruned_l1", "pruned_l3", "refined", "grid_candidates", "all_pairs",
              "pruning_power_grid", "pruning_power_all"):
        if k in log.summary:
            summary[k] = log.summary[k]
    _summary_block(summary)


@main.command()
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8000)
def serve(host, port):
    """Start the HTTP service."""
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=host, port=port)


if __name__ == "__main__":
    main()
