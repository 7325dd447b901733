"""HTTP front end: one join engine per session, stepped by the client."""

from __future__ import annotations

import threading
import uuid

from fastapi import FastAPI, HTTPException

from ..engine import JoinDelta, JoinEngine, startup
from ..model import AttributeSchema, IncompleteObject, JoinIDSError, Repository
from ..prune import JoinParams
from ..rules import DDRule
from .schemas import DeltaOut, JoinsOut, PairOut, SessionCreate, SessionInfo, StatsOut, StepBatch, StepRequest


class _Session:
    def __init__(self, engine: JoinEngine):
        self.engine = engine
        self.lock = threading.Lock()


def _pairs(items) -> list[PairOut]:
    return [PairOut(timestamp_x=tx, timestamp_y=ty, probability=p) for (tx, ty), p in items]


def _delta_out(d: JoinDelta) -> DeltaOut:
    return DeltaOut(
        t=d.t,
        added=_pairs(d.added),
        removed=_pairs(d.removed),
        unimputable=[tuple(o) for o in d.unimputable],
        deferred=len(d.deferred),
    )


def create_app() -> FastAPI:
    app = FastAPI(title="joinids", version="0.1.0")
    sessions: dict[str, _Session] = {}
    registry_lock = threading.Lock()

    def get(session_id: str) -> _Session:
        with registry_lock:
            s = sessions.get(session_id)
        if s is None:
            raise HTTPException(status_code=404, detail=f"no session {session_id}")
        return s

    def advance(s: _Session, req: StepRequest) -> DeltaOut:
        x = IncompleteObject(req.t, tuple(req.x), 1) if req.x is not None else None
        y = IncompleteObject(req.t, tuple(req.y), 2) if req.y is not None else None
        return _delta_out(s.engine.step(req.t, x, y))

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok", "sessions": len(sessions)}

    @app.post("/sessions", response_model=SessionInfo, status_code=201)
    def create_session(body: SessionCreate) -> SessionInfo:
        try:
            schema = AttributeSchema(tuple(body.attributes))
            repo = Repository(schema, body.repository)
            rules = [DDRule.parse(r) for r in body.rules]
            setup = startup(repo, rules, body.lam, body.leaf_capacity, body.cluster_samples, body.seed)
            engine = JoinEngine(setup, JoinParams(body.epsilon, body.alpha), body.window, body.algo)
        except JoinIDSError as e:
            raise HTTPException(status_code=422, detail=str(e)) from e
        sid = uuid.uuid4().hex
        with registry_lock:
            sessions[sid] = _Session(engine)
        return SessionInfo(session_id=sid, d=schema.d, algo=body.algo, startup_seconds=setup.seconds)

    @app.post("/sessions/{session_id}/step", response_model=DeltaOut)
    def step(session_id: str, body: StepRequest) -> DeltaOut:
        s = get(session_id)
        with s.lock:
            try:
                return advance(s, body)
            except JoinIDSError as e:
                raise HTTPException(status_code=422, detail=str(e)) from e

    @app.post("/sessions/{session_id}/steps", response_model=list[DeltaOut])
    def steps(session_id: str, body: StepBatch) -> list[DeltaOut]:
        s = get(session_id)
        with s.lock:
            try:
                return [advance(s, r) for r in body.steps]
            except JoinIDSError as e:
                raise HTTPException(status_code=422, detail=str(e)) from e

    @app.get("/sessions/{session_id}/joins", response_model=JoinsOut)
    def joins(session_id: str) -> JoinsOut:
        s = get(session_id)
        with s.lock:
            return JoinsOut(t=s.engine.t, pairs=_pairs(sorted(s.engine.joins.pairs.items())))

    @app.get("/sessions/{session_id}/stats", response_model=StatsOut)
    def stats(session_id: str) -> StatsOut:
        s = get(session_id)
        with s.lock:
            st = s.engine.stats
            return StatsOut(
                t=s.engine.t,
                all_pairs=st.all_pairs,
                grid_candidates=st.grid_candidates,
                pruned_l1=st.pruned_l1,
                pruned_l3=st.pruned_l3,
                refined=st.refined,
                deferred=st.deferred,
                pruning_power=st.pruning_power,
                pruning_power_all=st.pruning_power_all,
                join_seconds=s.engine.seconds,
            )

    @app.delete("/sessions/{session_id}", status_code=204)
    def delete_session(session_id: str) -> None:
        with registry_lock:
            if sessions.pop(session_id, None) is None:
                raise HTTPException(status_code=404, detail=f"no session {session_id}")

    return app
