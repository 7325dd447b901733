from __future__ import annotations

from typing import Optional

from pydantic import BaseModel, Field


class SessionCreate(BaseModel):
    attributes: list[str]
    repository: list[list[float]]
    rules: list[str] = Field(..., description="one rule per entry, e.g. 'A:0.02,B:0.02 -> D:0.05'")
    epsilon: float = Field(0.3, gt=0)
    alpha: float = Field(0.5, gt=0, le=1)
    window: int = Field(2000, ge=1)
    algo: str = "joinids"
    lam: int = Field(10, ge=1)
    leaf_capacity: list[int] = [16, 32, 64]
    cluster_samples: int = Field(100, ge=1)
    seed: int = 0


class SessionInfo(BaseModel):
    session_id: str
    d: int
    algo: str
    startup_seconds: float


class StepRequest(BaseModel):
    t: int
    x: Optional[list[Optional[float]]] = None  # None entries mark missing values
    y: Optional[list[Optional[float]]] = None


class StepBatch(BaseModel):
    steps: list[StepRequest]


class PairOut(BaseModel):
    timestamp_x: int
    timestamp_y: int
    probability: float


class DeltaOut(BaseModel):
    t: int
    added: list[PairOut]
    removed: list[PairOut]
    unimputable: list[tuple[int, int]]
    deferred: int


class JoinsOut(BaseModel):
    t: Optional[int]
    pairs: list[PairOut]


class StatsOut(BaseModel):
    t: Optional[int]
    all_pairs: int
    grid_candidates: int
    pruned_l1: int
    pruned_l3: int
    refined: int
    deferred: int
    pruning_power: float
    pruning_power_all: float
    join_seconds: float
