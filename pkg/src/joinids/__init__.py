"""Similarity join over incomplete data streams with DD-based imputation."""

from .engine import JoinDelta, JoinEngine, JoinStats, Startup, replay, startup
from .imputation import Imputer, impute
from .model import (
    MBR,
    AttributeSchema,
    ImputationState,
    ImputedObject,
    IncompleteObject,
    JoinIDSError,
    JoinSet,
    Repository,
    SlidingWindow,
)
from .prune import JoinParams, join_probability, mindist
from .rules import DDRule, parse_rules

__all__ = [
    "AttributeSchema",
    "DDRule",
    "ImputationState",
    "ImputedObject",
    "Imputer",
    "IncompleteObject",
    "JoinDelta",
    "JoinEngine",
    "JoinIDSError",
    "JoinParams",
    "JoinSet",
    "JoinStats",
    "MBR",
    "Repository",
    "SlidingWindow",
    "Startup",
    "impute",
    "join_probability",
    "mindist",
    "parse_rules",
    "replay",
    "startup",
]
