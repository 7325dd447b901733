"""Effectiveness metrics against groundtruth join pairs."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Collection

from .model import PairKey


def f1(recall: float, precision: float) -> float:
    if recall + precision == 0:
        return 0.0
    return 2 * recall * precision / (recall + precision)


@dataclass(frozen=True)
class F1Report:
    true_positives: int
    returned: int
    truth: int

    @property
    def recall(self) -> float:
        return self.true_positives / self.truth if self.truth else 1.0

    @property
    def precision(self) -> float:
        # an empty answer earns no precision
        return self.true_positives / self.returned if self.returned else 0.0

    @property
    def f1(self) -> float:
        return f1(self.recall, self.precision)

    def as_dict(self) -> dict[str, float]:
        return {"recall": self.recall, "precision": self.precision, "f1": self.f1,
                "true_positives": self.true_positives, "returned": self.returned, "truth": self.truth}


def score(returned: Collection[PairKey], truth: Collection[PairKey]) -> F1Report:
    returned = set(returned)
    truth = set(truth)
    return F1Report(len(returned & truth), len(returned), len(truth))
