"""Labeled candidate expressions shared by the disturbance and bank modules."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from .expressions import ExprTree, serialize_infix


class Provenance(str, Enum):
    """Where a candidate expression came from."""

    GROUND_TRUTH = "ground-truth"
    MODEL = "model"
    DISTURBANCE = "disturbance"
    RANDOM_SAMPLE = "random-sample"


@dataclass(frozen=True)
class LabeledExpression:
    """A candidate expression with its correctness label.

    label is 1 when the expression evaluates to the same number as the
    problem's ground truth and 0 otherwise; score_hint carries the
    generator's cumulative log-probability when the candidate came from
    beam search.
    """

    expr: ExprTree
    label: int
    provenance: Provenance
    score_hint: float | None = None

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label}")

    @property
    def text(self) -> str:
        return serialize_infix(self.expr)
