from enum import Enum
from typing import Dict

from pydantic import BaseModel, Field, computed_field


class OpKind(str, Enum):
    """Instrumented operation kinds"""
    FORWARD = "forward"
    BACKWARD = "backward"
    INTERPOLATE = "interpolate"
    WEIGHT_ADD = "weight-add"
    LSQ_SOLVE = "lsq-solve"    # one n-length inner product
    INPUT_GRAD = "input-grad"  # one second-order input gradient
    INPUT_GRAD_PASS = "input-grad-pass"  # one executed forward and backward to the inputs


# Cost of one operation in forward-pass (FP) units.
UNIT_COSTS: Dict[OpKind, float] = {
    OpKind.FORWARD: 1.0,
    OpKind.BACKWARD: 2.0,
    OpKind.INTERPOLATE: 1.0,
    OpKind.WEIGHT_ADD: 1.0,
    OpKind.LSQ_SOLVE: 1.0,
    OpKind.INPUT_GRAD: 40.0,
    OpKind.INPUT_GRAD_PASS: 0.0,
}

# FP actually spent by one input-gradient pass; measured only, never charged.
INPUT_GRAD_PASS_FP = 3.0


class CostLedger(BaseModel):
    """Forward-pass unit accounting.

    ``fp_units`` is derived from the counters, so it always equals the
    weighted counter sum.
    """
    counters: Dict[OpKind, int] = Field(
        default_factory=lambda: {kind: 0 for kind in OpKind},
        description="Operation counts by kind",
    )

    @computed_field  # type: ignore[prop-decorator]
    @property
    def fp_units(self) -> float:
        return sum(UNIT_COSTS[kind] * count for kind, count in self.counters.items())

    @property
    def measured_fp_units(self) -> float:
        """fp_units with second-order input gradients costed by the passes they ran."""
        return (self.fp_units - UNIT_COSTS[OpKind.INPUT_GRAD] * self.count(OpKind.INPUT_GRAD)
                + INPUT_GRAD_PASS_FP * self.count(OpKind.INPUT_GRAD_PASS))

    def record(self, kind: OpKind, count: int = 1) -> None:
        if count < 0:
            raise ValueError("operation counts cannot be negative")
        self.counters[kind] = self.counters.get(kind, 0) + count

    def count(self, kind: OpKind) -> int:
        return self.counters.get(kind, 0)

    def merge(self, other: "CostLedger") -> "CostLedger":
        merged = {kind: self.count(kind) + other.count(kind) for kind in OpKind}
        return CostLedger(counters=merged)

    def __add__(self, other: "CostLedger") -> "CostLedger":
        return self.merge(other)

    def copy_counts(self) -> "CostLedger":
        return CostLedger(counters=dict(self.counters))

    def since(self, earlier: "CostLedger") -> "CostLedger":
        """Counts accumulated after the ``earlier`` snapshot."""
        return CostLedger(counters={kind: self.count(kind) - earlier.count(kind) for kind in OpKind})
