from enum import Enum
from typing import Any, Dict, List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from model.ledger import CostLedger
from model.proof import Proof
from model.tinytrain import Dataset, ModelState


class AttackId(str, Enum):
    INFINITESIMAL = "infinitesimal"
    BLINDFOLD_TOPQ = "blindfold_topq"
    INTERP_PERTURB = "interp_perturb"
    RNA = "rna"


class ProbeId(str, Enum):
    DATA_ORDERING = "data_ordering"
    SYNTHESIS = "synthesis"


class SpoofResult(BaseModel):
    """A proof forged for a known victim W_T, with its measured cost."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    proof: Proof
    ledger: CostLedger
    attack_id: AttackId
    target: ModelState = Field(description="The victim W_T the proof must end in")
    params: Dict[str, Any] = Field(default_factory=dict)
    dataset: Optional[Dataset] = Field(
        default=None,
        description="Row store the proof's commitments refer to, when the attack synthesized it",
    )

    @model_validator(mode="after")
    def validate_endpoint(self) -> "SpoofResult":
        if not np.array_equal(self.proof.final.weights, self.target.weights):
            raise ValueError("spoofed proof does not end in the victim weights")
        return self

    @property
    def cost_per_step(self) -> float:
        return self.ledger.fp_units / self.proof.T


class ProbeResult(BaseModel):
    probe_id: ProbeId
    series: Dict[str, List[float]] = Field(default_factory=dict)
    params: Dict[str, Any] = Field(default_factory=dict)
    diverged: bool = Field(default=False, description="Aborted on a non-finite loss")
    ledger: CostLedger = Field(default_factory=CostLedger)

    @model_validator(mode="after")
    def validate_series(self) -> "ProbeResult":
        lengths = {len(v) for v in self.series.values()}
        if len(lengths) > 1:
            raise ValueError(f"probe series lengths disagree: {sorted(lengths)}")
        return self

    def __len__(self) -> int:
        return next((len(v) for v in self.series.values()), 0)


class RnaResult(BaseModel):
    """Outcome of least-squares steering toward W_T.

    ``proof`` ends at the last reached base, so it is only a candidate: it
    does not end in W_T unless the distance curve reached zero.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True)

    proof: Proof
    ledger: CostLedger
    distance_curve: List[float] = Field(description="d(base, W_T) at the start and after every round")
    ridge_rounds: List[int] = Field(default_factory=list, description="Rounds whose Gram matrix needed a ridge")
    params: Dict[str, Any] = Field(default_factory=dict)

    @property
    def final_distance(self) -> float:
        return self.distance_curve[-1]

    @property
    def rounds(self) -> int:
        return len(self.distance_curve) - 1
