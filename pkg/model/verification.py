from enum import Enum
from typing import Annotated, Any, Dict, List, Literal, Optional, Union

from pydantic import AliasChoices, BaseModel, Field, model_validator

from model.ledger import CostLedger
from model.tinytrain import NoiseModel


class Metric(str, Enum):
    L1 = "l1"
    L2 = "l2"
    LINF = "linf"
    COSINE = "cosine-distance"


class StaticThreshold(BaseModel):
    """Accept when d(W_{t+k}, W'_{t+k}) < delta"""
    mode: Literal["static"] = "static"
    delta: float = Field(validation_alias=AliasChoices("delta", "δ"))


class AdaptiveThreshold(BaseModel):
    """Accept when ||g - g'|| < alpha * min(||g||, ||g'||)"""
    mode: Literal["adaptive"] = "adaptive"
    alpha: float = Field(validation_alias=AliasChoices("alpha", "α"))


class PerStepThreshold(BaseModel):
    """Externally supplied delta_t, one per verified checkpoint in verification order"""
    mode: Literal["per_step"] = "per_step"
    deltas: List[float]


ThresholdMode = Annotated[
    Union[StaticThreshold, AdaptiveThreshold, PerStepThreshold],
    Field(discriminator="mode"),
]


class VerificationPolicy(BaseModel):
    """How a verifier replays and judges a proof"""
    metric: Metric = Field(default=Metric.L2)
    threshold: ThresholdMode = Field(default_factory=lambda: StaticThreshold(delta=0.008))
    q: int = Field(
        default=0,
        ge=0,
        description="Updates verified per epoch; 0 verifies all",
        validation_alias=AliasChoices("q", "Q", "top_q"),
    )
    k: Optional[int] = Field(default=None, ge=1, description="Expected checkpoint interval")
    noise: NoiseModel = Field(default_factory=NoiseModel, description="Verifier reproduction noise")
    noise_seed: int = Field(default=0, ge=0, description="Root of the per-checkpoint replay rng")

    @model_validator(mode="before")
    @classmethod
    def fold_flat_threshold(cls, data: Any) -> Any:
        """Accept ``threshold: adaptive`` with ``alpha`` beside it as well as a nested mapping."""
        if isinstance(data, dict) and isinstance(data.get("threshold"), str):
            data = dict(data)
            mode = data.pop("threshold")
            nested = {"mode": mode}
            for key in ("delta", "alpha", "deltas"):
                if key in data:
                    nested[key] = data.pop(key)
            data["threshold"] = nested
        return data


class Decision(str, Enum):
    ACCEPT = "ACCEPT"
    REJECT = "REJECT"


class Overall(str, Enum):
    VALID = "VALID"
    INVALID = "INVALID"


class StepVerdict(BaseModel):
    step: int
    proof_update_norm: float = Field(description="||g_t||")
    reproduced_update_norm: float = Field(description="||g'_t||")
    distance: float = Field(description="d(W_{t+k}, W'_{t+k})")
    threshold_used: float
    decision: Decision


class IssueKind(str, Enum):
    COMMITMENT = "commitment"
    AVAILABILITY = "availability"


class StepIssue(BaseModel):
    """A checkpoint that could not be replayed"""
    step: int = Field(description="Checkpoint step whose replay was aborted")
    data_step: Optional[int] = Field(default=None, description="Offending training step")
    kind: IssueKind
    message: str


class VerificationReport(BaseModel):
    verdicts: List[StepVerdict] = Field(default_factory=list)
    normalized_errors: Optional[List[float]] = Field(
        default=None,
        description="eps_repr(t) / rd per verdict, when rd > 0 was supplied",
    )
    overall: Overall
    ledger: CostLedger = Field(default_factory=CostLedger)
    issues: List[StepIssue] = Field(default_factory=list)
    rd: Optional[float] = None
    initial_final_distance: float = Field(description="d(W_0, W_T), reported without judgement")

    @property
    def max_normalized_error(self) -> Optional[float]:
        if not self.normalized_errors:
            return None
        return max(self.normalized_errors)

    @property
    def rejected_steps(self) -> List[int]:
        return [v.step for v in self.verdicts if v.decision == Decision.REJECT]

    @property
    def acceptance_rate(self) -> float:
        if not self.verdicts:
            return 0.0
        return sum(v.decision == Decision.ACCEPT for v in self.verdicts) / len(self.verdicts)

    def csv_rows(self) -> List[Dict[str, object]]:
        return [
            {
                "step": v.step,
                "dist": v.distance,
                "threshold": v.threshold_used,
                "decision": v.decision.value,
                "norm_g": v.proof_update_norm,
                "norm_gp": v.reproduced_update_norm,
            }
            for v in self.verdicts
        ]

    def summary(self) -> str:
        lines = [
            f"overall: {self.overall.value}",
            f"verified checkpoints: {len(self.verdicts)}",
            f"rejected: {len(self.rejected_steps)}",
            f"issues: {len(self.issues)}",
            f"verification cost: {self.ledger.fp_units:.0f} FP",
            f"d(W_0, W_T): {self.initial_final_distance:.6g}",
        ]
        if self.verdicts:
            lines.append(f"max distance: {max(v.distance for v in self.verdicts):.6g}")
        if self.max_normalized_error is not None:
            lines.append(f"max normalized reproduction error: {self.max_normalized_error:.6g} (rd={self.rd:.6g})")
        for issue in self.issues:
            lines.append(f"step {issue.step}: {issue.kind.value} issue: {issue.message}")
        return "\n".join(lines)


class ReferenceDistance(BaseModel):
    rd: float
    trials: int
    degenerate: bool = Field(description="rd == 0, normalized errors undefined")
    pairwise: List[float] = Field(default_factory=list)
