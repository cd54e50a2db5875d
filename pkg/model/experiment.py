from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional

from pydantic import AliasChoices, BaseModel, Field, model_validator

from model.ledger import CostLedger, OpKind
from model.tinytrain import DatasetSpec, TrainConfig
from model.verification import VerificationPolicy


class ExperimentId(str, Enum):
    BASELINE_HONEST = "baseline_honest"
    ATTACK_INFINITESIMAL = "attack_infinitesimal"
    ATTACK_BLINDFOLD = "attack_blindfold"
    ATTACK_INTERP = "attack_interp"
    PROBE_ORDERING = "probe_ordering"
    PROBE_SYNTHESIS = "probe_synthesis"
    ATTACK_RNA = "attack_rna"
    INDEPENDENT_RUNS = "independent_runs"
    THRESHOLD_CURVE = "threshold_curve"


class AttackParams(BaseModel):
    """Knobs of the attack and probe experiments"""
    delta: Optional[float] = Field(
        default=None,
        gt=0,
        description="Static threshold for the spoofs; defaults to the calibrated delta-hat",
    )
    margin: float = Field(default=10.0, gt=1)
    max_checkpoints: int = Field(default=50_000, ge=1, description="Refuse infinitesimal spoofs longer than this")
    q: int = Field(default=5, ge=1, validation_alias=AliasChoices("q", "Q"))
    s: int = Field(default=100, ge=2, description="Checkpoint updates per blindfold epoch")
    blindfold_k: int = Field(default=10, ge=1)
    blindfold_epochs: int = Field(default=2, ge=1)
    lr_large: float = Field(default=1.0, gt=0)
    alpha: float = Field(default=0.5, gt=0, description="Adaptive alpha used against the spoofs")
    n_iter: int = Field(default=10, ge=1)
    n_checkpoints: int = Field(default=5, ge=1)
    data_lr: float = Field(default=1.0, gt=0)
    model_lr: float = Field(default=0.1, gt=0)
    probe_iters: int = Field(default=200, ge=1)
    pretrain_epochs: List[int] = Field(
        default_factory=lambda: [0],
        min_length=1,
        description="Epochs the ordering-probe adversary trains on victim-labeled rows, one probe each",
    )
    rounds: int = Field(default=10_000, ge=1)
    m: int = Field(default=10, ge=1, le=32)
    include_base: bool = Field(default=True)
    independent_runs: int = Field(default=10, ge=2)

    @model_validator(mode="after")
    def validate_params(self) -> "AttackParams":
        if self.q >= self.s:
            raise ValueError(f"blindfold needs Q < s, got Q={self.q}, s={self.s}")
        if any(e < 0 for e in self.pretrain_epochs):
            raise ValueError("pretraining epochs must be nonnegative")
        return self


class PolForgeConfig(BaseModel):
    """Contents of a YAML configuration file"""
    dataset: DatasetSpec = Field(default_factory=DatasetSpec)
    train: TrainConfig = Field(default_factory=TrainConfig)
    policy: VerificationPolicy = Field(default_factory=VerificationPolicy)
    attack: AttackParams = Field(default_factory=AttackParams)


class ExperimentSpec(PolForgeConfig):
    id: ExperimentId
    repeats: int = Field(default=5, ge=1)
    out_dir: Path = Field(default=Path("results"))
    seed: int = Field(default=0, description="Root of every derived seed")
    tau: float = Field(default=0.999, gt=0, lt=1)
    taus: List[float] = Field(default_factory=lambda: [0.5, 0.9, 0.99, 0.999])
    threshold_trials: int = Field(default=2000, ge=1)
    rd_trials: int = Field(default=5, ge=2)


class TTestResult(BaseModel):
    n: int = Field(ge=2)
    mean: float
    stddev: float = Field(gt=0)
    t: float
    p_one_tailed: float = Field(ge=0, le=1)


class CostComparison(BaseModel):
    """Spoof cost against honest cost, in FP units"""
    honest_fp: float
    spoof_fp: float
    honest_units: int = Field(description="Steps or checkpoint updates the honest cost is spread over")
    spoof_units: int
    unit: str = Field(default="step")
    honest_breakdown: Dict[OpKind, int] = Field(default_factory=dict)
    spoof_breakdown: Dict[OpKind, int] = Field(default_factory=dict)

    @property
    def honest_per_unit(self) -> float:
        return self.honest_fp / self.honest_units

    @property
    def spoof_per_unit(self) -> float:
        return self.spoof_fp / self.spoof_units

    @property
    def ratio(self) -> float:
        """Per-unit spoof cost over per-unit honest cost"""
        return self.spoof_per_unit / self.honest_per_unit

    @property
    def total_ratio(self) -> float:
        return self.spoof_fp / self.honest_fp

    def to_dict(self) -> Dict[str, Any]:
        return {
            "unit": self.unit,
            "honest_fp": self.honest_fp,
            "spoof_fp": self.spoof_fp,
            "honest_per_unit": self.honest_per_unit,
            "spoof_per_unit": self.spoof_per_unit,
            "ratio": self.ratio,
            "total_ratio": self.total_ratio,
        }


def ledger_counts(ledger: CostLedger) -> Dict[OpKind, int]:
    return {kind: ledger.count(kind) for kind in OpKind}
