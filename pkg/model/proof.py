from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import AliasChoices, BaseModel, ConfigDict, Field, field_serializer, field_validator, model_validator

from model.tinytrain import Architecture, ModelState, StepMetadata


class ProofRecord(BaseModel):
    """One training step of a proof: data reference, commitment and metadata."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    step: int = Field(ge=0)
    checkpoint: Optional[ModelState] = Field(default=None, description="Present when step is a checkpoint")
    batch_indices: np.ndarray
    batch_hash: bytes = Field(description="32-byte digest of the referenced rows")
    metadata: StepMetadata

    @field_validator("batch_indices", mode="before")
    @classmethod
    def validate_indices(cls, v) -> np.ndarray:
        indices = np.array(v, dtype=np.int64).reshape(-1)
        indices.setflags(write=False)
        return indices

    @field_validator("batch_hash")
    @classmethod
    def validate_hash(cls, v: bytes) -> bytes:
        if len(v) != 32:
            raise ValueError(f"batch hash must be 32 bytes, got {len(v)}")
        return v

    @field_serializer("batch_indices")
    def serialize_indices(self, indices: np.ndarray) -> List[int]:
        return indices.tolist()

    @field_serializer("batch_hash")
    def serialize_hash(self, digest: bytes) -> str:
        return digest.hex()


class Proof(BaseModel):
    """Ordered per-step records with checkpoints every k steps and at T."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    records: List[ProofRecord] = Field(min_length=1)
    k: int = Field(ge=1, description="Checkpoint interval")
    arch: Architecture
    T: int = Field(ge=1, description="Total steps")
    steps_per_epoch: int = Field(ge=1)
    final: ModelState

    @model_validator(mode="after")
    def validate_structure(self) -> "Proof":
        steps = [record.step for record in self.records]
        if steps != list(range(self.T + 1)):
            raise ValueError("records must cover steps 0..T in strictly increasing order")
        expected = set(self.checkpoint_steps())
        for record in self.records:
            has_checkpoint = record.checkpoint is not None
            if has_checkpoint != (record.step in expected):
                raise ValueError(f"checkpoint presence wrong at step {record.step}")
            if has_checkpoint and record.checkpoint.arch != self.arch:
                raise ValueError(f"checkpoint at step {record.step} has a foreign architecture")
        last = self.records[-1].checkpoint
        if not np.array_equal(last.weights, self.final.weights):
            raise ValueError("final weights differ from the checkpoint at T")
        return self

    def checkpoint_steps(self) -> List[int]:
        steps = list(range(0, self.T, self.k))
        steps.append(self.T)
        return steps

    def intervals(self) -> List[Tuple[int, int]]:
        """Consecutive checkpoint pairs (t, t_next)."""
        steps = self.checkpoint_steps()
        return list(zip(steps[:-1], steps[1:]))

    def checkpoint(self, step: int) -> ModelState:
        record = self.records[step] if 0 <= step <= self.T else None
        if record is None or record.checkpoint is None:
            raise KeyError(step)
        return record.checkpoint

    def record(self, step: int) -> ProofRecord:
        if not 0 <= step <= self.T:
            raise KeyError(step)
        return self.records[step]

    def epoch_of(self, step: int) -> int:
        return step // self.steps_per_epoch

    @property
    def n_epochs(self) -> int:
        return -(-self.T // self.steps_per_epoch)

    @property
    def initial(self) -> ModelState:
        return self.records[0].checkpoint

    def intervals_by_epoch(self) -> Dict[int, List[Tuple[int, int]]]:
        grouped: Dict[int, List[Tuple[int, int]]] = {}
        for t, t_next in self.intervals():
            grouped.setdefault(self.epoch_of(t), []).append((t, t_next))
        return grouped


class CommitmentEntry(BaseModel):
    """One append-only ledger line"""
    model_config = ConfigDict(frozen=True, from_attributes=True)

    proof_digest: bytes = Field(validation_alias=AliasChoices("proof_digest", "digest"))
    timestamp: int = Field(ge=0, description="Unix seconds")
    label: str = Field(default="", max_length=512)

    @field_validator("proof_digest", mode="before")
    @classmethod
    def validate_digest(cls, v) -> bytes:
        if isinstance(v, str):
            v = bytes.fromhex(v)
        if len(v) != 32:
            raise ValueError("proof digest must be 32 bytes")
        return v

    @field_validator("label")
    @classmethod
    def validate_label(cls, v: str) -> str:
        if "\t" in v or "\n" in v:
            raise ValueError("labels cannot contain tabs or newlines")
        return v

    @field_serializer("proof_digest")
    def serialize_digest(self, digest: bytes) -> str:
        return digest.hex()

    def to_line(self) -> str:
        return f"{self.proof_digest.hex()}\t{self.timestamp}\t{self.label}"

    @classmethod
    def from_line(cls, line: str) -> "CommitmentEntry":
        digest, timestamp, label = line.rstrip("\n").split("\t", 2)
        return cls(proof_digest=digest, timestamp=int(timestamp), label=label)
