from enum import Enum
from typing import List, Optional

import numpy as np
from pydantic import AliasChoices, BaseModel, ConfigDict, Field, field_serializer, field_validator, model_validator


class Activation(str, Enum):
    """Hidden-layer nonlinearity"""
    TANH = "tanh"
    RELU = "relu"


class OptimizerId(str, Enum):
    PLAIN_SGD = "plain-sgd"


class NoiseKind(str, Enum):
    """Simulated reproduction noise families"""
    NONE = "none"
    ISOTROPIC = "isotropic-gaussian"
    ANISOTROPIC = "anisotropic-along-update"


class Architecture(BaseModel):
    """Dense feed-forward network descriptor.

    Parameters are laid out layer by layer: the (fan_in x fan_out) weight
    matrix in row-major order, followed by the bias vector when enabled.
    """
    model_config = ConfigDict(frozen=True)

    layer_sizes: List[int] = Field(
        min_length=2,
        description="Input dim, hidden widths, class count",
        validation_alias=AliasChoices("layer_sizes", "layerSizes", "sizes"),
    )
    activation: Activation = Field(default=Activation.TANH)
    bias: bool = Field(default=True, description="Whether layers carry bias terms")

    @field_validator("layer_sizes")
    @classmethod
    def validate_layer_sizes(cls, v: List[int]) -> List[int]:
        if any(size < 1 for size in v):
            raise ValueError("layer sizes must be positive")
        return v

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_classes(self) -> int:
        return self.layer_sizes[-1]

    @property
    def parameter_count(self) -> int:
        return sum(
            fan_in * fan_out + (fan_out if self.bias else 0)
            for fan_in, fan_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:])
        )


class ModelState(BaseModel):
    """A point W_t in weight space together with the network it parameterizes."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    weights: np.ndarray = Field(description="Flat float64 weight vector")
    arch: Architecture

    @field_validator("weights", mode="before")
    @classmethod
    def validate_weights(cls, v) -> np.ndarray:
        weights = np.array(v, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(weights)):
            raise ValueError("weights must be finite")
        weights.setflags(write=False)
        return weights

    @model_validator(mode="after")
    def validate_length(self) -> "ModelState":
        if self.weights.shape[0] != self.arch.parameter_count:
            raise ValueError(
                f"weights length {self.weights.shape[0]} != parameter count {self.arch.parameter_count}")
        return self

    @field_serializer("weights")
    def serialize_weights(self, weights: np.ndarray) -> List[float]:
        return weights.tolist()

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    def with_weights(self, weights: np.ndarray) -> "ModelState":
        return ModelState(weights=weights, arch=self.arch)


class StepMetadata(BaseModel):
    """Hyperparameters logged with every training step"""
    model_config = ConfigDict(frozen=True)

    learning_rate: float = Field(
        gt=0,
        validation_alias=AliasChoices("learning_rate", "lr", "eta"),
    )
    batch_size: int = Field(ge=1)
    optimizer_id: OptimizerId = Field(default=OptimizerId.PLAIN_SGD)
    seed: int = Field(default=0, ge=-(2 ** 63), lt=2 ** 63)
    step_index: int = Field(default=0, ge=0)


class NoiseModel(BaseModel):
    """Reproduction noise injected after every SGD step.

    With ``relative`` the per-coordinate standard deviation is
    ``scale * ||update|| / sqrt(n)`` so the expected noise norm is about
    ``scale`` times the update norm; otherwise it is ``scale``.
    """
    model_config = ConfigDict(frozen=True)

    kind: NoiseKind = Field(default=NoiseKind.NONE)
    scale: float = Field(default=0.0, ge=0)
    anisotropy_ratio: float = Field(
        default=1.0,
        gt=0,
        le=1,
        description="Variance along the update direction over orthogonal variance",
        validation_alias=AliasChoices("anisotropy_ratio", "ratio", "anisotropyRatio"),
    )
    relative: bool = Field(default=True)

    @property
    def is_silent(self) -> bool:
        return self.kind == NoiseKind.NONE or self.scale == 0.0


class DatasetSpec(BaseModel):
    """Gaussian-blob classification set.

    Bounds are checked by ``gen_dataset`` so that bad specs surface as
    configuration errors rather than validation errors.
    """
    classes: int = 3
    points_per_class: int = Field(
        default=100,
        validation_alias=AliasChoices("points_per_class", "pointsPerClass", "points"),
    )
    dim: int = 2
    spread: float = Field(default=1.0, description="Per-blob standard deviation")
    separation: float = Field(default=3.0, description="Radius of the blob-center circle")
    seed: int = 0


class Dataset(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    features: np.ndarray
    labels: np.ndarray
    n_classes: int

    @field_validator("features", mode="before")
    @classmethod
    def validate_features(cls, v) -> np.ndarray:
        features = np.array(v, dtype=np.float64)
        if features.ndim != 2:
            raise ValueError("features must be a matrix")
        features.setflags(write=False)
        return features

    @field_validator("labels", mode="before")
    @classmethod
    def validate_labels(cls, v) -> np.ndarray:
        labels = np.array(v, dtype=np.int64).reshape(-1)
        labels.setflags(write=False)
        return labels

    @model_validator(mode="after")
    def validate_rows(self) -> "Dataset":
        if self.features.shape[0] != self.labels.shape[0]:
            raise ValueError("features and labels must have the same row count")
        return self

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def dim(self) -> int:
        return int(self.features.shape[1])


class Batch(BaseModel):
    """Rows D_t used by one SGD step, addressed by dataset row ids"""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    indices: np.ndarray
    features: np.ndarray
    labels: np.ndarray

    @field_validator("indices", "labels", mode="before")
    @classmethod
    def validate_integer_vectors(cls, v) -> np.ndarray:
        return np.array(v, dtype=np.int64).reshape(-1)

    @field_validator("features", mode="before")
    @classmethod
    def validate_features(cls, v) -> np.ndarray:
        features = np.array(v, dtype=np.float64)
        if features.ndim != 2:
            raise ValueError("features must be a (batch x input-dim) matrix")
        return features

    @model_validator(mode="after")
    def validate_lengths(self) -> "Batch":
        if not (self.indices.shape[0] == self.features.shape[0] == self.labels.shape[0]):
            raise ValueError("indices, features and labels must share their leading length")
        return self

    def __len__(self) -> int:
        return int(self.indices.shape[0])


class TrainConfig(BaseModel):
    """Honest training run parameters"""
    epochs: int = Field(default=20, ge=1)
    batch_size: int = Field(
        default=25,
        ge=1,
        validation_alias=AliasChoices("batch_size", "batchSize"),
    )
    lr: float = Field(
        default=0.1,
        gt=0,
        validation_alias=AliasChoices("lr", "learning_rate", "eta"),
    )
    lr_schedule: Optional[List[float]] = Field(
        default=None,
        description="Per-epoch learning rates; overrides lr when given",
    )
    seed: int = Field(default=0, description="Weight initialization seed")
    sampling_seed: Optional[int] = Field(
        default=None,
        description="Batch-order seed; defaults to seed",
    )
    noise_seed: Optional[int] = Field(default=None, description="Prover noise seed; defaults to seed")
    hidden: List[int] = Field(default_factory=lambda: [32])
    activation: Activation = Field(default=Activation.TANH)
    k: int = Field(default=5, ge=1, description="Checkpoint interval")
    init_scale: float = Field(default=1.0, gt=0)
    noise: NoiseModel = Field(default_factory=NoiseModel)

    @field_validator("lr_schedule")
    @classmethod
    def validate_schedule(cls, v: Optional[List[float]]) -> Optional[List[float]]:
        if v is not None and any(lr <= 0 for lr in v):
            raise ValueError("learning rates must be positive")
        return v

    def lr_for_epoch(self, epoch: int) -> float:
        if self.lr_schedule:
            return self.lr_schedule[min(epoch, len(self.lr_schedule) - 1)]
        return self.lr

    def architecture(self, input_dim: int, n_classes: int) -> Architecture:
        return Architecture(
            layer_sizes=[input_dim, *self.hidden, n_classes],
            activation=self.activation,
        )
