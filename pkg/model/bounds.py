import math
from enum import Enum
from typing import Dict, List, Optional

import numpy as np
from pydantic import BaseModel, Field, model_validator


class CostDistributionKind(str, Enum):
    LOGNORMAL = "lognormal"
    GAMMA = "gamma"
    POINT_MASS = "point-mass"
    EMPIRICAL = "empirical"


_REQUIRED_PARAMS = {
    CostDistributionKind.LOGNORMAL: ("mu", "sigma"),
    CostDistributionKind.GAMMA: ("shape", "scale"),
    CostDistributionKind.POINT_MASS: ("value",),
    CostDistributionKind.EMPIRICAL: (),
}


class CostDistributionSpec(BaseModel):
    """Distribution of the cost of producing one proof.

    ``params``: lognormal ``mu``/``sigma`` (of the underlying normal), gamma
    ``shape``/``scale``, point-mass ``value``; empirical uses ``samples``
    (at least two, e.g. measured ledgers).
    """
    kind: CostDistributionKind
    params: Dict[str, float] = Field(default_factory=dict)
    samples: Optional[List[float]] = None

    @model_validator(mode="after")
    def validate_params(self) -> "CostDistributionSpec":
        missing = [p for p in _REQUIRED_PARAMS[self.kind] if p not in self.params]
        if missing:
            raise ValueError(f"{self.kind.value} distribution needs params {missing}")
        if self.kind == CostDistributionKind.EMPIRICAL and (self.samples is None or len(self.samples) < 2):
            raise ValueError("empirical distribution needs at least 2 samples")
        if self.kind == CostDistributionKind.LOGNORMAL and self.params["sigma"] < 0:
            raise ValueError("lognormal sigma must be nonnegative")
        if self.kind == CostDistributionKind.GAMMA and (self.params["shape"] <= 0 or self.params["scale"] <= 0):
            raise ValueError("gamma shape and scale must be positive")
        return self

    @property
    def mean(self) -> float:
        if self.kind == CostDistributionKind.LOGNORMAL:
            return math.exp(self.params["mu"] + self.params["sigma"] ** 2 / 2)
        if self.kind == CostDistributionKind.GAMMA:
            return self.params["shape"] * self.params["scale"]
        if self.kind == CostDistributionKind.POINT_MASS:
            return self.params["value"]
        return float(np.mean(self.samples))

    @property
    def variance(self) -> float:
        if self.kind == CostDistributionKind.LOGNORMAL:
            mu, sigma = self.params["mu"], self.params["sigma"]
            return math.expm1(sigma ** 2) * math.exp(2 * mu + sigma ** 2)
        if self.kind == CostDistributionKind.GAMMA:
            return self.params["shape"] * self.params["scale"] ** 2
        if self.kind == CostDistributionKind.POINT_MASS:
            return 0.0
        return float(np.var(self.samples))

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.kind == CostDistributionKind.LOGNORMAL:
            return rng.lognormal(self.params["mu"], self.params["sigma"], size)
        if self.kind == CostDistributionKind.GAMMA:
            return rng.gamma(self.params["shape"], self.params["scale"], size)
        if self.kind == CostDistributionKind.POINT_MASS:
            return np.full(size, self.params["value"])
        return rng.choice(np.asarray(self.samples, dtype=np.float64), size=size, replace=True)


class StabilityBound(BaseModel):
    zeta: float
    a: float
    unbounded: bool = Field(default=False, description="zeta is not finite")


class QueryBound(BaseModel):
    p: float = Field(description="Markov bound on the chance one honest run is c-cheap")
    n: Optional[float] = Field(default=None, description="Lower bound on queries; inf when unbounded")
    vacuous: bool = Field(default=False, description="p >= 1, no information")
    unbounded: bool = Field(default=False)


class TailBlock(BaseModel):
    trial_block: int
    empirical_p: float
    bound_p: float


class TailValidation(BaseModel):
    empirical_p: float
    bound_p: float
    standard_error: float
    holds: bool
    trials: int
    blocks: List[TailBlock] = Field(default_factory=list)


class AngleValidation(BaseModel):
    theta: float
    alpha: float
    accepted: int
    violations: int
    max_angle: float
