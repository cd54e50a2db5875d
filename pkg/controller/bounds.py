"""Calculators for the cost of cheap spoofing and the adaptive threshold angle.

The cost bounds reason about a hypothetical algorithm whose expected cost is
below ``c`` times honest training; they take honest-cost distributions as
input and say nothing about any concrete spoof.
"""
import logging
import math

import numpy as np

from errors import ConfigurationError, DomainError
from model.bounds import (
    AngleValidation,
    CostDistributionSpec,
    QueryBound,
    StabilityBound,
    TailBlock,
    TailValidation,
)

logger = logging.getLogger(__name__)


def _check_c(c: float) -> None:
    if not 0.0 <= c < 1.0:
        raise DomainError(f"cheapness factor c must lie in [0, 1), got {c}", c=c)


def _check_mean(mean: float) -> None:
    if not mean > 0:
        raise DomainError(f"expected honest cost must be positive, got {mean}", mean=mean)


def stability_zeta(var_p: float, mean: float, c: float, var_f: float) -> StabilityBound:
    """zeta = var_p / (mean * (1 - c) + a)^2 with a = sqrt(3 * var_f)."""
    _check_c(c)
    _check_mean(mean)
    if var_p < 0 or var_f < 0:
        raise DomainError("variances must be nonnegative", var_p=var_p, var_f=var_f)
    a = math.sqrt(3.0 * var_f)
    denominator = (mean * (1.0 - c) + a) ** 2
    zeta = var_p / denominator if denominator > 0 else math.inf
    unbounded = not math.isfinite(zeta)
    if unbounded:
        logger.warning(f"Stability bound diverges for c={c}, var_f={var_f}")
    return StabilityBound(zeta=zeta, a=a, unbounded=unbounded)


def query_lower_bound(var: float, mean: float, c: float) -> QueryBound:
    """Honest-run queries needed before one is c-cheap with probability 2/3.

    N = ln(1/3) / ln(1 - P) with P = var / ((1 - c)^2 mean^2).
    """
    _check_c(c)
    _check_mean(mean)
    if var < 0:
        raise DomainError(f"variance must be nonnegative, got {var}", var=var)
    p = var / ((1.0 - c) ** 2 * mean ** 2)
    if p >= 1.0:
        return QueryBound(p=p, n=None, vacuous=True)
    if p == 0.0:
        return QueryBound(p=p, n=math.inf, unbounded=True)
    return QueryBound(p=p, n=math.log(1.0 / 3.0) / math.log1p(-p))


def mc_validate_tail(
        dist: CostDistributionSpec,
        c: float,
        trials: int,
        rng: np.random.Generator,
        blocks: int = 10,
) -> TailValidation:
    """Check P(C <= c * E) <= Var / ((1 - c)^2 E^2) on samples of ``dist``.

    Holds when the empirical frequency stays within three standard errors
    of the bound.
    """
    _check_c(c)
    mean = dist.mean
    _check_mean(mean)
    if trials < 10_000:
        raise ConfigurationError(f"tail validation needs at least 10^4 trials, got {trials}")
    if blocks < 1:
        raise ConfigurationError(f"blocks must be positive, got {blocks}")

    bound = dist.variance / ((1.0 - c) ** 2 * mean ** 2)
    sizes = [len(chunk) for chunk in np.array_split(np.arange(trials), blocks)]
    hits = 0
    rows = []
    for i, size in enumerate(sizes):
        block_hits = int(np.count_nonzero(dist.sample(rng, size) <= c * mean))
        hits += block_hits
        rows.append(TailBlock(trial_block=i, empirical_p=block_hits / size, bound_p=bound))

    empirical = hits / trials
    standard_error = math.sqrt(empirical * (1.0 - empirical) / trials)
    holds = empirical <= bound + 3.0 * standard_error
    if not holds:
        logger.warning(f"Tail bound violated for {dist.kind.value}: {empirical:.4g} > {bound:.4g}")
    return TailValidation(
        empirical_p=empirical,
        bound_p=bound,
        standard_error=standard_error,
        holds=holds,
        trials=trials,
        blocks=rows,
    )


def alpha_for_angle(theta: float) -> float:
    """Adaptive alpha bounding the angle between g and g' by theta."""
    if not 0.0 < theta < math.pi / 2:
        raise DomainError(
            f"theta={theta} is outside (0, pi/2); supply alpha directly for this regime", theta=theta)
    return math.sin(theta)


def angle_between(g: np.ndarray, g_prime: np.ndarray) -> np.ndarray:
    """Row-wise angle between two batches of vectors."""
    dots = np.einsum("ij,ij->i", g, g_prime)
    norms = np.linalg.norm(g, axis=1) * np.linalg.norm(g_prime, axis=1)
    return np.arccos(np.clip(dots / norms, -1.0, 1.0))


def mc_validate_angle(
        theta: float,
        trials: int,
        rng: np.random.Generator,
        dim: int = 16,
        tolerance: float = 1e-9,
) -> AngleValidation:
    """Draw pairs the adaptive rule with alpha = sin(theta) accepts and count angles above theta.

    Half of each block perturbs g orthogonally, which places the pairs
    near the widest angle the rule allows.
    """
    alpha = alpha_for_angle(theta)
    if trials < 1:
        raise ConfigurationError(f"trials must be positive, got {trials}")
    accepted = 0
    violations = 0
    max_angle = 0.0
    while accepted < trials:
        block = min(trials - accepted, 10_000) * 2
        g = rng.standard_normal((block, dim))
        direction = rng.standard_normal((block, dim))
        half = block // 2
        g_unit = g[:half] / np.linalg.norm(g[:half], axis=1, keepdims=True)
        direction[:half] -= np.einsum("ij,ij->i", direction[:half], g_unit)[:, None] * g_unit
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
        radius = rng.uniform(0.0, 1.0, block) * alpha * np.linalg.norm(g, axis=1)
        g_prime = g + radius[:, None] * direction

        gap = np.linalg.norm(g - g_prime, axis=1)
        smaller = np.minimum(np.linalg.norm(g, axis=1), np.linalg.norm(g_prime, axis=1))
        keep = gap < alpha * smaller
        keep[np.flatnonzero(keep)[trials - accepted:]] = False
        angles = angle_between(g[keep], g_prime[keep])
        accepted += int(keep.sum())
        violations += int(np.count_nonzero(angles > theta + tolerance))
        if angles.size:
            max_angle = max(max_angle, float(angles.max()))
    return AngleValidation(theta=theta, alpha=alpha, accepted=accepted, violations=violations, max_angle=max_angle)
