import logging
from concurrent.futures import ThreadPoolExecutor
from itertools import combinations
from typing import Dict, List, Optional, Protocol, Sequence, Tuple, Union

import numpy as np

from controller.proofchain import DatasetProvider, fetch_and_check_batch
from controller.tinytrain import train, update_k
from errors import (
    AvailabilityError,
    CommitmentViolation,
    ConfigurationError,
    ProofStructureError,
    ShapeError,
)
from model.ledger import CostLedger
from model.proof import Proof
from model.tinytrain import Batch, Dataset, ModelState, NoiseModel, TrainConfig
from model.verification import (
    AdaptiveThreshold,
    Decision,
    IssueKind,
    Metric,
    Overall,
    PerStepThreshold,
    ReferenceDistance,
    StaticThreshold,
    StepIssue,
    StepVerdict,
    VerificationPolicy,
    VerificationReport,
)

logger = logging.getLogger(__name__)

Vector = Union[ModelState, np.ndarray]


def _as_vector(x: Vector) -> np.ndarray:
    return x.weights if isinstance(x, ModelState) else np.asarray(x, dtype=np.float64)


def norm(metric: Metric, g: np.ndarray) -> float:
    """Update magnitude under ``metric``; cosine distance measures magnitudes in l2."""
    if metric == Metric.L1:
        return float(np.abs(g).sum())
    if metric == Metric.LINF:
        return float(np.abs(g).max()) if g.size else 0.0
    return float(np.linalg.norm(g))


def distance(metric: Metric, a: Vector, b: Vector) -> float:
    if isinstance(a, ModelState) and isinstance(b, ModelState) and a.arch != b.arch:
        raise ShapeError("distance between different architectures")
    x, y = _as_vector(a), _as_vector(b)
    if x.shape != y.shape:
        raise ShapeError(f"distance between vectors of shapes {x.shape} and {y.shape}")
    if metric == Metric.COSINE:
        nx, ny = float(np.linalg.norm(x)), float(np.linalg.norm(y))
        if nx == 0.0 and ny == 0.0:
            return 0.0
        if nx == 0.0 or ny == 0.0:
            return 1.0
        return float(1.0 - np.clip((x @ y) / (nx * ny), -1.0, 1.0))
    return norm(metric, x - y)


def _checkpoint_successor(proof: Proof, t: int) -> int:
    steps = proof.checkpoint_steps()
    if t not in steps or t == proof.T:
        raise ProofStructureError(f"step {t} does not start a checkpoint interval", step=t)
    return steps[steps.index(t) + 1]


def _replay_rng(policy: VerificationPolicy, t: int) -> np.random.Generator:
    return np.random.default_rng([policy.noise_seed, t])


def reproduce_update(
        proof: Proof,
        t: int,
        provider: DatasetProvider,
        policy: VerificationPolicy,
        ledger: CostLedger,
        rng: Optional[np.random.Generator] = None,
) -> ModelState:
    """Replay the steps from checkpoint t to the next checkpoint with logged data and metadata.

    Every batch is fetched and checked against its commitment before any
    gradient is computed.
    """
    t_next = _checkpoint_successor(proof, t)
    steps = range(t, t_next)
    batches = [fetch_and_check_batch(proof, step, provider) for step in steps]
    metas = [proof.record(step).metadata for step in steps]
    rng = rng if rng is not None else _replay_rng(policy, t)
    return update_k(proof.checkpoint(t), batches, metas, t_next - t, policy.noise, rng, ledger)


def verify_step(
        step: int,
        dist: float,
        norm_g: float,
        norm_gp: float,
        policy: VerificationPolicy,
        delta_t: Optional[float] = None,
) -> StepVerdict:
    """Judge one reproduced update; every threshold comparison is strict."""
    threshold = policy.threshold
    if isinstance(threshold, StaticThreshold):
        if threshold.delta <= 0:
            raise ConfigurationError(f"static threshold must be positive, got {threshold.delta}")
        used = threshold.delta
    elif isinstance(threshold, AdaptiveThreshold):
        if threshold.alpha <= 0:
            raise ConfigurationError(f"adaptive alpha must be positive, got {threshold.alpha}")
        if policy.metric == Metric.COSINE:
            raise ConfigurationError("adaptive thresholds need a norm metric, not cosine distance")
        used = threshold.alpha * min(norm_g, norm_gp)
    else:
        if delta_t is None:
            raise ConfigurationError(f"per-step threshold missing for step {step}")
        if delta_t <= 0:
            raise ConfigurationError(f"per-step threshold must be positive, got {delta_t} at step {step}")
        used = delta_t
    return StepVerdict(
        step=step,
        proof_update_norm=norm_g,
        reproduced_update_norm=norm_gp,
        distance=dist,
        threshold_used=used,
        decision=Decision.ACCEPT if dist < used else Decision.REJECT,
    )


def update_norms(proof: Proof, metric: Metric = Metric.L2) -> Dict[int, float]:
    """||g_t|| for every checkpoint interval, keyed by its starting step."""
    return {
        t: norm(metric, proof.checkpoint(t_next).weights - proof.checkpoint(t).weights)
        for t, t_next in proof.intervals()
    }


def select_top_q(proof: Proof, epoch: int, q: int, metric: Metric = Metric.L2) -> List[int]:
    """The q checkpoint steps of ``epoch`` with the largest updates, ties to the lower step.

    Returned in ascending step order.
    """
    grouped = proof.intervals_by_epoch()
    if epoch not in grouped:
        raise ConfigurationError(f"epoch {epoch} is outside the proof's {proof.n_epochs} epochs")
    if q < 1:
        raise ConfigurationError(f"Q must be at least 1, got {q}")
    intervals = grouped[epoch]
    if q > len(intervals):
        raise ConfigurationError(f"Q={q} exceeds the {len(intervals)} updates of epoch {epoch}")
    metric = Metric.L2 if metric == Metric.COSINE else metric
    ranked = sorted(
        intervals,
        key=lambda pair: (-norm(metric, proof.checkpoint(pair[1]).weights - proof.checkpoint(pair[0]).weights),
                          pair[0]),
    )
    return sorted(t for t, _ in ranked[:q])


def _steps_to_verify(proof: Proof, policy: VerificationPolicy) -> List[int]:
    if policy.q == 0:
        return [t for t, _ in proof.intervals()]
    steps = []
    for epoch, intervals in sorted(proof.intervals_by_epoch().items()):
        # a short final epoch may hold fewer than Q updates
        steps.extend(select_top_q(proof, epoch, min(policy.q, len(intervals)), policy.metric))
    return steps


def _verify_checkpoint(
        proof: Proof,
        t: int,
        policy: VerificationPolicy,
        provider: DatasetProvider,
        delta_t: Optional[float],
) -> Tuple[Optional[StepVerdict], Optional[StepIssue], CostLedger]:
    ledger = CostLedger()
    try:
        reproduced = reproduce_update(proof, t, provider, policy, ledger)
    except CommitmentViolation as e:
        return None, StepIssue(step=t, data_step=e.step, kind=IssueKind.COMMITMENT, message=e.message), ledger
    except AvailabilityError as e:
        logger.warning(f"Data unavailable for checkpoint {t}: {e.message}")
        return None, StepIssue(step=t, data_step=e.step, kind=IssueKind.AVAILABILITY, message=e.message), ledger

    start = proof.checkpoint(t).weights
    logged = proof.checkpoint(_checkpoint_successor(proof, t))
    verdict = verify_step(
        step=t,
        dist=distance(policy.metric, logged, reproduced),
        norm_g=norm(policy.metric, logged.weights - start),
        norm_gp=norm(policy.metric, reproduced.weights - start),
        policy=policy,
        delta_t=delta_t,
    )
    return verdict, None, ledger


def verify(
        proof: Proof,
        policy: VerificationPolicy,
        provider: DatasetProvider,
        rd: Optional[float] = None,
        workers: int = 1,
) -> VerificationReport:
    """Replay all checkpoint updates (Q=0) or the per-epoch top-Q subset.

    Commitment and availability failures are recorded per checkpoint and
    make the proof INVALID.
    """
    if policy.k is not None and policy.k != proof.k:
        raise ConfigurationError(f"policy expects k={policy.k} but the proof uses k={proof.k}")
    steps = _steps_to_verify(proof, policy)
    deltas: List[Optional[float]] = [None] * len(steps)
    if isinstance(policy.threshold, PerStepThreshold):
        if len(policy.threshold.deltas) != len(steps):
            raise ConfigurationError(
                f"{len(policy.threshold.deltas)} per-step thresholds for {len(steps)} verified checkpoints")
        deltas = list(policy.threshold.deltas)

    def job(args: Tuple[int, Optional[float]]):
        return _verify_checkpoint(proof, args[0], policy, provider, args[1])

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(job, zip(steps, deltas)))
    else:
        outcomes = [job(args) for args in zip(steps, deltas)]

    ledger = CostLedger()
    verdicts: List[StepVerdict] = []
    issues: List[StepIssue] = []
    for verdict, issue, step_ledger in outcomes:
        ledger = ledger.merge(step_ledger)
        if verdict is not None:
            verdicts.append(verdict)
        if issue is not None:
            issues.append(issue)

    normalized = None
    if rd is not None and rd > 0:
        normalized = [v.distance / rd for v in verdicts]
    valid = not issues and all(v.decision == Decision.ACCEPT for v in verdicts)
    report = VerificationReport(
        verdicts=verdicts,
        normalized_errors=normalized,
        overall=Overall.VALID if valid else Overall.INVALID,
        ledger=ledger,
        issues=issues,
        rd=rd,
        initial_final_distance=distance(policy.metric, proof.initial, proof.final),
    )
    logger.info(
        f"Verified {len(verdicts)} checkpoints: {report.overall.value}, "
        f"{len(report.rejected_steps)} rejected, {len(issues)} issues, {ledger.fp_units:.0f} FP")
    return report


def reference_distance(
        config: TrainConfig,
        dataset: Dataset,
        trials: int,
        rng: np.random.Generator,
        vary_sampling: bool = False,
        metric: Metric = Metric.L2,
) -> ReferenceDistance:
    """Mean pairwise final-weight distance over reruns that differ only in stochasticity.

    Every rerun draws a fresh noise seed; with ``vary_sampling`` it also draws
    a fresh batch-order seed. The initialization is shared.
    """
    if trials < 2:
        raise ConfigurationError(f"reference distance needs at least 2 trials, got {trials}")
    finals = []
    for _ in range(trials):
        update = {"noise_seed": int(rng.integers(2 ** 62))}
        if vary_sampling:
            update["sampling_seed"] = int(rng.integers(2 ** 62))
        finals.append(train(config.model_copy(update=update), dataset).final)
    pairwise = [distance(metric, a, b) for a, b in combinations(finals, 2)]
    rd = float(np.mean(pairwise))
    if rd == 0.0:
        logger.warning("Reference distance is 0; normalized reproduction errors are undefined")
    return ReferenceDistance(rd=rd, trials=trials, degenerate=rd == 0.0, pairwise=pairwise)


class UpdateSampler(Protocol):
    def sample(self, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
        """One (g, g') pair: a logged update and a noisy reproduction of it."""


class GaussianUpdateSampler:
    """Fixed update g reproduced with isotropic per-coordinate Gaussian noise."""

    def __init__(self, g: np.ndarray, sigma: float):
        self.g = np.asarray(g, dtype=np.float64)
        self.sigma = sigma

    def sample(self, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
        return self.g, self.g + self.sigma * rng.standard_normal(self.g.shape[0])

    def sample_many(self, rng: np.random.Generator, count: int) -> Tuple[np.ndarray, np.ndarray]:
        noisy = self.g + self.sigma * rng.standard_normal((count, self.g.shape[0]))
        return np.broadcast_to(self.g, noisy.shape), noisy


class HonestUpdateSampler:
    """Two independent noisy replays of a random checkpoint interval of an honest proof.

    Models the prover's and the verifier's reproduction noise together;
    replay cost accumulates in ``ledger``.
    """

    def __init__(self, proof: Proof, provider: DatasetProvider, noise: NoiseModel):
        self.proof = proof
        self.provider = provider
        self.noise = noise
        self.ledger = CostLedger()
        self._batches: Dict[int, List[Batch]] = {}

    def _interval(self, t: int, t_next: int) -> List[Batch]:
        if t not in self._batches:
            self._batches[t] = [fetch_and_check_batch(self.proof, s, self.provider) for s in range(t, t_next)]
        return self._batches[t]

    def sample(self, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
        intervals = self.proof.intervals()
        t, t_next = intervals[int(rng.integers(len(intervals)))]
        batches = self._interval(t, t_next)
        metas = [self.proof.record(s).metadata for s in range(t, t_next)]
        start = self.proof.checkpoint(t)
        first = update_k(start, batches, metas, t_next - t, self.noise, rng, self.ledger)
        second = update_k(start, batches, metas, t_next - t, self.noise, rng, self.ledger)
        return first.weights - start.weights, second.weights - start.weights


def sample_distances(sampler: UpdateSampler, metric: Metric, trials: int, rng: np.random.Generator) -> np.ndarray:
    """d(g, g') for ``trials`` sampler draws."""
    sample_many = getattr(sampler, "sample_many", None)
    if sample_many is not None and metric != Metric.COSINE:
        distances = []
        remaining = trials
        while remaining > 0:
            block = min(remaining, 10_000)
            g, gp = sample_many(rng, block)
            diff = g - gp
            if metric == Metric.L1:
                distances.append(np.abs(diff).sum(axis=1))
            elif metric == Metric.LINF:
                distances.append(np.abs(diff).max(axis=1))
            else:
                distances.append(np.linalg.norm(diff, axis=1))
            remaining -= block
        return np.concatenate(distances)
    return np.array([distance(metric, *sampler.sample(rng)) for _ in range(trials)])


def estimate_min_thresholds(
        update_sampler: UpdateSampler,
        metric: Metric,
        taus: Sequence[float],
        trials: int,
        rng: np.random.Generator,
) -> List[float]:
    """Empirical tau-quantiles of d(g, g') over one shared set of draws.

    Balls are centered at the observed update, not at the unobservable mean
    update.
    """
    for tau in taus:
        if not 0.0 < tau < 1.0:
            raise ConfigurationError(f"tau must lie in (0, 1), got {tau}")
    if trials < 1:
        raise ConfigurationError(f"trials must be positive, got {trials}")
    if trials < 1000:
        logger.warning(f"Estimating a threshold from only {trials} draws")
    distances = sample_distances(update_sampler, metric, trials, rng)
    return [float(np.quantile(distances, tau)) for tau in taus]


def estimate_min_threshold(
        update_sampler: UpdateSampler,
        metric: Metric,
        tau: float,
        trials: int,
        rng: Optional[np.random.Generator] = None,
) -> float:
    """delta-hat: the smallest threshold accepting a tau fraction of honest reproductions."""
    rng = rng if rng is not None else np.random.default_rng(0)
    return estimate_min_thresholds(update_sampler, metric, [tau], trials, rng)[0]
