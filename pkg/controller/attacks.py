"""Spoofing strategies against proof-of-learning verification.

Every attack starts from the victim's final weights W_T and an arbitrary
starting point, builds a structurally valid proof ending in W_T, and pays
for it through an instrumented CostLedger.
"""
import logging
import math
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy import linalg

from controller.proofchain import assemble_proof
from controller.tinytrain import (
    backward,
    interpolate,
    make_batch,
    second_order_input_gradient,
    update_k,
)
from errors import AttackConstructionError, ConfigurationError, ShapeError
from model.attack import AttackId, RnaResult, SpoofResult
from model.ledger import CostLedger, OpKind
from model.tinytrain import Batch, Dataset, ModelState, NoiseModel, StepMetadata

logger = logging.getLogger(__name__)

INFINITESIMAL_LR = 1e-12
RIDGE = 1e-10

_SILENT = NoiseModel()


def _check_pair(target: ModelState, start: ModelState) -> None:
    if target.arch != start.arch:
        raise ShapeError("victim and starting weights have different architectures")


def _random_indices(dataset: Dataset, batch_size: int, rng: np.random.Generator) -> np.ndarray:
    size = min(batch_size, len(dataset))
    return np.sort(rng.choice(len(dataset), size=size, replace=False))


def _metadata(lr: float, batch_size: int, seed: int, step: int) -> StepMetadata:
    return StepMetadata(learning_rate=lr, batch_size=batch_size, seed=seed, step_index=step)


def minimal_checkpoints(target: ModelState, start: ModelState, delta: float, margin: float = 10.0) -> int:
    """Fewest checkpoint updates keeping every interpolation step within delta / margin."""
    if delta <= 0:
        raise ConfigurationError(f"delta must be positive, got {delta}")
    gap = float(np.linalg.norm(target.weights - start.weights))
    return max(1, math.ceil(margin * gap / delta))


def infinitesimal_attack(
        target: ModelState,
        start: ModelState,
        T: int,
        k: int,
        delta: float,
        dataset: Dataset,
        rng: np.random.Generator,
        margin: float = 10.0,
        batch_size: int = 25,
        steps_per_epoch: Optional[int] = None,
) -> SpoofResult:
    """Interpolate from ``start`` to W_T and claim each hop came from a near-zero learning rate.

    Batches are random rows committed like real data. The verifier's replay
    barely moves, and every hop is at most delta / margin long.
    """
    _check_pair(target, start)
    if k < 1 or T < 1:
        raise ConfigurationError(f"T and k must be positive, got T={T}, k={k}")
    n_checkpoints = math.ceil(T / k)
    needed = minimal_checkpoints(target, start, delta, margin)
    if n_checkpoints < needed:
        raise ConfigurationError(
            f"T={T} gives {n_checkpoints} checkpoints but spacing delta/{margin:g} needs {needed}; "
            f"use T >= {needed * k}",
            minimal_T=needed * k,
        )

    ledger = CostLedger()
    checkpoint_steps = list(range(0, T, k)) + [T]
    checkpoints = {0: start}
    for i, step in enumerate(checkpoint_steps[1:], start=1):
        checkpoints[step] = interpolate(start, target, i / n_checkpoints, ledger)

    seed = int(rng.integers(2 ** 62))
    batch_indices = [_random_indices(dataset, batch_size, rng) for _ in range(T)]
    metadata = [_metadata(INFINITESIMAL_LR, len(idx), seed, step) for step, idx in enumerate(batch_indices)]
    proof = assemble_proof(checkpoints, batch_indices, metadata, dataset, k, steps_per_epoch or T)
    logger.info(
        f"Infinitesimal spoof: {n_checkpoints} checkpoints, spacing "
        f"{np.linalg.norm(target.weights - start.weights) / n_checkpoints:.3g}, cost {ledger.fp_units:.0f} FP")
    return SpoofResult(
        proof=proof,
        ledger=ledger,
        attack_id=AttackId.INFINITESIMAL,
        target=target,
        params={"T": T, "k": k, "delta": delta, "margin": margin, "lr": INFINITESIMAL_LR,
                "n_checkpoints": n_checkpoints},
    )


def blindfold_topq_attack(
        target: ModelState,
        start: ModelState,
        q: int,
        k: int,
        s: int,
        lr_large: float,
        dataset: Dataset,
        rng: np.random.Generator,
        epochs: int = 2,
        batch_size: int = 25,
) -> SpoofResult:
    """Plant q genuine large-step updates per epoch and interpolate the rest.

    Each epoch holds ``s`` checkpoint updates of ``k`` steps. The planted
    updates start at the epoch's anchor, an interpolation between ``start``
    and W_T, and must dominate every interpolated update of their epoch so
    that a top-q verifier only ever replays them.
    """
    _check_pair(target, start)
    if k < 1 or epochs < 1:
        raise ConfigurationError(f"k and epochs must be positive, got k={k}, epochs={epochs}")
    if not 1 <= q < s:
        raise ConfigurationError(f"need 1 <= Q < s, got Q={q}, s={s}")
    if lr_large <= 0:
        raise ConfigurationError(f"large learning rate must be positive, got {lr_large}")

    ledger = CostLedger()
    seed = int(rng.integers(2 ** 62))
    steps_per_epoch = s * k
    T = epochs * steps_per_epoch
    checkpoints: Dict[int, ModelState] = {}
    batch_indices: List[np.ndarray] = []
    metadata: List[StepMetadata] = []

    anchor = start
    for epoch in range(epochs):
        base = epoch * steps_per_epoch
        next_anchor = target if epoch == epochs - 1 else interpolate(start, target, (epoch + 1) / epochs, ledger)
        current = anchor
        checkpoints[base] = current
        planted, interpolated = [], []
        for j in range(s):
            step = base + j * k
            indices = [_random_indices(dataset, batch_size, rng) for _ in range(k)]
            metas = [_metadata(lr_large, len(idx), seed, step + i) for i, idx in enumerate(indices)]
            batch_indices.extend(indices)
            metadata.extend(metas)
            if j < q:
                batches = [make_batch(dataset, idx) for idx in indices]
                following = update_k(current, batches, metas, k, _SILENT, rng, ledger)
                planted.append(float(np.linalg.norm(following.weights - current.weights)))
            else:
                remaining = s - j
                following = next_anchor if remaining == 1 else interpolate(
                    current, next_anchor, 1.0 / remaining, ledger)
                interpolated.append(float(np.linalg.norm(following.weights - current.weights)))
            checkpoints[step + k] = following
            current = following

        if min(planted) <= max(interpolated):
            raise AttackConstructionError(
                f"epoch {epoch}: smallest planted update {min(planted):.4g} does not dominate "
                f"largest interpolated update {max(interpolated):.4g}; raise the learning rate",
                epoch=epoch,
                min_planted=min(planted),
                max_interpolated=max(interpolated),
            )
        anchor = next_anchor

    proof = assemble_proof(checkpoints, batch_indices, metadata, dataset, k, steps_per_epoch)
    logger.info(
        f"Blindfold spoof: {epochs} epochs of {s} updates with {q} planted each, "
        f"{ledger.fp_units / (epochs * s):.3g} FP per checkpoint update")
    return SpoofResult(
        proof=proof,
        ledger=ledger,
        attack_id=AttackId.BLINDFOLD_TOPQ,
        target=target,
        params={"q": q, "k": k, "s": s, "lr_large": lr_large, "epochs": epochs},
    )


def _input_space_descent(
        model: ModelState,
        features: np.ndarray,
        labels: np.ndarray,
        n_iter: int,
        data_lr: float,
        ledger: CostLedger,
) -> np.ndarray:
    """Shrink ||dL/dW|| on a synthetic batch by gradient descent on its inputs."""
    batch_x = np.array(features, dtype=np.float64)
    for _ in range(n_iter):
        batch = Batch(indices=np.arange(labels.shape[0]), features=batch_x, labels=labels)
        grad = backward(model, batch, ledger)
        batch_x = batch_x - data_lr * 2.0 * second_order_input_gradient(model, batch_x, labels, grad, ledger)
        if not np.all(np.isfinite(batch_x)):
            raise AttackConstructionError("input-space descent diverged; lower the data learning rate")
    return batch_x


def interp_perturb_attack(
        target: ModelState,
        start: ModelState,
        k: int,
        delta: float,
        n_iter: int,
        dataset: Dataset,
        rng: np.random.Generator,
        n_checkpoints: int = 5,
        lr: float = 0.1,
        data_lr: float = 1.0,
        batch_size: int = 25,
) -> SpoofResult:
    """Interpolated checkpoints whose synthetic batches are perturbed toward zero gradient.

    Best effort: every checkpoint interval is replayed at the end, and a
    residual d(W_{t+k}, replay) of at least ``delta`` is recorded as a
    failure instead of raised.
    """
    _check_pair(target, start)
    if k < 1 or n_checkpoints < 1:
        raise ConfigurationError(f"k and n_checkpoints must be positive, got k={k}, n={n_checkpoints}")
    if n_iter < 1:
        raise ConfigurationError(f"n_iter must be positive, got {n_iter}")
    if delta <= 0:
        raise ConfigurationError(f"delta must be positive, got {delta}")

    arch = target.arch
    ledger = CostLedger()
    seed = int(rng.integers(2 ** 62))
    T = n_checkpoints * k
    size = min(batch_size, len(dataset))
    checkpoints = {0: start}
    for i in range(1, n_checkpoints + 1):
        checkpoints[i * k] = interpolate(start, target, i / n_checkpoints, ledger)

    rows: List[np.ndarray] = []
    labels: List[np.ndarray] = []
    metadata: List[StepMetadata] = []
    residuals: List[float] = []
    failures: List[int] = []
    for i in range(n_checkpoints):
        t, t_next = i * k, (i + 1) * k
        batches = []
        for j in range(k):
            state = interpolate(checkpoints[t], checkpoints[t_next], j / k, ledger)
            seed_rows = dataset.features[_random_indices(dataset, size, rng)]
            batch_labels = rng.integers(arch.n_classes, size=size)
            batch_x = _input_space_descent(state, seed_rows, batch_labels, n_iter, data_lr, ledger)
            offset = (t + j) * size
            batches.append(Batch(indices=np.arange(offset, offset + size), features=batch_x, labels=batch_labels))
            rows.append(batch_x)
            labels.append(batch_labels)
            metadata.append(_metadata(lr, size, seed, t + j))
        replay = update_k(checkpoints[t], batches, metadata[t:t_next], k, _SILENT, rng, ledger)
        residual = float(np.linalg.norm(checkpoints[t_next].weights - replay.weights))
        residuals.append(residual)
        if residual >= delta:
            failures.append(t)

    if failures:
        logger.warning(f"Interpolation-perturbation left {len(failures)}/{n_checkpoints} residuals above {delta:g}")
    synthetic = Dataset(features=np.concatenate(rows), labels=np.concatenate(labels), n_classes=arch.n_classes)
    batch_indices = [np.arange(step * size, (step + 1) * size) for step in range(T)]
    proof = assemble_proof(checkpoints, batch_indices, metadata, synthetic, k, T)
    return SpoofResult(
        proof=proof,
        ledger=ledger,
        attack_id=AttackId.INTERP_PERTURB,
        target=target,
        dataset=synthetic,
        params={"k": k, "delta": delta, "n_iter": n_iter, "n_checkpoints": n_checkpoints, "lr": lr,
                "residuals": residuals, "failed_steps": failures},
    )


def least_squares_coefficients(
        residual: np.ndarray,
        updates: np.ndarray,
        ledger: CostLedger,
) -> Tuple[np.ndarray, bool]:
    """argmin_c ||residual - c @ updates|| through the normal equations.

    ``updates`` holds one recorded update per row. Returns the coefficients
    and whether a ridge term was needed.
    """
    m = updates.shape[0]
    gram = updates @ updates.T
    rhs = updates @ residual
    ledger.record(OpKind.LSQ_SOLVE, m * (m + 1) // 2 + m)
    ridged = np.linalg.matrix_rank(gram) < m
    if not ridged:
        try:
            return linalg.cho_solve(linalg.cho_factor(gram), rhs), False
        except linalg.LinAlgError:
            ridged = True
    gram = gram + RIDGE * np.eye(m)
    return linalg.cho_solve(linalg.cho_factor(gram), rhs), ridged


def rna_attack(
        target: ModelState,
        start: ModelState,
        rounds: int,
        m: int,
        dataset: Dataset,
        lr: float,
        rng: np.random.Generator,
        batch_size: int = 25,
        fp_budget: Optional[float] = None,
        include_base: bool = True,
) -> RnaResult:
    """Steer toward W_T by least-squares combining honest updates recorded at each base.

    Each round runs m SGD steps from the base, then moves the base to the
    best combination ``base + sum(c_i * g_i)``; without ``include_base`` the
    candidate is ``sum(c_i * g_i)`` alone. A candidate farther from W_T than
    the base is discarded. Stops after ``rounds`` or before a round would
    exceed ``fp_budget``.
    """
    _check_pair(target, start)
    if rounds < 1 or m < 1:
        raise ConfigurationError(f"rounds and m must be positive, got rounds={rounds}, m={m}")
    if m > 32:
        raise ConfigurationError(f"at most 32 updates per round, got m={m}")

    ledger = CostLedger()
    seed = int(rng.integers(2 ** 62))
    round_cost = 3 * m + (m * (m + 1) // 2 + m) + m
    base = start
    distance_curve = [float(np.linalg.norm(target.weights - base.weights))]
    checkpoints = {0: base}
    batch_indices: List[np.ndarray] = []
    metadata: List[StepMetadata] = []
    ridge_rounds: List[int] = []

    for r in range(rounds):
        if fp_budget is not None and ledger.fp_units + round_cost > fp_budget:
            break
        step0 = r * m
        current = base
        updates = []
        for j in range(m):
            indices = _random_indices(dataset, batch_size, rng)
            meta = _metadata(lr, len(indices), seed, step0 + j)
            following = update_k(current, [make_batch(dataset, indices)], meta, 1, _SILENT, rng, ledger)
            updates.append(following.weights - current.weights)
            batch_indices.append(indices)
            metadata.append(meta)
            current = following
        updates = np.stack(updates)

        residual = target.weights - base.weights if include_base else target.weights
        coefficients, ridged = least_squares_coefficients(residual, updates, ledger)
        if ridged:
            ridge_rounds.append(r)
            logger.warning(f"RNA round {r}: rank-deficient Gram matrix, solved with ridge {RIDGE:g}")
        ledger.record(OpKind.WEIGHT_ADD, m)
        combined = coefficients @ updates
        candidate = base.with_weights(base.weights + combined if include_base else combined)
        candidate_distance = float(np.linalg.norm(target.weights - candidate.weights))
        if candidate_distance <= distance_curve[-1]:
            base = candidate
            distance_curve.append(candidate_distance)
        else:
            distance_curve.append(distance_curve[-1])
        checkpoints[step0 + m] = base

    if not batch_indices:
        raise AttackConstructionError(
            f"FP budget {fp_budget} is below the cost of one round ({round_cost} FP)", round_cost=round_cost)
    proof = assemble_proof(checkpoints, batch_indices, metadata, dataset, m, len(batch_indices))
    logger.info(
        f"RNA: {len(distance_curve) - 1} rounds, distance {distance_curve[0]:.4g} -> {distance_curve[-1]:.4g}, "
        f"cost {ledger.fp_units:.0f} FP")
    return RnaResult(
        proof=proof,
        ledger=ledger,
        distance_curve=distance_curve,
        ridge_rounds=ridge_rounds,
        params={"rounds": rounds, "m": m, "lr": lr, "fp_budget": fp_budget, "include_base": include_base},
    )
