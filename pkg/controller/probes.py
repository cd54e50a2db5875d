import logging
from typing import Dict, List, Optional

import numpy as np

from controller.stats import fd_histogram
from controller.tinytrain import (
    backward,
    forward,
    init_model,
    make_batch,
    predict,
    second_order_input_gradient,
    train,
)
from errors import ConfigurationError, ShapeError
from model.attack import ProbeId, ProbeResult
from model.ledger import CostLedger
from model.tinytrain import Batch, Dataset, ModelState, NoiseModel, TrainConfig

logger = logging.getLogger(__name__)


def min_max_normalize(values: List[float]) -> List[float]:
    """Rescale to [0, 1]; a constant curve maps to zeros."""
    if not values:
        return []
    arr = np.asarray(values, dtype=np.float64)
    low, high = float(arr.min()), float(arr.max())
    if high == low:
        return [0.0] * len(values)
    return ((arr - low) / (high - low)).tolist()


def oracle_labeled(victim: ModelState, dataset: Dataset, ledger: Optional[CostLedger] = None) -> Dataset:
    """``dataset`` with every label replaced by the victim's prediction."""
    ledger = ledger if ledger is not None else CostLedger()
    labels = predict(victim, dataset.features, ledger)
    return Dataset(features=dataset.features, labels=labels, n_classes=dataset.n_classes)


def pretrain_adversary(victim: ModelState, dataset: Dataset, config: TrainConfig, epochs: int) -> ModelState:
    """The adversary after ``epochs`` of noiseless SGD on victim-labeled rows.

    Starts from the initialization ``config.seed`` gives; 0 epochs returns it untouched.
    """
    if epochs < 0:
        raise ConfigurationError(f"pretraining epochs must be nonnegative, got {epochs}")
    arch = config.architecture(dataset.dim, dataset.n_classes)
    if arch != victim.arch:
        raise ShapeError("adversary and victim must share an architecture")
    if epochs == 0:
        return init_model(arch, config.seed, config.init_scale)
    config = config.model_copy(update={"epochs": epochs, "noise": NoiseModel()})
    return train(config, oracle_labeled(victim, dataset)).final


def data_ordering_probe(
        target: ModelState,
        current: ModelState,
        dataset: Dataset,
        lr: float,
        ledger: Optional[CostLedger] = None,
) -> ProbeResult:
    """How much a single-row SGD step from ``current`` moves toward W_T, for every row.

    delta_i = ||W_T - W|| - ||W_T - (W - lr * grad L_i(W))||; positive means
    the step helps.
    """
    if target.arch != current.arch:
        raise ShapeError("probe needs the victim and the current model to share an architecture")
    ledger = ledger if ledger is not None else CostLedger()
    base = float(np.linalg.norm(target.weights - current.weights))
    deltas = []
    for i in range(len(dataset)):
        grad = backward(current, make_batch(dataset, [i]), ledger)
        stepped = current.weights - lr * grad
        deltas.append(base - float(np.linalg.norm(target.weights - stepped)))

    counts, edges = fd_histogram(deltas)
    positive = sum(d > 0 for d in deltas)
    logger.info(f"Data-ordering probe: {positive}/{len(deltas)} rows move toward the victim")
    return ProbeResult(
        probe_id=ProbeId.DATA_ORDERING,
        series={"delta_dist": deltas},
        params={
            "lr": lr,
            "base_distance": base,
            "fraction_positive": positive / len(deltas) if deltas else 0.0,
            "bin_edges": edges.tolist(),
            "bin_counts": counts.tolist(),
        },
        ledger=ledger,
    )


def synthesis_probe(
        target: ModelState,
        initial: ModelState,
        iters: int,
        data_lr: float,
        model_lr: float,
        rng: np.random.Generator,
        n_points: int = 32,
) -> ProbeResult:
    """Alternate synthetic-data steps toward W_T with SGD steps on that data.

    The data step descends ||W_T - (W - model_lr * grad L(W, X))||^2 in X
    through one unrolled SGD step; the model step trains W on X. Both
    curves are returned min-max normalized, with the raw values alongside.
    """
    if iters < 1:
        raise ConfigurationError(f"iters must be positive, got {iters}")
    if target.arch != initial.arch:
        raise ShapeError("probe needs the victim and the initial model to share an architecture")
    arch = target.arch
    ledger = CostLedger()
    features = rng.standard_normal((n_points, arch.input_dim))
    labels = rng.integers(arch.n_classes, size=n_points)
    model = initial
    curves: Dict[str, List[float]] = {"dist_loss": [], "train_loss": []}
    diverged = False

    for it in range(iters):
        batch = Batch(indices=np.arange(n_points), features=features, labels=labels)
        grad = backward(model, batch, ledger)
        residual = target.weights - (model.weights - model_lr * grad)
        dist_loss = float(residual @ residual)
        features = features - data_lr * 2.0 * model_lr * second_order_input_gradient(
            model, features, labels, residual, ledger)

        batch = Batch(indices=np.arange(n_points), features=features, labels=labels)
        train_loss = forward(model, batch, ledger)
        if not (np.isfinite(dist_loss) and np.isfinite(train_loss) and np.all(np.isfinite(features))):
            diverged = True
            logger.warning(f"Synthesis probe diverged at iteration {it}")
            break
        weights = model.weights - model_lr * backward(model, batch, ledger)
        if not np.all(np.isfinite(weights)):
            diverged = True
            logger.warning(f"Synthesis probe diverged at iteration {it}")
            break
        model = model.with_weights(weights)
        curves["dist_loss"].append(dist_loss)
        curves["train_loss"].append(train_loss)

    return ProbeResult(
        probe_id=ProbeId.SYNTHESIS,
        series={
            "dist_loss": min_max_normalize(curves["dist_loss"]),
            "train_loss": min_max_normalize(curves["train_loss"]),
            "dist_loss_raw": curves["dist_loss"],
            "train_loss_raw": curves["train_loss"],
        },
        params={"iters": iters, "data_lr": data_lr, "model_lr": model_lr, "n_points": n_points},
        diverged=diverged,
        ledger=ledger,
    )
