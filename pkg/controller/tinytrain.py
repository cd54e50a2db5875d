import logging
import math
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from errors import ConfigurationError, DataReferenceError, ShapeError
from model.ledger import CostLedger, OpKind
from model.tinytrain import (
    Activation,
    Architecture,
    Batch,
    Dataset,
    DatasetSpec,
    ModelState,
    NoiseKind,
    NoiseModel,
    StepMetadata,
    TrainConfig,
)

logger = logging.getLogger(__name__)

# Step size used when differentiating input gradients along a weight direction.
_DIRECTIONAL_STEP = 1e-5


class TrainingRun(BaseModel):
    """Everything an honest prover logs while training."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    trajectory: List[ModelState] = Field(description="W_0 .. W_T, one entry per step")
    ledger: CostLedger
    batch_indices: List[np.ndarray] = Field(description="Row ids used at steps 0 .. T-1")
    metadata: List[StepMetadata]
    steps_per_epoch: int

    @property
    def final(self) -> ModelState:
        return self.trajectory[-1]

    @property
    def steps(self) -> int:
        return len(self.batch_indices)


def gen_dataset(seed: int, spec: DatasetSpec) -> Dataset:
    """Labeled Gaussian blobs with centers evenly spaced on a circle."""
    if spec.classes < 2:
        raise ConfigurationError(f"dataset needs at least 2 classes, got {spec.classes}")
    if spec.points_per_class < 1:
        raise ConfigurationError(f"dataset needs at least 1 point per class, got {spec.points_per_class}")
    if spec.dim < 2:
        raise ConfigurationError(f"dataset input dim must be at least 2, got {spec.dim}")
    if spec.spread < 0:
        raise ConfigurationError("blob spread must be nonnegative")

    rng = np.random.default_rng(seed)
    angles = 2.0 * np.pi * np.arange(spec.classes) / spec.classes
    centers = np.zeros((spec.classes, spec.dim))
    centers[:, 0] = spec.separation * np.cos(angles)
    centers[:, 1] = spec.separation * np.sin(angles)

    labels = np.repeat(np.arange(spec.classes), spec.points_per_class)
    features = centers[labels] + spec.spread * rng.standard_normal((labels.shape[0], spec.dim))
    order = rng.permutation(labels.shape[0])
    return Dataset(features=features[order], labels=labels[order], n_classes=spec.classes)


def make_batch(dataset: Dataset, indices: Sequence[int]) -> Batch:
    """Materialize the rows ``indices`` of ``dataset``."""
    idx = np.asarray(indices, dtype=np.int64).reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= len(dataset)):
        bad = idx[(idx < 0) | (idx >= len(dataset))]
        raise DataReferenceError(
            f"row ids {bad.tolist()[:5]} outside dataset of {len(dataset)} rows",
            rows=len(dataset),
        )
    return Batch(indices=idx, features=dataset.features[idx], labels=dataset.labels[idx])


def init_model(arch: Architecture, seed: int, scale: float = 1.0) -> ModelState:
    """Gaussian fan-in scaled weights, zero biases."""
    rng = np.random.default_rng(seed)
    parts = []
    for fan_in, fan_out in zip(arch.layer_sizes[:-1], arch.layer_sizes[1:]):
        parts.append(rng.standard_normal(fan_in * fan_out) * scale / math.sqrt(fan_in))
        if arch.bias:
            parts.append(np.zeros(fan_out))
    return ModelState(weights=np.concatenate(parts), arch=arch)


def _layers(arch: Architecture, weights: np.ndarray) -> List[Tuple[np.ndarray, Optional[np.ndarray]]]:
    layers = []
    offset = 0
    for fan_in, fan_out in zip(arch.layer_sizes[:-1], arch.layer_sizes[1:]):
        W = weights[offset:offset + fan_in * fan_out].reshape(fan_in, fan_out)
        offset += fan_in * fan_out
        b = None
        if arch.bias:
            b = weights[offset:offset + fan_out]
            offset += fan_out
        layers.append((W, b))
    return layers


def _activate(activation: Activation, h: np.ndarray) -> np.ndarray:
    if activation == Activation.TANH:
        return np.tanh(h)
    return np.maximum(h, 0.0)


def _activation_slope(activation: Activation, h: np.ndarray, a: np.ndarray) -> np.ndarray:
    if activation == Activation.TANH:
        return 1.0 - a * a
    return (h > 0.0).astype(np.float64)


def _check_inputs(arch: Architecture, features: np.ndarray, labels: np.ndarray) -> None:
    if features.ndim != 2 or features.shape[0] == 0:
        raise ShapeError("batch must hold at least one row")
    if features.shape[1] != arch.input_dim:
        raise ShapeError(
            f"batch feature dim {features.shape[1]} != architecture input dim {arch.input_dim}")
    if labels.shape[0] != features.shape[0]:
        raise ShapeError("labels and features disagree on batch length")
    if labels.min() < 0 or labels.max() >= arch.n_classes:
        raise ShapeError(f"labels must lie in [0, {arch.n_classes})")


def loss_and_grads(
        arch: Architecture,
        weights: np.ndarray,
        features: np.ndarray,
        labels: np.ndarray,
        need_grad: bool = True,
        need_input_grad: bool = False,
) -> Tuple[float, Optional[np.ndarray], Optional[np.ndarray]]:
    """Mean cross-entropy, its weight gradient and its input gradient.

    Uninstrumented; the public ``forward``/``backward`` wrappers charge the
    ledger.
    """
    _check_inputs(arch, features, labels)
    layers = _layers(arch, weights)
    activations = [features]
    pre_activations = []
    a = features
    for i, (W, b) in enumerate(layers):
        h = a @ W
        if b is not None:
            h = h + b
        if i < len(layers) - 1:
            pre_activations.append(h)
            a = _activate(arch.activation, h)
            activations.append(a)
        else:
            logits = h

    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(labels.shape[0])
    loss = float(np.mean(log_norm - shifted[rows, labels]))
    if not need_grad and not need_input_grad:
        return loss, None, None

    probs = np.exp(shifted - log_norm[:, None])
    dz = probs
    dz[rows, labels] -= 1.0
    dz /= labels.shape[0]

    grads = []
    for i in range(len(layers) - 1, -1, -1):
        W, b = layers[i]
        a_prev = activations[i]
        grad_b = dz.sum(axis=0) if b is not None else None
        grads.append((a_prev.T @ dz, grad_b))
        if i > 0 or need_input_grad:
            da = dz @ W.T
            if i > 0:
                dz = da * _activation_slope(arch.activation, pre_activations[i - 1], a_prev)
    input_grad = da if need_input_grad else None

    flat = []
    for grad_W, grad_b in reversed(grads):
        flat.append(grad_W.reshape(-1))
        if grad_b is not None:
            flat.append(grad_b)
    return loss, np.concatenate(flat), input_grad


def forward(model: ModelState, batch: Batch, ledger: CostLedger) -> float:
    """Mean cross-entropy of ``model`` on ``batch`` (1 FP)."""
    loss, _, _ = loss_and_grads(model.arch, model.weights, batch.features, batch.labels, need_grad=False)
    ledger.record(OpKind.FORWARD)
    return loss


def predict(model: ModelState, features: np.ndarray, ledger: CostLedger) -> np.ndarray:
    """Arg-max class of every row (1 FP)."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != model.arch.input_dim:
        raise ShapeError(f"features must be a matrix with {model.arch.input_dim} columns")
    layers = _layers(model.arch, model.weights)
    a = features
    for i, (W, b) in enumerate(layers):
        a = a @ W if b is None else a @ W + b
        if i < len(layers) - 1:
            a = _activate(model.arch.activation, a)
    ledger.record(OpKind.FORWARD)
    return np.argmax(a, axis=1)


def backward(model: ModelState, batch: Batch, ledger: CostLedger) -> np.ndarray:
    """Gradient of the mean loss w.r.t. the flat weights (1 forward + 1 backward = 3 FP)."""
    _, grad, _ = loss_and_grads(model.arch, model.weights, batch.features, batch.labels)
    ledger.record(OpKind.FORWARD)
    ledger.record(OpKind.BACKWARD)
    return grad


def second_order_input_gradient(
        model: ModelState,
        features: np.ndarray,
        labels: np.ndarray,
        direction: np.ndarray,
        ledger: CostLedger,
) -> np.ndarray:
    """Gradient w.r.t. the inputs of ``direction . dL/dW``.

    Evaluated as a central difference of input gradients along
    ``direction``; charged as one input-grad operation, with the two
    input-gradient passes it runs recorded alongside.
    """
    norm = float(np.linalg.norm(direction))
    ledger.record(OpKind.INPUT_GRAD)
    if norm == 0.0:
        return np.zeros_like(features)
    unit = direction / norm
    step = _DIRECTIONAL_STEP
    _, _, plus = loss_and_grads(
        model.arch, model.weights + step * unit, features, labels, need_grad=False, need_input_grad=True)
    _, _, minus = loss_and_grads(
        model.arch, model.weights - step * unit, features, labels, need_grad=False, need_input_grad=True)
    ledger.record(OpKind.INPUT_GRAD_PASS, 2)
    return norm * (plus - minus) / (2.0 * step)


def draw_noise(update: np.ndarray, noise: NoiseModel, rng: np.random.Generator) -> Optional[np.ndarray]:
    """One reproduction-noise draw for an SGD update, or None when silent."""
    if noise.is_silent:
        return None
    n = update.shape[0]
    update_norm = float(np.linalg.norm(update))
    std = noise.scale * update_norm / math.sqrt(n) if noise.relative else noise.scale
    draw = std * rng.standard_normal(n)
    if noise.kind == NoiseKind.ANISOTROPIC and update_norm > 0.0:
        unit = update / update_norm
        draw += (math.sqrt(noise.anisotropy_ratio) - 1.0) * float(draw @ unit) * unit
    return draw


def update_k(
        model: ModelState,
        batches: Sequence[Batch],
        meta: Union[StepMetadata, Sequence[StepMetadata]],
        k: int,
        noise: NoiseModel,
        rng: np.random.Generator,
        ledger: CostLedger,
) -> ModelState:
    """Apply k plain-SGD steps, injecting one noise draw after each step.

    ``meta`` is either shared by all steps or given per step.
    """
    if k <= 0:
        raise ConfigurationError(f"k must be positive, got {k}")
    if len(batches) != k:
        raise ConfigurationError(f"update_k needs exactly k={k} batches, got {len(batches)}")
    metas = [meta] * k if isinstance(meta, StepMetadata) else list(meta)
    if len(metas) != k:
        raise ConfigurationError(f"update_k needs k={k} metadata entries, got {len(metas)}")

    weights = np.array(model.weights, dtype=np.float64)
    for batch, step_meta in zip(batches, metas):
        _, grad, _ = loss_and_grads(model.arch, weights, batch.features, batch.labels)
        ledger.record(OpKind.FORWARD)
        ledger.record(OpKind.BACKWARD)
        update = -step_meta.learning_rate * grad
        weights = weights + update
        perturbation = draw_noise(update, noise, rng)
        if perturbation is not None:
            weights = weights + perturbation
            ledger.record(OpKind.WEIGHT_ADD)
    return model.with_weights(weights)


def interpolate(a: ModelState, b: ModelState, t: float, ledger: CostLedger) -> ModelState:
    """(1 - t) * a + t * b, exact at both endpoints (1 FP)."""
    if a.arch != b.arch:
        raise ShapeError("cannot interpolate between different architectures")
    if not 0.0 <= t <= 1.0:
        raise ConfigurationError(f"interpolation weight must lie in [0, 1], got {t}")
    ledger.record(OpKind.INTERPOLATE)
    if t == 0.0:
        return a.with_weights(a.weights)
    if t == 1.0:
        return b.with_weights(b.weights)
    return a.with_weights((1.0 - t) * a.weights + t * b.weights)


def train(config: TrainConfig, dataset: Dataset, rng: Optional[np.random.Generator] = None) -> TrainingRun:
    """Honest SGD run logging every step's weights, batch and metadata.

    Batch order is a permutation per epoch drawn from the sampling seed;
    ``rng`` (default: seeded from ``noise_seed``) drives reproduction noise.
    """
    if len(dataset) == 0:
        raise ConfigurationError("cannot train on an empty dataset")
    arch = config.architecture(dataset.dim, dataset.n_classes)
    sampling_seed = config.sampling_seed if config.sampling_seed is not None else config.seed
    sampler = np.random.default_rng(sampling_seed)
    if rng is None:
        rng = np.random.default_rng(config.noise_seed if config.noise_seed is not None else config.seed)

    model = init_model(arch, config.seed, config.init_scale)
    ledger = CostLedger()
    trajectory = [model]
    batch_indices: List[np.ndarray] = []
    metadata: List[StepMetadata] = []
    steps_per_epoch = math.ceil(len(dataset) / config.batch_size)

    step = 0
    for epoch in range(config.epochs):
        order = sampler.permutation(len(dataset))
        lr = config.lr_for_epoch(epoch)
        for start in range(0, len(dataset), config.batch_size):
            indices = order[start:start + config.batch_size]
            meta = StepMetadata(
                learning_rate=lr,
                batch_size=len(indices),
                seed=sampling_seed,
                step_index=step,
            )
            model = update_k(model, [make_batch(dataset, indices)], meta, 1, config.noise, rng, ledger)
            trajectory.append(model)
            batch_indices.append(indices)
            metadata.append(meta)
            step += 1

    logger.info(
        f"Trained {arch.parameter_count}-parameter net for {step} steps "
        f"({config.epochs} epochs), cost {ledger.fp_units:.0f} FP")
    return TrainingRun(
        trajectory=trajectory,
        ledger=ledger,
        batch_indices=batch_indices,
        metadata=metadata,
        steps_per_epoch=steps_per_epoch,
    )
