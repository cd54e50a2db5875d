import numpy as np
import pytest

from controller.probes import (
    data_ordering_probe,
    min_max_normalize,
    oracle_labeled,
    pretrain_adversary,
    synthesis_probe,
)
from controller.tinytrain import init_model, loss_and_grads
from errors import ConfigurationError, ShapeError
from model.ledger import CostLedger, OpKind
from model.tinytrain import Architecture, Dataset, ModelState, TrainConfig


def test_min_max_normalize():
    assert min_max_normalize([]) == []
    assert min_max_normalize([3.0, 3.0]) == [0.0, 0.0]
    assert min_max_normalize([2.0, 4.0, 3.0]) == [0.0, 1.0, 0.5]


def test_steps_away_from_the_victim_never_help(honest_proof, dataset):
    target = honest_proof.final
    result = data_ordering_probe(target, target, dataset, lr=0.1)

    deltas = result.series["delta_dist"]
    assert len(deltas) == len(dataset)
    assert all(d <= 0 for d in deltas)
    assert result.params["fraction_positive"] == 0.0
    assert result.ledger.count(OpKind.BACKWARD) == len(dataset)
    assert sum(result.params["bin_counts"]) == len(dataset)
    assert len(result.params["bin_edges"]) == len(result.params["bin_counts"]) + 1


def test_data_ordering_matches_brute_force():
    rng = np.random.default_rng(0)
    arch = Architecture(layer_sizes=[1, 2], bias=False)
    dataset = Dataset(features=rng.standard_normal((10, 1)), labels=rng.integers(2, size=10), n_classes=2)
    current = ModelState(weights=rng.standard_normal(2), arch=arch)
    target = ModelState(weights=rng.standard_normal(2), arch=arch)

    result = data_ordering_probe(target, current, dataset, lr=0.5)

    expected = []
    for i in range(10):
        _, grad, _ = loss_and_grads(arch, current.weights, dataset.features[i:i + 1], dataset.labels[i:i + 1])
        stepped = current.weights - 0.5 * grad
        expected.append(np.linalg.norm(target.weights - current.weights) - np.linalg.norm(target.weights - stepped))
    np.testing.assert_allclose(result.series["delta_dist"], expected, rtol=1e-12, atol=1e-15)
    assert result.params["base_distance"] == pytest.approx(np.linalg.norm(target.weights - current.weights))


def test_synthesis_probe_curves(honest_proof):
    target = honest_proof.final
    initial = init_model(target.arch, 42)
    result = synthesis_probe(target, initial, 20, data_lr=0.01, model_lr=0.1, rng=np.random.default_rng(0),
                             n_points=8)

    assert not result.diverged
    assert len(result) == 20
    for name in ("dist_loss", "train_loss"):
        curve = result.series[name]
        assert min(curve) == 0.0
        assert max(curve) == 1.0
        assert len(result.series[f"{name}_raw"]) == 20
    assert result.ledger.count(OpKind.INPUT_GRAD) == 20


def test_synthesis_probe_flags_divergence(honest_proof):
    target = honest_proof.final
    with np.errstate(all="ignore"):
        result = synthesis_probe(target, init_model(target.arch, 42), 10, data_lr=1e308, model_lr=10.0,
                                 rng=np.random.default_rng(0), n_points=4)
    assert result.diverged
    assert len(result) < 10


def test_synthesis_probe_needs_iterations(honest_proof):
    with pytest.raises(ConfigurationError):
        synthesis_probe(honest_proof.final, honest_proof.initial, 0, 0.1, 0.1, np.random.default_rng(0))


def test_oracle_labels_come_from_the_victim(honest_proof, dataset):
    ledger = CostLedger()
    relabeled = oracle_labeled(honest_proof.final, dataset, ledger)

    np.testing.assert_array_equal(relabeled.features, dataset.features)
    assert relabeled.n_classes == dataset.n_classes
    assert ledger.count(OpKind.FORWARD) == 1
    # relabeling is idempotent
    fitted = oracle_labeled(honest_proof.final, relabeled)
    np.testing.assert_array_equal(fitted.labels, relabeled.labels)


def test_pretrained_adversary_starts_from_its_init(honest_proof, dataset, train_config):
    adversary = train_config.model_copy(update={"seed": 11})
    start = pretrain_adversary(honest_proof.final, dataset, adversary, 0)
    trained = pretrain_adversary(honest_proof.final, dataset, adversary, 2)

    np.testing.assert_array_equal(start.weights, init_model(start.arch, 11, adversary.init_scale).weights)
    assert not np.array_equal(trained.weights, start.weights)
    np.testing.assert_array_equal(pretrain_adversary(honest_proof.final, dataset, adversary, 2).weights,
                                  trained.weights)


def test_pretrain_adversary_errors(honest_proof, dataset, train_config):
    with pytest.raises(ConfigurationError):
        pretrain_adversary(honest_proof.final, dataset, train_config, -1)
    with pytest.raises(ShapeError):
        pretrain_adversary(honest_proof.final, dataset, TrainConfig(hidden=[5]), 1)
