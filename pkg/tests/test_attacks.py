import numpy as np
import pytest
from pydantic import ValidationError

from controller.attacks import (
    blindfold_topq_attack,
    infinitesimal_attack,
    interp_perturb_attack,
    least_squares_coefficients,
    minimal_checkpoints,
    rna_attack,
)
from controller.proofchain import DatasetProvider
from controller.tinytrain import init_model
from controller.verifier import select_top_q, update_norms, verify
from errors import AttackConstructionError, ConfigurationError
from model.attack import SpoofResult
from model.ledger import CostLedger, OpKind
from model.verification import AdaptiveThreshold, Decision, Overall, StaticThreshold, VerificationPolicy


@pytest.fixture
def target(honest_proof):
    return honest_proof.final


def _nearby(target, gap, seed=0):
    direction = np.random.default_rng(seed).standard_normal(target.n)
    return target.with_weights(target.weights + gap * direction / np.linalg.norm(direction))


def test_minimal_checkpoints(target):
    assert minimal_checkpoints(target, _nearby(target, 0.05), 0.008) == 63
    assert minimal_checkpoints(target, target, 0.008) == 1
    with pytest.raises(ConfigurationError):
        minimal_checkpoints(target, target, 0.0)


def test_infinitesimal_spoof_passes_static_threshold(target, dataset, provider, rng):
    start = _nearby(target, 0.05)
    k, delta = 3, 0.008
    result = infinitesimal_attack(target, start, 63 * k, k, delta, dataset, rng)

    assert np.array_equal(result.proof.final.weights, target.weights)
    assert result.ledger.count(OpKind.INTERPOLATE) == 63
    assert result.ledger.fp_units == 63
    spacings = list(update_norms(result.proof).values())
    assert max(spacings) - min(spacings) < 1e-12
    assert max(spacings) <= delta / 10 + 1e-12

    report = verify(result.proof, VerificationPolicy(threshold=StaticThreshold(delta=delta)), provider)
    assert report.overall == Overall.VALID
    assert all(v.distance < delta / 10 for v in report.verdicts)
    assert report.ledger.fp_units / result.ledger.fp_units == pytest.approx(3 * k)


def test_infinitesimal_spoof_fails_adaptive_threshold(target, dataset, provider, rng):
    result = infinitesimal_attack(target, _nearby(target, 0.05), 63 * 3, 3, 0.008, dataset, rng)
    report = verify(result.proof, VerificationPolicy(threshold=AdaptiveThreshold(alpha=0.5)), provider)
    assert report.overall == Overall.INVALID
    assert len(report.rejected_steps) >= 1


def test_infinitesimal_spoof_needs_enough_steps(target, dataset, rng):
    with pytest.raises(ConfigurationError) as e:
        infinitesimal_attack(target, _nearby(target, 0.05), 30, 3, 0.008, dataset, rng)
    assert e.value.context["minimal_T"] == 63 * 3


def test_blindfold_spoof_hides_from_top_q(target, dataset, provider, rng):
    q, k, s, epochs = 2, 2, 20, 2
    result = blindfold_topq_attack(target, _nearby(target, 0.5), q, k, s, 5.0, dataset, rng, epochs=epochs)

    assert np.array_equal(result.proof.final.weights, target.weights)
    for epoch in range(epochs):
        base = epoch * s * k
        assert select_top_q(result.proof, epoch, q) == [base, base + k]

    policy = VerificationPolicy(threshold=AdaptiveThreshold(alpha=0.5), q=q)
    assert verify(result.proof, policy, provider).overall == Overall.VALID
    exposed = verify(result.proof, policy.model_copy(update={"q": q + 1}), provider)
    assert exposed.overall == Overall.INVALID
    assert any(v.decision == Decision.REJECT for v in exposed.verdicts)

    expected = epochs * (3 * k * q + s - q - 1) + epochs - 1
    assert result.ledger.fp_units == expected
    per_update = result.ledger.fp_units / (epochs * s)
    assert per_update == pytest.approx(3 * k * q / s + 1 - q / s, abs=1.0)


def test_blindfold_needs_dominant_planted_updates(target, dataset, rng):
    with pytest.raises(AttackConstructionError):
        blindfold_topq_attack(target, _nearby(target, 0.5), 2, 2, 20, 1e-9, dataset, rng)
    with pytest.raises(ConfigurationError):
        blindfold_topq_attack(target, _nearby(target, 0.5), 5, 2, 5, 1.0, dataset, rng)


def test_interp_perturb_cost_and_failures(target, dataset, rng):
    k, n_iter, n_checkpoints = 2, 2, 2
    start = _nearby(target, 0.2)
    result = interp_perturb_attack(target, start, k, 1e-12, n_iter, dataset, rng,
                                   n_checkpoints=n_checkpoints, data_lr=0.1, batch_size=5)

    assert np.array_equal(result.proof.final.weights, target.weights)
    assert result.ledger.fp_units == n_checkpoints * ((43 * n_iter + 4) * k + 1)
    assert result.ledger.count(OpKind.INPUT_GRAD) == n_checkpoints * k * n_iter
    assert result.params["failed_steps"] == [0, k]
    assert len(result.params["residuals"]) == n_checkpoints


def test_interp_perturb_rows_satisfy_commitments(target, dataset, rng):
    result = interp_perturb_attack(target, _nearby(target, 0.2), 2, 1e3, 1, dataset, rng,
                                   n_checkpoints=2, data_lr=0.1, batch_size=5)
    assert result.params["failed_steps"] == []
    report = verify(result.proof, VerificationPolicy(threshold=StaticThreshold(delta=1e3)),
                    DatasetProvider(result.dataset))
    assert report.issues == []
    assert report.overall == Overall.VALID


def test_least_squares_coefficients():
    ledger = CostLedger()
    c, ridged = least_squares_coefficients(np.array([5.0]), np.array([[1.0]]), ledger)
    assert c == pytest.approx([5.0])
    assert not ridged
    assert ledger.count(OpKind.LSQ_SOLVE) == 2

    c, _ = least_squares_coefficients(np.array([1.0, 0.0]), np.array([[0.0, 1.0]]), CostLedger())
    assert c == pytest.approx([0.0])

    updates = np.array([[1.0, 0.0], [1.0, 0.0]])
    c, ridged = least_squares_coefficients(np.array([2.0, 3.0]), updates, CostLedger())
    assert ridged
    np.testing.assert_allclose(c @ updates, [2.0, 0.0], atol=1e-6)


@pytest.mark.parametrize("include_base", [True, False])
def test_rna_distance_never_increases(target, dataset, include_base):
    start = init_model(target.arch, 99)
    result = rna_attack(target, start, 5, 3, dataset, 0.1, np.random.default_rng(0),
                        include_base=include_base)
    curve = result.distance_curve
    assert result.rounds == 5
    assert all(b <= a for a, b in zip(curve, curve[1:]))
    assert result.proof.T == 15
    assert result.ledger.fp_units == 5 * (3 * 3 + 9 + 3)


def test_rna_stops_at_budget(target, dataset):
    start = init_model(target.arch, 99)
    result = rna_attack(target, start, 100, 3, dataset, 0.1, np.random.default_rng(0), fp_budget=2.5 * 21)
    assert result.rounds == 2
    assert result.ledger.fp_units <= 2.5 * 21
    with pytest.raises(AttackConstructionError):
        rna_attack(target, start, 100, 3, dataset, 0.1, np.random.default_rng(0), fp_budget=10)
    with pytest.raises(ConfigurationError):
        rna_attack(target, start, 1, 33, dataset, 0.1, np.random.default_rng(0))


def test_spoof_result_must_end_in_target(honest_proof, honest_run):
    with pytest.raises(ValidationError):
        SpoofResult(proof=honest_proof, ledger=CostLedger(), attack_id="rna", target=honest_run.trajectory[0])
