import numpy as np
import pytest
from scipy import stats

from controller.proofchain import DatasetProvider, assemble_proof, build_proof
from controller.verifier import (
    GaussianUpdateSampler,
    HonestUpdateSampler,
    distance,
    estimate_min_threshold,
    estimate_min_thresholds,
    reference_distance,
    reproduce_update,
    sample_distances,
    select_top_q,
    update_norms,
    verify,
    verify_step,
)
from errors import ConfigurationError, ProofStructureError, ShapeError
from model.ledger import CostLedger
from model.tinytrain import Architecture, ModelState, StepMetadata
from model.verification import (
    AdaptiveThreshold,
    Decision,
    Metric,
    Overall,
    PerStepThreshold,
    StaticThreshold,
    VerificationPolicy,
)


def _proof_with_update_norms(norms, dataset):
    arch = Architecture(layer_sizes=[2, 3], bias=False)
    weights = np.zeros(arch.parameter_count)
    checkpoints = {0: ModelState(weights=weights, arch=arch)}
    for step, size in enumerate(norms, start=1):
        weights = weights.copy()
        weights[0] += size
        checkpoints[step] = ModelState(weights=weights, arch=arch)
    T = len(norms)
    batch_indices = [np.array([step]) for step in range(T)]
    metadata = [StepMetadata(learning_rate=0.1, batch_size=1, step_index=step) for step in range(T)]
    return assemble_proof(checkpoints, batch_indices, metadata, dataset, 1, T)


@pytest.mark.parametrize("metric, expected", [
    (Metric.L2, 5.0),
    (Metric.L1, 7.0),
    (Metric.LINF, 4.0),
])
def test_distance_norms(metric, expected):
    assert distance(metric, np.zeros(2), np.array([3.0, 4.0])) == pytest.approx(expected)


def test_cosine_distance():
    assert distance(Metric.COSINE, np.array([1.0, 0.0]), np.array([0.0, 1.0])) == pytest.approx(1.0)
    assert distance(Metric.COSINE, np.array([1.0, 2.0]), np.array([2.0, 4.0])) == pytest.approx(0.0, abs=1e-12)
    assert distance(Metric.COSINE, np.zeros(2), np.zeros(2)) == 0.0
    assert distance(Metric.COSINE, np.zeros(2), np.ones(2)) == 1.0


def test_distance_is_zero_on_identical_inputs_and_checks_shapes():
    x = np.random.default_rng(0).standard_normal(10)
    for metric in Metric:
        assert distance(metric, x, x) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ShapeError):
        distance(Metric.L2, np.zeros(3), np.zeros(4))


def test_static_threshold_is_strict():
    policy = VerificationPolicy(threshold=StaticThreshold(delta=0.01))
    assert verify_step(0, 0.005, 1.0, 1.0, policy).decision == Decision.ACCEPT
    assert verify_step(0, 0.01, 1.0, 1.0, policy).decision == Decision.REJECT
    assert verify_step(0, 0.02, 1.0, 1.0, policy).decision == Decision.REJECT


def test_adaptive_threshold_uses_smaller_norm():
    policy = VerificationPolicy(threshold=AdaptiveThreshold(alpha=0.5))
    verdict = verify_step(3, 0.99, 2.0, 4.0, policy)
    assert verdict.threshold_used == pytest.approx(1.0)
    assert verdict.decision == Decision.ACCEPT
    assert verify_step(3, 1.0, 4.0, 2.0, policy).decision == Decision.REJECT


def test_threshold_configuration_errors():
    with pytest.raises(ConfigurationError):
        verify_step(0, 0.0, 1.0, 1.0, VerificationPolicy(threshold=StaticThreshold(delta=0.0)))
    with pytest.raises(ConfigurationError):
        verify_step(0, 0.0, 1.0, 1.0,
                    VerificationPolicy(metric=Metric.COSINE, threshold=AdaptiveThreshold(alpha=0.5)))
    with pytest.raises(ConfigurationError):
        verify_step(0, 0.0, 1.0, 1.0, VerificationPolicy(threshold=PerStepThreshold(deltas=[1.0])))


def test_policy_accepts_flat_threshold_form():
    policy = VerificationPolicy.model_validate({"threshold": "adaptive", "alpha": 0.3, "Q": 2})
    assert policy.threshold == AdaptiveThreshold(alpha=0.3)
    assert policy.q == 2


def test_select_top_q_orders_by_update_norm(dataset):
    proof = _proof_with_update_norms([0.5, 3.0, 1.0, 2.0, 0.1], dataset)
    assert select_top_q(proof, 0, 2) == [1, 3]
    assert select_top_q(proof, 0, 5) == [0, 1, 2, 3, 4]
    assert update_norms(proof) == pytest.approx({0: 0.5, 1: 3.0, 2: 1.0, 3: 2.0, 4: 0.1})
    with pytest.raises(ConfigurationError):
        select_top_q(proof, 0, 6)
    with pytest.raises(ConfigurationError):
        select_top_q(proof, 0, 0)
    with pytest.raises(ConfigurationError):
        select_top_q(proof, 1, 1)


def test_select_top_q_breaks_ties_toward_lower_step(dataset):
    proof = _proof_with_update_norms([1.0, 1.0, 1.0], dataset)
    assert select_top_q(proof, 0, 2) == [0, 1]


def test_honest_noiseless_proof_reproduces_exactly(honest_proof, provider):
    report = verify(honest_proof, VerificationPolicy(threshold=StaticThreshold(delta=1e-9)), provider)
    assert report.overall == Overall.VALID
    assert [v.step for v in report.verdicts] == [0, 3, 6, 9]
    assert all(v.distance == 0.0 for v in report.verdicts)
    assert report.ledger.fp_units == 3 * honest_proof.T
    assert report.initial_final_distance > 0


def test_top_q_verification_is_subsumed_by_full_verification(noisy_proof, provider, noise):
    policy = VerificationPolicy(threshold=StaticThreshold(delta=1.0), noise=noise, noise_seed=4)
    assert verify(noisy_proof, policy, provider).overall == Overall.VALID
    partial = verify(noisy_proof, policy.model_copy(update={"q": 1}), provider)
    assert partial.overall == Overall.VALID
    assert len(partial.verdicts) == noisy_proof.n_epochs


def test_top_q_takes_every_update_of_a_short_epoch(honest_run, dataset, provider):
    proof = build_proof(honest_run, dataset, 4)
    assert proof.intervals_by_epoch() == {0: [(0, 4), (4, 8)], 1: [(8, 12)]}

    policy = VerificationPolicy(k=4, q=2, threshold=StaticThreshold(delta=1e-9))
    report = verify(proof, policy, provider)

    assert report.overall == Overall.VALID
    assert [v.step for v in report.verdicts] == [0, 4, 8]
    with pytest.raises(ConfigurationError):
        select_top_q(proof, 1, 2)


def test_threads_do_not_change_the_report(noisy_proof, provider, noise):
    policy = VerificationPolicy(threshold=StaticThreshold(delta=1.0), noise=noise, noise_seed=4)
    serial = verify(noisy_proof, policy, provider)
    threaded = verify(noisy_proof, policy, provider, workers=3)
    assert [v.distance for v in serial.verdicts] == [v.distance for v in threaded.verdicts]


def test_verify_rejects_mismatched_configuration(honest_proof, provider):
    with pytest.raises(ConfigurationError):
        verify(honest_proof, VerificationPolicy(k=5), provider)
    with pytest.raises(ConfigurationError):
        verify(honest_proof, VerificationPolicy(threshold=PerStepThreshold(deltas=[1.0, 1.0])), provider)

    per_step = VerificationPolicy(threshold=PerStepThreshold(deltas=[1e-9] * 4))
    assert verify(honest_proof, per_step, provider).overall == Overall.VALID


def test_reproduce_update_needs_a_checkpoint_step(honest_proof, provider):
    with pytest.raises(ProofStructureError):
        reproduce_update(honest_proof, 1, provider, VerificationPolicy(), CostLedger())
    with pytest.raises(ProofStructureError):
        reproduce_update(honest_proof, honest_proof.T, provider, VerificationPolicy(), CostLedger())


def test_normalized_errors(honest_proof, provider):
    policy = VerificationPolicy(threshold=StaticThreshold(delta=1.0))
    assert verify(honest_proof, policy, provider, rd=0.0).normalized_errors is None
    report = verify(honest_proof, policy, provider, rd=2.0)
    assert report.normalized_errors == [0.0] * 4
    assert report.max_normalized_error == 0.0


def test_reference_distance(train_config, dataset, noise, rng):
    silent = reference_distance(train_config, dataset, 2, rng)
    assert silent.rd == 0.0
    assert silent.degenerate

    noisy = reference_distance(train_config.model_copy(update={"noise": noise}), dataset, 3, rng)
    assert noisy.rd > 0
    assert len(noisy.pairwise) == 3

    with pytest.raises(ConfigurationError):
        reference_distance(train_config, dataset, 1, rng)


def test_min_threshold_matches_chi_quantile():
    sampler = GaussianUpdateSampler(np.zeros(100), sigma=0.01)
    estimate = estimate_min_threshold(sampler, Metric.L2, 0.9, 100_000, np.random.default_rng(0))
    expected = 0.01 * stats.chi.ppf(0.9, 100)
    assert expected == pytest.approx(0.1089, abs=5e-4)
    assert estimate == pytest.approx(expected, rel=0.05)


def test_min_thresholds_are_monotone_in_tau():
    sampler = GaussianUpdateSampler(np.ones(50), sigma=0.1)
    taus = [0.5, 0.9, 0.99, 0.999]
    deltas = estimate_min_thresholds(sampler, Metric.L2, taus, 20_000, np.random.default_rng(1))
    assert deltas == sorted(deltas)


def test_min_threshold_accepts_tau_fraction_of_fresh_draws():
    sampler = GaussianUpdateSampler(np.ones(20), sigma=0.05)
    delta = estimate_min_threshold(sampler, Metric.L2, 0.95, 20_000, np.random.default_rng(2))
    fresh = sample_distances(sampler, Metric.L2, 10_000, np.random.default_rng(3))
    assert np.mean(fresh < delta) >= 0.95 - 0.02


def test_min_threshold_edge_cases():
    silent = GaussianUpdateSampler(np.ones(10), sigma=0.0)
    assert estimate_min_threshold(silent, Metric.L2, 0.9, 1000) == 0.0
    for tau in (0.0, 1.0, 1.5):
        with pytest.raises(ConfigurationError):
            estimate_min_threshold(silent, Metric.L2, tau, 1000)


def test_calibrated_threshold_accepts_honest_noisy_proof(noisy_proof, dataset, noise):
    provider = DatasetProvider(dataset)
    sampler = HonestUpdateSampler(noisy_proof, provider, noise)
    delta = estimate_min_threshold(sampler, Metric.L2, 0.999, 2000, np.random.default_rng(5))
    assert delta > 0
    assert sampler.ledger.fp_units > 0

    policy = VerificationPolicy(threshold=StaticThreshold(delta=delta), noise=noise, noise_seed=11)
    assert verify(noisy_proof, policy, provider).overall == Overall.VALID
