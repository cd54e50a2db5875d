import hashlib
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from controller.proofchain import (
    DatasetProvider,
    assemble_proof,
    build_proof,
    chain_digest,
    deserialize,
    fetch_and_check_batch,
    hash_batch,
    serialize,
)
from controller.tinytrain import gen_dataset, train
from controller.verifier import verify
from errors import AvailabilityError, CommitmentViolation, FormatError, ProofStructureError
from model.tinytrain import Dataset, DatasetSpec, TrainConfig
from model.verification import IssueKind, Overall, StaticThreshold, VerificationPolicy


def _assert_same_proof(a, b):
    assert (a.k, a.T, a.steps_per_epoch, a.arch) == (b.k, b.T, b.steps_per_epoch, b.arch)
    for left, right in zip(a.records, b.records, strict=True):
        assert left.step == right.step
        assert left.batch_hash == right.batch_hash
        assert left.metadata == right.metadata
        assert np.array_equal(left.batch_indices, right.batch_indices)
        if left.checkpoint is None:
            assert right.checkpoint is None
        else:
            assert np.array_equal(left.checkpoint.weights, right.checkpoint.weights)


def test_proof_structure(honest_proof, honest_run):
    assert honest_proof.T == 12
    assert honest_proof.checkpoint_steps() == [0, 3, 6, 9, 12]
    assert honest_proof.intervals() == [(0, 3), (3, 6), (6, 9), (9, 12)]
    assert honest_proof.records[-1].batch_hash == hashlib.sha256(b"").digest()
    assert len(honest_proof.records[-1].batch_indices) == 0
    assert np.array_equal(honest_proof.final.weights, honest_run.final.weights)
    assert honest_proof.intervals_by_epoch() == {0: [(0, 3), (3, 6)], 1: [(6, 9), (9, 12)]}
    with pytest.raises(KeyError):
        honest_proof.checkpoint(4)


def test_checkpoint_at_T_when_k_does_not_divide_T(dataset):
    config = TrainConfig(epochs=1, batch_size=10, hidden=[3], k=4, seed=2)
    proof = build_proof(train(config, dataset), dataset, config.k)
    assert proof.checkpoint_steps() == [0, 4, 6]
    assert proof.intervals()[-1] == (4, 6)


def test_assemble_proof_rejects_missing_checkpoints(honest_run, dataset):
    checkpoints = {0: honest_run.trajectory[0], 12: honest_run.final}
    with pytest.raises(ProofStructureError):
        assemble_proof(checkpoints, honest_run.batch_indices, honest_run.metadata, dataset, 3, 6)
    with pytest.raises(ProofStructureError):
        assemble_proof(checkpoints, [], [], dataset, 3, 6)


@settings(max_examples=25, deadline=None)
@given(
    seed=st.integers(0, 2 ** 20),
    k=st.integers(1, 7),
    epochs=st.integers(1, 2),
    hidden=st.lists(st.integers(1, 4), max_size=2),
)
def test_serialization_round_trip(seed, k, epochs, hidden):
    spec = DatasetSpec(classes=3, points_per_class=8, seed=seed)
    dataset = gen_dataset(seed, spec)
    config = TrainConfig(epochs=epochs, batch_size=5, hidden=hidden, k=k, seed=seed)
    proof = build_proof(train(config, dataset), dataset, k)

    data = serialize(proof)
    decoded = deserialize(data)

    _assert_same_proof(proof, decoded)
    assert serialize(decoded) == data
    assert chain_digest(decoded) == chain_digest(proof)


def test_chain_digest_tracks_every_weight(honest_proof, honest_run, dataset):
    weights = np.array(honest_run.trajectory[3].weights)
    weights[0] = np.nextafter(weights[0], np.inf)
    checkpoints = {s: honest_run.trajectory[s] for s in honest_proof.checkpoint_steps()}
    checkpoints[3] = checkpoints[3].with_weights(weights)
    altered = assemble_proof(checkpoints, honest_run.batch_indices, honest_run.metadata, dataset, 3, 6)
    assert chain_digest(altered) != chain_digest(honest_proof)
    assert chain_digest(honest_proof) == chain_digest(deserialize(serialize(honest_proof)))


def test_deserialize_rejects_malformed_bytes(honest_proof):
    data = serialize(honest_proof)
    with pytest.raises(FormatError) as e:
        deserialize(b"NOPE" + data[4:])
    assert e.value.offset == 0
    with pytest.raises(FormatError):
        deserialize(data[:4] + struct.pack("<B", 9) + data[5:])
    with pytest.raises(FormatError) as e:
        deserialize(data[:-3])
    assert e.value.offset is not None and e.value.offset <= len(data) - 3
    with pytest.raises(FormatError):
        deserialize(data + b"\x00")
    with pytest.raises(FormatError):
        deserialize(b"")


def _flip_low_mantissa_bit(dataset: Dataset, row: int, col: int, bit: int) -> Dataset:
    features = np.array(dataset.features)
    raw = features.view(np.uint8)
    # little-endian doubles: byte 0 holds the lowest mantissa bits
    raw[(row * features.shape[1] + col) * 8] ^= 1 << bit
    return Dataset(features=features, labels=dataset.labels, n_classes=dataset.n_classes)


@settings(max_examples=100, deadline=None)
@given(data=st.data())
def test_tampered_row_fails_at_the_step_that_uses_it(honest_proof, dataset, data):
    step = data.draw(st.integers(0, honest_proof.T - 1))
    indices = honest_proof.record(step).batch_indices
    row = int(data.draw(st.sampled_from(indices.tolist())))
    col = data.draw(st.integers(0, dataset.dim - 1))
    bit = data.draw(st.integers(0, 7))
    provider = DatasetProvider(_flip_low_mantissa_bit(dataset, row, col, bit))

    with pytest.raises(CommitmentViolation) as e:
        fetch_and_check_batch(honest_proof, step, provider)
    assert e.value.step == step

    users = [s for s in range(honest_proof.T) if row in honest_proof.record(s).batch_indices]
    report = verify(honest_proof, VerificationPolicy(threshold=StaticThreshold(delta=1.0)), provider)
    assert report.overall == Overall.INVALID
    assert sorted(issue.data_step for issue in report.issues) == users
    assert all(issue.kind == IssueKind.COMMITMENT for issue in report.issues)


def test_withheld_rows_are_availability_issues(honest_proof, dataset):
    row = int(honest_proof.record(0).batch_indices[0])
    provider = DatasetProvider(dataset, withheld=[row])
    with pytest.raises(AvailabilityError):
        fetch_and_check_batch(honest_proof, 0, provider)

    report = verify(honest_proof, VerificationPolicy(threshold=StaticThreshold(delta=1.0)), provider)
    assert report.overall == Overall.INVALID
    assert {issue.kind for issue in report.issues} == {IssueKind.AVAILABILITY}
    assert report.issues[0].step == 0


def test_hash_batch_depends_on_row_ids(dataset):
    assert hash_batch(dataset, [0, 1]) != hash_batch(dataset, [1, 0])
    assert hash_batch(dataset, []) == hashlib.sha256(b"").digest()
