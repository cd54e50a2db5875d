"""Proof assembly, canonical encoding and commitments.

Hash algorithm: SHA-256 throughout (batch commitments, record chain and
proof digests). Floats are encoded as raw little-endian IEEE-754 doubles.

Proof file layout (all integers little-endian)::

    b"POL1" | u8 version=1
    arch:   u8 activation | u8 bias | u32 n_layers | n_layers x u32 size
    u32 k | u64 T | u64 steps_per_epoch | u32 n_records
    record: u64 step | u8 has_checkpoint | [u32 n | n x f64 weights]
            u32 n_indices | n_indices x i64 row id | 32B batch hash
            f64 lr | u32 batch_size | u8 optimizer | i64 seed | u64 step_index
"""
import hashlib
import logging
import struct
from typing import Iterable, List, Optional, Sequence

import numpy as np
from pydantic import ValidationError

from controller.tinytrain import TrainingRun, make_batch
from errors import AvailabilityError, CommitmentViolation, FormatError, ProofStructureError
from model.proof import Proof, ProofRecord
from model.tinytrain import Activation, Architecture, Batch, Dataset, ModelState, OptimizerId, StepMetadata

logger = logging.getLogger(__name__)

MAGIC = b"POL1"
VERSION = 1

_ACTIVATION_IDS = {Activation.TANH: 0, Activation.RELU: 1}
_OPTIMIZER_IDS = {OptimizerId.PLAIN_SGD: 0}


def _digest(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def encode_rows(dataset: Dataset, indices: Sequence[int]) -> bytes:
    """Length-prefixed row-major encoding of the selected rows and their ids."""
    batch = make_batch(dataset, indices)
    return _encode_batch(batch)


def _encode_batch(batch: Batch) -> bytes:
    chunks = []
    for index, row, label in zip(batch.indices, batch.features, batch.labels):
        chunks.append(struct.pack("<qI", int(index), row.shape[0]))
        chunks.append(row.astype("<f8").tobytes())
        chunks.append(struct.pack("<q", int(label)))
    return b"".join(chunks)


def hash_batch(dataset: Dataset, indices: Sequence[int]) -> bytes:
    """SHA-256 commitment to the rows ``indices`` of ``dataset``."""
    return _digest(encode_rows(dataset, indices))


class DatasetProvider:
    """Prover-side row store served to the verifier at verification time.

    ``withheld`` rows are treated as unavailable.
    """

    def __init__(self, dataset: Dataset, withheld: Iterable[int] = ()):
        self.dataset = dataset
        self.withheld = set(int(i) for i in withheld)

    def fetch(self, indices: Sequence[int], step: Optional[int] = None) -> Batch:
        idx = [int(i) for i in indices]
        missing = [i for i in idx if i in self.withheld or not 0 <= i < len(self.dataset)]
        if missing:
            raise AvailabilityError(
                f"provider cannot serve rows {missing[:5]} for step {step}", step=step, rows=missing)
        return make_batch(self.dataset, idx)


def fetch_and_check_batch(proof: Proof, step: int, provider: DatasetProvider) -> Batch:
    """Fetch the rows of ``step`` and check them against the committed hash."""
    try:
        record = proof.record(step)
    except KeyError:
        raise ProofStructureError(f"proof has no record for step {step}", step=step)
    batch = provider.fetch(record.batch_indices, step=step)
    if _digest(_encode_batch(batch)) != record.batch_hash:
        logger.error(f"Commitment violation at step {step}")
        raise CommitmentViolation(f"rows served for step {step} do not match the committed hash", step=step)
    return batch


def assemble_proof(
        checkpoints: dict,
        batch_indices: Sequence[np.ndarray],
        metadata: Sequence[StepMetadata],
        dataset: Dataset,
        k: int,
        steps_per_epoch: int,
) -> Proof:
    """Build a proof from per-step data references and a step -> ModelState map.

    ``batch_indices``/``metadata`` cover steps 0..T-1; the record at T
    reuses the last metadata with an empty batch.
    """
    T = len(batch_indices)
    if T == 0 or len(metadata) != T:
        raise ProofStructureError("a proof needs at least one step with metadata for every step")
    records: List[ProofRecord] = []
    empty = np.zeros(0, dtype=np.int64)
    for step in range(T + 1):
        indices = batch_indices[step] if step < T else empty
        meta = metadata[step] if step < T else metadata[-1].model_copy(update={"step_index": step})
        records.append(ProofRecord(
            step=step,
            checkpoint=checkpoints.get(step),
            batch_indices=indices,
            batch_hash=hash_batch(dataset, indices),
            metadata=meta,
        ))
    final = checkpoints[T]
    try:
        return Proof(
            records=records,
            k=k,
            arch=final.arch,
            T=T,
            steps_per_epoch=steps_per_epoch,
            final=final,
        )
    except ValidationError as e:
        raise ProofStructureError(f"assembled proof violates its invariants: {e}")


def build_proof(run: TrainingRun, dataset: Dataset, k: int) -> Proof:
    """Proof of an honest training run with checkpoints every k steps."""
    T = run.steps
    steps = list(range(0, T, k)) + [T]
    checkpoints = {step: run.trajectory[step] for step in steps}
    proof = assemble_proof(checkpoints, run.batch_indices, run.metadata, dataset, k, run.steps_per_epoch)
    logger.info(f"Built proof with {len(steps)} checkpoints over {T} steps (k={k})")
    return proof


# Canonical encoding

def _encode_header(proof: Proof) -> bytes:
    arch = proof.arch
    parts = [
        MAGIC,
        struct.pack("<B", VERSION),
        struct.pack("<BBI", _ACTIVATION_IDS[arch.activation], int(arch.bias), len(arch.layer_sizes)),
        struct.pack(f"<{len(arch.layer_sizes)}I", *arch.layer_sizes),
        struct.pack("<IQQI", proof.k, proof.T, proof.steps_per_epoch, len(proof.records)),
    ]
    return b"".join(parts)


def encode_record(record: ProofRecord) -> bytes:
    parts = [struct.pack("<QB", record.step, int(record.checkpoint is not None))]
    if record.checkpoint is not None:
        weights = record.checkpoint.weights
        parts.append(struct.pack("<I", weights.shape[0]))
        parts.append(weights.astype("<f8").tobytes())
    parts.append(struct.pack("<I", record.batch_indices.shape[0]))
    parts.append(record.batch_indices.astype("<i8").tobytes())
    parts.append(record.batch_hash)
    meta = record.metadata
    parts.append(struct.pack(
        "<dIBqQ",
        meta.learning_rate,
        meta.batch_size,
        _OPTIMIZER_IDS[meta.optimizer_id],
        meta.seed,
        meta.step_index,
    ))
    return b"".join(parts)


def serialize(proof: Proof) -> bytes:
    return _encode_header(proof) + b"".join(encode_record(record) for record in proof.records)


def chain_digest(proof: Proof) -> bytes:
    """H_0 = hash(header), H_i = hash(H_{i-1} || encode(record_i)); returns H_final."""
    running = _digest(_encode_header(proof))
    for record in proof.records:
        running = _digest(running + encode_record(record))
    return running


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, size: int) -> bytes:
        if self.offset + size > len(self.data):
            raise FormatError(
                f"truncated proof: needed {size} bytes at offset {self.offset}, "
                f"{len(self.data) - self.offset} left",
                offset=self.offset,
            )
        chunk = self.data[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def deserialize(data: bytes) -> Proof:
    reader = _Reader(data)
    if reader.take(4) != MAGIC:
        raise FormatError("bad magic, not a proof file", offset=0)
    (version,) = reader.unpack("<B")
    if version != VERSION:
        raise FormatError(f"unsupported proof version {version}", offset=4)

    activation_id, bias, n_layers = reader.unpack("<BBI")
    activations = {v: a for a, v in _ACTIVATION_IDS.items()}
    if activation_id not in activations:
        raise FormatError(f"unknown activation id {activation_id}", offset=reader.offset - 6)
    sizes = list(reader.unpack(f"<{n_layers}I"))
    try:
        arch = Architecture(layer_sizes=sizes, activation=activations[activation_id], bias=bool(bias))
    except ValidationError as e:
        raise FormatError(f"invalid architecture block: {e}", offset=reader.offset)
    k, T, steps_per_epoch, n_records = reader.unpack("<IQQI")
    if n_records == 0:
        raise FormatError("proof holds no records", offset=reader.offset - 4)

    optimizers = {v: o for o, v in _OPTIMIZER_IDS.items()}
    records = []
    for _ in range(n_records):
        start = reader.offset
        step, has_checkpoint = reader.unpack("<QB")
        checkpoint = None
        if has_checkpoint:
            (n,) = reader.unpack("<I")
            weights = np.frombuffer(reader.take(8 * n), dtype="<f8").astype(np.float64)
            try:
                checkpoint = ModelState(weights=weights, arch=arch)
            except ValidationError as e:
                raise FormatError(f"invalid checkpoint at step {step}: {e}", offset=start)
        (n_indices,) = reader.unpack("<I")
        indices = np.frombuffer(reader.take(8 * n_indices), dtype="<i8").astype(np.int64)
        batch_hash = reader.take(32)
        lr, batch_size, optimizer_id, seed, step_index = reader.unpack("<dIBqQ")
        if optimizer_id not in optimizers:
            raise FormatError(f"unknown optimizer id {optimizer_id}", offset=start)
        try:
            records.append(ProofRecord(
                step=step,
                checkpoint=checkpoint,
                batch_indices=indices,
                batch_hash=batch_hash,
                metadata=StepMetadata(
                    learning_rate=lr,
                    batch_size=batch_size,
                    optimizer_id=optimizers[optimizer_id],
                    seed=seed,
                    step_index=step_index,
                ),
            ))
        except ValidationError as e:
            raise FormatError(f"invalid record at step {step}: {e}", offset=start)

    if reader.offset != len(data):
        raise FormatError(f"{len(data) - reader.offset} trailing bytes after last record", offset=reader.offset)
    final = records[-1].checkpoint
    if final is None:
        raise FormatError("last record carries no checkpoint", offset=reader.offset)
    try:
        return Proof(records=records, k=k, arch=arch, T=T, steps_per_epoch=steps_per_epoch, final=final)
    except ValidationError as e:
        raise FormatError(f"decoded proof violates its invariants: {e}", offset=reader.offset)
