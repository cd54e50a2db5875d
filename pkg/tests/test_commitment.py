import pytest
from pydantic import ValidationError

from controller.commitment import CommitmentLedger, SqlCommitmentLedger, commit, detect_replay
from controller.proofchain import chain_digest
from errors import LedgerError
from model.proof import CommitmentEntry


class FakeClock:
    def __init__(self, start: int = 1_700_000_000):
        self.now = start

    def __call__(self) -> int:
        return self.now


@pytest.fixture
def sql_ledger():
    ledger = SqlCommitmentLedger("sqlite://", clock=FakeClock())
    yield ledger
    ledger.close()


def test_commit_and_detect_replay(honest_proof, noisy_proof):
    ledger = CommitmentLedger(clock=FakeClock())
    assert not detect_replay(ledger, honest_proof)

    entry = commit(ledger, honest_proof, label="run-1")

    assert entry.proof_digest == chain_digest(honest_proof)
    assert entry.timestamp == 1_700_000_000
    assert detect_replay(ledger, honest_proof)
    assert not detect_replay(ledger, noisy_proof)
    assert len(ledger) == 1


def test_clock_regression_is_rejected(honest_proof, noisy_proof):
    clock = FakeClock()
    ledger = CommitmentLedger(clock=clock)
    ledger.commit(honest_proof)
    clock.now -= 1
    with pytest.raises(LedgerError):
        ledger.commit(noisy_proof)
    assert len(ledger) == 1


def test_equal_timestamps_are_allowed(honest_proof, noisy_proof):
    ledger = CommitmentLedger(clock=FakeClock())
    ledger.commit(honest_proof)
    ledger.commit(noisy_proof)
    assert [e.timestamp for e in ledger.entries] == [1_700_000_000] * 2


def test_file_ledger_is_reloaded(tmp_path, honest_proof):
    path = tmp_path / "ledger.tsv"
    CommitmentLedger(path, clock=FakeClock()).commit(honest_proof, label="first")

    reloaded = CommitmentLedger(path)

    assert reloaded.detect_replay(honest_proof)
    assert reloaded.entries[0].label == "first"
    line = path.read_text().splitlines()[0]
    assert line == f"{chain_digest(honest_proof).hex()}\t1700000000\tfirst"
    assert CommitmentEntry.from_line(line) == reloaded.entries[0]


def test_entry_validation():
    with pytest.raises(ValidationError):
        CommitmentEntry(proof_digest=b"short", timestamp=0)
    with pytest.raises(ValidationError):
        CommitmentEntry(proof_digest=bytes(32), timestamp=0, label="a\tb")


def test_sql_ledger_rejects_replay(sql_ledger, honest_proof):
    sql_ledger.commit(honest_proof)
    with pytest.raises(LedgerError) as e:
        sql_ledger.commit(honest_proof)
    assert e.value.context["replay"] is True
    assert sql_ledger.detect_replay(honest_proof)
    assert sql_ledger.count() == 1


def test_sql_ledger_paging(sql_ledger):
    digests = [bytes([i]) * 32 for i in range(5)]
    for i, digest in enumerate(digests):
        sql_ledger.commit_digest(digest, now=100 + i, label=f"p{i}")

    page = sql_ledger.list_entries(offset=2, limit=2)

    assert [e.proof_digest for e in page] == digests[2:4]
    assert [e.timestamp for e in page] == [102, 103]
    assert sql_ledger.count() == 5
    with pytest.raises(LedgerError):
        sql_ledger.commit_digest(bytes([9]) * 32, now=50)


def test_sql_ledger_file_is_shared_between_instances(tmp_path, honest_proof):
    url = f"sqlite:///{tmp_path / 'ledger.db'}"
    first = SqlCommitmentLedger(url, clock=FakeClock())
    entry = first.commit(honest_proof, label="first")
    first.close()

    second = SqlCommitmentLedger(url, clock=FakeClock())
    try:
        assert second.list_entries() == [entry]
        with pytest.raises(LedgerError):
            second.commit(honest_proof)
    finally:
        second.close()
