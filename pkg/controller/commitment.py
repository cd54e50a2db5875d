import logging
import time
from pathlib import Path
from typing import Callable, List, Optional, Tuple

from sqlalchemy import create_engine, func
from sqlalchemy.exc import IntegrityError
from sqlalchemy.orm import Session, sessionmaker
from sqlalchemy.pool import StaticPool

from controller.proofchain import chain_digest
from errors import LedgerError
from model.proof import CommitmentEntry, Proof
from sql_model.commitment import Base, CommitmentRecord

logger = logging.getLogger(__name__)

Clock = Callable[[], int]


def system_clock() -> int:
    return int(time.time())


class CommitmentLedger:
    """Append-only timestamped record of proof digests.

    Entries are optionally mirrored to a newline-delimited file
    (``hex(digest) <tab> unix_seconds <tab> label``), which is reloaded on
    construction. Appends must be serialized by the caller.
    """

    def __init__(self, path: Optional[Path] = None, clock: Clock = system_clock):
        self.path = Path(path) if path is not None else None
        self.clock = clock
        self._entries: List[CommitmentEntry] = []
        if self.path is not None and self.path.exists():
            with self.path.open("r", encoding="utf-8") as f:
                self._entries = [CommitmentEntry.from_line(line) for line in f if line.strip()]
            logger.info(f"Loaded {len(self._entries)} commitments from {self.path}")

    @property
    def entries(self) -> Tuple[CommitmentEntry, ...]:
        return tuple(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def contains(self, digest: bytes) -> bool:
        return any(entry.proof_digest == digest for entry in self._entries)

    def commit_digest(self, digest: bytes, now: Optional[int] = None, label: str = "") -> CommitmentEntry:
        now = self.clock() if now is None else now
        if self._entries and now < self._entries[-1].timestamp:
            raise LedgerError(
                f"clock regression: {now} is earlier than the last entry at {self._entries[-1].timestamp}")
        entry = CommitmentEntry(proof_digest=digest, timestamp=now, label=label)
        if self.path is not None:
            with self.path.open("a", encoding="utf-8") as f:
                f.write(entry.to_line() + "\n")
        self._entries.append(entry)
        logger.info(f"Committed proof {digest.hex()[:16]} at {now}")
        return entry

    def commit(self, proof: Proof, now: Optional[int] = None, label: str = "") -> CommitmentEntry:
        return self.commit_digest(chain_digest(proof), now=now, label=label)

    def detect_replay(self, proof: Proof) -> bool:
        return self.contains(chain_digest(proof))


def commit(ledger: CommitmentLedger, proof: Proof, now: Optional[int] = None, label: str = "") -> CommitmentEntry:
    return ledger.commit(proof, now=now, label=label)


def detect_replay(ledger: CommitmentLedger, proof: Proof) -> bool:
    return ledger.detect_replay(proof)


class SqlCommitmentLedger:
    """Commitment ledger persisted through SQLAlchemy; exposes no update or delete.

    The unique digest column enforces replay rejection even across processes
    sharing one database.
    """

    def __init__(self, database_url: str, clock: Clock = system_clock):
        engine_options = {}
        if database_url.startswith("sqlite"):
            engine_options["connect_args"] = {"check_same_thread": False}
            if database_url in ("sqlite://", "sqlite:///:memory:"):
                engine_options["poolclass"] = StaticPool
        else:
            engine_options["pool_pre_ping"] = True
        self.engine = create_engine(database_url, **engine_options)
        Base.metadata.create_all(self.engine)
        self.session_local = sessionmaker(autocommit=False, autoflush=False, bind=self.engine)
        self.clock = clock

    def get_session(self) -> Session:
        return self.session_local()

    def contains(self, digest: bytes) -> bool:
        with self.get_session() as session:
            return session.query(CommitmentRecord).filter(
                CommitmentRecord.digest == digest.hex()).first() is not None

    def commit_digest(self, digest: bytes, now: Optional[int] = None, label: str = "") -> CommitmentEntry:
        """Append a digest; replays and clock regressions raise LedgerError."""
        now = self.clock() if now is None else now
        with self.get_session() as session:
            last = session.query(func.max(CommitmentRecord.timestamp)).scalar()
            if last is not None and now < last:
                raise LedgerError(f"clock regression: {now} is earlier than the last entry at {last}")

            record = CommitmentRecord(digest=digest.hex(), timestamp=now, label=label)
            session.add(record)
            try:
                session.commit()
            except IntegrityError:
                session.rollback()
                logger.warning(f"Replay rejected for digest {digest.hex()[:16]}")
                raise LedgerError(f"digest {digest.hex()} is already committed", replay=True)
            session.refresh(record)
            logger.info(f"Committed proof {digest.hex()[:16]} at {now} (id {record.id})")
            return CommitmentEntry.model_validate(record)

    def commit(self, proof: Proof, now: Optional[int] = None, label: str = "") -> CommitmentEntry:
        return self.commit_digest(chain_digest(proof), now=now, label=label)

    def detect_replay(self, proof: Proof) -> bool:
        return self.contains(chain_digest(proof))

    def list_entries(self, offset: int = 0, limit: int = 100) -> List[CommitmentEntry]:
        """Entries in append order."""
        with self.get_session() as session:
            records = (session.query(CommitmentRecord)
                       .order_by(CommitmentRecord.id)
                       .offset(offset)
                       .limit(limit)
                       .all())
            return [CommitmentEntry.model_validate(record) for record in records]

    def count(self) -> int:
        with self.get_session() as session:
            return session.query(func.count(CommitmentRecord.id)).scalar() or 0

    def close(self) -> None:
        self.engine.dispose()
        logger.info("Commitment ledger database connection closed")
