from datetime import datetime, timezone

from sqlalchemy import BigInteger, Column, DateTime, Integer, String
from sqlalchemy.orm import declarative_base

Base = declarative_base()


class CommitmentRecord(Base):
    """SQLAlchemy model for timestamped proof commitments."""
    __tablename__ = 'commitments'

    id = Column(Integer, primary_key=True, autoincrement=True)
    digest = Column(String(64), nullable=False, unique=True, index=True)
    timestamp = Column(BigInteger, nullable=False)
    label = Column(String(512), nullable=False, default="")
    created_at = Column(DateTime(timezone=True), default=lambda: datetime.now(timezone.utc))

    def __repr__(self):
        return f"<CommitmentRecord(id={self.id}, digest='{self.digest[:16]}...', timestamp={self.timestamp})>"
