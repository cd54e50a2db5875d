import logging
from typing import Annotated

from fastapi import APIRouter, Depends, HTTPException, Query, Request, status
from pydantic import BaseModel

from controller.commitment import SqlCommitmentLedger
from controller.proofchain import chain_digest, deserialize
from errors import LedgerError
from model.paginate import CommitmentPage, PaginateRequest
from model.proof import CommitmentEntry
from settings import SETTINGS

logger = logging.getLogger(__name__)

router = APIRouter(prefix="/v1/commitments", tags=["commitments", "ledger"])

_ledger: SqlCommitmentLedger | None = None


def get_ledger() -> SqlCommitmentLedger:
    """Ledger bound to ``SETTINGS.ledger_db_url``, created on first use."""
    global _ledger
    if _ledger is None:
        _ledger = SqlCommitmentLedger(SETTINGS.ledger_db_url)
    return _ledger


class ReplayCheck(BaseModel):
    proof_digest: str
    committed: bool


async def proof_digest(request: Request) -> bytes:
    """Chain digest of the serialized proof sent as the raw request body."""
    return chain_digest(deserialize(await request.body()))


@router.post("/", status_code=status.HTTP_201_CREATED, summary="Timestamp a serialized proof")
async def submit_proof(
    digest: Annotated[bytes, Depends(proof_digest)],
    ledger: Annotated[SqlCommitmentLedger, Depends(get_ledger)],
    label: str = Query("", max_length=512, description="Free-form label stored with the entry"),
) -> CommitmentEntry:
    try:
        return ledger.commit_digest(digest, label=label)
    except LedgerError as e:
        if e.context.get("replay"):
            raise HTTPException(status_code=status.HTTP_409_CONFLICT, detail=e.message)
        raise


@router.post("/replay", summary="Check whether a proof is already committed")
async def check_replay(
    digest: Annotated[bytes, Depends(proof_digest)],
    ledger: Annotated[SqlCommitmentLedger, Depends(get_ledger)],
) -> ReplayCheck:
    return ReplayCheck(proof_digest=digest.hex(), committed=ledger.contains(digest))


@router.get("/", summary="List commitments in append order")
async def list_commitments(
    ledger: Annotated[SqlCommitmentLedger, Depends(get_ledger)],
    page: int = Query(1, ge=1),
    page_size: int = Query(10, ge=1, le=100),
) -> CommitmentPage:
    paging = PaginateRequest(page=page, page_size=page_size)
    return CommitmentPage(
        page=paging.page,
        page_size=paging.page_size,
        total=ledger.count(),
        entries=ledger.list_entries(offset=paging.offset, limit=paging.page_size),
    )
