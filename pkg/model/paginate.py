from typing import List

from pydantic import AliasChoices, BaseModel, Field

from model.proof import CommitmentEntry


class PaginateRequest(BaseModel):
    page: int = Field(default=1, ge=1)
    page_size: int = Field(
        default=10,
        ge=1,
        le=100,
        validation_alias=AliasChoices(
            'page_size', 'size', 'limit', 'pageSize'
        )
    )

    @property
    def offset(self) -> int:
        return (self.page - 1) * self.page_size


class CommitmentPage(BaseModel):
    page: int
    page_size: int
    total: int
    entries: List[CommitmentEntry]
