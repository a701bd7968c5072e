from typing import List, Optional

from pydantic import BaseModel, Field


class IntervalIn(BaseModel):
    x: float
    y: float
    eps: float = Field(..., ge=0, description="Half-width of the interval.")


class PolicyDoc(BaseModel):
    """Checkpoint document as written by ``rti train``."""

    kind: str = Field(..., examples=["myopic"])
    d: int = Field(3, ge=1)
    phi: int = Field(1, ge=1)
    values: dict = Field(default_factory=dict)
    standardization: Optional[dict] = None


class SessionCreate(BaseModel):
    policy: PolicyDoc
    e0: Optional[List[float]] = None


class SessionCreated(BaseModel):
    session_id: str
    d: int
    phi: int
    kind: str


class SectionOut(BaseModel):
    index: int
    x_start: float
    x_end: float
    coeffs: List[float]


class IntervalBatch(BaseModel):
    intervals: List[IntervalIn] = Field(..., min_length=1)


class SectionsOut(BaseModel):
    session_id: str
    received: int
    sections: List[SectionOut]


class ReconstructRequest(BaseModel):
    policy: PolicyDoc
    intervals: List[IntervalIn] = Field(..., min_length=2)
    e0: Optional[List[float]] = None


class ReconstructOut(BaseModel):
    sections: List[SectionOut]
    loss: float = Field(..., description="Mean curvature per section, in the policy's units.")


class Health(BaseModel):
    status: str = "ok"
    version: str
    sessions: int
