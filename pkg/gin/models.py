from pydantic import BaseModel, Field
from typing import Optional, List, Dict


class AddRequest(BaseModel):
    tuples: List[str]  # tuple text lines


class AddResponse(BaseModel):
    new: int
    received: int
    rejected: List[Dict[str, str]] = []
    partial: List[str] = []


class GetRequest(BaseModel):
    pattern: str


class GetResponse(BaseModel):
    count: int
    tuples: List[str]


class MapRequest(BaseModel):
    query: str
    projected: Optional[List[str]] = None
    # stop streaming after this many seconds; None streams until the client leaves
    duration: Optional[float] = Field(None, gt=0)


class BindingLine(BaseModel):
    binding: Dict[str, str]
    witnesses: List[str]


class DigestResponse(BaseModel):
    node: str
    count: int
    root: str


class HealthResponse(BaseModel):
    status: str
    service: str
    node: str
    address: str
    contacts: int
    tuples: int
    subscriptions: int
