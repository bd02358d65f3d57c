"""Request and response models for the recommendation service."""

from typing import List, Optional

from pydantic import BaseModel, Field


class Health(BaseModel):
    status: str
    users: int
    items: int
    epoch: int
    config_digest: str
    ablation: str


class RecommendRequest(BaseModel):
    user: str = Field(..., description="raw user id as it appears in interactions.tsv")
    n: int = Field(10, ge=1)


class RecommendResponse(BaseModel):
    user: str
    items: List[str]
    scores: List[float]
    warning: Optional[str] = None


class ScoreRequest(BaseModel):
    user: str
    items: List[str]


class ScoreResponse(BaseModel):
    user: str
    scores: List[float]


class EvaluateResponse(BaseModel):
    part: str
    users: int
    metrics: dict
