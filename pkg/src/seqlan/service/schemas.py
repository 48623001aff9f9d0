"""Request/response models for the tagging service."""

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str = "ok"


class ModelInfo(BaseModel):
    arch: str
    num_layers: int
    d_h: int
    heads: int
    dropout: float
    labels: list[str]
    parameter_count: int


class LoadRequest(BaseModel):
    path: str


class LabelProb(BaseModel):
    label: str
    prob: float


class TagRequest(BaseModel):
    sentences: list[list[str]] = Field(min_length=1)
    with_probs: bool = False
    top_k: int = Field(default=5, ge=1)


class TaggedSentence(BaseModel):
    tokens: list[str]
    tags: list[str]
    probs: Optional[list[list[LabelProb]]] = None


class TagResponse(BaseModel):
    sentences: list[TaggedSentence]


class AttentionRequest(BaseModel):
    sentences: list[list[str]] = Field(min_length=1)


class AttentionRecord(BaseModel):
    tokens: list[str]
    labels: list[str]
    layers: list[list[list[float]]]


class AttentionResponse(BaseModel):
    records: list[AttentionRecord]


class EvalRequest(BaseModel):
    path: str
    metric: Literal["acc", "span-f1"] = "acc"
    scheme: Literal["BIO", "BIOES"] = "BIO"


class EvalResponse(BaseModel):
    metric: str
    value: float
    precision: Optional[float] = None
    recall: Optional[float] = None


class BenchRequest(BaseModel):
    archs: list[Literal["crf", "lan"]] = ["crf", "lan"]
    sizes: list[int] = [10, 50, 100, 400]
    length: int = Field(default=30, ge=1)
    reps: int = Field(default=5, ge=1)
    hidden: int = Field(default=100, ge=2)
    seed: int = 0


class BenchRow(BaseModel):
    arch: str
    n_labels: int
    length: int
    reps: int
    median_seconds: float
    op_count: int


class BenchResponse(BaseModel):
    rows: list[BenchRow]
