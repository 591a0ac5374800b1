"""Request/response models shared by the HTTP service and the CLI client."""

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, Field

Backend = Literal["bm25", "dense", "hash"]


class HealthResponse(BaseModel):
    status: str
    version: str


class SynthesizeEmbeddingsRequest(BaseModel):
    corpus_path: str
    dim: int = 768
    seed: int = 0
    out_contexts: str
    out_database: str


class SynthesizeEmbeddingsResponse(BaseModel):
    n_contexts: int
    n_database: int
    dim: int
    out_contexts: str
    out_database: str


class TrainHashRequest(BaseModel):
    corpus_path: str
    context_embeddings: str
    database_embeddings: str
    code_bits: int = 128
    epochs: int = 5
    batch_size: int = 64
    learning_rate: float = 1e-3
    gamma_min: float = 1e-4
    gamma_max: float = 1e-1
    negatives_per_positive: int = 1
    seed: int = 0
    out_model: str
    trace_path: Optional[str] = None


class TrainHashResponse(BaseModel):
    out_model: str
    code_bits: int
    epochs: int
    n_pairs: int
    epoch_mean_loss: list[float]


class BuildIndexRequest(BaseModel):
    backend: Backend
    out_path: str
    corpus_path: Optional[str] = None  # bm25
    embeddings_path: Optional[str] = None  # dense + hash
    model_path: Optional[str] = None  # hash
    k1: float = 1.2
    b: float = 0.75


class BuildIndexResponse(BaseModel):
    backend: Backend
    out_path: str
    n: int
    code_bytes: int
    file_bytes: int


class SearchHit(BaseModel):
    rank: int
    id: int
    score: float


class SearchRequest(BaseModel):
    backend: Backend
    index_path: str
    k: int = Field(default=20, ge=1)
    query_text: Optional[str] = None
    query_vector: Optional[list[float]] = None
    model_path: Optional[str] = None  # hash: encodes the query with the ctx tower
    embed_seed: Optional[int] = None  # dense/hash with query_text
    cosine: bool = False


class SearchResponse(BaseModel):
    backend: Backend
    k: int
    results: list[SearchHit]


class BenchRequest(BaseModel):
    corpus_path: str
    context_embeddings: str
    database_embeddings: str
    bm25_index: Optional[str] = None
    dense_index: Optional[str] = None
    hash_index: Optional[str] = None
    model_path: Optional[str] = None  # required when hash_index is given
    k_list: list[int] = Field(default_factory=lambda: [20, 100])
    batch_size: int = 16
    repetitions: int = 20
    warmup: int = 3
    workers: int = 1
    measure_time: bool = True
    out_json: str


class LatencyCell(BaseModel):
    median_ms: float
    p95_ms: float
    mean_ms: float
    batches: int
    samples: int


class BackendCells(BaseModel):
    method: str
    coverage: dict[str, float]
    correlation: dict[str, Optional[float]]
    code_bytes: int
    file_bytes: int
    latency: dict[str, LatencyCell]


class BenchResponse(BaseModel):
    out_json: str
    k_list: list[int]
    database_bytes: int
    backends: list[BackendCells]


class ReportRequest(BaseModel):
    bench_json: str
    out_csv: str
    storage_csv: Optional[str] = None


class ReportResponse(BaseModel):
    out_csv: str
    storage_csv: Optional[str]
    rows: int
    header: list[str]
