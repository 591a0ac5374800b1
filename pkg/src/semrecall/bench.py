"""Four-axis evaluation: coverage, correlation via a pluggable scorer, storage, latency.

Latency protocol: queries are grouped into batches of ``batch_size`` (16 by
default), the first ``warmup`` batches run untimed, then every batch is timed
``repetitions`` times.  The headline number is the median ms per batch; p95
and mean are reported alongside.  Timing never alters results: the returned
result lists come from a separate untimed pass.
"""

from __future__ import annotations

import csv
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np

from . import retrieval
from .corpus import EMBEDDING_MAGIC, EmbeddingStore
from .retrieval import (
    BINARY_INDEX_MAGIC,
    FLAT_INDEX_MAGIC,
    INVERTED_INDEX_MAGIC,
    BinaryIndex,
    FlatIndex,
    IndexFormatError,
    InvertedIndex,
)

ScorerHandle = Callable[[np.ndarray, np.ndarray], float]


@dataclass
class BenchConfig:
    batch_size: int = 16
    k_list: tuple[int, ...] = (20, 100)
    repetitions: int = 20
    warmup: int = 3
    seed: int = 0
    # workers > 1 switches timing to throughput mode: batches fan out across a
    # thread pool and the per-batch figure is total wall time / batches
    workers: int = 1

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.k_list:
            raise ValueError("k_list must not be empty")
        if self.repetitions < 1 or self.warmup < 0:
            raise ValueError("repetitions must be >= 1 and warmup >= 0")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


@dataclass(frozen=True)
class LatencyStats:
    median_ms: float
    p95_ms: float
    mean_ms: float
    batches: int
    samples: int


@dataclass
class BackendReport:
    method: str
    coverage: dict[int, float] = field(default_factory=dict)
    correlation: dict[int, float | None] = field(default_factory=dict)
    code_bytes: int = 0
    file_bytes: int = 0
    latency: dict[int, LatencyStats] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "coverage": {str(k): v for k, v in self.coverage.items()},
            "correlation": {str(k): v for k, v in self.correlation.items()},
            "code_bytes": self.code_bytes,
            "file_bytes": self.file_bytes,
            "latency": {
                str(k): {
                    "median_ms": s.median_ms,
                    "p95_ms": s.p95_ms,
                    "mean_ms": s.mean_ms,
                    "batches": s.batches,
                    "samples": s.samples,
                }
                for k, s in self.latency.items()
            },
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "BackendReport":
        return cls(
            method=raw["method"],
            coverage={int(k): v for k, v in raw["coverage"].items()},
            correlation={int(k): v for k, v in raw["correlation"].items()},
            code_bytes=raw["code_bytes"],
            file_bytes=raw["file_bytes"],
            latency={
                int(k): LatencyStats(
                    s["median_ms"], s["p95_ms"], s["mean_ms"], s["batches"], s["samples"]
                )
                for k, s in raw["latency"].items()
            },
        )


class SearchBackend(Protocol):
    name: str

    def search_batch(self, queries: Sequence, k: int) -> list[list[tuple[int, float]]]: ...


class DenseBackend:
    """Flat-index adapter; queries are rows of an (m, d) float32 matrix."""

    name = "dense"

    def __init__(self, index: FlatIndex, cosine: bool = False):
        self.index = index
        self.cosine = cosine

    def search_batch(self, queries, k):
        return retrieval.dense_search_topk_batch(self.index, np.asarray(queries), k, self.cosine)


class HashBackend:
    """Binary-index adapter; queries are packed (m, ceil(h/8)) uint8 rows."""

    name = "hash"

    def __init__(self, index: BinaryIndex):
        self.index = index

    def search_batch(self, queries, k):
        return retrieval.binary_search_topk_batch(self.index, np.asarray(queries), k)


class Bm25Backend:
    """Inverted-index adapter; queries are raw text strings."""

    name = "bm25"

    def __init__(self, index: InvertedIndex):
        self.index = index

    def search_batch(self, queries, k):
        return [retrieval.bm25_search_topk(self.index, q, k) for q in queries]


def coverage_at_k(results: list[tuple[int, float]], truth_id: int, k: int) -> int:
    """1 iff the ground-truth id appears among the first k results."""
    return int(any(rid == truth_id for rid, _ in results[:k]))


def correlation_at_k(
    results: list[tuple[int, float]],
    context_ref: np.ndarray,
    candidate_ref: Callable[[int], np.ndarray],
    scorer: ScorerHandle,
    k: int,
) -> float | None:
    """Mean scorer value over the top-k candidates; None when results are empty."""
    top = results[:k]
    if not top:
        return None
    return float(np.mean([scorer(context_ref, candidate_ref(rid)) for rid, _ in top]))


def shifted_cosine(a: np.ndarray, b: np.ndarray) -> float:
    """(1 + cos) / 2 mapped into [0, 1]; zero vectors score 0.5."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.linalg.norm(a) * np.linalg.norm(b)
    if denom == 0.0:
        return 0.5
    cos = float(np.clip(a @ b / denom, -1.0, 1.0))
    return 0.5 * (1.0 + cos)


@dataclass(frozen=True)
class StorageReport:
    code_bytes: int
    file_bytes: int


def measure_storage(path: str | Path) -> StorageReport:
    """Payload and file byte counts for any index/embedding file by magic sniffing."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"index file not found: {path}")
    file_bytes = path.stat().st_size
    with open(path, "rb") as fh:
        head = fh.read(16)
    if len(head) < 16:
        raise IndexFormatError(f"{path}: too short to hold a header")
    magic = head[:8]
    if magic == BINARY_INDEX_MAGIC:
        n, h = struct.unpack_from("<II", head, 8)
        code_bytes = retrieval.binary_code_bytes(n, h)
    elif magic in (FLAT_INDEX_MAGIC, EMBEDDING_MAGIC):
        n, d = struct.unpack_from("<II", head, 8)
        code_bytes = n * d * 4
    elif magic == INVERTED_INDEX_MAGIC:
        code_bytes = retrieval.inverted_index_payload_bytes(path)
    else:
        raise IndexFormatError(f"{path}: unrecognized magic {magic!r}")
    return StorageReport(code_bytes, file_bytes)


def _chunk(items, size: int) -> list:
    return [items[i : i + size] for i in range(0, len(items), size)]


def measure_latency(
    backend: SearchBackend, queries: Sequence, config: BenchConfig, k: int
) -> tuple[LatencyStats, list[list[tuple[int, float]]]]:
    """Median/p95/mean wall-clock ms per batch, plus the untimed results."""
    batches = _chunk(queries, config.batch_size)
    if len(batches) < config.warmup + 1:
        raise ValueError(
            f"need at least {config.warmup + 1} batches, got {len(batches)} "
            f"({len(queries)} queries at batch_size={config.batch_size})"
        )
    results: list[list[tuple[int, float]]] = []
    for batch in batches:
        results.extend(backend.search_batch(batch, k))
    for batch in batches[: config.warmup]:
        backend.search_batch(batch, k)
    samples = []
    if config.workers == 1:
        for _ in range(config.repetitions):
            for batch in batches:
                t0 = time.perf_counter()
                backend.search_batch(batch, k)
                samples.append((time.perf_counter() - t0) * 1e3)
    else:
        # throughput mode: per-query outputs stay worker-count independent,
        # only the timing aggregation changes
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            for _ in range(config.repetitions):
                t0 = time.perf_counter()
                list(pool.map(lambda b: backend.search_batch(b, k), batches))
                total_ms = (time.perf_counter() - t0) * 1e3
                samples.extend([total_ms / len(batches)] * len(batches))
    arr = np.array(samples)
    stats = LatencyStats(
        median_ms=float(np.median(arr)),
        p95_ms=float(np.percentile(arr, 95)),
        mean_ms=float(arr.mean()),
        batches=len(batches),
        samples=len(samples),
    )
    return stats, results


def evaluate_backend(
    backend: SearchBackend,
    queries: Sequence,
    truth_ids: Sequence[int] | None,
    index_path: str | Path,
    config: BenchConfig,
    context_refs: np.ndarray | None = None,
    candidate_ref: Callable[[int], np.ndarray] | None = None,
    scorer: ScorerHandle | None = None,
    measure_time: bool = True,
) -> BackendReport:
    """Run the full four-axis evaluation for one backend."""
    report = BackendReport(method=backend.name)
    storage = measure_storage(index_path)
    report.code_bytes = storage.code_bytes
    report.file_bytes = storage.file_bytes
    for k in config.k_list:
        if measure_time:
            stats, results = measure_latency(backend, queries, config, k)
            report.latency[k] = stats
        else:
            results = []
            for batch in _chunk(queries, config.batch_size):
                results.extend(backend.search_batch(batch, k))
        if truth_ids is not None:
            hits = [coverage_at_k(res, truth, k) for res, truth in zip(results, truth_ids)]
            report.coverage[k] = float(np.mean(hits))
        if scorer is not None and context_refs is not None and candidate_ref is not None:
            scores = [
                correlation_at_k(res, context_refs[i], candidate_ref, scorer, k)
                for i, res in enumerate(results)
            ]
            kept = [s for s in scores if s is not None]
            report.correlation[k] = float(np.mean(kept)) if kept else None
    return report


# ---------------------------------------------------------------------------
# synthetic cluster benchmark


@dataclass
class SyntheticBenchmark:
    candidates: EmbeddingStore
    queries: EmbeddingStore
    truth: np.ndarray  # truth[i] = candidate id for query i


def _perturb_rows(rows: np.ndarray, noise: float, rng: np.random.Generator) -> np.ndarray:
    """Add a random direction of L2 length ``noise`` to each unit row, then renormalize."""
    if noise == 0.0:
        # keep rows bitwise identical so zero-noise queries equal their truth vectors
        return rows.copy()
    direction = rng.standard_normal(rows.shape)
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    noisy = rows + noise * direction
    norms = np.linalg.norm(noisy, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    return noisy / norms


def build_synthetic_benchmark(
    n_clusters: int,
    per_cluster: int,
    d: int,
    noise: float,
    seed: int,
    n_queries: int = 200,
) -> SyntheticBenchmark:
    """Clustered unit vectors with queries perturbed from known candidates.

    Truth is a bijection from queries onto distinct candidate ids.
    """
    if n_clusters < 2:
        raise ValueError("need at least 2 clusters")
    if per_cluster < 1 or d < 1 or noise < 0:
        raise ValueError("invalid benchmark sizes")
    n = n_clusters * per_cluster
    if n_queries < 1 or n_queries > n:
        raise ValueError("n_queries must be in [1, n_clusters*per_cluster]")
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xBE7C)))
    centers = rng.standard_normal((n_clusters, d))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    spread = np.repeat(centers, per_cluster, axis=0)
    candidates = _perturb_rows(spread, noise, rng)
    truth = rng.choice(n, size=n_queries, replace=False).astype(np.int64)
    queries = _perturb_rows(candidates[truth], noise, rng)
    return SyntheticBenchmark(
        candidates=EmbeddingStore(candidates.astype(np.float32)),
        queries=EmbeddingStore(queries.astype(np.float32)),
        truth=truth,
    )


def make_training_set(
    candidates: EmbeddingStore,
    n_positives: int,
    noise: float,
    negatives_per_positive: int,
    seed: int,
):
    """Perturbed-context training pairs over a candidate store.

    Context i is a perturbation of a sampled candidate (its positive);
    negatives are uniform over the remaining candidates.
    """
    from .corpus import PairExample

    if n_positives < 1:
        raise ValueError("n_positives must be >= 1")
    n = candidates.n
    if negatives_per_positive >= n:
        raise ValueError("negatives_per_positive must be smaller than the candidate count")
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x7A1)))
    sources = rng.integers(0, n, size=n_positives)
    ctx = _perturb_rows(candidates.vectors[sources].astype(np.float64), noise, rng)
    pairs = []
    for i, positive in enumerate(sources):
        pairs.append(PairExample(i, int(positive), 1))
        taken = {int(positive)}
        while len(taken) < negatives_per_positive + 1:
            cand = int(rng.integers(0, n))
            if cand in taken:
                continue
            taken.add(cand)
            pairs.append(PairExample(i, cand, 0))
    return EmbeddingStore(ctx.astype(np.float32)), pairs


# ---------------------------------------------------------------------------
# report emission


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


def emit_report(
    reports: list[BackendReport],
    out_path: str | Path,
    storage_path: str | Path | None = None,
    k_list: tuple[int, ...] = (20, 100),
    database_bytes: int | None = None,
) -> list[str]:
    """Write the comparison CSV (and optional storage-breakdown CSV); returns the header."""
    if not reports:
        raise ValueError("no backend reports to emit")
    header = (
        ["Method"]
        + [f"Top-{k}" for k in k_list]
        + [f"Correlation-{k}" for k in k_list]
        + ["code_bytes", "file_bytes"]
        + [f"latency{k}" for k in k_list]
    )
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for rep in reports:
            row = [rep.method]
            row += [_fmt(rep.coverage.get(k)) for k in k_list]
            row += [_fmt(rep.correlation.get(k)) for k in k_list]
            row += [str(rep.code_bytes), str(rep.file_bytes)]
            row += [
                _fmt(rep.latency[k].median_ms) if k in rep.latency else "" for k in k_list
            ]
            writer.writerow(row)
    if storage_path is not None:
        with open(storage_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            cols = ["Method", "code_bytes", "file_bytes"]
            if database_bytes is not None:
                cols.append("database_bytes")
            writer.writerow(cols)
            for rep in reports:
                row = [rep.method, str(rep.code_bytes), str(rep.file_bytes)]
                if database_bytes is not None:
                    row.append(str(database_bytes))
                writer.writerow(row)
    return header
