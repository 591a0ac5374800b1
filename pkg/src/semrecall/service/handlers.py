"""Handler implementations behind the service endpoints.

Each handler takes a request model and returns a response model, so the HTTP
layer and the CLI client stay equally thin.  All artifacts are exchanged
through files; handlers hold no mutable state apart from a small read cache
of loaded indices.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .. import __version__, bench, corpus, hashing, retrieval
from . import models


def health() -> models.HealthResponse:
    return models.HealthResponse(status="ok", version=__version__)


def _require_file(path: str, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"{what} not found: {path}")
    return p


def synthesize_embeddings(
    req: models.SynthesizeEmbeddingsRequest,
) -> models.SynthesizeEmbeddingsResponse:
    corp = corpus.load_corpus(_require_file(req.corpus_path, "corpus"))
    ctx_store = corpus.embed_texts([u.text for u in corp.contexts], req.dim, req.seed)
    db_store = corpus.embed_texts([u.text for u in corp.database], req.dim, req.seed)
    corpus.save_embeddings(ctx_store, req.out_contexts)
    corpus.save_embeddings(db_store, req.out_database)
    return models.SynthesizeEmbeddingsResponse(
        n_contexts=ctx_store.n,
        n_database=db_store.n,
        dim=req.dim,
        out_contexts=req.out_contexts,
        out_database=req.out_database,
    )


def train_hash(req: models.TrainHashRequest) -> models.TrainHashResponse:
    corp = corpus.load_corpus(_require_file(req.corpus_path, "corpus"))
    ctx_store = corpus.load_embeddings(_require_file(req.context_embeddings, "context embeddings"))
    db_store = corpus.load_embeddings(_require_file(req.database_embeddings, "database embeddings"))
    if ctx_store.d != db_store.d:
        raise ValueError(
            f"context embeddings d={ctx_store.d} does not match database embeddings d={db_store.d}"
        )
    pairs = corpus.make_pairs(corp, req.negatives_per_positive, req.seed)
    config = hashing.TrainConfig(
        epochs=req.epochs,
        batch_size=req.batch_size,
        learning_rate=req.learning_rate,
        gamma_min=req.gamma_min,
        gamma_max=req.gamma_max,
        seed=req.seed,
    )
    model = hashing.init_hash_model(ctx_store.d, req.code_bits, req.seed)
    result = hashing.train(model, ctx_store, db_store, pairs, config)
    hashing.save_model(result.model, req.out_model)
    if req.trace_path:
        with open(req.trace_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "step", "gamma", "preserved", "hash", "quantization", "total"])
            for entry in result.trace:
                writer.writerow(
                    [
                        entry.epoch,
                        entry.step,
                        f"{entry.gamma:.10g}",
                        f"{entry.preserved:.10g}",
                        f"{entry.hash:.10g}",
                        f"{entry.quantization:.10g}",
                        f"{entry.total:.10g}",
                    ]
                )
    return models.TrainHashResponse(
        out_model=req.out_model,
        code_bits=req.code_bits,
        epochs=req.epochs,
        n_pairs=len(pairs),
        epoch_mean_loss=result.epoch_mean_total(),
    )


def build_index(req: models.BuildIndexRequest) -> models.BuildIndexResponse:
    if req.backend == "bm25":
        if not req.corpus_path:
            raise ValueError("bm25 index needs corpus_path")
        corp = corpus.load_corpus(_require_file(req.corpus_path, "corpus"))
        index = retrieval.bm25_build(corp.database, req.k1, req.b)
        retrieval.save_inverted_index(index, req.out_path)
        n = index.n_docs
    elif req.backend == "dense":
        if not req.embeddings_path:
            raise ValueError("dense index needs embeddings_path")
        store = corpus.load_embeddings(_require_file(req.embeddings_path, "embeddings"))
        index = retrieval.FlatIndex(store.vectors)
        retrieval.save_flat_index(index, req.out_path)
        n = index.n
    else:
        if not req.embeddings_path or not req.model_path:
            raise ValueError("hash index needs embeddings_path and model_path")
        store = corpus.load_embeddings(_require_file(req.embeddings_path, "embeddings"))
        model = hashing.load_model(_require_file(req.model_path, "model"))
        codes = hashing.export_codes(model, "can", store)
        index = retrieval.BinaryIndex.from_sign_codes(codes)
        retrieval.save_binary_index(index, req.out_path)
        n = index.n
    storage = bench.measure_storage(req.out_path)
    return models.BuildIndexResponse(
        backend=req.backend,
        out_path=req.out_path,
        n=n,
        code_bytes=storage.code_bytes,
        file_bytes=storage.file_bytes,
    )


_INDEX_CACHE: dict[tuple, object] = {}
_INDEX_CACHE_LIMIT = 4

_LOADERS = {
    "bm25": retrieval.load_inverted_index,
    "dense": retrieval.load_flat_index,
    "hash": retrieval.load_binary_index,
}


def _load_index_cached(backend: str, path: Path):
    stat = path.stat()
    key = (backend, str(path), stat.st_mtime_ns, stat.st_size)
    if key not in _INDEX_CACHE:
        if len(_INDEX_CACHE) >= _INDEX_CACHE_LIMIT:
            _INDEX_CACHE.pop(next(iter(_INDEX_CACHE)))
        _INDEX_CACHE[key] = _LOADERS[backend](path)
    return _INDEX_CACHE[key]


def _query_vector(req: models.SearchRequest, d: int) -> np.ndarray:
    if req.query_vector is not None:
        vec = np.asarray(req.query_vector, dtype=np.float32)
        if vec.shape != (d,):
            raise ValueError(f"query_vector must have dimension {d}, got {vec.shape}")
        return vec
    if req.query_text is None:
        raise ValueError(f"{req.backend} search needs query_text or query_vector")
    if req.embed_seed is None:
        raise ValueError("query_text search needs embed_seed to synthesize the query embedding")
    return corpus.synth_embed(req.query_text, d, req.embed_seed).astype(np.float32)


def search(req: models.SearchRequest) -> models.SearchResponse:
    index_path = _require_file(req.index_path, "index")
    index = _load_index_cached(req.backend, index_path)
    if req.backend == "bm25":
        if req.query_text is None:
            raise ValueError("bm25 search needs query_text")
        hits = retrieval.bm25_search_topk(index, req.query_text, req.k)
    elif req.backend == "dense":
        vec = _query_vector(req, index.d)
        hits = retrieval.dense_search_topk(index, vec, req.k, cosine=req.cosine)
    else:
        if not req.model_path:
            raise ValueError("hash search needs model_path to encode the query")
        model = hashing.load_model(_require_file(req.model_path, "model"))
        vec = _query_vector(req, model.d)
        code = hashing.sign_quantize(hashing.encode(model, "ctx", vec.astype(np.float64)))
        hits = retrieval.binary_search_topk(index, retrieval.pack(code), req.k)
    results = [
        models.SearchHit(rank=i + 1, id=rid, score=float(score))
        for i, (rid, score) in enumerate(hits)
    ]
    return models.SearchResponse(backend=req.backend, k=req.k, results=results)


def run_bench(req: models.BenchRequest) -> models.BenchResponse:
    corp = corpus.load_corpus(_require_file(req.corpus_path, "corpus"))
    ctx_store = corpus.load_embeddings(_require_file(req.context_embeddings, "context embeddings"))
    db_store = corpus.load_embeddings(_require_file(req.database_embeddings, "database embeddings"))
    db_ids = corp.database_ids()
    truth = [db_ids[resp.text] for resp in corp.responses]
    config = bench.BenchConfig(
        batch_size=req.batch_size,
        k_list=tuple(req.k_list),
        repetitions=req.repetitions,
        warmup=req.warmup,
        workers=req.workers,
    )
    context_refs = ctx_store.vectors
    candidate_ref = lambda rid: db_store.vectors[rid]
    scorer = bench.shifted_cosine

    jobs = []
    if req.bm25_index:
        index = retrieval.load_inverted_index(_require_file(req.bm25_index, "bm25 index"))
        queries = [u.text for u in corp.contexts]
        jobs.append((bench.Bm25Backend(index), queries, req.bm25_index))
    if req.dense_index:
        index = retrieval.load_flat_index(_require_file(req.dense_index, "dense index"))
        if index.d != ctx_store.d:
            raise ValueError("dense index dimension does not match context embeddings")
        jobs.append((bench.DenseBackend(index), ctx_store.vectors, req.dense_index))
    if req.hash_index:
        if not req.model_path:
            raise ValueError("hash benchmark needs model_path to encode the queries")
        index = retrieval.load_binary_index(_require_file(req.hash_index, "hash index"))
        model = hashing.load_model(_require_file(req.model_path, "model"))
        codes = hashing.export_codes(model, "ctx", ctx_store)
        jobs.append((bench.HashBackend(index), retrieval.pack_matrix(codes), req.hash_index))
    if not jobs:
        raise ValueError("no index given; pass at least one of bm25_index/dense_index/hash_index")

    reports = []
    for backend, queries, index_path in jobs:
        reports.append(
            bench.evaluate_backend(
                backend,
                queries,
                truth,
                index_path,
                config,
                context_refs=context_refs,
                candidate_ref=candidate_ref,
                scorer=scorer,
                measure_time=req.measure_time,
            )
        )
    database_bytes = sum(len(u.text.encode("utf-8")) for u in corp.database)
    payload = {
        "k_list": list(req.k_list),
        "database_bytes": database_bytes,
        "backends": [rep.to_dict() for rep in reports],
    }
    with open(req.out_json, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
    return models.BenchResponse(
        out_json=req.out_json,
        k_list=list(req.k_list),
        database_bytes=database_bytes,
        backends=[models.BackendCells(**rep.to_dict()) for rep in reports],
    )


def write_report(req: models.ReportRequest) -> models.ReportResponse:
    raw = json.loads(_require_file(req.bench_json, "bench result").read_text(encoding="utf-8"))
    reports = [bench.BackendReport.from_dict(entry) for entry in raw["backends"]]
    header = bench.emit_report(
        reports,
        req.out_csv,
        storage_path=req.storage_csv,
        k_list=tuple(raw["k_list"]),
        database_bytes=raw.get("database_bytes"),
    )
    return models.ReportResponse(
        out_csv=req.out_csv,
        storage_csv=req.storage_csv,
        rows=len(reports),
        header=header,
    )
