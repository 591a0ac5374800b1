"""Command-line client for the recall engine.

Runs the service handlers in-process by default, or posts the same request
models to a running service when --server is given.  Exit codes: 0 success,
1 runtime error, 2 usage error.  Logs go to stderr, data to files/stdout.
"""

from __future__ import annotations

import argparse
import sys
from typing import Optional

try:
    import tomllib  # py >= 3.11
except ImportError:  # pragma: no cover
    import tomli as tomllib

from .service import handlers, models

_COMMANDS = ("embed-synthetic", "train-hash", "build-index", "search", "bench", "report")

_ENDPOINTS = {
    "embed-synthetic": "/embeddings/synthesize",
    "train-hash": "/hash/train",
    "build-index": "/index/build",
    "search": "/search",
    "bench": "/bench",
    "report": "/report",
}

_LOCAL = {
    "embed-synthetic": (handlers.synthesize_embeddings, models.SynthesizeEmbeddingsResponse),
    "train-hash": (handlers.train_hash, models.TrainHashResponse),
    "build-index": (handlers.build_index, models.BuildIndexResponse),
    "search": (handlers.search, models.SearchResponse),
    "bench": (handlers.run_bench, models.BenchResponse),
    "report": (handlers.write_report, models.ReportResponse),
}


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(
        prog="semrecall",
        description="Candidate-recall engine: BM25, dense and binary-hash backends.",
    )
    parser.add_argument("--server", help="base URL of a running service; default runs in-process")
    parser.add_argument("--config", help="TOML config file with per-command sections; flags win")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    out: dict[str, argparse.ArgumentParser] = {}

    p = sub.add_parser("embed-synthetic", help="synthesize embeddings for a corpus TSV")
    p.add_argument("--corpus", required=True, help="corpus TSV path")
    p.add_argument("--dim", type=int, default=768, help="embedding dimension")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-ctx", required=True, help="output file for context embeddings")
    p.add_argument("--out-db", required=True, help="output file for database embeddings")
    out["embed-synthetic"] = p

    p = sub.add_parser("train-hash", help="train the twin-autoencoder hashing model")
    p.add_argument("--corpus", required=True)
    p.add_argument("--ctx-emb", required=True, help="context embedding file")
    p.add_argument("--db-emb", required=True, help="database embedding file")
    p.add_argument("--dim", type=int, default=128, help="hash code length in bits")
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--gamma-min", type=float, default=1e-4)
    p.add_argument("--gamma-max", type=float, default=1e-1)
    p.add_argument("--negatives", type=int, default=1, help="negatives per positive pair")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output model file")
    p.add_argument("--trace", help="optional per-minibatch loss trace CSV")
    out["train-hash"] = p

    p = sub.add_parser("build-index", help="build a search index for one backend")
    p.add_argument("--backend", required=True, choices=["bm25", "dense", "hash"])
    p.add_argument("--out", required=True)
    p.add_argument("--corpus", help="corpus TSV (bm25)")
    p.add_argument("--embeddings", help="database embedding file (dense, hash)")
    p.add_argument("--model", help="hash model file (hash)")
    p.add_argument("--k1", type=float, default=1.2)
    p.add_argument("--b", type=float, default=0.75)
    out["build-index"] = p

    p = sub.add_parser("search", help="query one index; prints rank<TAB>id<TAB>score")
    p.add_argument("--backend", required=True, choices=["bm25", "dense", "hash"])
    p.add_argument("--index", required=True)
    p.add_argument("--k", type=int, default=20)
    p.add_argument("--query", help="query text")
    p.add_argument("--embed-seed", type=int, help="seed used when embedding query text")
    p.add_argument("--model", help="hash model file (hash)")
    p.add_argument("--cosine", action="store_true", help="use cosine instead of dot product")
    out["search"] = p

    p = sub.add_parser("bench", help="run the four-axis benchmark over built indices")
    p.add_argument("--corpus", required=True)
    p.add_argument("--ctx-emb", required=True)
    p.add_argument("--db-emb", required=True)
    p.add_argument("--bm25-index")
    p.add_argument("--dense-index")
    p.add_argument("--hash-index")
    p.add_argument("--model", help="hash model file, needed with --hash-index")
    p.add_argument("--k", default="20,100", help="comma-separated K values")
    p.add_argument("--bsz", type=int, default=16, help="query batch size")
    p.add_argument("--reps", type=int, default=20, help="timed repetitions per batch")
    p.add_argument("--warmup", type=int, default=3, help="untimed warmup batches")
    p.add_argument("--workers", type=int, default=1, help=">1 switches to multi-worker throughput timing")
    p.add_argument("--no-time", action="store_true", help="skip latency measurement")
    p.add_argument("--out", required=True, help="output JSON file")
    out["bench"] = p

    p = sub.add_parser("report", help="format a bench JSON into comparison CSVs")
    p.add_argument("--bench", required=True, help="bench JSON file")
    p.add_argument("--out", required=True, help="comparison CSV path")
    p.add_argument("--storage-out", help="optional storage-breakdown CSV path")
    out["report"] = p

    return parser, out


def _apply_config(argv: list[str], subparsers: dict[str, argparse.ArgumentParser]) -> None:
    """Apply a TOML section as defaults for the invoked subcommand; flags still win."""
    if "--config" not in argv:
        return
    path = argv[argv.index("--config") + 1]
    with open(path, "rb") as fh:
        config = tomllib.load(fh)
    command = next((tok for tok in argv if tok in _COMMANDS), None)
    if command is None or command not in config:
        return
    section = {str(k).replace("-", "_"): v for k, v in config[command].items()}
    parser = subparsers[command]
    for action in parser._actions:
        if action.dest in section:
            action.default = section[action.dest]
            action.required = False


def _dispatch(command: str, request, server: Optional[str]):
    if server is None:
        fn, _ = _LOCAL[command]
        return fn(request)
    import requests

    url = server.rstrip("/") + _ENDPOINTS[command]
    resp = requests.post(url, json=request.model_dump(mode="json"))
    if resp.status_code != 200:
        try:
            detail = resp.json().get("detail", resp.text)
        except ValueError:
            detail = resp.text
        raise RuntimeError(f"{url} returned {resp.status_code}: {detail}")
    _, response_model = _LOCAL[command]
    return response_model.model_validate(resp.json())


def _build_request(args: argparse.Namespace):
    cmd = args.command
    if cmd == "embed-synthetic":
        return models.SynthesizeEmbeddingsRequest(
            corpus_path=args.corpus,
            dim=args.dim,
            seed=args.seed,
            out_contexts=args.out_ctx,
            out_database=args.out_db,
        )
    if cmd == "train-hash":
        return models.TrainHashRequest(
            corpus_path=args.corpus,
            context_embeddings=args.ctx_emb,
            database_embeddings=args.db_emb,
            code_bits=args.dim,
            epochs=args.epochs,
            batch_size=args.batch_size,
            learning_rate=args.lr,
            gamma_min=args.gamma_min,
            gamma_max=args.gamma_max,
            negatives_per_positive=args.negatives,
            seed=args.seed,
            out_model=args.out,
            trace_path=args.trace,
        )
    if cmd == "build-index":
        return models.BuildIndexRequest(
            backend=args.backend,
            out_path=args.out,
            corpus_path=args.corpus,
            embeddings_path=args.embeddings,
            model_path=args.model,
            k1=args.k1,
            b=args.b,
        )
    if cmd == "search":
        return models.SearchRequest(
            backend=args.backend,
            index_path=args.index,
            k=args.k,
            query_text=args.query,
            embed_seed=args.embed_seed,
            model_path=args.model,
            cosine=args.cosine,
        )
    if cmd == "bench":
        k_list = [int(tok) for tok in str(args.k).split(",") if tok]
        return models.BenchRequest(
            corpus_path=args.corpus,
            context_embeddings=args.ctx_emb,
            database_embeddings=args.db_emb,
            bm25_index=args.bm25_index,
            dense_index=args.dense_index,
            hash_index=args.hash_index,
            model_path=args.model,
            k_list=k_list,
            batch_size=args.bsz,
            repetitions=args.reps,
            warmup=args.warmup,
            workers=args.workers,
            measure_time=not args.no_time,
            out_json=args.out,
        )
    return models.ReportRequest(
        bench_json=args.bench,
        out_csv=args.out,
        storage_csv=args.storage_out,
    )


def _print_response(command: str, args: argparse.Namespace, resp) -> None:
    if command == "embed-synthetic":
        _log(
            f"embedded {resp.n_contexts} contexts and {resp.n_database} database "
            f"entries (d={resp.dim}) -> {resp.out_contexts}, {resp.out_database}"
        )
    elif command == "train-hash":
        for epoch, loss in enumerate(resp.epoch_mean_loss):
            _log(f"epoch {epoch}: mean loss {loss:.6f}")
        _log(f"trained {resp.code_bits}-bit model on {resp.n_pairs} pairs -> {resp.out_model}")
    elif command == "build-index":
        _log(
            f"built {resp.backend} index, n={resp.n}, code_bytes={resp.code_bytes}, "
            f"file_bytes={resp.file_bytes} -> {resp.out_path}"
        )
    elif command == "search":
        for hit in resp.results:
            score = f"{int(hit.score)}" if resp.backend == "hash" else f"{hit.score:.6f}"
            print(f"{hit.rank}\t{hit.id}\t{score}")
    elif command == "bench":
        for cells in resp.backends:
            cov = ", ".join(f"top-{k}={v:.4f}" for k, v in sorted(cells.coverage.items(), key=lambda kv: int(kv[0])))
            _log(f"{cells.method}: {cov}, code_bytes={cells.code_bytes}")
        _log(f"wrote benchmark results -> {resp.out_json}")
    else:
        _log(f"wrote {resp.rows} backend rows -> {resp.out_csv}")
        if resp.storage_csv:
            _log(f"wrote storage breakdown -> {resp.storage_csv}")


def main(argv: Optional[list[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, subparsers = build_parser()
    try:
        _apply_config(argv, subparsers)
    except (OSError, IndexError, tomllib.TOMLDecodeError) as exc:
        _log(f"semrecall: bad --config: {exc}")
        return 2
    args = parser.parse_args(argv)
    try:
        request = _build_request(args)
        resp = _dispatch(args.command, request, args.server)
        _print_response(args.command, args, resp)
    except Exception as exc:  # noqa: BLE001 - CLI boundary maps errors to exit 1
        _log(f"semrecall: {exc}")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
