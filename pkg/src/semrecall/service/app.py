"""FastAPI application; run with ``uvicorn semrecall.service.app:app``."""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..hashing import TrainingDivergedError
from . import handlers, models

app = FastAPI(title="semrecall", version=__version__)


@app.exception_handler(FileNotFoundError)
async def _missing_file(request: Request, exc: FileNotFoundError):
    return JSONResponse(status_code=404, content={"detail": str(exc)})


@app.exception_handler(ValueError)
async def _bad_request(request: Request, exc: ValueError):
    return JSONResponse(status_code=400, content={"detail": str(exc)})


@app.exception_handler(TrainingDivergedError)
async def _diverged(request: Request, exc: TrainingDivergedError):
    return JSONResponse(status_code=422, content={"detail": str(exc)})


@app.get("/health", response_model=models.HealthResponse)
def health():
    return handlers.health()


@app.post("/embeddings/synthesize", response_model=models.SynthesizeEmbeddingsResponse)
def synthesize_embeddings(req: models.SynthesizeEmbeddingsRequest):
    return handlers.synthesize_embeddings(req)


@app.post("/hash/train", response_model=models.TrainHashResponse)
def train_hash(req: models.TrainHashRequest):
    return handlers.train_hash(req)


@app.post("/index/build", response_model=models.BuildIndexResponse)
def build_index(req: models.BuildIndexRequest):
    return handlers.build_index(req)


@app.post("/search", response_model=models.SearchResponse)
def search(req: models.SearchRequest):
    return handlers.search(req)


@app.post("/bench", response_model=models.BenchResponse)
def run_bench(req: models.BenchRequest):
    return handlers.run_bench(req)


@app.post("/report", response_model=models.ReportResponse)
def write_report(req: models.ReportRequest):
    return handlers.write_report(req)
