"""Candidate-recall engine: BM25, dense and binary-hash backends plus a benchmark harness."""

__version__ = "0.1.0"
