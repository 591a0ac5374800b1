"""Corpus ingestion, embedding files, deterministic synthetic embeddings and training pairs.

File formats owned by this module:

* Corpus TSV: one ``context<TAB>response`` per line, UTF-8, no header.
* Embedding file: magic ``DSHCEMB1`` (8 bytes) | u32-LE n | u32-LE d |
  n*d float32-LE, row-major.  Row i holds the vector owned by id i.
"""

from __future__ import annotations

import hashlib
import struct
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

EMBEDDING_MAGIC = b"DSHCEMB1"

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
# Guard against absurd headers before allocating: 2**34 floats = 64 GiB.
_MAX_ELEMENTS = 1 << 34


class CorpusFormatError(ValueError):
    """Malformed corpus TSV input."""


class EmbeddingFormatError(ValueError):
    """Malformed embedding file."""


@dataclass(frozen=True)
class Utterance:
    id: int
    text: str


@dataclass
class Corpus:
    """Paired (context, response) utterances plus the deduplicated candidate database."""

    contexts: list[Utterance]
    responses: list[Utterance]
    database: list[Utterance]

    def database_ids(self) -> dict[str, int]:
        """Map candidate text to its database id."""
        return {u.text: u.id for u in self.database}


@dataclass(frozen=True)
class PairExample:
    ctx_id: int
    can_id: int
    label: int  # 1 = paired response, 0 = sampled negative


class EmbeddingStore:
    """An n x d float32 matrix; row i is the embedding owned by id i.

    Immutable after construction; safe for concurrent readers.
    """

    def __init__(self, vectors: np.ndarray):
        vectors = np.asarray(vectors)
        if vectors.ndim != 2:
            raise ValueError(f"embedding matrix must be 2-D, got shape {vectors.shape}")
        if vectors.shape[1] < 1:
            raise ValueError("embedding dimension must be >= 1")
        if vectors.dtype != np.float32:
            vectors = vectors.astype(np.float32)
        if vectors.size and not np.all(np.isfinite(vectors)):
            raise ValueError("embedding matrix contains non-finite values")
        vectors.flags.writeable = False
        self.vectors = vectors

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    @property
    def d(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return self.n


def load_corpus(path: str | Path) -> Corpus:
    """Parse a context/response TSV into a Corpus with sequential ids.

    The candidate database is the response list deduplicated by exact text,
    first occurrence kept.
    """
    raw = Path(path).read_text(encoding="utf-8")
    lines = raw.splitlines()
    if not lines:
        raise CorpusFormatError(f"{path}: empty corpus file")
    contexts: list[Utterance] = []
    responses: list[Utterance] = []
    seen: dict[str, int] = {}
    database: list[Utterance] = []
    for lineno, line in enumerate(lines, start=1):
        fields = line.split("\t")
        if len(fields) != 2:
            raise CorpusFormatError(f"line {lineno}: expected 2 fields, got {len(fields)}")
        ctx, resp = fields[0].strip(), fields[1].strip()
        if not ctx:
            raise CorpusFormatError(f"line {lineno}: empty context")
        if not resp:
            raise CorpusFormatError(f"line {lineno}: empty response")
        i = len(contexts)
        contexts.append(Utterance(i, ctx))
        responses.append(Utterance(i, resp))
        if resp not in seen:
            seen[resp] = len(database)
            database.append(Utterance(len(database), resp))
    return Corpus(contexts, responses, database)


def save_corpus(pairs: list[tuple[str, str]], path: str | Path) -> None:
    """Write (context, response) pairs as corpus TSV."""
    with open(path, "w", encoding="utf-8") as fh:
        for ctx, resp in pairs:
            fh.write(f"{ctx}\t{resp}\n")


def save_embeddings(store: EmbeddingStore, path: str | Path) -> None:
    with open(path, "wb") as fh:
        fh.write(EMBEDDING_MAGIC)
        fh.write(struct.pack("<II", store.n, store.d))
        fh.write(np.ascontiguousarray(store.vectors, dtype="<f4").tobytes())


def load_embeddings(path: str | Path) -> EmbeddingStore:
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:8] != EMBEDDING_MAGIC:
        raise EmbeddingFormatError(f"{path}: bad magic, not an embedding file")
    n, d = struct.unpack_from("<II", data, 8)
    if d < 1:
        raise EmbeddingFormatError(f"{path}: header dimension must be >= 1")
    if n * d > _MAX_ELEMENTS:
        raise EmbeddingFormatError(f"{path}: header n*d={n * d} overflows the element limit")
    need = 16 + n * d * 4
    if len(data) < need:
        raise EmbeddingFormatError(f"{path}: truncated payload, expected {need} bytes got {len(data)}")
    if len(data) > need:
        raise EmbeddingFormatError(f"{path}: trailing data after payload")
    vectors = np.frombuffer(data, dtype="<f4", count=n * d, offset=16).reshape(n, d)
    return EmbeddingStore(vectors)


def embedding_payload_bytes(n: int, d: int) -> int:
    """Size of the float32 payload of an embedding (or flat-index) matrix."""
    return n * d * 4


def _char_ngrams(text: str) -> Counter:
    grams: Counter = Counter()
    for size in (1, 2, 3):
        for i in range(len(text) - size + 1):
            grams[text[i : i + size]] += 1
    return grams


def _gram_key(gram: str) -> int:
    digest = hashlib.blake2b(gram.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def synth_embed(text: str, d: int, seed: int) -> np.ndarray:
    """Deterministic unit-norm embedding built from hashed character 1..3-grams.

    Each gram contributes a Gaussian direction drawn from an RNG keyed on
    (seed, gram hash); the weighted sum is L2-normalized.  The empty string
    maps to the first unit basis vector by convention.
    """
    if d < 1:
        raise ValueError("embedding dimension must be >= 1")
    if not text:
        basis = np.zeros(d)
        basis[0] = 1.0
        return basis
    vec = np.zeros(d)
    for gram, count in _char_ngrams(text).items():
        rng = np.random.default_rng(np.random.SeedSequence(entropy=(seed & _MASK64, _gram_key(gram))))
        vec += count * rng.standard_normal(d)
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        basis = np.zeros(d)
        basis[0] = 1.0
        return basis
    return vec / norm


def embed_texts(texts: list[str], d: int, seed: int) -> EmbeddingStore:
    """Embed a list of texts row by row with synth_embed."""
    out = np.empty((len(texts), d), dtype=np.float32)
    for i, text in enumerate(texts):
        out[i] = synth_embed(text, d, seed)
    return EmbeddingStore(out)


def _mix64(x: int) -> int:
    x &= _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


class Splitmix64:
    """splitmix64 stream with an unbiased bounded-draw helper.

    The algorithm is pinned: external exporters reproduce the exact negative
    sampling stream, so any change here is a wire-format break.
    """

    def __init__(self, seed: int, stream: int):
        self._state = _mix64((seed & _MASK64) ^ _mix64((stream + 1) * _GOLDEN))

    def next64(self) -> int:
        self._state = (self._state + _GOLDEN) & _MASK64
        return _mix64(self._state)

    def below(self, bound: int) -> int:
        # rejection sampling keeps the draw exactly uniform
        limit = (_MASK64 + 1) - ((_MASK64 + 1) % bound)
        while True:
            r = self.next64()
            if r < limit:
                return r % bound


def make_pairs(corpus: Corpus, negatives_per_positive: int = 1, seed: int = 0) -> list[PairExample]:
    """Build labeled training pairs: each (context i, response i) plus k uniform negatives.

    Negatives are drawn without replacement from the database excluding the
    paired response, using a per-pair splitmix64 stream keyed on (seed, i).
    """
    k = negatives_per_positive
    if k < 1:
        raise ValueError("negatives_per_positive must be >= 1")
    db_size = len(corpus.database)
    if db_size < 2:
        raise ValueError("corpus needs at least 2 distinct database entries")
    if k >= db_size:
        raise ValueError(f"negatives_per_positive={k} must be smaller than database size {db_size}")
    db_ids = corpus.database_ids()
    pairs: list[PairExample] = []
    for i, (ctx, resp) in enumerate(zip(corpus.contexts, corpus.responses)):
        positive = db_ids[resp.text]
        pairs.append(PairExample(ctx.id, positive, 1))
        rng = Splitmix64(seed, i)
        taken = {positive}
        while len(taken) < k + 1:
            candidate = rng.below(db_size)
            if candidate in taken:
                continue
            taken.add(candidate)
            pairs.append(PairExample(ctx.id, candidate, 0))
    return pairs


_SYNTH_VOCAB = [
    "order", "ship", "refund", "delay", "price", "stock", "coupon", "size",
    "color", "track", "return", "invoice", "address", "arrive", "package",
    "thanks", "sorry", "please", "check", "today", "tomorrow", "morning",
    "store", "brand", "quality", "broken", "replace", "cancel", "confirm",
    "payment", "account", "express", "courier", "holiday", "weekend",
    "update", "review", "rating", "support", "agent", "message", "reply",
    "question", "answer", "detail", "photo", "model", "battery", "screen",
    "silver", "black", "white", "large", "small", "medium", "fast", "slow",
    "cheap", "free", "extra", "double", "single", "first", "second", "third",
]


def make_synthetic_corpus(n: int, seed: int = 0) -> list[tuple[str, str]]:
    """Deterministic word-salad (context, response) pairs for desk-scale runs."""
    if n < 1:
        raise ValueError("corpus size must be >= 1")
    rng = np.random.default_rng(seed)
    vocab = np.array(_SYNTH_VOCAB)
    pairs = []
    for _ in range(n):
        ctx_len = int(rng.integers(4, 10))
        resp_len = int(rng.integers(3, 9))
        ctx = " ".join(rng.choice(vocab, size=ctx_len))
        resp = " ".join(rng.choice(vocab, size=resp_len))
        pairs.append((ctx, resp))
    return pairs
