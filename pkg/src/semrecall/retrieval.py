"""Top-K candidate search over three backends: binary Hamming scan, flat dense scan, BM25.

All searches are exact brute-force linear scans; no ANN shortcuts.  Results
are deterministic: BM25/dense rank by descending score, Hamming by ascending
distance, ties always broken by ascending id.

File formats owned by this module:

* Binary index: magic ``DSHCIDX1`` | u32-LE n | u32-LE h |
  n*ceil(h/8) packed code bytes | n u64-LE ids.
* Flat index: magic ``DSHCFLT1`` | u32-LE n | u32-LE d |
  n*d float32-LE row-major | n u64-LE ids.
* Inverted index: magic ``DSHCBMI1`` | u32-LE N | f64-LE k1 | f64-LE b |
  N x (u64-LE doc id, u32-LE doc length) | u32-LE term count | per term,
  sorted by UTF-8 bytes: u32-LE byte length | UTF-8 term |
  u32-LE posting count | postings as (u32-LE doc ordinal, u32-LE tf).

Packed codes store bit j of a +-1 code in bit j (LSB-first) of byte j//8;
bit set means +1, and pad bits beyond h are zero.
"""

from __future__ import annotations

import math
import re
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dep, guard for safety
    _HAVE_NUMBA = False

BINARY_INDEX_MAGIC = b"DSHCIDX1"
FLAT_INDEX_MAGIC = b"DSHCFLT1"
INVERTED_INDEX_MAGIC = b"DSHCBMI1"

DEFAULT_K1 = 1.2
DEFAULT_B = 0.75


class IndexFormatError(ValueError):
    """Malformed index file."""


# ---------------------------------------------------------------------------
# packed binary codes


@dataclass(frozen=True)
class PackedCode:
    data: np.ndarray  # uint8, ceil(h/8) bytes, LSB-first, pad bits zero
    h: int


def pack(bits: np.ndarray) -> PackedCode:
    """Pack a +-1 code into bytes, LSB-first."""
    bits = np.asarray(bits)
    if bits.ndim != 1 or bits.shape[0] < 1:
        raise ValueError("code must be a non-empty 1-D +-1 vector")
    if not np.all(np.abs(bits) == 1):
        raise ValueError("code components must be exactly +-1")
    packed = np.packbits((bits > 0).astype(np.uint8), bitorder="little")
    packed.flags.writeable = False
    return PackedCode(packed, int(bits.shape[0]))


def unpack(code: PackedCode) -> np.ndarray:
    """Inverse of pack: bytes back to a +-1 int8 vector of length h."""
    bits = np.unpackbits(code.data, count=code.h, bitorder="little")
    return (bits.astype(np.int8) * 2) - 1


def pack_matrix(bits: np.ndarray) -> np.ndarray:
    """Pack an (n, h) +-1 matrix into (n, ceil(h/8)) uint8 rows."""
    bits = np.asarray(bits)
    if bits.ndim != 2:
        raise ValueError("expected an (n, h) matrix of +-1 codes")
    return np.packbits((bits > 0).astype(np.uint8), axis=1, bitorder="little")


def hamming_distance(a: PackedCode, b: PackedCode) -> int:
    """Number of differing bits; equals (h - dot(unpack(a), unpack(b))) / 2."""
    if a.h != b.h:
        raise ValueError(f"code length mismatch: {a.h} != {b.h}")
    return int(np.bitwise_count(a.data ^ b.data).sum())


def _pad_to_words(codes: np.ndarray) -> np.ndarray:
    """Zero-pad (n, nbytes) uint8 rows to a multiple of 8 and view as u64 words."""
    n, nbytes = codes.shape
    width = ((nbytes + 7) // 8) * 8
    if width != nbytes:
        padded = np.zeros((n, width), dtype=np.uint8)
        padded[:, :nbytes] = codes
    else:
        padded = np.ascontiguousarray(codes)
    return padded.view("<u8")


if _HAVE_NUMBA:

    @njit(cache=True, nogil=True)
    def _hamming_heap_topk(words, ids, query, k):
        """Linear scan keeping the k smallest (distance, id) in a bounded max-heap."""
        n, w = words.shape
        m = k if k < n else n
        heap_d = np.empty(m, np.int64)
        heap_id = np.empty(m, np.uint64)
        size = 0
        for i in range(n):
            acc = 0
            for j in range(w):
                x = words[i, j] ^ query[j]
                x = x - ((x >> np.uint64(1)) & np.uint64(0x5555555555555555))
                x = (x & np.uint64(0x3333333333333333)) + (
                    (x >> np.uint64(2)) & np.uint64(0x3333333333333333)
                )
                x = (x + (x >> np.uint64(4))) & np.uint64(0x0F0F0F0F0F0F0F0F)
                acc += int((x * np.uint64(0x0101010101010101)) >> np.uint64(56))
            d = acc
            di = ids[i]
            if size < m:
                pos = size
                heap_d[pos] = d
                heap_id[pos] = di
                size += 1
                while pos > 0:
                    parent = (pos - 1) // 2
                    if heap_d[parent] < heap_d[pos] or (
                        heap_d[parent] == heap_d[pos] and heap_id[parent] < heap_id[pos]
                    ):
                        heap_d[parent], heap_d[pos] = heap_d[pos], heap_d[parent]
                        heap_id[parent], heap_id[pos] = heap_id[pos], heap_id[parent]
                        pos = parent
                    else:
                        break
            elif d < heap_d[0] or (d == heap_d[0] and di < heap_id[0]):
                heap_d[0] = d
                heap_id[0] = di
                pos = 0
                while True:
                    left = 2 * pos + 1
                    right = left + 1
                    largest = pos
                    if left < size and (
                        heap_d[left] > heap_d[largest]
                        or (heap_d[left] == heap_d[largest] and heap_id[left] > heap_id[largest])
                    ):
                        largest = left
                    if right < size and (
                        heap_d[right] > heap_d[largest]
                        or (heap_d[right] == heap_d[largest] and heap_id[right] > heap_id[largest])
                    ):
                        largest = right
                    if largest == pos:
                        break
                    heap_d[largest], heap_d[pos] = heap_d[pos], heap_d[largest]
                    heap_id[largest], heap_id[pos] = heap_id[pos], heap_id[largest]
                    pos = largest
        return heap_d[:size], heap_id[:size]


class BinaryIndex:
    """Packed +-1 codes with ids, searched by exhaustive Hamming scan."""

    def __init__(self, codes: np.ndarray, h: int, ids: np.ndarray):
        codes = np.asarray(codes, dtype=np.uint8)
        ids = np.asarray(ids, dtype=np.uint64)
        if codes.ndim != 2:
            raise ValueError("codes must be an (n, nbytes) uint8 matrix")
        nbytes = (h + 7) // 8
        if h < 1 or codes.shape[1] != nbytes:
            raise ValueError(f"codes have {codes.shape[1]} bytes per row, expected {nbytes} for h={h}")
        if ids.shape != (codes.shape[0],):
            raise ValueError("ids must match the number of codes")
        self.codes = codes
        self.h = h
        self.ids = ids
        self._words: np.ndarray | None = None

    @classmethod
    def from_sign_codes(cls, bits: np.ndarray, ids: np.ndarray | None = None) -> "BinaryIndex":
        bits = np.asarray(bits)
        if ids is None:
            ids = np.arange(bits.shape[0], dtype=np.uint64)
        return cls(pack_matrix(bits), int(bits.shape[1]), ids)

    @property
    def n(self) -> int:
        return self.codes.shape[0]

    @property
    def code_bytes(self) -> int:
        return self.n * ((self.h + 7) // 8)

    def words(self) -> np.ndarray:
        if self._words is None:
            self._words = _pad_to_words(self.codes)
        return self._words


class FlatIndex:
    """Dense float32 matrix with ids, searched by exhaustive dot-product scan."""

    def __init__(self, matrix: np.ndarray, ids: np.ndarray | None = None):
        matrix = np.asarray(matrix, dtype=np.float32)
        if matrix.ndim != 2 or matrix.shape[1] < 1:
            raise ValueError("matrix must be (n, d) with d >= 1")
        if matrix.size and not np.all(np.isfinite(matrix)):
            raise ValueError("matrix contains non-finite values")
        if ids is None:
            ids = np.arange(matrix.shape[0], dtype=np.uint64)
        ids = np.asarray(ids, dtype=np.uint64)
        if ids.shape != (matrix.shape[0],):
            raise ValueError("ids must match the number of rows")
        self.matrix = matrix
        self.ids = ids

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def d(self) -> int:
        return self.matrix.shape[1]

    @property
    def code_bytes(self) -> int:
        return self.n * self.d * 4


# ---------------------------------------------------------------------------
# top-k selection with the ascending-id tie rule


def _select_smallest(values: np.ndarray, ids: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k smallest values, ties by ascending id, ordered for output."""
    n = values.shape[0]
    if k >= n:
        return np.lexsort((ids, values))
    part = np.argpartition(values, k - 1)[:k]
    threshold = values[part].max()
    candidates = np.flatnonzero(values <= threshold)
    order = np.lexsort((ids[candidates], values[candidates]))
    return candidates[order[:k]]


def _select_largest(values: np.ndarray, ids: np.ndarray, k: int) -> np.ndarray:
    return _select_smallest(-values, ids, k)


def binary_search_topk(index: BinaryIndex, query: PackedCode, k: int) -> list[tuple[int, int]]:
    """K nearest codes by Hamming distance via full linear scan."""
    if query.h != index.h:
        raise ValueError(f"query code length {query.h} != index code length {index.h}")
    if k < 1:
        raise ValueError("k must be >= 1")
    if index.n == 0:
        return []
    query_words = _pad_to_words(query.data[None, :])[0]
    if _HAVE_NUMBA:
        dists, ids = _hamming_heap_topk(index.words(), index.ids, query_words, k)
        order = np.lexsort((ids, dists))
        return [(int(ids[i]), int(dists[i])) for i in order]
    dists = np.bitwise_count(index.words() ^ query_words).sum(axis=1, dtype=np.int64)
    sel = _select_smallest(dists, index.ids, k)
    return [(int(index.ids[i]), int(dists[i])) for i in sel]


def binary_search_topk_batch(
    index: BinaryIndex, queries: np.ndarray, k: int
) -> list[list[tuple[int, int]]]:
    """Batched Hamming search; queries is an (m, ceil(h/8)) packed uint8 matrix."""
    queries = np.asarray(queries, dtype=np.uint8)
    if queries.ndim != 2 or queries.shape[1] != (index.h + 7) // 8:
        raise ValueError("queries must be packed rows matching the index code length")
    out = []
    for row in queries:
        out.append(binary_search_topk(index, PackedCode(row, index.h), k))
    return out


def dense_search_topk_batch(
    index: FlatIndex, queries: np.ndarray, k: int, cosine: bool = False
) -> list[list[tuple[int, float]]]:
    """Batched dense search: k largest dot products (or cosine) by linear scan."""
    queries = np.asarray(queries, dtype=np.float32)
    if queries.ndim != 2 or queries.shape[1] != index.d:
        raise ValueError(f"queries must be (m, {index.d})")
    if k < 1:
        raise ValueError("k must be >= 1")
    if index.n == 0:
        return [[] for _ in range(queries.shape[0])]
    scores = queries @ index.matrix.T  # (m, n) float32
    if cosine:
        norms = np.linalg.norm(index.matrix, axis=1)
        qnorms = np.linalg.norm(queries, axis=1, keepdims=True)
        denom = np.where(norms == 0.0, 1.0, norms)[None, :] * np.where(qnorms == 0.0, 1.0, qnorms)
        scores = scores / denom
    out = []
    for row in scores:
        sel = _select_largest(row, index.ids, k)
        out.append([(int(index.ids[i]), float(row[i])) for i in sel])
    return out


def dense_search_topk(
    index: FlatIndex, query: np.ndarray, k: int, cosine: bool = False
) -> list[tuple[int, float]]:
    query = np.asarray(query, dtype=np.float32)
    if query.ndim != 1:
        raise ValueError("query must be a 1-D vector")
    return dense_search_topk_batch(index, query[None, :], k, cosine=cosine)[0]


# ---------------------------------------------------------------------------
# BM25 over an inverted index

_CJK_RANGES = "㐀-䶿一-鿿豈-﫿\U00020000-\U0002a6df"
_TOKEN_RE = re.compile(f"([{_CJK_RANGES}])|([^\\W_{_CJK_RANGES}]+)", re.UNICODE)


def bm25_tokenize(text: str) -> list[str]:
    """CJK codepoints as single tokens; other alphanumeric runs lowercased; rest dropped."""
    tokens = []
    for cjk, word in _TOKEN_RE.findall(text):
        tokens.append(cjk if cjk else word.lower())
    return tokens


class InvertedIndex:
    """Term postings plus document statistics for BM25 scoring."""

    def __init__(
        self,
        postings: dict[str, tuple[np.ndarray, np.ndarray]],
        doc_ids: np.ndarray,
        doc_len: np.ndarray,
        k1: float = DEFAULT_K1,
        b: float = DEFAULT_B,
    ):
        self.postings = postings
        self.doc_ids = np.asarray(doc_ids, dtype=np.uint64)
        self.doc_len = np.asarray(doc_len, dtype=np.int64)
        self.k1 = float(k1)
        self.b = float(b)

    @property
    def n_docs(self) -> int:
        return self.doc_len.shape[0]

    @property
    def avgdl(self) -> float:
        return float(self.doc_len.mean())

    def idf(self, term: str) -> float:
        entry = self.postings.get(term)
        df = 0 if entry is None else entry[0].shape[0]
        n = self.n_docs
        return math.log((n - df + 0.5) / (df + 0.5) + 1.0)


def bm25_build(docs, k1: float = DEFAULT_K1, b: float = DEFAULT_B) -> InvertedIndex:
    """Build the inverted index from utterances (anything with .id and .text)."""
    docs = list(docs)
    if not docs:
        raise ValueError("cannot build an index over an empty corpus")
    doc_ids = np.array([doc.id for doc in docs], dtype=np.uint64)
    doc_len = np.zeros(len(docs), dtype=np.int64)
    raw: dict[str, list[tuple[int, int]]] = {}
    for ordinal, doc in enumerate(docs):
        tokens = bm25_tokenize(doc.text)
        doc_len[ordinal] = len(tokens)
        counts: dict[str, int] = {}
        for tok in tokens:
            counts[tok] = counts.get(tok, 0) + 1
        for term, tf in counts.items():
            raw.setdefault(term, []).append((ordinal, tf))
    postings = {
        term: (
            np.array([p[0] for p in entries], dtype=np.int64),
            np.array([p[1] for p in entries], dtype=np.int64),
        )
        for term, entries in raw.items()
    }
    return InvertedIndex(postings, doc_ids, doc_len, k1, b)


def bm25_search_topk(index: InvertedIndex, query_text: str, k: int) -> list[tuple[int, float]]:
    """BM25 top-k; documents sharing no query term are excluded."""
    if k < 1:
        raise ValueError("k must be >= 1")
    tokens = bm25_tokenize(query_text)
    if not tokens:
        return []
    n = index.n_docs
    avgdl = index.avgdl
    scores = np.zeros(n, dtype=np.float64)
    touched = np.zeros(n, dtype=bool)
    for term in tokens:
        entry = index.postings.get(term)
        if entry is None:
            continue
        ordinals, tfs = entry
        idf = index.idf(term)
        tf = tfs.astype(np.float64)
        denom = tf + index.k1 * (1.0 - index.b + index.b * index.doc_len[ordinals] / avgdl)
        scores[ordinals] += idf * tf * (index.k1 + 1.0) / denom
        touched[ordinals] = True
    matched = np.flatnonzero(touched)
    if matched.size == 0:
        return []
    sel = _select_largest(scores[matched], index.doc_ids[matched], min(k, matched.size))
    picked = matched[sel]
    return [(int(index.doc_ids[i]), float(scores[i])) for i in picked]


# ---------------------------------------------------------------------------
# serialization


def save_binary_index(index: BinaryIndex, path: str | Path) -> None:
    with open(path, "wb") as fh:
        fh.write(BINARY_INDEX_MAGIC)
        fh.write(struct.pack("<II", index.n, index.h))
        fh.write(np.ascontiguousarray(index.codes).tobytes())
        fh.write(np.ascontiguousarray(index.ids, dtype="<u8").tobytes())


def load_binary_index(path: str | Path) -> BinaryIndex:
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:8] != BINARY_INDEX_MAGIC:
        raise IndexFormatError(f"{path}: bad magic, not a binary index")
    n, h = struct.unpack_from("<II", data, 8)
    if h < 1:
        raise IndexFormatError(f"{path}: code length must be >= 1")
    nbytes = (h + 7) // 8
    need = 16 + n * nbytes + n * 8
    if len(data) != need:
        raise IndexFormatError(f"{path}: expected {need} bytes, got {len(data)}")
    codes = np.frombuffer(data, dtype=np.uint8, count=n * nbytes, offset=16).reshape(n, nbytes)
    if h % 8 and n and np.any(codes[:, -1] & np.uint8((0xFF << (h % 8)) & 0xFF)):
        raise IndexFormatError(f"{path}: nonzero padding bits beyond h={h}")
    ids = np.frombuffer(data, dtype="<u8", count=n, offset=16 + n * nbytes)
    return BinaryIndex(codes.copy(), h, ids.copy())


def save_flat_index(index: FlatIndex, path: str | Path) -> None:
    with open(path, "wb") as fh:
        fh.write(FLAT_INDEX_MAGIC)
        fh.write(struct.pack("<II", index.n, index.d))
        fh.write(np.ascontiguousarray(index.matrix, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(index.ids, dtype="<u8").tobytes())


def load_flat_index(path: str | Path) -> FlatIndex:
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:8] != FLAT_INDEX_MAGIC:
        raise IndexFormatError(f"{path}: bad magic, not a flat index")
    n, d = struct.unpack_from("<II", data, 8)
    if d < 1:
        raise IndexFormatError(f"{path}: dimension must be >= 1")
    need = 16 + n * d * 4 + n * 8
    if len(data) != need:
        raise IndexFormatError(f"{path}: expected {need} bytes, got {len(data)}")
    matrix = np.frombuffer(data, dtype="<f4", count=n * d, offset=16).reshape(n, d)
    ids = np.frombuffer(data, dtype="<u8", count=n, offset=16 + n * d * 4)
    return FlatIndex(matrix.copy(), ids.copy())


def save_inverted_index(index: InvertedIndex, path: str | Path) -> None:
    parts = [INVERTED_INDEX_MAGIC, struct.pack("<Idd", index.n_docs, index.k1, index.b)]
    for ordinal in range(index.n_docs):
        parts.append(struct.pack("<QI", int(index.doc_ids[ordinal]), int(index.doc_len[ordinal])))
    terms = sorted(index.postings, key=lambda t: t.encode("utf-8"))
    parts.append(struct.pack("<I", len(terms)))
    for term in terms:
        raw = term.encode("utf-8")
        ordinals, tfs = index.postings[term]
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", ordinals.shape[0]))
        for o, tf in zip(ordinals, tfs):
            parts.append(struct.pack("<II", int(o), int(tf)))
    Path(path).write_bytes(b"".join(parts))


def load_inverted_index(path: str | Path) -> InvertedIndex:
    data = Path(path).read_bytes()
    if len(data) < 28 or data[:8] != INVERTED_INDEX_MAGIC:
        raise IndexFormatError(f"{path}: bad magic, not an inverted index")
    n, k1, b = struct.unpack_from("<Idd", data, 8)
    offset = 28
    try:
        doc_ids = np.empty(n, dtype=np.uint64)
        doc_len = np.empty(n, dtype=np.int64)
        for i in range(n):
            doc_ids[i], doc_len[i] = struct.unpack_from("<QI", data, offset)
            offset += 12
        (n_terms,) = struct.unpack_from("<I", data, offset)
        offset += 4
        postings: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        for _ in range(n_terms):
            (raw_len,) = struct.unpack_from("<I", data, offset)
            offset += 4
            term = data[offset : offset + raw_len].decode("utf-8")
            offset += raw_len
            (df,) = struct.unpack_from("<I", data, offset)
            offset += 4
            ordinals = np.empty(df, dtype=np.int64)
            tfs = np.empty(df, dtype=np.int64)
            for j in range(df):
                ordinals[j], tfs[j] = struct.unpack_from("<II", data, offset)
                offset += 8
            postings[term] = (ordinals, tfs)
    except struct.error as exc:
        raise IndexFormatError(f"{path}: truncated inverted index") from exc
    if offset != len(data):
        raise IndexFormatError(f"{path}: trailing data after postings")
    return InvertedIndex(postings, doc_ids, doc_len, k1, b)


def inverted_index_payload_bytes(path: str | Path) -> int:
    """Bytes of the term+postings section (the searchable payload) of an index file."""
    data = Path(path).read_bytes()
    if len(data) < 28 or data[:8] != INVERTED_INDEX_MAGIC:
        raise IndexFormatError(f"{path}: bad magic, not an inverted index")
    (n,) = struct.unpack_from("<I", data, 8)
    preamble = 28 + n * 12 + 4
    return len(data) - preamble


def binary_code_bytes(n: int, h: int) -> int:
    """Packed code payload: n * ceil(h/8)."""
    return n * ((h + 7) // 8)
