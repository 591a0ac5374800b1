import numpy as np
import pytest

from semrecall import corpus
from semrecall.corpus import (
    CorpusFormatError,
    EmbeddingFormatError,
    EmbeddingStore,
    Splitmix64,
    embedding_payload_bytes,
    load_corpus,
    load_embeddings,
    make_pairs,
    save_embeddings,
    synth_embed,
)


class TestLoadCorpus:
    def test_duplicate_responses_collapse(self, tmp_path):
        path = tmp_path / "c.tsv"
        path.write_text("hi\thello\nhi\thello\n", encoding="utf-8")
        corp = load_corpus(path)
        assert len(corp.contexts) == 2
        assert len(corp.database) == 1

    def test_distinct_pairs_counted(self, tiny_corpus):
        corp = load_corpus(tiny_corpus)
        assert len(corp.contexts) == 3
        assert len(corp.responses) == 3
        assert len(corp.database) == 3

    def test_single_column_line_rejected(self, tmp_path):
        path = tmp_path / "c.tsv"
        path.write_text("no tab here\n", encoding="utf-8")
        with pytest.raises(CorpusFormatError, match="line 1: expected 2 fields"):
            load_corpus(path)

    def test_error_names_offending_line(self, tmp_path):
        path = tmp_path / "c.tsv"
        path.write_text("a\tb\nc\td\te\n", encoding="utf-8")
        with pytest.raises(CorpusFormatError, match="line 2"):
            load_corpus(path)

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "c.tsv"
        path.write_text("", encoding="utf-8")
        with pytest.raises(CorpusFormatError, match="empty"):
            load_corpus(path)

    def test_blank_context_rejected(self, tmp_path):
        path = tmp_path / "c.tsv"
        path.write_text("  \tb\n", encoding="utf-8")
        with pytest.raises(CorpusFormatError, match="line 1: empty context"):
            load_corpus(path)

    def test_ids_sequential(self, tiny_corpus):
        corp = load_corpus(tiny_corpus)
        assert [u.id for u in corp.contexts] == [0, 1, 2]
        assert [u.id for u in corp.database] == [0, 1, 2]


class TestEmbeddingFile:
    def test_roundtrip_bitwise(self, tmp_path):
        rng = np.random.default_rng(0)
        store = EmbeddingStore(rng.standard_normal((2, 3)).astype(np.float32))
        path = tmp_path / "e.bin"
        save_embeddings(store, path)
        back = load_embeddings(path)
        assert back.n == 2 and back.d == 3
        assert back.vectors.tobytes() == store.vectors.tobytes()

    def test_truncated_payload(self, tmp_path):
        rng = np.random.default_rng(0)
        store = EmbeddingStore(rng.standard_normal((5, 4)).astype(np.float32))
        path = tmp_path / "e.bin"
        save_embeddings(store, path)
        data = path.read_bytes()
        # keep the header's n=5 but drop one row of payload
        path.write_bytes(data[: len(data) - 16])
        with pytest.raises(EmbeddingFormatError, match="truncated"):
            load_embeddings(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "e.bin"
        path.write_bytes(b"NOTMAGIC" + b"\x00" * 16)
        with pytest.raises(EmbeddingFormatError, match="magic"):
            load_embeddings(path)

    def test_overflow_header(self, tmp_path):
        import struct

        path = tmp_path / "e.bin"
        path.write_bytes(corpus.EMBEDDING_MAGIC + struct.pack("<II", 2**31, 2**10) + b"")
        with pytest.raises(EmbeddingFormatError, match="overflow"):
            load_embeddings(path)

    def test_trailing_bytes_rejected(self, tmp_path):
        store = EmbeddingStore(np.zeros((1, 2), dtype=np.float32))
        path = tmp_path / "e.bin"
        save_embeddings(store, path)
        path.write_bytes(path.read_bytes() + b"x")
        with pytest.raises(EmbeddingFormatError, match="trailing"):
            load_embeddings(path)

    def test_reference_scale_payload_arithmetic(self):
        # a 109k-utterance candidate pool at d=768 in f32
        assert embedding_payload_bytes(109105, 768) == 335_170_560

    def test_file_size_is_header_plus_payload(self, tmp_path):
        store = EmbeddingStore(np.zeros((7, 5), dtype=np.float32))
        path = tmp_path / "e.bin"
        save_embeddings(store, path)
        assert path.stat().st_size == 16 + embedding_payload_bytes(7, 5)


class TestSynthEmbed:
    def test_deterministic(self):
        a = synth_embed("same text twice", 64, 3)
        b = synth_embed("same text twice", 64, 3)
        assert np.array_equal(a, b)

    def test_empty_string_convention(self):
        v = synth_embed("", 6, 9)
        expected = np.zeros(6)
        expected[0] = 1.0
        assert np.array_equal(v, expected)

    def test_unit_norm(self):
        for text in ("a", "short", "a considerably longer piece of text"):
            v = synth_embed(text, 96, 1)
            assert abs(np.linalg.norm(v) - 1.0) < 1e-6

    def test_distinct_texts_low_cosine(self):
        # calibrated over 1000 seeded 20-char samples: max cosine 0.342
        rng = np.random.default_rng(20260811)
        alphabet = list("abcdefghijklmnopqrstuvwxyz 0123456789")
        for _ in range(25):
            t1 = "".join(rng.choice(alphabet, 20))
            t2 = "".join(rng.choice(alphabet, 20))
            if t1 == t2:
                continue
            cos = float(synth_embed(t1, 768, 5) @ synth_embed(t2, 768, 5))
            assert cos < 0.5

    def test_seed_changes_vector(self):
        a = synth_embed("seed sensitivity", 32, 0)
        b = synth_embed("seed sensitivity", 32, 1)
        assert not np.allclose(a, b)

    def test_dimension_validated(self):
        with pytest.raises(ValueError):
            synth_embed("x", 0, 0)


class TestMakePairs:
    def _corpus(self, n):
        pairs = [(f"context {i}", f"response {i}") for i in range(n)]
        contexts = [corpus.Utterance(i, c) for i, (c, _) in enumerate(pairs)]
        responses = [corpus.Utterance(i, r) for i, (_, r) in enumerate(pairs)]
        database = [corpus.Utterance(i, r) for i, (_, r) in enumerate(pairs)]
        return corpus.Corpus(contexts, responses, database)

    def test_counts_k1(self):
        out = make_pairs(self._corpus(2), negatives_per_positive=1, seed=0)
        assert len(out) == 4
        assert sum(p.label for p in out) == 2

    def test_formula_n_times_1_plus_k(self):
        out = make_pairs(self._corpus(10), negatives_per_positive=3, seed=1)
        assert len(out) == 40
        assert sum(p.label for p in out) == 10

    def test_negative_never_equals_positive(self):
        corp = self._corpus(20)
        out = make_pairs(corp, negatives_per_positive=5, seed=2)
        positives = {p.ctx_id: p.can_id for p in out if p.label == 1}
        for p in out:
            if p.label == 0:
                assert p.can_id != positives[p.ctx_id]

    def test_negatives_distinct_within_context(self):
        out = make_pairs(self._corpus(12), negatives_per_positive=6, seed=3)
        by_ctx: dict[int, list[int]] = {}
        for p in out:
            if p.label == 0:
                by_ctx.setdefault(p.ctx_id, []).append(p.can_id)
        for cands in by_ctx.values():
            assert len(cands) == len(set(cands)) == 6

    def test_reproducible(self):
        corp = self._corpus(8)
        a = make_pairs(corp, 2, seed=42)
        b = make_pairs(corp, 2, seed=42)
        assert a == b

    def test_seed_changes_negatives(self):
        corp = self._corpus(30)
        a = make_pairs(corp, 2, seed=0)
        b = make_pairs(corp, 2, seed=1)
        assert a != b

    def test_k_at_least_database_size_rejected(self):
        with pytest.raises(ValueError, match="database size"):
            make_pairs(self._corpus(3), negatives_per_positive=3, seed=0)

    def test_label_multiset(self):
        out = make_pairs(self._corpus(7), negatives_per_positive=4, seed=9)
        labels = [p.label for p in out]
        assert labels.count(1) == 7
        assert labels.count(0) == 28


class TestSplitmix64:
    def test_below_is_in_range(self):
        rng = Splitmix64(123, 4)
        draws = [rng.below(10) for _ in range(1000)]
        assert min(draws) >= 0 and max(draws) <= 9
        assert len(set(draws)) == 10

    def test_streams_independent(self):
        a = [Splitmix64(1, 0).next64() for _ in range(4)]
        b = [Splitmix64(1, 1).next64() for _ in range(4)]
        assert a != b


def test_make_synthetic_corpus_deterministic():
    a = corpus.make_synthetic_corpus(20, seed=5)
    b = corpus.make_synthetic_corpus(20, seed=5)
    assert a == b
    assert len(a) == 20
    assert all(ctx and resp for ctx, resp in a)


def test_store_rejects_non_finite():
    bad = np.array([[1.0, np.inf]], dtype=np.float32)
    with pytest.raises(ValueError, match="finite"):
        EmbeddingStore(bad)
