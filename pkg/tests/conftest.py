import numpy as np
import pytest

from semrecall import corpus


@pytest.fixture
def tiny_corpus(tmp_path):
    path = tmp_path / "corpus.tsv"
    corpus.save_corpus(
        [
            ("is the order shipped", "it ships tomorrow"),
            ("can i get a refund", "refund is on the way"),
            ("what colors are in stock", "black and silver"),
        ],
        path,
    )
    return path


@pytest.fixture
def small_store():
    rng = np.random.default_rng(11)
    return corpus.EmbeddingStore(rng.standard_normal((6, 4)).astype(np.float32))
