import numpy as np
import pytest

import shapprune as sp


@pytest.fixture
def criterion(request):
    """Reporter for acceptance criteria: prints one pass/fail line straight to
    the terminal (bypassing capture), then asserts."""
    reporter = request.config.pluginmanager.get_plugin("terminalreporter")

    def emit(number, name, ok, detail):
        line = f"criterion {number:02d} {name}: {'PASS' if ok else 'FAIL'} ({detail})"
        if reporter is not None:
            reporter.write_line(line)
        else:
            print(line)
        assert ok, line

    return emit


@pytest.fixture(scope="session")
def toy_corpus():
    """Tiny three-field categorical corpus with a stable vocabulary."""
    rows, schema = sp.toy_rows(seed=0)
    vocab = sp.build_vocabulary(rows, schema, min_count=sp.TOY_MIN_COUNT)
    dataset = sp.encode_rows(rows, vocab)
    return rows, schema, vocab, dataset


@pytest.fixture(scope="session")
def toy_model(toy_corpus):
    """Small DeepFM trained to convergence on the toy corpus."""
    _, _, _, dataset = toy_corpus
    config = sp.TrainConfig(
        backbone=sp.DEEPFM,
        dim=3,
        hidden=(3, 3),
        epochs=150,
        batch_size=16,
        learning_rate=1e-2,
        seed=1,
    )
    return sp.train(dataset, config)


@pytest.fixture(scope="session")
def toy_exact_scores(toy_model, toy_corpus):
    _, _, _, dataset = toy_corpus
    return sp.exact_shapley_global(toy_model, dataset)


@pytest.fixture()
def hand_model():
    """Two-field FM with one feature per field and known embeddings.

    Both fields contain only their fallback token, so the instance (0, 1)
    touches every row of the two-row table.  Embeddings are [2] and [3],
    linear terms and bias are zero, so the raw score is 2 * 3 = 6.
    """
    schema = sp.FieldSchema.categorical(2)
    vocab = sp.Vocabulary(schema, ({}, {}), 0)
    embedding = sp.EmbeddingTable(np.array([[2.0], [3.0]]), np.array([0, 1, 2], dtype=np.int64))
    backbone = sp.BackboneParams(sp.FM, 0.0, np.zeros(2), ())
    return sp.Model(embedding, backbone, vocab=vocab)


