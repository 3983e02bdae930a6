import numpy as np
import pytest

from autodiff import ParameterStore, Tape, constant, init_parameters
from config import EmbeddingConfig
from corpus import LabeledSentence
from errors import ContractError, EmbeddingFileError, EpisodeValidationError
from networks import (
    Encoder,
    HashedEmbeddingProvider,
    PretrainedEmbeddingProvider,
    embed_sentence,
    make_provider,
    project_tokens,
    span_repr,
    span_reprs,
)


def test_hashed_vectors_are_deterministic():
    provider = HashedEmbeddingProvider(64, seed=13)
    u = embed_sentence(provider, ["the", "cat", "the"])
    assert u.shape == (3, 64)
    np.testing.assert_array_equal(u[0], u[2])
    np.testing.assert_array_equal(u[0], HashedEmbeddingProvider(64, seed=13).vector("the"))
    assert not np.allclose(u[0], HashedEmbeddingProvider(64, seed=14).vector("the"))


def test_pretrained_file_and_fallback(tmp_path):
    path = tmp_path / "vectors.txt"
    path.write_text("the 0.1 0.2\ncat 1 2\n")
    provider = PretrainedEmbeddingProvider(path, 2, seed=3)
    np.testing.assert_array_equal(provider.vector("the"), [0.1, 0.2])
    assert "dog" not in provider
    np.testing.assert_array_equal(provider.vector("dog"), HashedEmbeddingProvider(2, seed=3).vector("dog"))


@pytest.mark.parametrize("content", ["the 0.1\n", "the 0.1 zero\n"])
def test_malformed_vector_file(tmp_path, content):
    path = tmp_path / "vectors.txt"
    path.write_text(content)
    with pytest.raises(EmbeddingFileError, match=":1:"):
        PretrainedEmbeddingProvider(path, 2)


def test_make_provider_selects_by_config(tmp_path):
    assert isinstance(make_provider(EmbeddingConfig(), 4), HashedEmbeddingProvider)
    path = tmp_path / "vectors.txt"
    path.write_text("x 1 2 3 4\n")
    provider = make_provider(EmbeddingConfig(provider="pretrained", path=str(path)), 4)
    assert isinstance(provider, PretrainedEmbeddingProvider)


def _linear_store(d1, d):
    store = ParameterStore()
    store.add("token.weight", np.eye(d, d1))
    store.add("token.bias", np.zeros((1, d)))
    store.add("span.weight", np.zeros((d, 2 * d1)))
    store.add("span.bias", np.arange(d, dtype=float)[None, :])
    return store


def test_identity_projection_returns_u():
    u = np.random.default_rng(0).standard_normal((4, 3))
    h = project_tokens(Tape(), constant(u), _linear_store(3, 3))
    np.testing.assert_allclose(h.value, u)


def test_projection_matches_naive_loops():
    rng = np.random.default_rng(1)
    store = init_parameters(5, 3, seed=2)
    u = rng.standard_normal((4, 5))
    h = project_tokens(Tape(), constant(u), store).value
    w, b = store["token.weight"].value, store["token.bias"].value
    for i in range(4):
        for j in range(3):
            expected = sum(w[j, k] * u[i, k] for k in range(5)) + b[0, j]
            assert h[i, j] == pytest.approx(expected)


def test_projection_rejects_wrong_width():
    with pytest.raises(ContractError):
        project_tokens(Tape(), constant(np.zeros((2, 4))), init_parameters(5, 3, seed=0))


def test_span_repr_with_zero_weight_is_bias():
    store = _linear_store(3, 2)
    out = span_reprs(Tape(), constant(np.ones((4, 3))), [0, 1], [2, 3], store)
    np.testing.assert_allclose(out.value, [[0.0, 1.0], [0.0, 1.0]])


def test_span_repr_concatenates_boundaries():
    rng = np.random.default_rng(3)
    store = init_parameters(3, 2, seed=4)
    u = rng.standard_normal((5, 3))
    single = span_repr(Tape(), constant(u), 2, 2, store).value
    expected = store["span.weight"].value @ np.concatenate([u[2], u[2]]) + store["span.bias"].value[0]
    np.testing.assert_allclose(single[0], expected)
    wide = span_repr(Tape(), constant(u), 1, 4, store).value
    expected = store["span.weight"].value @ np.concatenate([u[1], u[4]]) + store["span.bias"].value[0]
    np.testing.assert_allclose(wide[0], expected)


def test_span_repr_rejects_bad_ranges():
    store = init_parameters(3, 2, seed=0)
    with pytest.raises(ContractError):
        span_repr(Tape(), constant(np.zeros((3, 3))), 2, 3, store)
    with pytest.raises(ContractError):
        span_repr(Tape(), constant(np.zeros((3, 3))), 2, 1, store)


def test_projections_are_linear_without_bias():
    rng = np.random.default_rng(5)
    store = init_parameters(4, 3, seed=6)
    store["token.bias"].value[:] = 0.0
    store["span.bias"].value[:] = 0.0
    u1, u2 = rng.standard_normal((3, 4)), rng.standard_normal((3, 4))
    combined = 2.0 * u1 - 0.5 * u2

    def both(u):
        tape = Tape(record=False)
        return (
            project_tokens(tape, constant(u), store).value,
            span_reprs(tape, constant(u), [0, 1], [2, 1], store).value,
        )

    for lhs, a, b in zip(both(combined), both(u1), both(u2), strict=True):
        np.testing.assert_allclose(lhs, 2.0 * a - 0.5 * b)


def test_trainable_table_gathers_rows_and_falls_back_for_oov():
    provider = HashedEmbeddingProvider(3, seed=1)
    encoder = Encoder(provider, ["a", "b"])
    store = init_parameters(3, 2, seed=0, embedding_table=encoder.initial_table())
    sentence = LabeledSentence(("b", "zzz", "a"))
    tape = Tape()
    u = encoder.embed(tape, [sentence], store)
    np.testing.assert_allclose(u.value, embed_sentence(provider, ["b", "zzz", "a"]))
    tape.backward(tape.total(u))
    np.testing.assert_allclose(store["embedding.table"].grad, np.ones((2, 3)))


@pytest.mark.parametrize("vocabulary", [[], ["a"]])
def test_embedding_no_sentences_is_rejected(vocabulary):
    encoder = Encoder(HashedEmbeddingProvider(3), vocabulary)
    table = encoder.initial_table() if vocabulary else None
    with pytest.raises(EpisodeValidationError, match="empty"):
        encoder.embed(Tape(), [], init_parameters(3, 2, seed=0, embedding_table=table))
