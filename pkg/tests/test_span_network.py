import numpy as np
import pytest

from autodiff import Tape, constant, init_parameters
from corpus import OSubclass
from errors import ContractError, EpisodeValidationError
from networks import (
    SpanBank,
    attention_aggregate,
    cross_attention,
    o_prototype,
    span_distribution,
    span_logits,
    span_loss,
)


def _softmax(x):
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _layer_norm(x, eps=1e-5):
    centered = x - x.mean(axis=1, keepdims=True)
    return centered / np.sqrt((centered**2).mean(axis=1, keepdims=True) + eps)


def _zero_ffn(store):
    for name in ("cross.ffn1.weight", "cross.ffn1.bias", "cross.ffn2.weight", "cross.ffn2.bias"):
        store[name].value[:] = 0.0


def test_cross_attention_preserves_shapes():
    rng = np.random.default_rng(0)
    store = init_parameters(4, 5, seed=1)
    s, q = rng.standard_normal((7, 5)), rng.standard_normal((3, 5))
    s_bar, q_bar = cross_attention(Tape(), constant(s), constant(q), store)
    assert s_bar.shape == (7, 5)
    assert q_bar.shape == (3, 5)


def test_zero_ffn_reduces_to_layer_norm():
    rng = np.random.default_rng(2)
    store = init_parameters(4, 5, seed=3)
    _zero_ffn(store)
    s, q = rng.standard_normal((4, 5)), rng.standard_normal((2, 5))
    s_bar, q_bar = cross_attention(Tape(), constant(s), constant(q), store)
    np.testing.assert_allclose(s_bar.value, _layer_norm(s), atol=1e-12)
    np.testing.assert_allclose(q_bar.value, _layer_norm(q), atol=1e-12)


def test_zero_ffn_keeps_normalised_rows():
    rng = np.random.default_rng(4)
    store = init_parameters(4, 6, seed=5)
    _zero_ffn(store)
    s = _layer_norm(rng.standard_normal((5, 6)), eps=0.0)
    q = _layer_norm(rng.standard_normal((3, 6)), eps=0.0)
    s_bar, q_bar = cross_attention(Tape(), constant(s), constant(q), store)
    np.testing.assert_allclose(s_bar.value, s, atol=1e-4)
    np.testing.assert_allclose(q_bar.value, q, atol=1e-4)


def test_single_rows_attend_to_each_other():
    s, q = constant([[1.0, 2.0, 3.0]]), constant([[-1.0, 0.5, 0.0]])
    np.testing.assert_allclose(attention_aggregate(Tape(), s, q).value, q.value)
    np.testing.assert_allclose(attention_aggregate(Tape(), q, s).value, s.value)


def test_cross_attention_needs_both_banks():
    store = init_parameters(2, 3, seed=0)
    with pytest.raises(ContractError):
        cross_attention(Tape(), constant(np.zeros((0, 3))), constant(np.ones((1, 3))), store)


def test_o_prototype_of_equal_subprototypes():
    v = np.array([[0.5, -1.0, 2.0]])
    banks = [constant(np.vstack([v, v])), constant(v), constant(np.vstack([v, v, v]))]
    z0 = o_prototype(Tape(), constant([[1.0, 1.0, 1.0]]), banks)
    np.testing.assert_allclose(z0.value, v, atol=1e-12)


def test_o_prototype_with_only_o3():
    rng = np.random.default_rng(6)
    q, o3 = rng.standard_normal((1, 3)), rng.standard_normal((4, 3))
    z0 = o_prototype(Tape(), constant(q), [None, None, constant(o3)])
    np.testing.assert_allclose(z0.value[0], _softmax(o3 @ q[0]) @ o3)


def test_o_prototype_matches_two_stage_oracle():
    rng = np.random.default_rng(7)
    queries = rng.standard_normal((2, 4))
    banks = [rng.standard_normal((n, 4)) for n in (3, 2, 5)]
    z0 = o_prototype(Tape(), constant(queries), [constant(b) for b in banks]).value
    for i, q in enumerate(queries):
        subs = np.stack([_softmax(b @ q) @ b for b in banks])
        expected = _softmax(subs @ q) @ subs
        np.testing.assert_allclose(z0[i], expected)
        lo, hi = subs.min(axis=0), subs.max(axis=0)
        assert np.all(z0[i] >= lo - 1e-12)
        assert np.all(z0[i] <= hi + 1e-12)


def test_o_prototype_needs_a_bank():
    with pytest.raises(ContractError):
        o_prototype(Tape(), constant([[1.0]]), [None, constant(np.zeros((0, 1))), None])


def test_span_distribution_matches_softmax_oracle():
    q = np.array([[0.5, 1.0]])
    protos = np.array([[0.0, 0.0], [1.0, 1.0], [0.5, -2.0]])
    probs = span_distribution(Tape(), constant(q), constant(protos)).value
    expected = _softmax(-((protos - q) ** 2).sum(axis=1))
    np.testing.assert_allclose(probs[0], expected)
    assert probs.shape == (1, 3)


def _bank(support_classes, subclasses, rng, queries=2):
    support = constant(rng.standard_normal((len(support_classes), 3)))
    query = constant(rng.standard_normal((queries, 3)))
    return SpanBank(
        support=support,
        support_classes=np.asarray(support_classes, dtype=np.int64),
        support_subclasses=tuple(subclasses),
        query=query,
        query_index=tuple((0, i, i) for i in range(queries)),
    )


def test_span_logits_have_one_column_per_class():
    rng = np.random.default_rng(8)
    bank = _bank([1, 2, 0, 0, 0], [None, None, OSubclass.O1, OSubclass.O3, OSubclass.O3], rng)
    for division in ("boundary", "none"):
        logits = span_logits(Tape(), bank, bank.support, bank.query, 3, o_division=division)
        assert logits.shape == (2, 3)


def test_span_logits_without_o_division_use_one_bank():
    rng = np.random.default_rng(9)
    bank = _bank([1, 0, 0], [None, OSubclass.O1, OSubclass.O2], rng, queries=1)
    logits = span_logits(Tape(), bank, bank.support, bank.query, 2, o_division="none").value
    q, s = bank.query.value[0], bank.support.value
    z0 = _softmax(s[1:] @ q) @ s[1:]
    assert logits[0, 0] == pytest.approx(-((q - z0) ** 2).sum())
    assert logits[0, 1] == pytest.approx(-((q - s[0]) ** 2).sum())


def test_span_logits_reject_missing_classes():
    rng = np.random.default_rng(10)
    bank = _bank([1, 0], [None, OSubclass.O3], rng)
    with pytest.raises(EpisodeValidationError, match="'LOC'"):
        span_logits(Tape(), bank, bank.support, bank.query, 3, class_names=["O", "PER", "LOC"])
    no_o = _bank([1, 2], [None, None], rng)
    with pytest.raises(EpisodeValidationError, match="non-entity"):
        span_logits(Tape(), no_o, no_o.support, no_o.query, 3)


def test_uniform_span_loss_is_log_three():
    out = span_loss(Tape(), constant([[0.3, 0.3, 0.3]]), [2], ((0, 0, 0),))
    assert out.loss.item() == pytest.approx(np.log(3))


def test_confident_span_loss_goes_to_zero():
    out = span_loss(Tape(), constant([[50.0, 0.0, 0.0], [0.0, 0.0, 50.0]]), [0, 2], ((0, 0, 0), (0, 1, 1)))
    assert 0 <= out.loss.item() < 1e-12
