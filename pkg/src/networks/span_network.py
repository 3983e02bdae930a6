from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from autodiff import ParameterStore, Tape, Tensor, constant
from corpus import OSubclass
from errors import ContractError, EpisodeValidationError
from networks.token_network import IntArray, attention_aggregate, distance_logits, token_distribution


@dataclass
class SpanBank:
    """Support spans S with their labels and query spans Q with their positions.

    ``support_classes`` holds 0 for non-entity spans and 1..N for entity classes;
    ``support_subclasses`` carries the O subclass of each non-entity row.
    ``query_index`` lists ``(sentence, start, end)`` for every row of Q.
    """

    support: Tensor
    support_classes: IntArray
    support_subclasses: tuple[OSubclass | None, ...]
    query: Tensor
    query_index: tuple[tuple[int, int, int], ...]


def feed_forward(tape: Tape, x: Tensor, store: ParameterStore) -> Tensor:
    hidden = tape.relu(tape.add(tape.matmul(x, tape.transpose(store["cross.ffn1.weight"])), store["cross.ffn1.bias"]))
    return tape.add(tape.matmul(hidden, tape.transpose(store["cross.ffn2.weight"])), store["cross.ffn2.bias"])


def cross_attention(tape: Tape, support: Tensor, query: Tensor, store: ParameterStore) -> tuple[Tensor, Tensor]:
    """Enhance each bank with attention over the other, then add-and-norm through the FFN."""
    if support.shape[0] == 0 or query.shape[0] == 0:
        msg = "cross_attention needs non-empty support and query banks"
        raise ContractError(msg)
    attended_support = attention_aggregate(tape, support, query)
    attended_query = attention_aggregate(tape, query, support)
    gain, shift = store["cross.norm.gain"], store["cross.norm.shift"]
    enhanced_support = tape.layer_norm(tape.add(support, feed_forward(tape, attended_support, store)), gain, shift)
    enhanced_query = tape.layer_norm(tape.add(query, feed_forward(tape, attended_query, store)), gain, shift)
    return enhanced_support, enhanced_query


def o_prototype(
    tape: Tape,
    query: Tensor,
    banks: Sequence[Tensor | None],
    *,
    constant_attention: bool = False,
) -> Tensor:
    """Adaptive O prototype: one prototype per non-empty subclass bank, then attention over those.

    Empty banks are skipped.
    """
    subs = [
        attention_aggregate(tape, query, bank, constant_attention=constant_attention)
        for bank in banks
        if bank is not None and bank.shape[0] > 0
    ]
    if not subs:
        msg = "o_prototype: every O subclass bank is empty"
        raise ContractError(msg)
    if len(subs) == 1:
        return subs[0]
    rows = query.shape[0]
    if constant_attention:
        logits = constant(np.zeros((rows, len(subs))))
    else:
        logits = tape.concat([tape.row_sum(tape.mul(query, sub)) for sub in subs], axis=1)
    weights = tape.row_softmax(logits)
    terms = []
    for k, sub in enumerate(subs):
        selector = np.zeros((len(subs), 1))
        selector[k, 0] = 1.0
        terms.append(tape.mul(tape.matmul(weights, constant(selector)), sub))
    prototype = terms[0]
    for term in terms[1:]:
        prototype = tape.add(prototype, term)
    return prototype


def span_distribution(tape: Tape, query: Tensor, prototypes: Tensor, *, squared: bool = True) -> Tensor:
    """Class distribution of one enhanced query span over ``(z0, z1..zN)``."""
    return token_distribution(tape, query, prototypes, squared=squared)


def _class_rows(bank: SpanBank, class_id: int) -> IntArray:
    return np.flatnonzero(bank.support_classes == class_id)


def span_logits(
    tape: Tape,
    bank: SpanBank,
    support: Tensor,
    query: Tensor,
    num_classes: int,
    *,
    o_division: str = "boundary",
    constant_attention: bool = False,
    squared: bool = True,
    class_names: Sequence[str] | None = None,
) -> Tensor:
    """Logits of every query span over O and the N entity classes.

    ``support`` and ``query`` are the (possibly enhanced) rows of ``bank``.
    """
    if o_division == "boundary":
        banks: list[Tensor | None] = []
        for subclass in OSubclass:
            idx = [i for i, s in enumerate(bank.support_subclasses) if s is subclass]
            banks.append(tape.gather_rows(support, idx) if idx else None)
        if all(b is None for b in banks):
            msg = "support set has no non-entity span"
            raise EpisodeValidationError(msg)
        z0 = o_prototype(tape, query, banks, constant_attention=constant_attention)
    else:
        idx = _class_rows(bank, 0)
        if idx.size == 0:
            msg = "support set has no non-entity span"
            raise EpisodeValidationError(msg)
        z0 = attention_aggregate(tape, query, tape.gather_rows(support, idx), constant_attention=constant_attention)
    columns = [distance_logits(tape, query, z0, squared=squared)]
    for class_id in range(1, num_classes):
        idx = _class_rows(bank, class_id)
        if idx.size == 0:
            name = class_names[class_id] if class_names is not None else str(class_id)
            msg = f"class {name!r} has no span in the support set"
            raise EpisodeValidationError(msg)
        prototype = attention_aggregate(
            tape, query, tape.gather_rows(support, idx), constant_attention=constant_attention
        )
        columns.append(distance_logits(tape, query, prototype, squared=squared))
    return tape.concat(columns, axis=1)


@dataclass
class SpanOutput:
    loss: Tensor
    logits: Tensor
    gold: IntArray
    index: tuple[tuple[int, int, int], ...]


def span_loss(tape: Tape, logits: Tensor, gold: Sequence[int], index: tuple[tuple[int, int, int], ...]) -> SpanOutput:
    """Summed negative log-likelihood over every enumerated query span; O subclasses count as O."""
    labels = np.asarray(gold, dtype=np.int64)
    loss = tape.scale(tape.total(tape.pick(tape.row_log_softmax(logits), labels)), -1.0)
    return SpanOutput(loss=loss, logits=logits, gold=labels, index=index)
