from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from autodiff import Tape, Tensor, constant
from errors import ContractError, EpisodeValidationError


IntArray = NDArray[np.int64]


def attention_aggregate(
    tape: Tape,
    query: Tensor,
    matrix: Tensor | None,
    *,
    constant_attention: bool = False,
) -> Tensor:
    """Query-conditioned prototype: ``softmax(matrix @ q)`` weighted sum of the rows.

    ``query`` may hold several rows; each gets its own prototype. With
    ``constant_attention`` the attention logits are fixed to zero, so the
    prototype is the plain mean of the rows.
    """
    if matrix is None or matrix.shape[0] == 0:
        msg = "attention_aggregate over an empty matrix"
        raise ContractError(msg)
    if query.shape[1] != matrix.shape[1]:
        msg = f"attention_aggregate: query width {query.shape[1]} vs matrix width {matrix.shape[1]}"
        raise ContractError(msg)
    if constant_attention:
        logits = constant(np.zeros((query.shape[0], matrix.shape[0])))
    else:
        logits = tape.matmul(query, tape.transpose(matrix))
    return tape.matmul(tape.row_softmax(logits), matrix)


def distance_logits(tape: Tape, queries: Tensor, prototypes: Tensor, *, squared: bool = True) -> Tensor:
    """Row-aligned ``-d(query_i, prototype_i)`` as a column."""
    return tape.neg_distance_paired(queries, prototypes, squared=squared)


def token_distribution(tape: Tape, h: Tensor, prototypes: Tensor, *, squared: bool = True) -> Tensor:
    """Softmax over negative distances from one token to a stack of class prototypes."""
    count = prototypes.shape[0]
    if count < 2:  # noqa: PLR2004
        msg = f"token_distribution needs at least two prototypes, got {count}"
        raise ContractError(msg)
    if squared:
        return tape.row_softmax(tape.neg_sq_euclidean(h, prototypes))
    repeated = tape.gather_rows(h, [0] * count)
    return tape.row_softmax(tape.transpose(tape.neg_distance_paired(repeated, prototypes, squared=False)))


@dataclass(frozen=True)
class TokenClassSupport:
    """Row indices of the support tokens of every class, O included."""

    rows: tuple[IntArray, ...]

    @classmethod
    def from_labels(
        cls,
        labels: Sequence[int],
        num_classes: int,
        names: Sequence[str] | None = None,
    ) -> "TokenClassSupport":
        array = np.asarray(labels, dtype=np.int64)
        rows = tuple(np.flatnonzero(array == j) for j in range(num_classes))
        for j, idx in enumerate(rows):
            if idx.size == 0:
                name = names[j] if names is not None else str(j)
                msg = f"class {name!r} has no token in the support set"
                raise EpisodeValidationError(msg)
        return cls(rows)


def token_logits(
    tape: Tape,
    h_support: Tensor,
    support: TokenClassSupport,
    h_query: Tensor,
    *,
    constant_attention: bool = False,
    squared: bool = True,
) -> Tensor:
    """Logits ``l_t`` of shape ``(query tokens, classes)`` against adaptive prototypes."""
    columns = []
    for idx in support.rows:
        prototypes = attention_aggregate(
            tape, h_query, tape.gather_rows(h_support, idx), constant_attention=constant_attention
        )
        columns.append(distance_logits(tape, h_query, prototypes, squared=squared))
    return tape.concat(columns, axis=1)


@dataclass
class TokenOutput:
    loss: Tensor
    logits: Tensor
    gold: IntArray


def token_loss(
    tape: Tape,
    h_support: Tensor,
    support: TokenClassSupport,
    h_query: Tensor,
    query_labels: Sequence[int],
    *,
    constant_attention: bool = False,
    squared: bool = True,
) -> TokenOutput:
    """Summed negative log-likelihood of the gold IO label of every query token."""
    logits = token_logits(tape, h_support, support, h_query, constant_attention=constant_attention, squared=squared)
    gold = np.asarray(query_labels, dtype=np.int64)
    log_probs = tape.row_log_softmax(logits)
    loss = tape.scale(tape.total(tape.pick(log_probs, gold)), -1.0)
    return TokenOutput(loss=loss, logits=logits, gold=gold)
