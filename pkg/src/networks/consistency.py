from collections.abc import Sequence

import numpy as np
from numpy.typing import NDArray

from autodiff import Tape, Tensor
from autodiff.tensor import Array, softmax_rows
from errors import ConfigError, ContractError


def choose_token_spans(span_probs: Array, spans: Sequence[tuple[int, int]], n: int) -> list[int]:
    """For every token, the row of the covering span with the highest maximum class probability.

    Ties go to the lexicographically smallest ``(start, end)``.

    Raises
    ------
    ContractError
        If a token position is covered by no span.
    """
    confidence = span_probs.max(axis=1)
    best_row = [-1] * n
    for row, (start, end) in enumerate(spans):
        for t in range(start, end + 1):
            current = best_row[t]
            if current < 0:
                best_row[t] = row
                continue
            if confidence[row] > confidence[current] or (
                confidence[row] == confidence[current] and spans[row] < spans[current]
            ):
                best_row[t] = row
    uncovered = [t for t, row in enumerate(best_row) if row < 0]
    if uncovered:
        msg = f"tokens {uncovered} are covered by no enumerated span"
        raise ContractError(msg)
    return best_row


def span_to_token_logits(
    tape: Tape,
    span_logits: Tensor,
    spans: Sequence[tuple[int, int]],
    n: int,
) -> Tensor:
    """Token-level logits ``l_s`` taken from the most confident span covering each token."""
    rows = choose_token_spans(softmax_rows(span_logits.value), spans, n)
    return tape.gather_rows(span_logits, rows)


def episode_token_rows(
    span_logits: Tensor,
    index: Sequence[tuple[int, int, int]],
    lengths: Sequence[int],
) -> NDArray[np.int64]:
    """:func:`choose_token_spans` for every sentence of a query bank, as global row indices."""
    probs = softmax_rows(span_logits.value)
    rows: list[int] = []
    by_sentence: dict[int, list[int]] = {}
    for row, (sentence, _, _) in enumerate(index):
        by_sentence.setdefault(sentence, []).append(row)
    for sentence, n in enumerate(lengths):
        global_rows = by_sentence.get(sentence, [])
        spans = [(index[r][1], index[r][2]) for r in global_rows]
        local = choose_token_spans(probs[global_rows] if global_rows else np.zeros((0, 1)), spans, n)
        rows.extend(global_rows[r] for r in local)
    return np.asarray(rows, dtype=np.int64)


def _kl(tape: Tape, tempered: Tensor, other: Tensor, temperature: float) -> Tensor:
    """``KL(softmax(tempered / T) || softmax(other))`` summed over rows."""
    scaled = tempered if temperature == 1.0 else tape.scale(tempered, 1.0 / temperature)
    return tape.kl_term(tape.row_log_softmax(scaled), tape.row_log_softmax(other))


def consistent_loss(
    tape: Tape,
    token_logits: Tensor,
    span_logits: Tensor,
    temperature: float = 1.0,
    variant: str = "bidirectional_kl",
) -> Tensor:
    """Disagreement between the two networks' token-level distributions.

    ``bidirectional_kl`` sums ``KL(σ(l_t/T) || σ(l_s)) + KL(σ(l_s/T) || σ(l_t))``
    over tokens. ``kl`` is the same with ``T = 1``; ``token_to_span`` and
    ``span_to_token`` keep only the direction whose tempered side is named first;
    ``mse`` and ``js`` compare the two tempered distributions.
    """
    if token_logits.shape != span_logits.shape:
        msg = f"consistent_loss: token logits {token_logits.shape} vs span logits {span_logits.shape}"
        raise ContractError(msg)
    if variant == "bidirectional_kl":
        return tape.add(
            _kl(tape, token_logits, span_logits, temperature),
            _kl(tape, span_logits, token_logits, temperature),
        )
    if variant == "kl":
        return tape.add(_kl(tape, token_logits, span_logits, 1.0), _kl(tape, span_logits, token_logits, 1.0))
    if variant == "token_to_span":
        return _kl(tape, token_logits, span_logits, temperature)
    if variant == "span_to_token":
        return _kl(tape, span_logits, token_logits, temperature)
    if variant == "mse":
        diff = tape.sub(
            tape.scaled_softmax(token_logits, temperature),
            tape.scaled_softmax(span_logits, temperature),
        )
        return tape.total(tape.mul(diff, diff))
    if variant == "js":
        p = tape.scaled_softmax(token_logits, temperature)
        q = tape.scaled_softmax(span_logits, temperature)
        log_m = tape.log(tape.scale(tape.add(p, q), 0.5))
        log_p = tape.row_log_softmax(tape.scale(token_logits, 1.0 / temperature))
        log_q = tape.row_log_softmax(tape.scale(span_logits, 1.0 / temperature))
        return tape.scale(tape.add(tape.kl_term(log_p, log_m), tape.kl_term(log_q, log_m)), 0.5)
    msg = f"unknown consistency variant {variant!r}"
    raise ConfigError(msg)


def total_loss(
    tape: Tape,
    token: Tensor,
    span: Tensor,
    consistency: Tensor,
    token_weight: float,
    span_weight: float,
    consistency_weight: float,
) -> Tensor:
    """``λ L_t + β L_s + γ L_c``."""
    return tape.add(
        tape.add(tape.scale(token, token_weight), tape.scale(span, span_weight)),
        tape.scale(consistency, consistency_weight),
    )
