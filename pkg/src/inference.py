"""Consistent greedy decoding and the comparison strategies built on the same scores.

Every query sentence yields candidate spans from the span network. A candidate's
raw probability is lowered by ``delta`` for each token whose token-network label
disagrees with the span's class, then non-overlapping candidates are picked
greedily by adjusted probability. Adjusted probabilities may go negative and
such candidates stay selectable unless ``floor_adjusted`` or ``min_probability``
is configured.
"""

import json
from collections.abc import Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from tqdm.auto import tqdm

from config import InferenceConfig
from corpus import OUTSIDE, EntitySpan, Episode, LabelSpace, spans_from_io_labels
from errors import ConfigError, ContractError
from networks import CDAPModel, SentenceScores
from utils import get_logger, progress_enabled


logger = get_logger(__name__)


@dataclass(frozen=True)
class SpanCandidate:
    sentence: int
    start: int
    end: int
    label: int
    raw_p: float
    count: int = 0
    adjusted_p: float = field(default=float("nan"))

    def __post_init__(self) -> None:
        if self.label == 0:
            msg = f"candidate ({self.start}, {self.end}) predicts the non-entity class"
            raise ContractError(msg)
        if not 0 <= self.count <= len(self):
            msg = f"inconsistent-token count {self.count} outside [0, {len(self)}]"
            raise ContractError(msg)
        if np.isnan(self.adjusted_p):
            object.__setattr__(self, "adjusted_p", self.raw_p)

    def __len__(self) -> int:
        return self.end - self.start + 1

    def overlaps(self, other: "SpanCandidate") -> bool:
        return self.sentence == other.sentence and not (self.end < other.start or other.end < self.start)


def count_inconsistent(start: int, end: int, label: int, token_predictions: Sequence[int]) -> int:
    """Tokens inside ``[start, end]`` whose token-level label differs from ``label``."""
    return sum(1 for t in range(start, end + 1) if token_predictions[t] != label)


def adjust_probability(raw_p: float, delta: float, count: int, *, floor: bool = False) -> float:
    adjusted = raw_p - delta * count
    return max(adjusted, 0.0) if floor else adjusted


def greedy_select(candidates: Iterable[SpanCandidate]) -> list[SpanCandidate]:
    """Repeatedly take the best remaining candidate and drop everything overlapping it.

    Candidates rank by adjusted probability, then raw probability, then the
    smaller ``(start, end)``. The result keeps that selection order.
    """
    ranked = sorted(candidates, key=lambda c: (-c.adjusted_p, -c.raw_p, c.sentence, c.start, c.end))
    selected: list[SpanCandidate] = []
    for candidate in ranked:
        if not any(candidate.overlaps(kept) for kept in selected):
            selected.append(candidate)
    return selected


@dataclass
class SentenceDecoding:
    sentence: int
    token_predictions: list[int]
    candidates: list[SpanCandidate]
    selected: list[SpanCandidate]


@dataclass
class EpisodeDecoding:
    episode_id: str
    label_space: LabelSpace
    sentences: list[SentenceDecoding]

    def predictions(self) -> list[list[EntitySpan]]:
        """Extracted entities per query sentence, ordered by position."""
        return [
            sorted(EntitySpan(c.start, c.end, self.label_space.name(c.label)) for c in s.selected)
            for s in self.sentences
        ]


def span_candidates(
    scores: SentenceScores,
    sentence: int,
    token_predictions: Sequence[int],
    delta: float,
    *,
    floor: bool = False,
) -> list[SpanCandidate]:
    """Spans whose span-network argmax is an entity class, scored with the consistency penalty."""
    candidates = []
    labels = scores.span_probs.argmax(axis=1)
    for row, (start, end) in enumerate(scores.spans):
        label = int(labels[row])
        if label == 0:
            continue
        raw_p = float(scores.span_probs[row, label])
        count = count_inconsistent(start, end, label, token_predictions)
        candidates.append(
            SpanCandidate(
                sentence=sentence,
                start=start,
                end=end,
                label=label,
                raw_p=raw_p,
                count=count,
                adjusted_p=adjust_probability(raw_p, delta, count, floor=floor),
            )
        )
    return candidates


def token_candidates(scores: SentenceScores, sentence: int, token_predictions: Sequence[int]) -> list[SpanCandidate]:
    """Maximal runs of one predicted entity class, scored by their mean token probability."""
    return [
        SpanCandidate(
            sentence=sentence,
            start=start,
            end=end,
            label=label,
            raw_p=float(scores.token_probs[start : end + 1, label].mean()),
        )
        for start, end, label in spans_from_io_labels(token_predictions)
    ]


def decode_sentence(scores: SentenceScores, sentence: int, settings: InferenceConfig) -> SentenceDecoding:
    token_predictions = [int(label) for label in scores.token_probs.argmax(axis=1)]
    strategy = settings.strategy
    if strategy == "consistent-greedy":
        candidates = span_candidates(
            scores, sentence, token_predictions, settings.delta, floor=settings.floor_adjusted
        )
    elif strategy in ("span-only", "intersection", "union"):
        candidates = span_candidates(scores, sentence, token_predictions, 0.0)
    elif strategy == "token-only":
        candidates = token_candidates(scores, sentence, token_predictions)
    else:
        msg = f"unknown decoding strategy {strategy!r}"
        raise ConfigError(msg)

    if settings.min_probability is not None:
        candidates = [c for c in candidates if c.adjusted_p >= settings.min_probability]

    if strategy == "intersection":
        by_token = {(c.start, c.end, c.label) for c in token_candidates(scores, sentence, token_predictions)}
        selected = [c for c in greedy_select(candidates) if (c.start, c.end, c.label) in by_token]
    elif strategy == "union":
        pooled = candidates + token_candidates(scores, sentence, token_predictions)
        selected = greedy_select(pooled)
        candidates = pooled
    else:
        selected = greedy_select(candidates)
    return SentenceDecoding(
        sentence=sentence,
        token_predictions=token_predictions,
        candidates=candidates,
        selected=selected,
    )


def decode_episode(model: CDAPModel, episode: Episode, settings: InferenceConfig) -> EpisodeDecoding:
    """Decode every query sentence of ``episode`` with the configured strategy."""
    scores = model.score_episode(episode, settings.max_span_len)
    return EpisodeDecoding(
        episode_id=episode.episode_id,
        label_space=episode.label_space,
        sentences=[decode_sentence(s, i, settings) for i, s in enumerate(scores)],
    )


def decode_episodes(model: CDAPModel, episodes: Sequence[Episode], settings: InferenceConfig) -> list[EpisodeDecoding]:
    """Decode episodes over a bounded thread pool; results follow the input order."""
    with ThreadPoolExecutor(max_workers=settings.workers) as executor:
        results = list(
            tqdm(
                executor.map(lambda e: decode_episode(model, e, settings), episodes),
                total=len(episodes),
                desc="Decoding",
                disable=not progress_enabled(),
            )
        )
    logger.info("Decoded %d episodes with strategy %s", len(results), settings.strategy)
    return results


def decoded_records(decoding: EpisodeDecoding) -> list[dict[str, Any]]:
    return [
        {
            "episode": decoding.episode_id,
            "sentence": s.sentence,
            "spans": [
                {
                    "start": c.start,
                    "end": c.end,
                    "class": decoding.label_space.name(c.label),
                    "raw_p": c.raw_p,
                    "adjusted_p": c.adjusted_p,
                    "count": c.count,
                }
                for c in sorted(s.selected, key=lambda c: c.start)
            ],
        }
        for s in decoding.sentences
    ]


def write_decoded(path: str | Path, decodings: Iterable[EpisodeDecoding]) -> int:
    """One JSON line per query sentence; returns the number of lines written."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = 0
    with path.open("w", encoding="utf-8") as file:
        for decoding in decodings:
            for record in decoded_records(decoding):
                file.write(json.dumps(record) + "\n")
                lines += 1
    logger.info("Wrote %d decoded sentences to %s", lines, path)
    return lines


def format_trace(tokens: Sequence[str], decoding: SentenceDecoding, label_space: LabelSpace) -> str:
    """Human-readable walk through one sentence: token labels, candidates, extraction."""
    lines = ["Token predictions:"]
    for token, label in zip(tokens, decoding.token_predictions, strict=True):
        lines.append(f"  {token}\t{label_space.name(label)}")
    lines.append("Span candidates (raw_p, count, adjusted_p):")
    for c in sorted(decoding.candidates, key=lambda c: (-c.adjusted_p, c.start, c.end)):
        text = " ".join(tokens[c.start : c.end + 1])
        lines.append(
            f"  ({c.start}, {c.end}) {text!r} {label_space.name(c.label)} "
            f"raw_p={c.raw_p:.4f} count={c.count} adjusted_p={c.adjusted_p:.4f}"
        )
    lines.append("Extracted:")
    if not decoding.selected:
        lines.append(f"  (none, every token {OUTSIDE})")
    for c in sorted(decoding.selected, key=lambda c: c.start):
        lines.append(f"  ({c.start}, {c.end}) {' '.join(tokens[c.start : c.end + 1])!r} {label_space.name(c.label)}")
    return "\n".join(lines)
