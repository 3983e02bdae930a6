"""Sentences, label spaces and the span bookkeeping shared by both networks.

Spans are 0-based with an inclusive end: ``(start, end)`` covers tokens
``start..end``. Class names live on the sentence; integer class ids only exist
relative to a :class:`LabelSpace`, whose index 0 is always the non-entity class.
"""

from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from enum import Enum

from errors import EpisodeValidationError


OUTSIDE = "O"


class OSubclass(Enum):
    O1 = 1  # shares its left boundary with an entity
    O2 = 2  # shares its right boundary with an entity
    O3 = 3


@dataclass(frozen=True, order=True)
class EntitySpan:
    start: int
    end: int
    label: str

    @property
    def bounds(self) -> tuple[int, int]:
        return self.start, self.end

    def __len__(self) -> int:
        return self.end - self.start + 1


@dataclass(frozen=True)
class LabeledSentence:
    tokens: tuple[str, ...]
    entity_spans: tuple[EntitySpan, ...] = ()

    def __post_init__(self) -> None:
        n = len(self.tokens)
        if n == 0:
            msg = "sentence has no tokens"
            raise EpisodeValidationError(msg)
        ordered = sorted(self.entity_spans)
        for span in ordered:
            if not 0 <= span.start <= span.end < n:
                msg = f"entity span {span.bounds} outside sentence of length {n}"
                raise EpisodeValidationError(msg)
            if span.label == OUTSIDE:
                msg = f"entity span {span.bounds} cannot carry the {OUTSIDE} label"
                raise EpisodeValidationError(msg)
        for left, right in zip(ordered, ordered[1:], strict=False):
            if right.start <= left.end:
                msg = f"entity spans {left.bounds} and {right.bounds} overlap"
                raise EpisodeValidationError(msg)
        object.__setattr__(self, "entity_spans", tuple(ordered))

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def classes(self) -> set[str]:
        return {span.label for span in self.entity_spans}

    @classmethod
    def from_io(cls, tokens: Sequence[str], labels: Sequence[str]) -> "LabeledSentence":
        """Build a sentence from IO labels (``O`` or bare class names)."""
        if len(tokens) != len(labels):
            msg = f"{len(tokens)} tokens but {len(labels)} labels"
            raise EpisodeValidationError(msg)
        names = [OUTSIDE, *sorted({label for label in labels if label != OUTSIDE})]
        index = {name: i for i, name in enumerate(names)}
        spans = spans_from_io_labels([index[label] for label in labels])
        return cls(tuple(tokens), tuple(EntitySpan(s, e, names[c]) for s, e, c in spans))

    def io_tags(self) -> list[str]:
        tags = [OUTSIDE] * len(self.tokens)
        for span in self.entity_spans:
            tags[span.start : span.end + 1] = [span.label] * len(span)
        return tags

    def relabel(self, keep: Iterable[str]) -> "LabeledSentence":
        """Drop entities whose class is not in ``keep`` (they become non-entity tokens)."""
        kept = set(keep)
        return LabeledSentence(self.tokens, tuple(s for s in self.entity_spans if s.label in kept))


@dataclass(frozen=True)
class LabelSpace:
    classes: tuple[str, ...] = field(default=(OUTSIDE,))

    def __post_init__(self) -> None:
        if not self.classes or self.classes[0] != OUTSIDE:
            msg = f"label space must start with {OUTSIDE}, got {self.classes}"
            raise EpisodeValidationError(msg)
        if len(set(self.classes)) != len(self.classes):
            msg = f"label space has duplicate names: {self.classes}"
            raise EpisodeValidationError(msg)

    @classmethod
    def from_types(cls, types: Iterable[str]) -> "LabelSpace":
        return cls((OUTSIDE, *[t for t in types if t != OUTSIDE]))

    @property
    def entity_classes(self) -> tuple[str, ...]:
        return self.classes[1:]

    def __len__(self) -> int:
        return len(self.classes)

    def index(self, name: str) -> int:
        try:
            return self.classes.index(name)
        except ValueError:
            msg = f"class {name!r} is not in the label space {self.classes}"
            raise EpisodeValidationError(msg) from None

    def name(self, class_id: int) -> str:
        return self.classes[class_id]


def io_labels_from_spans(sentence: LabeledSentence, label_space: LabelSpace) -> list[int]:
    """Per-token class ids under the IO scheme; 0 marks non-entity tokens."""
    labels = [0] * len(sentence)
    for span in sentence.entity_spans:
        class_id = label_space.index(span.label)
        for t in range(span.start, span.end + 1):
            labels[t] = class_id
    return labels


def spans_from_io_labels(labels: Sequence[int]) -> list[tuple[int, int, int]]:
    """Maximal runs of one non-O class id become ``(start, end, class_id)`` spans.

    Adjacent entities of the same class merge into a single span, a known
    limitation of the IO scheme.
    """
    spans: list[tuple[int, int, int]] = []
    start = 0
    for t in range(1, len(labels) + 1):
        if t == len(labels) or labels[t] != labels[start]:
            if labels[start] != 0:
                spans.append((start, t - 1, labels[start]))
            start = t
    return spans


def enumerate_spans(n: int, max_len: int | None) -> list[tuple[int, int]]:
    """All ``(i, j)`` with ``j - i + 1 <= max_len`` in lexicographic order; ``None`` is unbounded."""
    limit = n if max_len is None else min(max_len, n)
    return [(i, j) for i in range(n) for j in range(i, min(n, i + limit))]


def assign_o_subclasses(
    entity_spans: Iterable[tuple[int, int]],
    candidate_spans: Iterable[tuple[int, int]],
) -> dict[tuple[int, int], OSubclass]:
    """Subclass every non-entity candidate by the boundaries it shares with entities.

    Candidates equal to an entity span are left out. Boundaries are compared
    regardless of entity class, and a span starting at one entity and ending at
    another counts as O1.
    """
    entities = set(entity_spans)
    starts = {s for s, _ in entities}
    ends = {e for _, e in entities}
    result: dict[tuple[int, int], OSubclass] = {}
    for span in candidate_spans:
        if span in entities:
            continue
        start, end = span
        if start in starts:
            result[span] = OSubclass.O1
        elif end in ends:
            result[span] = OSubclass.O2
        else:
            result[span] = OSubclass.O3
    return result


def span_labels(
    sentence: LabeledSentence,
    candidates: Sequence[tuple[int, int]],
    label_space: LabelSpace,
) -> list[int | OSubclass]:
    """Label each candidate with its entity class id or its O subclass."""
    gold = {span.bounds: label_space.index(span.label) for span in sentence.entity_spans}
    subclasses = assign_o_subclasses(gold, candidates)
    return [gold[c] if c in gold else subclasses[c] for c in candidates]


def count_unreachable(sentences: Iterable[LabeledSentence], max_len: int | None) -> int:
    """Gold entity spans longer than ``max_len``; the span network can never produce them."""
    if max_len is None:
        return 0
    return sum(1 for s in sentences for span in s.entity_spans if len(span) > max_len)
