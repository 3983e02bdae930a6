import json
from collections import Counter
from collections.abc import Iterable, Iterator, Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from corpus.data_model import OUTSIDE, LabeledSentence, LabelSpace
from errors import EpisodeParseError, EpisodeValidationError, SamplingError
from utils import get_logger


logger = get_logger(__name__)

EXACT_K = "exact-k"
K_TO_2K = "k-to-2k"


@dataclass(frozen=True)
class Episode:
    label_space: LabelSpace
    support: tuple[LabeledSentence, ...]
    query: tuple[LabeledSentence, ...]
    episode_id: str = ""

    def __post_init__(self) -> None:
        known = set(self.label_space.entity_classes)
        for role, sentences in (("support", self.support), ("query", self.query)):
            for sentence in sentences:
                unknown = sentence.classes - known
                if unknown:
                    msg = f"{role} sentence uses classes {sorted(unknown)} missing from types {sorted(known)}"
                    raise EpisodeValidationError(msg)
        in_support = {label for s in self.support for label in s.classes}
        absent = [c for c in self.label_space.entity_classes if c not in in_support]
        if absent:
            msg = f"classes {absent} have no entity in the support set"
            raise EpisodeValidationError(msg)

    @property
    def ways(self) -> int:
        return len(self.label_space.entity_classes)

    def support_counts(self) -> Counter[str]:
        return Counter(span.label for s in self.support for span in s.entity_spans)


def _sentences_to_json(sentences: Iterable[LabeledSentence]) -> dict[str, list[list[str]]]:
    sentences = list(sentences)
    return {
        "word": [list(s.tokens) for s in sentences],
        "label": [s.io_tags() for s in sentences],
    }


def episode_to_json(episode: Episode) -> dict[str, Any]:
    return {
        "types": list(episode.label_space.entity_classes),
        "support": _sentences_to_json(episode.support),
        "query": _sentences_to_json(episode.query),
    }


def _sentences_from_json(block: Any, role: str, types: set[str]) -> tuple[LabeledSentence, ...]:
    if not isinstance(block, dict) or "word" not in block or "label" not in block:
        msg = f"{role} must be an object with 'word' and 'label'"
        raise EpisodeValidationError(msg)
    words, labels = block["word"], block["label"]
    if len(words) != len(labels):
        msg = f"{role}: {len(words)} word lists but {len(labels)} label lists"
        raise EpisodeValidationError(msg)
    sentences = []
    for i, (tokens, tags) in enumerate(zip(words, labels, strict=True)):
        if len(tokens) != len(tags):
            msg = f"{role} sentence {i}: {len(tokens)} words but {len(tags)} labels"
            raise EpisodeValidationError(msg)
        unknown = {t for t in tags if t != OUTSIDE and t not in types}
        if unknown:
            msg = f"{role} sentence {i}: labels {sorted(unknown)} are not listed in types"
            raise EpisodeValidationError(msg)
        sentences.append(LabeledSentence.from_io(tokens, tags))
    return tuple(sentences)


def episode_from_json(document: Any, episode_id: str = "") -> Episode:
    if not isinstance(document, dict) or "types" not in document:
        msg = "episode must be an object with 'types', 'support' and 'query'"
        raise EpisodeValidationError(msg)
    types = [str(t) for t in document["types"]]
    type_set = set(types)
    return Episode(
        label_space=LabelSpace.from_types(types),
        support=_sentences_from_json(document.get("support"), "support", type_set),
        query=_sentences_from_json(document.get("query"), "query", type_set),
        episode_id=episode_id,
    )


def load_episodes(path: str | Path) -> Iterator[Episode]:
    """Stream episodes from a JSONL file, one episode per line, in file order.

    Raises
    ------
    EpisodeParseError
        If a line is not valid JSON.
    EpisodeValidationError
        If an episode breaks an invariant; the message carries the line number.
    """
    with Path(path).open(encoding="utf-8") as file:
        index = 0
        for line_number, line in enumerate(file, start=1):
            if not line.strip():
                continue
            try:
                document = json.loads(line)
            except json.JSONDecodeError as exc:
                msg = f"malformed episode JSON: {exc.msg}"
                raise EpisodeParseError(msg, line_number) from exc
            try:
                yield episode_from_json(document, episode_id=str(index))
            except EpisodeValidationError as exc:
                msg = f"line {line_number}: {exc}"
                raise EpisodeValidationError(msg) from exc
            index += 1


def dump_episodes(path: str | Path, episodes: Iterable[Episode]) -> int:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with path.open("w", encoding="utf-8") as file:
        for episode in episodes:
            file.write(json.dumps(episode_to_json(episode), ensure_ascii=False))
            file.write("\n")
            count += 1
    logger.info("Wrote %d episodes to %s", count, path)
    return count


def _fill_support(
    corpus: Sequence[LabeledSentence],
    order: Sequence[int],
    classes: Sequence[str],
    shots: int,
    cap: int,
) -> tuple[list[int], Counter[str]]:
    counts: Counter[str] = Counter({c: 0 for c in classes})
    chosen: list[int] = []
    for idx in order:
        found = Counter(span.label for span in corpus[idx].relabel(classes).entity_spans)
        if not found or not any(counts[c] < shots for c in found):
            continue
        if any(counts[c] + n > cap for c, n in found.items()):
            continue
        chosen.append(idx)
        counts.update(found)
        if all(counts[c] >= shots for c in classes):
            break
    return chosen, counts


def _fill_query(
    corpus: Sequence[LabeledSentence],
    order: Sequence[int],
    used: set[int],
    classes: Sequence[str],
    per_class: int,
) -> tuple[list[int], Counter[str]]:
    counts: Counter[str] = Counter({c: 0 for c in classes})
    chosen: list[int] = []
    for idx in order:
        if idx in used:
            continue
        present = corpus[idx].relabel(classes).classes
        if not present or not any(counts[c] < per_class for c in present):
            continue
        chosen.append(idx)
        counts.update(present)
        if all(counts[c] >= per_class for c in classes):
            break
    return chosen, counts


def sample_episode(
    corpus: Sequence[LabeledSentence],
    ways: int,
    shots: int,
    mode: str = K_TO_2K,
    rng_seed: int | Sequence[int] = 0,
    *,
    query_per_class: int = 1,
    max_attempts: int = 20,
    episode_id: str = "",
) -> Episode:
    """Greedily sample an N-way K-shot episode.

    Sentences are shuffled and added to the support set while they contain a
    class still below ``shots`` and no class would exceed the cap (``shots`` for
    exact-K, ``2 * shots`` for K-to-2K). Entities of classes outside the episode
    are relabelled O. Query sentences come from the remaining sentences until
    every class appears in ``query_per_class`` of them, as far as the corpus allows.

    Raises
    ------
    SamplingError
        If fewer than ``ways`` classes have ``shots`` entities, or the support
        set cannot be completed within ``max_attempts`` shuffles.
    """
    if mode not in (EXACT_K, K_TO_2K):
        msg = f"unknown sampling mode {mode!r}"
        raise SamplingError(msg)
    if ways < 1 or shots < 1:
        msg = f"ways and shots must be >= 1, got ways={ways} shots={shots}"
        raise SamplingError(msg)
    rng = np.random.default_rng(rng_seed)
    totals = Counter(span.label for s in corpus for span in s.entity_spans)
    eligible = sorted(c for c, n in totals.items() if n >= shots)
    if len(eligible) < ways:
        short = sorted((c for c in totals if c not in eligible), key=lambda c: (-totals[c], c))
        name = short[0] if short else None
        msg = f"need {ways} classes with >= {shots} entities, corpus has {len(eligible)}"
        if name is not None:
            msg += f"; class {name!r} has only {totals[name]}"
        raise SamplingError(msg, class_name=name)

    classes = [str(c) for c in rng.choice(eligible, size=ways, replace=False)]
    cap = shots if mode == EXACT_K else 2 * shots
    deficient: str | None = None
    for attempt in range(max_attempts):
        order = [int(i) for i in rng.permutation(len(corpus))]
        support_idx, counts = _fill_support(corpus, order, classes, shots, cap)
        missing = [c for c in classes if counts[c] < shots]
        if missing:
            deficient = missing[0]
            logger.debug("Sampling attempt %d left class %s at %d entities", attempt + 1, deficient, counts[deficient])
            continue
        query_idx, query_counts = _fill_query(corpus, order, set(support_idx), classes, query_per_class)
        thin = [c for c in classes if query_counts[c] < query_per_class]
        if thin:
            logger.warning("Query set has fewer than %d sentences for classes %s", query_per_class, thin)
        return Episode(
            label_space=LabelSpace.from_types(classes),
            support=tuple(corpus[i].relabel(classes) for i in support_idx),
            query=tuple(corpus[i].relabel(classes) for i in query_idx),
            episode_id=episode_id,
        )

    msg = f"could not complete a {ways}-way {shots}-shot support set after {max_attempts} attempts"
    msg += f"; class {deficient!r} stayed below {shots} entities"
    raise SamplingError(msg, class_name=deficient)
