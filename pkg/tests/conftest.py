import logging
from collections.abc import Callable, Iterator

import numpy as np
import pytest

from config import CDAPConfig, config_from_dict
from corpus import EntitySpan, Episode, LabeledSentence, LabelSpace, sample_episode
from utils import LOGGER_NAME


FILLER = ("the", "a", "flight", "to", "from", "on", "with", "and", "for", "is", "at", "of")


def make_corpus(num_classes: int = 10, sentences: int = 200, seed: int = 0) -> list[LabeledSentence]:
    """Vocabulary-separable corpus: class ``Ck`` is always the single token ``entk``."""
    rng = np.random.default_rng(seed)
    corpus = []
    for _ in range(sentences):
        n = int(rng.integers(6, 11))
        tokens = [str(t) for t in rng.choice(FILLER, size=n)]
        count = int(rng.integers(1, 3))
        classes = rng.choice(num_classes, size=count, replace=False)
        positions = sorted(int(p) for p in rng.choice(np.arange(0, n, 2), size=count, replace=False))
        spans = []
        for position, class_id in zip(positions, classes, strict=True):
            tokens[position] = f"ent{class_id}"
            spans.append(EntitySpan(position, position, f"C{class_id}"))
        corpus.append(LabeledSentence(tuple(tokens), tuple(spans)))
    return corpus


def toy_episodes(
    corpus: list[LabeledSentence],
    classes: set[str],
    count: int,
    ways: int = 5,
    seed: int = 0,
) -> list[Episode]:
    """Episodes sampled from the sentences whose entities all belong to ``classes``."""
    pool = [s for s in corpus if s.classes <= classes]
    return [
        sample_episode(pool, ways, 1, "k-to-2k", [seed, i], query_per_class=1, episode_id=str(i))
        for i in range(count)
    ]


@pytest.fixture(scope="session")
def toy_corpus() -> list[LabeledSentence]:
    return make_corpus()


@pytest.fixture
def small_config() -> CDAPConfig:
    return config_from_dict(
        {
            "seed": 7,
            "model": {"embedding_dim": 8, "hidden_dim": 6, "max_span_len_train": 3},
            "training": {"max_steps": 4, "warmup_steps": 1, "log_every": 1, "batch_size": 2},
            "inference": {"max_span_len": 3},
        }
    )


@pytest.fixture
def config_factory() -> Callable[..., CDAPConfig]:
    def build(**sections: dict[str, object]) -> CDAPConfig:
        document: dict[str, object] = {
            "seed": 7,
            "model": {"embedding_dim": 8, "hidden_dim": 6, "max_span_len_train": 3},
            "training": {"max_steps": 4, "warmup_steps": 1, "log_every": 1},
            "inference": {"max_span_len": 3},
        }
        for name, values in sections.items():
            base = document.get(name, {})
            document[name] = {**base, **values} if isinstance(base, dict) else values
        return config_from_dict(document)

    return build


@pytest.fixture
def tiny_episode() -> Episode:
    """2-way episode, two support and two query sentences."""
    support = (
        LabeledSentence(("alice", "visited", "paris", "today"), (EntitySpan(0, 0, "PER"), EntitySpan(2, 2, "LOC"))),
        LabeledSentence(("bob", "flew", "to", "new", "york"), (EntitySpan(0, 0, "PER"), EntitySpan(3, 4, "LOC"))),
    )
    query = (
        LabeledSentence(("carol", "left", "paris"), (EntitySpan(0, 0, "PER"), EntitySpan(2, 2, "LOC"))),
        LabeledSentence(("alice", "stayed", "home"), (EntitySpan(0, 0, "PER"),)),
    )
    return Episode(LabelSpace.from_types(["PER", "LOC"]), support, query, episode_id="tiny")


@pytest.fixture(autouse=True)
def _reset_logging() -> Iterator[None]:
    """Drop handlers installed by ``setup_logging``."""
    yield
    logger = logging.getLogger(LOGGER_NAME)
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
        handler.close()
