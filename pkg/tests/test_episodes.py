from collections import Counter

import pytest

from conftest import make_corpus
from corpus import (
    EntitySpan,
    Episode,
    LabeledSentence,
    LabelSpace,
    dump_episodes,
    episode_to_json,
    load_episodes,
    read_conll,
    sample_episode,
)
from errors import EpisodeParseError, EpisodeValidationError, SamplingError


def test_dump_then_load_gives_back_the_episodes(tmp_path, tiny_episode):
    path = tmp_path / "episodes.jsonl"
    assert dump_episodes(path, [tiny_episode, tiny_episode]) == 2
    loaded = list(load_episodes(path))
    assert [e.episode_id for e in loaded] == ["0", "1"]
    assert loaded[0].support == tiny_episode.support
    assert loaded[0].query == tiny_episode.query
    assert loaded[0].label_space == tiny_episode.label_space


def test_episode_json_uses_fewnerd_keys(tiny_episode):
    document = episode_to_json(tiny_episode)
    assert document["types"] == ["PER", "LOC"]
    assert document["support"]["word"][0] == ["alice", "visited", "paris", "today"]
    assert document["support"]["label"][0] == ["PER", "O", "LOC", "O"]


def test_malformed_line_reports_line_number(tmp_path, tiny_episode):
    path = tmp_path / "episodes.jsonl"
    dump_episodes(path, [tiny_episode])
    with path.open("a") as file:
        file.write("{not json\n")
    with pytest.raises(EpisodeParseError) as info:
        list(load_episodes(path))
    assert info.value.line_number == 2
    assert str(info.value).startswith("line 2:")


def test_unknown_label_is_a_validation_error(tmp_path):
    path = tmp_path / "episodes.jsonl"
    path.write_text(
        '{"types": ["A"], "support": {"word": [["x", "y"]], "label": [["A", "B"]]},'
        ' "query": {"word": [], "label": []}}\n'
    )
    with pytest.raises(EpisodeValidationError, match="line 1"):
        list(load_episodes(path))


def test_every_class_needs_a_support_entity():
    support = (LabeledSentence(("a", "b"), (EntitySpan(0, 0, "A"),)),)
    with pytest.raises(EpisodeValidationError, match="B"):
        Episode(LabelSpace.from_types(["A", "B"]), support, ())


def test_exact_k_support_counts():
    corpus = make_corpus(seed=3)
    episode = sample_episode(corpus, 5, 2, "exact-k", 11)
    assert episode.ways == 5
    assert all(count == 2 for count in episode.support_counts().values())


def test_k_to_2k_support_counts_and_relabelling():
    corpus = make_corpus(seed=4)
    episode = sample_episode(corpus, 3, 2, "k-to-2k", 5, query_per_class=2)
    counts = episode.support_counts()
    assert set(counts) == set(episode.label_space.entity_classes)
    assert all(2 <= count <= 4 for count in counts.values())
    seen = {span.label for s in (*episode.support, *episode.query) for span in s.entity_spans}
    assert seen <= set(episode.label_space.entity_classes)
    query_presence = Counter(label for s in episode.query for label in s.classes)
    assert all(query_presence[c] >= 2 for c in episode.label_space.entity_classes)


def test_sampling_is_deterministic_per_seed():
    corpus = make_corpus(seed=5)
    first = sample_episode(corpus, 5, 1, "k-to-2k", 21)
    second = sample_episode(corpus, 5, 1, "k-to-2k", 21)
    assert episode_to_json(first) == episode_to_json(second)


def test_one_way_one_shot_single_sentence():
    corpus = [LabeledSentence(("x", "y"), (EntitySpan(0, 0, "A"),))]
    episode = sample_episode(corpus, 1, 1, "exact-k", 0)
    assert episode.support == tuple(corpus)
    assert episode.query == ()


def test_sampling_names_the_short_class():
    corpus = [
        LabeledSentence(("x", "y"), (EntitySpan(0, 0, "A"),)),
        LabeledSentence(("x", "y"), (EntitySpan(0, 0, "A"),)),
        LabeledSentence(("z", "y"), (EntitySpan(0, 0, "B"),)),
    ]
    with pytest.raises(SamplingError) as info:
        sample_episode(corpus, 2, 2, "exact-k", 0)
    assert info.value.class_name == "B"


def test_read_conll(tmp_path):
    path = tmp_path / "corpus.conll"
    path.write_text("fly\tO\nto\tO\nnew\tLOC\nyork\tLOC\n\nbob\tPER\nleft\tO\n")
    sentences = read_conll(path)
    assert len(sentences) == 2
    assert sentences[0].entity_spans == (EntitySpan(2, 3, "LOC"),)
    assert sentences[1].tokens == ("bob", "left")


@pytest.mark.parametrize("content", ["fly\tO\nnew\tB-LOC\n", "fly\tO\nnew LOC\n"])
def test_read_conll_rejects_bad_lines(tmp_path, content):
    path = tmp_path / "corpus.conll"
    path.write_text(content)
    with pytest.raises(EpisodeParseError) as info:
        read_conll(path)
    assert info.value.line_number == 2


def _max_entities_per_class_per_sentence(corpus):
    return max(count for s in corpus for count in Counter(span.label for span in s.entity_spans).values())


def test_exact_k_bounds_over_seeds():
    corpus = make_corpus(seed=6)
    extra = _max_entities_per_class_per_sentence(corpus)
    for seed in range(100):
        episode = sample_episode(corpus, 5, 5, "exact-k", seed)
        counts = episode.support_counts()
        assert set(counts) == set(episode.label_space.entity_classes)
        assert all(5 <= count < 5 + extra for count in counts.values())


def test_k_to_2k_bounds_over_seeds():
    corpus = make_corpus(seed=7)
    assert _max_entities_per_class_per_sentence(corpus) == 1
    for seed in range(100):
        episode = sample_episode(corpus, 5, 1, "k-to-2k", seed)
        counts = episode.support_counts()
        assert set(counts) == set(episode.label_space.entity_classes)
        assert all(1 <= count <= 2 for count in counts.values())


@pytest.mark.parametrize(("ways", "shots"), [(0, 1), (1, 0), (-1, 1)])
def test_sampling_rejects_non_positive_sizes(ways, shots):
    with pytest.raises(SamplingError, match="must be >= 1"):
        sample_episode(make_corpus(seed=1), ways, shots, "exact-k", 0)
