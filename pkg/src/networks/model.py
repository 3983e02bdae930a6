from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from autodiff import ParameterStore, Tape, Tensor, init_parameters, load_checkpoint, save_checkpoint
from autodiff.tensor import Array, softmax_rows
from config import CDAPConfig, config_from_dict
from corpus import (
    Episode,
    LabeledSentence,
    OSubclass,
    count_unreachable,
    enumerate_spans,
    io_labels_from_spans,
    span_labels,
)
from errors import EpisodeValidationError
from networks.consistency import consistent_loss, episode_token_rows, total_loss
from networks.encoder import Encoder, build_vocabulary, make_provider, project_tokens, span_reprs
from networks.span_network import SpanBank, cross_attention, span_logits, span_loss
from networks.token_network import IntArray, TokenClassSupport, token_logits, token_loss
from utils import get_logger


SpanIndex = tuple[tuple[int, int, int], ...]


@dataclass
class SupportEncoding:
    """Everything the query side needs from one support set."""

    hidden: Tensor
    token_support: TokenClassSupport
    spans: Tensor
    span_classes: IntArray
    span_subclasses: tuple[OSubclass | None, ...]


@dataclass
class QueryScores:
    hidden: Tensor
    span_logits: Tensor
    span_index: SpanIndex
    lengths: tuple[int, ...]


@dataclass
class EpisodeLosses:
    token: Tensor
    span: Tensor
    consistency: Tensor
    total: Tensor

    def values(self) -> dict[str, float]:
        return {
            "L_t": self.token.item(),
            "L_s": self.span.item(),
            "L_c": self.consistency.item(),
            "total": self.total.item(),
        }


@dataclass
class SentenceScores:
    """Forward-only distributions of one query sentence, rows in enumeration order."""

    token_probs: Array
    spans: tuple[tuple[int, int], ...]
    span_probs: Array


def _query_spans(sentences: Sequence[LabeledSentence], max_len: int | None) -> tuple[list[int], list[int], SpanIndex]:
    starts: list[int] = []
    ends: list[int] = []
    index: list[tuple[int, int, int]] = []
    offset = 0
    for sentence_id, sentence in enumerate(sentences):
        for start, end in enumerate_spans(len(sentence), max_len):
            starts.append(offset + start)
            ends.append(offset + end)
            index.append((sentence_id, start, end))
        offset += len(sentence)
    return starts, ends, tuple(index)


class CDAPModel:
    """Token- and span-level adaptive prototypical networks over one parameter store.

    Parameters
    ----------
    config : CDAPConfig
        Model, embedding and loss settings.
    store : ParameterStore
        Trainable tensors, shared by both networks.
    encoder : Encoder
        Source of the token matrix U.
    """

    def __init__(self, config: CDAPConfig, store: ParameterStore, encoder: Encoder) -> None:
        self.logger = get_logger(__name__)
        self.config = config
        self.store = store
        self.encoder = encoder

    @classmethod
    def create(cls, config: CDAPConfig, sentences: Sequence[LabeledSentence] = ()) -> "CDAPModel":
        """Fresh parameters; a trainable embedding table covers the tokens of ``sentences``."""
        provider = make_provider(config.embedding, config.model.embedding_dim)
        vocabulary = build_vocabulary(sentences) if config.embedding.trainable else []
        encoder = Encoder(provider, vocabulary)
        table = encoder.initial_table() if vocabulary else None
        store = init_parameters(config.model.embedding_dim, config.model.hidden_dim, config.seed, table)
        model = cls(config, store, encoder)
        model.logger.info(
            "Initialised %d parameter tensors (d1=%d, d=%d, vocabulary=%d)",
            len(store),
            config.model.embedding_dim,
            config.model.hidden_dim,
            len(vocabulary),
        )
        return model

    @classmethod
    def from_checkpoint(cls, path: str | Path, config: CDAPConfig) -> "CDAPModel":
        """Load parameters; the model and embedding sections stored with them win over ``config``."""
        store, metadata = load_checkpoint(path)
        stored: Mapping[str, Any] = metadata.get("config", {})
        document = config.to_dict()
        for section in ("model", "embedding"):
            if section in stored:
                document[section] = stored[section]
        merged = config_from_dict(document)
        provider = make_provider(merged.embedding, merged.model.embedding_dim)
        encoder = Encoder(provider, metadata.get("vocabulary", []))
        model = cls(merged, store, encoder)
        model.logger.info("Loaded checkpoint %s at step %d", path, store.step)
        return model

    def save(self, path: str | Path, **metadata: Any) -> None:
        save_checkpoint(
            path,
            self.store,
            {"config": self.config.to_dict(), "vocabulary": self.encoder.vocabulary, **metadata},
        )

    # -- encoding ---------------------------------------------------------

    @property
    def _constant_attention(self) -> bool:
        return self.config.model.prototype == "mean"

    @property
    def _squared(self) -> bool:
        return self.config.model.distance == "squared"

    def encode_support(self, tape: Tape, episode: Episode, max_span_len: int | None) -> SupportEncoding:
        """Token representations and the labelled support span bank S.

        Non-entity spans are enumerated up to ``max_span_len``; gold entity spans
        longer than that are still added as class exemplars.
        """
        sentences = episode.support
        u = self.encoder.embed(tape, sentences, self.store)
        hidden = project_tokens(tape, u, self.store)
        labels = [label for s in sentences for label in io_labels_from_spans(s, episode.label_space)]
        token_support = TokenClassSupport.from_labels(labels, len(episode.label_space), episode.label_space.classes)

        starts: list[int] = []
        ends: list[int] = []
        classes: list[int] = []
        subclasses: list[OSubclass | None] = []
        offset = 0
        for sentence in sentences:
            candidates = enumerate_spans(len(sentence), max_span_len)
            enumerated = set(candidates)
            candidates += [span.bounds for span in sentence.entity_spans if span.bounds not in enumerated]
            for (start, end), label in zip(
                candidates, span_labels(sentence, candidates, episode.label_space), strict=True
            ):
                starts.append(offset + start)
                ends.append(offset + end)
                if isinstance(label, OSubclass):
                    classes.append(0)
                    subclasses.append(label)
                else:
                    classes.append(label)
                    subclasses.append(None)
            offset += len(sentence)
        return SupportEncoding(
            hidden=hidden,
            token_support=token_support,
            spans=span_reprs(tape, u, starts, ends, self.store),
            span_classes=np.asarray(classes, dtype=np.int64),
            span_subclasses=tuple(subclasses),
        )

    def score_query(
        self,
        tape: Tape,
        episode: Episode,
        support: SupportEncoding,
        sentences: Sequence[LabeledSentence],
        max_span_len: int | None,
    ) -> QueryScores:
        """Query token representations and span logits for every enumerated span of ``sentences``."""
        u = self.encoder.embed(tape, sentences, self.store)
        hidden = project_tokens(tape, u, self.store)
        starts, ends, index = _query_spans(sentences, max_span_len)
        query_spans = span_reprs(tape, u, starts, ends, self.store)
        bank = SpanBank(
            support=support.spans,
            support_classes=support.span_classes,
            support_subclasses=support.span_subclasses,
            query=query_spans,
            query_index=index,
        )
        if self.config.model.cross_attention:
            enhanced_support, enhanced_query = cross_attention(tape, bank.support, bank.query, self.store)
        else:
            enhanced_support, enhanced_query = bank.support, bank.query
        logits_s = span_logits(
            tape,
            bank,
            enhanced_support,
            enhanced_query,
            len(episode.label_space),
            o_division=self.config.model.o_division,
            constant_attention=self._constant_attention,
            squared=self._squared,
            class_names=episode.label_space.classes,
        )
        return QueryScores(
            hidden=hidden,
            span_logits=logits_s,
            span_index=index,
            lengths=tuple(len(s) for s in sentences),
        )

    # -- training ---------------------------------------------------------

    def forward(self, tape: Tape, episode: Episode) -> EpisodeLosses:
        """Joint objective of one episode: token NLL, span NLL and the consistency term."""
        if not episode.query:
            msg = f"episode {episode.episode_id or '<unnamed>'} has no query sentence to train on"
            raise EpisodeValidationError(msg)
        max_len = self.config.model.max_span_len_train
        support = self.encode_support(tape, episode, max_len)
        scores = self.score_query(tape, episode, support, episode.query, max_len)

        query_labels = [label for s in episode.query for label in io_labels_from_spans(s, episode.label_space)]
        token_out = token_loss(
            tape,
            support.hidden,
            support.token_support,
            scores.hidden,
            query_labels,
            constant_attention=self._constant_attention,
            squared=self._squared,
        )

        gold_by_span = {
            (sentence_id, span.start, span.end): episode.label_space.index(span.label)
            for sentence_id, sentence in enumerate(episode.query)
            for span in sentence.entity_spans
        }
        span_gold = [gold_by_span.get(key, 0) for key in scores.span_index]
        span_out = span_loss(tape, scores.span_logits, span_gold, scores.span_index)

        rows = episode_token_rows(scores.span_logits, scores.span_index, scores.lengths)
        consistency = consistent_loss(
            tape,
            token_out.logits,
            tape.gather_rows(scores.span_logits, rows),
            temperature=self.config.loss.temperature,
            variant=self.config.loss.consistency,
        )
        loss = self.config.loss
        total = total_loss(
            tape,
            token_out.loss,
            span_out.loss,
            consistency,
            loss.token_weight,
            loss.span_weight,
            loss.consistency_weight,
        )
        return EpisodeLosses(token=token_out.loss, span=span_out.loss, consistency=consistency, total=total)

    def unreachable_spans(self, episodes: Sequence[Episode]) -> int:
        """Gold query spans the training span cap can never produce."""
        return count_unreachable(
            (s for e in episodes for s in e.query),
            self.config.model.max_span_len_train,
        )

    # -- inference --------------------------------------------------------

    def score_episode(self, episode: Episode, max_span_len: int) -> list[SentenceScores]:
        """Forward-only scores for every query sentence, one sentence per query bank."""
        tape = Tape(record=False)
        support = self.encode_support(tape, episode, max_span_len)
        return [self.score_sentence(tape, episode, support, sentence, max_span_len) for sentence in episode.query]

    def score_sentence(
        self,
        tape: Tape,
        episode: Episode,
        support: SupportEncoding,
        sentence: LabeledSentence,
        max_span_len: int,
    ) -> SentenceScores:
        scores = self.score_query(tape, episode, support, [sentence], max_span_len)
        logits_t = token_logits(
            tape,
            support.hidden,
            support.token_support,
            scores.hidden,
            constant_attention=self._constant_attention,
            squared=self._squared,
        )
        return SentenceScores(
            token_probs=softmax_rows(logits_t.value),
            spans=tuple((start, end) for _, start, end in scores.span_index),
            span_probs=softmax_rows(scores.span_logits.value),
        )
