from .consistency import (
    choose_token_spans,
    consistent_loss,
    episode_token_rows,
    span_to_token_logits,
    total_loss,
)
from .encoder import (
    Encoder,
    EmbeddingProvider,
    HashedEmbeddingProvider,
    PretrainedEmbeddingProvider,
    build_vocabulary,
    embed_sentence,
    make_provider,
    project_tokens,
    span_repr,
    span_reprs,
)
from .model import CDAPModel, EpisodeLosses, SentenceScores
from .span_network import SpanBank, cross_attention, o_prototype, span_distribution, span_logits, span_loss
from .token_network import TokenClassSupport, attention_aggregate, token_distribution, token_logits, token_loss
