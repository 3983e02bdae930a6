from .conll import read_conll
from .data_model import (
    OUTSIDE,
    EntitySpan,
    LabeledSentence,
    LabelSpace,
    OSubclass,
    assign_o_subclasses,
    count_unreachable,
    enumerate_spans,
    io_labels_from_spans,
    span_labels,
    spans_from_io_labels,
)
from .episodes import Episode, dump_episodes, episode_from_json, episode_to_json, load_episodes, sample_episode
