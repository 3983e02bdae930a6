from pathlib import Path

from corpus.data_model import OUTSIDE, LabeledSentence
from errors import EpisodeParseError
from utils import get_logger


logger = get_logger(__name__)

_BIO_PREFIXES = ("B-", "I-", "E-", "S-")


def read_conll(path: str | Path) -> list[LabeledSentence]:
    """Read ``token<TAB>label`` lines with blank lines between sentences.

    Labels are ``O`` or bare class names under the IO scheme; a run of the same
    class name is one entity.

    Raises
    ------
    EpisodeParseError
        If a line does not have exactly two tab-separated fields or carries a
        BIO-style prefix.
    """
    sentences: list[LabeledSentence] = []
    tokens: list[str] = []
    labels: list[str] = []

    def flush() -> None:
        if tokens:
            sentences.append(LabeledSentence.from_io(tokens, labels))
            tokens.clear()
            labels.clear()

    with Path(path).open(encoding="utf-8") as file:
        for line_number, raw in enumerate(file, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip():
                flush()
                continue
            fields = line.split("\t")
            if len(fields) != 2 or not fields[0] or not fields[1].strip():  # noqa: PLR2004
                msg = f"expected 'token<TAB>label', got {line!r}"
                raise EpisodeParseError(msg, line_number)
            label = fields[1].strip()
            if label != OUTSIDE and label.startswith(_BIO_PREFIXES):
                msg = f"label {label!r} looks like BIO; only the IO scheme is supported"
                raise EpisodeParseError(msg, line_number)
            tokens.append(fields[0])
            labels.append(label)
    flush()
    logger.info("Read %d sentences from %s", len(sentences), path)
    return sentences
