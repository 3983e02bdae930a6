import hashlib
from collections.abc import Sequence
from pathlib import Path
from typing import Protocol

import numpy as np

from autodiff import ParameterStore, Tape, Tensor, constant
from autodiff.tensor import Array
from config import EmbeddingConfig
from corpus import LabeledSentence
from errors import ContractError, EmbeddingFileError, EpisodeValidationError
from utils import get_logger


logger = get_logger(__name__)

TABLE = "embedding.table"


class EmbeddingProvider(Protocol):
    dim: int

    def vector(self, token: str) -> Array: ...


class HashedEmbeddingProvider:
    """Seeded Gaussian vector per token string, stable across processes."""

    def __init__(self, dim: int, seed: int = 13) -> None:
        self.dim = dim
        self.seed = seed
        self._cache: dict[str, Array] = {}

    def vector(self, token: str) -> Array:
        cached = self._cache.get(token)
        if cached is None:
            digest = hashlib.blake2b(f"{self.seed}\x00{token}".encode(), digest_size=8).digest()
            rng = np.random.default_rng(int.from_bytes(digest, "little"))
            cached = rng.standard_normal(self.dim)
            self._cache[token] = cached
        return cached


class PretrainedEmbeddingProvider:
    """Vectors read from a ``word v1 ... v_d`` text file; unknown words get hashed vectors."""

    def __init__(self, path: str | Path, dim: int, seed: int = 13) -> None:
        self.dim = dim
        self.path = Path(path)
        self._vectors = self._read(self.path, dim)
        self._fallback = HashedEmbeddingProvider(dim, seed)
        logger.info("Loaded %d pretrained vectors of width %d from %s", len(self._vectors), dim, self.path)

    @staticmethod
    def _read(path: Path, dim: int) -> dict[str, Array]:
        vectors: dict[str, Array] = {}
        with path.open(encoding="utf-8") as file:
            for line_number, line in enumerate(file, start=1):
                fields = line.split()
                if not fields:
                    continue
                if len(fields) != dim + 1:
                    msg = f"{path}:{line_number}: expected a word and {dim} values, got {len(fields)} fields"
                    raise EmbeddingFileError(msg)
                try:
                    vectors[fields[0]] = np.array([float(v) for v in fields[1:]])
                except ValueError as exc:
                    msg = f"{path}:{line_number}: non-numeric vector value"
                    raise EmbeddingFileError(msg) from exc
        return vectors

    def __contains__(self, token: str) -> bool:
        return token in self._vectors

    def vector(self, token: str) -> Array:
        found = self._vectors.get(token)
        return found if found is not None else self._fallback.vector(token)


def make_provider(config: EmbeddingConfig, dim: int) -> EmbeddingProvider:
    if config.provider == "pretrained":
        if config.path is None:
            msg = "pretrained provider needs embedding.path"
            raise EmbeddingFileError(msg)
        return PretrainedEmbeddingProvider(config.path, dim, config.seed)
    return HashedEmbeddingProvider(dim, config.seed)


def embed_sentence(provider: EmbeddingProvider, tokens: Sequence[str]) -> Array:
    """Stack one provider vector per token into an ``(n, d1)`` matrix."""
    return np.stack([provider.vector(token) for token in tokens])


def build_vocabulary(sentences: Sequence[LabeledSentence]) -> list[str]:
    return sorted({token for s in sentences for token in s.tokens})


class Encoder:
    """Turns sentences into the matrix U, from the provider or a trainable table.

    Parameters
    ----------
    provider : EmbeddingProvider
        Source of token vectors.
    vocabulary : Sequence[str] | None, optional
        Row order of ``embedding.table`` when the store holds one.
    """

    def __init__(self, provider: EmbeddingProvider, vocabulary: Sequence[str] | None = None) -> None:
        self.provider = provider
        self.vocabulary = list(vocabulary or [])
        self._index = {token: i for i, token in enumerate(self.vocabulary)}

    @property
    def dim(self) -> int:
        return self.provider.dim

    def initial_table(self) -> Array:
        return embed_sentence(self.provider, self.vocabulary)

    def embed(self, tape: Tape, sentences: Sequence[LabeledSentence], store: ParameterStore) -> Tensor:
        """Row-stack U for several sentences; row order follows the sentences."""
        if not sentences:
            msg = "cannot embed an empty list of sentences"
            raise EpisodeValidationError(msg)
        tokens = [token for s in sentences for token in s.tokens]
        if TABLE not in store or not self.vocabulary:
            return constant(embed_sentence(self.provider, tokens), name="U")
        table = store[TABLE]
        oov = sorted({t for t in tokens if t not in self._index})
        rows = [self._index.get(t, -1) for t in tokens]
        if oov:
            extra = {t: len(self.vocabulary) + i for i, t in enumerate(oov)}
            rows = [r if r >= 0 else extra[t] for r, t in zip(rows, tokens, strict=True)]
            table = tape.concat([table, constant(embed_sentence(self.provider, oov))], axis=0)
        return tape.gather_rows(table, rows)


def project_tokens(tape: Tape, u: Tensor, store: ParameterStore) -> Tensor:
    """``H = U W_t^T + b_t``."""
    weight = store["token.weight"]
    if u.shape[1] != weight.shape[1]:
        msg = f"project_tokens: U has width {u.shape[1]}, token.weight expects {weight.shape[1]}"
        raise ContractError(msg)
    return tape.add(tape.matmul(u, tape.transpose(weight)), store["token.bias"])


def span_reprs(
    tape: Tape,
    u: Tensor,
    starts: Sequence[int],
    ends: Sequence[int],
    store: ParameterStore,
) -> Tensor:
    """``W_s [u_start ; u_end] + b_s`` for many spans at once."""
    n = u.shape[0]
    for start, end in zip(starts, ends, strict=True):
        if not 0 <= start <= end < n:
            msg = f"span ({start}, {end}) is out of range for {n} rows"
            raise ContractError(msg)
    boundary = tape.concat([tape.gather_rows(u, starts), tape.gather_rows(u, ends)], axis=1)
    return tape.add(tape.matmul(boundary, tape.transpose(store["span.weight"])), store["span.bias"])


def span_repr(tape: Tape, u: Tensor, start: int, end: int, store: ParameterStore) -> Tensor:
    return span_reprs(tape, u, [start], [end], store)
