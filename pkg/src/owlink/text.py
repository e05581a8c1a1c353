"""Word embedding loading, tokenization, and text-to-entity aggregation.

An entity's name and description are turned into a sequence of word
embeddings (a single phrase embedding for the full name when the store
has one, token-wise lookups otherwise; description tokens appended after
the name) and averaged into one text-based entity embedding. Tokens
absent from the store map to the all-zeros "unknown" vector. During
training, word dropout replaces a random subset of the sequence with the
unknown vector before averaging; dropped tokens still count in the
denominator.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .graph import EntityText

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


class WordEmbeddingFormatError(ValueError):
    """Word embedding file has inconsistent or malformed entries."""


class NoTextError(ValueError):
    """Entity has no usable textual metadata."""


class WordEmbeddingStore:
    """Immutable token -> vector map with a zero vector for unknown tokens.

    ``phrase_template`` controls how a multi-word entity name is keyed for
    phrase lookup: ``{name}`` is replaced by the name's whitespace tokens
    joined with underscores (e.g. ``"ENTITY/{name}"`` for stores that
    prefix phrase keys).
    """

    def __init__(
        self,
        vectors: dict[str, np.ndarray],
        dim: int,
        phrase_template: str = "{name}",
    ) -> None:
        self.vectors = vectors
        self.dim = dim
        self.phrase_template = phrase_template
        self._zero = np.zeros(dim)

    def __len__(self) -> int:
        return len(self.vectors)

    def __contains__(self, token: str) -> bool:
        return token in self.vectors

    def lookup(self, token: str) -> np.ndarray:
        """Vector for a token; all zeros when the token is absent."""
        return self.vectors.get(token, self._zero)

    def phrase_key(self, name: str) -> str:
        return self.phrase_template.format(name="_".join(name.split()))


def load_word_embeddings(path: str, phrase_template: str = "{name}") -> WordEmbeddingStore:
    """Load a text-format embedding file: token followed by decimals.

    A first line of exactly two fields ("count dim") is treated as a header
    and consumed. All vectors must share one dimension; a mismatch raises
    :class:`WordEmbeddingFormatError` naming the line.
    """
    vectors: dict[str, np.ndarray] = {}
    dim: int | None = None
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\n")
            if not line:
                continue
            parts = line.split(" ")
            if lineno == 1 and len(parts) == 2:
                try:
                    int(parts[0]), int(parts[1])
                    continue  # header "count dim"
                except ValueError:
                    pass
            token = parts[0]
            try:
                vec = np.asarray([float(x) for x in parts[1:] if x], dtype=np.float64)
            except ValueError as exc:
                raise WordEmbeddingFormatError(f"{path}:{lineno}: {exc}") from None
            if dim is None:
                dim = len(vec)
                if dim == 0:
                    raise WordEmbeddingFormatError(f"{path}:{lineno}: entry has no vector values")
            elif len(vec) != dim:
                raise WordEmbeddingFormatError(
                    f"{path}:{lineno}: vector length {len(vec)} != expected {dim}"
                )
            vectors[token] = vec
    if dim is None:
        raise WordEmbeddingFormatError(f"{path}: no embeddings found")
    return WordEmbeddingStore(vectors, dim, phrase_template)


def tokenize(text: str) -> list[str]:
    """Lowercase and split on whitespace/punctuation; digits kept."""
    return _TOKEN_RE.findall(text.lower())


@dataclass
class TextEmbedding:
    vector: np.ndarray
    tokens_used: int
    unknown_count: int


def entity_tokens(meta: EntityText, store: WordEmbeddingStore) -> tuple[list[np.ndarray], int]:
    """Embedding sequence for an entity: name embeddings then description.

    The full name contributes a single phrase embedding when the store has
    one under the phrase key; otherwise the name is tokenized and looked up
    token-wise. Returns the sequence and the count of unknown (zero-vector)
    lookups. Empty metadata yields an empty sequence.
    """
    sequence: list[np.ndarray] = []
    unknown = 0
    if meta.name:
        key = store.phrase_key(meta.name)
        if key in store:
            sequence.append(store.lookup(key))
        else:
            for tok in tokenize(meta.name):
                if tok not in store:
                    unknown += 1
                sequence.append(store.lookup(tok))
    for tok in tokenize(meta.description):
        if tok not in store:
            unknown += 1
        sequence.append(store.lookup(tok))
    return sequence, unknown


def aggregate(
    embeddings: list[np.ndarray],
    dropout_rate: float = 0.0,
    rng: np.random.Generator | None = None,
    unknown_count: int = 0,
) -> TextEmbedding:
    """Average an embedding sequence, optionally with word dropout.

    Dropout replaces entries by the zero vector but keeps the denominator
    fixed at the sequence length; it is a training-time operation and must
    be disabled (rate 0) at evaluation.
    """
    if not embeddings:
        raise NoTextError("cannot aggregate an empty embedding sequence")
    if not 0.0 <= dropout_rate < 1.0:
        raise ValueError(f"dropout_rate must be in [0, 1), got {dropout_rate}")
    stacked = np.asarray(embeddings, dtype=np.float64)
    if dropout_rate > 0.0:
        if rng is None:
            raise ValueError("dropout requires a random generator")
        keep = rng.random(len(embeddings)) >= dropout_rate
        stacked = stacked * keep[:, None]
    vector = stacked.sum(axis=0) / len(embeddings)
    return TextEmbedding(vector, tokens_used=len(embeddings), unknown_count=unknown_count)


def text_embedding(
    meta: EntityText,
    store: WordEmbeddingStore,
    dropout_rate: float = 0.0,
    rng: np.random.Generator | None = None,
) -> TextEmbedding:
    """Full pipeline: tokens -> embeddings -> averaged entity embedding.

    Raises :class:`NoTextError` when the entity has no usable text.
    """
    sequence, unknown = entity_tokens(meta, store)
    if not sequence:
        raise NoTextError(f"entity {meta.entity!r} has no usable text")
    return aggregate(sequence, dropout_rate, rng, unknown_count=unknown)
