"""Corpus loading, token preprocessing, vocabulary, embeddings, opinion lexicon.

File formats:
  * corpus: one ``token<TAB>label`` line per token with label in {B, I, O};
    a blank line terminates a sentence; lines starting with ``#`` are ignored
  * embeddings: one ``word v1 v2 ... vD`` line per word, single-space separated
  * lexicon: one word per line, ``#`` comments ignored
"""
from __future__ import annotations

import unicodedata
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError, UsageError

ASPECT_TAGS = ("B", "I", "O")
OPINION_TAGS = ("OP", "O")
PUNCT_TOKEN = "PUNCT"
UNKNOWN_TOKEN = "<unk>"


@dataclass(frozen=True)
class Sentence:
    """One token sequence with its parallel label/id sequences.

    ``opinion_labels`` and ``token_ids`` are attached by later pipeline
    stages; whenever present they must match ``tokens`` in length.
    """

    tokens: tuple[str, ...]
    aspect_labels: tuple[str, ...]
    opinion_labels: tuple[str, ...] | None = None
    token_ids: tuple[int, ...] | None = None

    def __post_init__(self):
        n = len(self.tokens)
        if n < 1:
            raise UsageError("sentence must contain at least one token")
        for field in (self.aspect_labels, self.opinion_labels, self.token_ids):
            if field is not None and len(field) != n:
                raise UsageError(
                    f"parallel sequence length {len(field)} != {n} tokens")

    def __len__(self) -> int:
        return len(self.tokens)


Corpus = list[Sentence]


def _is_punctuation(token: str) -> bool:
    return all(unicodedata.category(ch).startswith("P") for ch in token)


def preprocess_tokens(raw: Sequence[str]) -> list[str]:
    """Lowercase tokens; replace all-punctuation tokens with ``PUNCT``.

    Idempotent: the literal ``PUNCT`` marker is preserved as-is.
    """
    if len(raw) == 0:
        raise UsageError("cannot preprocess an empty token sequence")
    out = []
    for token in raw:
        if token and _is_punctuation(token):
            out.append(PUNCT_TOKEN)
        elif token == PUNCT_TOKEN:
            out.append(PUNCT_TOKEN)
        else:
            out.append(token.lower())
    return out


def load_bio_corpus(path: str | Path) -> Corpus:
    """Load a BIO-labeled corpus; aspect spans validated, opinions left unset."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"corpus file not found: {path}")
    sentences: Corpus = []
    tokens: list[str] = []
    labels: list[str] = []

    def flush(line_no: int) -> None:
        if not tokens:
            return
        sentences.append(Sentence(tuple(preprocess_tokens(tokens)), tuple(labels)))
        tokens.clear()
        labels.clear()

    with path.open(encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if line.startswith("#"):
                continue
            if not line.strip():
                flush(line_no)
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0]:
                raise DataError(f"{path}:{line_no}: expected 'token<TAB>label', got {line!r}")
            token, label = parts
            if label not in ASPECT_TAGS:
                raise DataError(f"{path}:{line_no}: unknown label {label!r}")
            if label == "I" and (not labels or labels[-1] == "O"):
                raise DataError(f"{path}:{line_no}: gold 'I' without a preceding span")
            tokens.append(token)
            labels.append(label)
        flush(-1)
    return sentences


def dump_bio(sentences: Iterable[Sentence], labels_per_sentence=None) -> str:
    """Render sentences in the corpus file format, optionally with new labels."""
    blocks = []
    sentences = list(sentences)
    if labels_per_sentence is None:
        labels_per_sentence = [s.aspect_labels for s in sentences]
    for sentence, labels in zip(sentences, labels_per_sentence):
        lines = [f"{tok}\t{lab}" for tok, lab in zip(sentence.tokens, labels)]
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + "\n"


def write_bio_corpus(path: str | Path, sentences: Iterable[Sentence]) -> None:
    Path(path).write_text(dump_bio(sentences), encoding="utf-8")


class Vocabulary:
    """Token <-> index bijection with index 0 reserved for unknown tokens."""

    def __init__(self, tokens: Iterable[str]):
        self._index_to_token = [UNKNOWN_TOKEN]
        self._token_to_index: dict[str, int] = {}
        for token in tokens:
            if token not in self._token_to_index:
                self._token_to_index[token] = len(self._index_to_token)
                self._index_to_token.append(token)

    def __len__(self) -> int:
        return len(self._index_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self._token_to_index

    def index(self, token: str) -> int:
        return self._token_to_index.get(token, 0)

    def token(self, index: int) -> str:
        return self._index_to_token[index]

    @property
    def tokens(self) -> list[str]:
        """All tokens in index order, including the reserved unknown slot."""
        return list(self._index_to_token)


def build_vocab(corpus: Corpus, extra_tokens: Iterable[str] = ()) -> Vocabulary:
    """Vocabulary over every corpus token, plus any caller-supplied extras."""
    if not corpus:
        raise UsageError("cannot build a vocabulary from an empty corpus")

    def stream():
        for sentence in corpus:
            yield from sentence.tokens
        yield from extra_tokens

    return Vocabulary(stream())


def load_embeddings(path: str | Path, vocab: Vocabulary, seed: int) -> np.ndarray:
    """|V| x dim matrix: file rows verbatim, unseen rows ~ U(-0.25, 0.25)."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"embedding file not found: {path}")
    vectors: dict[str, np.ndarray] = {}
    dim: int | None = None
    with path.open(encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split(" ")
            word = parts[0]
            try:
                values = np.array([float(v) for v in parts[1:]], dtype=np.float64)
            except ValueError:
                raise DataError(f"{path}:{line_no}: non-numeric embedding value") from None
            if dim is None:
                dim = values.shape[0]
                if dim == 0:
                    raise DataError(f"{path}:{line_no}: embedding row has no values")
            elif values.shape[0] != dim:
                raise DataError(
                    f"{path}:{line_no}: vector width {values.shape[0]} != expected {dim}")
            if word in vocab and word not in vectors:
                vectors[word] = values
    if dim is None:
        raise DataError(f"embedding file is empty: {path}")
    rng = np.random.default_rng(seed)
    matrix = np.empty((len(vocab), dim), dtype=np.float64)
    for index in range(len(vocab)):
        row = vectors.get(vocab.token(index))
        if row is None:
            row = rng.uniform(-0.25, 0.25, size=dim)
        matrix[index] = row
    return matrix


def load_lexicon(path: str | Path) -> frozenset[str]:
    """Set of lowercase opinion words, one per line."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"lexicon file not found: {path}")
    words = set()
    with path.open(encoding="utf-8") as handle:
        for line in handle:
            word = line.strip()
            if not word or word.startswith("#"):
                continue
            words.add(word.lower())
    return frozenset(words)


def distant_opinion_labels(tokens: Sequence[str], lexicon: frozenset[str] | set[str]) -> list[str]:
    """OP for tokens whose lowercase form is in the lexicon, else O."""
    return ["OP" if token.lower() in lexicon else "O" for token in tokens]


def attach_opinion_labels(corpus: Corpus, lexicon: frozenset[str] | set[str]) -> Corpus:
    return [
        replace(s, opinion_labels=tuple(distant_opinion_labels(s.tokens, lexicon)))
        for s in corpus
    ]


def attach_token_ids(corpus: Corpus, vocab: Vocabulary) -> Corpus:
    return [
        replace(s, token_ids=tuple(vocab.index(tok) for tok in s.tokens))
        for s in corpus
    ]
