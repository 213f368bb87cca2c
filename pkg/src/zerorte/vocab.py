"""Word-level vocabulary with trailing-punctuation splitting.

Tokenization splits text on whitespace, then peels trailing ``.``, ``,`` and
``:`` characters off each chunk into their own tokens. Detokenization joins
with spaces, omitting the space before those punctuation tokens, so
``detokenize(tokenize(text)) == text`` for in-vocabulary text in canonical
form (no space before trailing punctuation) — which is exactly the form the
codec emits for target strings.
"""

from __future__ import annotations

from dataclasses import dataclass

PAD, BOS, EOS, UNK = "<pad>", "<bos>", "<eos>", "<unk>"
HEAD_TOKEN, TAIL_TOKEN, REL_TOKEN = "[HEAD]", "[TAIL]", "[REL]"
SPECIAL_TOKENS = (PAD, BOS, EOS, UNK, HEAD_TOKEN, TAIL_TOKEN, REL_TOKEN)

_SPLIT_PUNCT = {".", ",", ":"}
_RESERVED = {HEAD_TOKEN, TAIL_TOKEN, REL_TOKEN}


def split_words(text: str) -> list[str]:
    """Tokenize to word strings (no ids)."""
    words: list[str] = []
    for chunk in text.split():
        words.extend(split_chunk(chunk))
    return words


def split_chunk(chunk: str) -> list[str]:
    """Tokenize one whitespace chunk: base word plus peeled trailing punctuation."""
    if chunk in _RESERVED:
        return [chunk]
    tail: list[str] = []
    while chunk and chunk[-1] in _SPLIT_PUNCT:
        tail.append(chunk[-1])
        chunk = chunk[:-1]
    tail.reverse()
    return ([chunk] if chunk else []) + tail


def join_words(words: list[str]) -> str:
    parts: list[str] = []
    for w in words:
        if parts and w not in _SPLIT_PUNCT:
            parts.append(" ")
        parts.append(w)
    return "".join(parts)


@dataclass(frozen=True)
class Vocabulary:
    """Token/id bijection with reserved special ids."""

    tokens: tuple[str, ...]

    def __post_init__(self) -> None:
        if self.tokens[: len(SPECIAL_TOKENS)] != SPECIAL_TOKENS:
            raise ValueError("vocabulary must start with the reserved special tokens")
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("vocabulary tokens must be unique")
        object.__setattr__(self, "_ids", {t: i for i, t in enumerate(self.tokens)})

    @classmethod
    def build(cls, texts) -> "Vocabulary":
        """Collect tokens from an iterable of texts; ids are assigned in sorted order."""
        words = set()
        for text in texts:
            words.update(split_words(text))
        words -= set(SPECIAL_TOKENS)
        return cls(SPECIAL_TOKENS + tuple(sorted(words)))

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def bos_id(self) -> int:
        return 1

    @property
    def eos_id(self) -> int:
        return 2

    @property
    def unk_id(self) -> int:
        return 3

    @property
    def head_id(self) -> int:
        return 4

    @property
    def tail_id(self) -> int:
        return 5

    @property
    def rel_id(self) -> int:
        return 6

    def id_of(self, token: str) -> int:
        return self._ids.get(token, self.unk_id)

    def tokenize(self, text: str) -> list[int]:
        return [self.id_of(w) for w in split_words(text)]

    def detokenize(self, ids) -> str:
        words = [self.tokens[i] for i in ids if i not in (self.pad_id, self.bos_id, self.eos_id)]
        return join_words(words)


@dataclass(frozen=True)
class SourceAlignment:
    """Model-token index ranges for the pieces of one source text.

    ``label_ranges[i]`` spans the tokens of the i-th task label;
    ``context_ranges[j]`` spans the tokens of the j-th sentence token
    (a sentence token can yield several model tokens after punctuation
    splitting). Ranges are half-open [start, end).
    """

    label_ranges: tuple[tuple[int, int], ...]
    context_ranges: tuple[tuple[int, int], ...]
    length: int


def align_source(task_labels, sample_tokens, vocab: Vocabulary) -> SourceAlignment:
    """Token alignment mirroring the codec's source construction exactly."""
    pos = len(split_chunk("Relation:"))
    label_ranges = []
    n_labels = len(task_labels)
    for i, label in enumerate(task_labels):
        words = label.split(" ")
        start = pos
        for j, w in enumerate(words):
            if j == len(words) - 1:
                w += "," if i < n_labels - 1 else "."
            pos += len(split_chunk(w))
        # trailing separator token belongs to the source, not the label
        label_ranges.append((start, pos - 1))
    pos += len(split_chunk("Context:"))
    context_ranges = []
    for tok in sample_tokens:
        start = pos
        pos += len(split_chunk(tok))
        context_ranges.append((start, pos))
    return SourceAlignment(tuple(label_ranges), tuple(context_ranges), pos)
