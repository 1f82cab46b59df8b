"""Token inventories, tagged sentences and name lists.

Tokens beginning with ``_`` are continuation pieces: they attach to the
preceding token without a space. Every other token starts a new word.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

CONTINUATION = "_"
CLASS_TAG = "@name"

TokenSeq = Tuple[int, ...]
Span = Tuple[int, int]


class TokenizationError(ValueError):
    pass


class FormatError(ValueError):
    """Malformed or incompatible input file."""


def is_continuation(token: str) -> bool:
    return token.startswith(CONTINUATION)


@dataclass(frozen=True)
class Vocabulary:
    """Surface token inventory plus the implicit blank and class symbols.

    Surface tokens occupy ids ``0 .. V-1``. The class tag ``@name`` gets id
    ``V`` and blank gets ``V + 1``; neither appears in ``vocab.txt``.
    """

    tokens: Tuple[str, ...]
    index: Dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        tokens = tuple(self.tokens)
        object.__setattr__(self, "tokens", tokens)
        if not tokens:
            raise ValueError("vocabulary must contain at least one token")
        index = {}
        for i, tok in enumerate(tokens):
            if not tok or any(c.isspace() for c in tok):
                raise ValueError(f"invalid token {tok!r} at index {i}")
            if tok == CLASS_TAG:
                raise ValueError(f"{CLASS_TAG} is implicit and may not be listed")
            if tok in index:
                raise ValueError(f"duplicate token {tok!r}")
            index[tok] = i
        object.__setattr__(self, "index", index)

    @property
    def size(self) -> int:
        return len(self.tokens)

    @property
    def class_id(self) -> int:
        return len(self.tokens)

    @property
    def blank_id(self) -> int:
        return len(self.tokens) + 1

    def id(self, token: str) -> int:
        try:
            return self.index[token]
        except KeyError:
            raise KeyError(f"token {token!r} not in vocabulary") from None

    def ids(self, tokens: Iterable[str]) -> TokenSeq:
        return tuple(self.id(t) for t in tokens)

    def strings(self, ids: Iterable[int]) -> List[str]:
        return [self.tokens[i] for i in self.check(ids)]

    def check(self, ids: Iterable[int]) -> TokenSeq:
        ids = tuple(int(i) for i in ids)
        for i in ids:
            if not 0 <= i < self.size:
                raise IndexError(f"token id {i} outside surface range [0, {self.size})")
        return ids

    @property
    def hash(self) -> str:
        """Content hash used to detect vocabulary skew between files."""
        digest = hashlib.sha256("\n".join(self.tokens).encode("utf-8"))
        return digest.hexdigest()[:16]


def tokenize(text: str, vocab: Vocabulary) -> TokenSeq:
    """Greedy longest-match segmentation of whitespace-separated words.

    The first piece of each word is matched against word-initial tokens and
    every later piece against continuation tokens, so that ``surface``
    inverts the result.

    >>> v = Vocabulary(("Lo", "_retta", "Ly", "_n"))
    >>> tokenize("Lo_retta Ly_n_n", v)
    (0, 1, 2, 3, 3)
    """
    initial = sorted((t for t in vocab.tokens if not is_continuation(t)), key=len, reverse=True)
    cont = sorted((t for t in vocab.tokens if is_continuation(t)), key=len, reverse=True)
    out: List[int] = []
    for word in text.split():
        pos = 0
        while pos < len(word):
            pool = initial if pos == 0 else cont
            for tok in pool:
                if word.startswith(tok, pos):
                    out.append(vocab.index[tok])
                    pos += len(tok)
                    break
            else:
                raise TokenizationError(
                    f"cannot tokenize character {word[pos]!r} in word {word!r} (position {pos})"
                )
    return tuple(out)


def surface(seq: Sequence[int], vocab: Vocabulary) -> str:
    parts: List[str] = []
    for tok in vocab.strings(seq):
        if parts and not is_continuation(tok):
            parts.append(" ")
        parts.append(tok)
    return "".join(parts)


def word_index(seq: Sequence[int], vocab: Vocabulary) -> List[int]:
    """Word number of every token in ``seq``."""
    out: List[int] = []
    w = -1
    for tok in vocab.strings(seq):
        if w < 0 or not is_continuation(tok):
            w += 1
        out.append(w)
    return out


def token_span_to_words(span: Span, seq: Sequence[int], vocab: Vocabulary) -> Span:
    """Smallest word range covering the token range ``span``."""
    words = word_index(seq, vocab)
    start, end = span
    return words[start], words[end - 1] + 1


def check_spans(spans: Sequence[Span], length: int) -> None:
    prev_end = 0
    for start, end in spans:
        if not (0 <= start < end <= length):
            raise ValueError(f"span ({start}, {end}) empty or out of bounds for length {length}")
        if start < prev_end:
            raise ValueError(f"span ({start}, {end}) overlaps or is out of order")
        prev_end = end


@dataclass(frozen=True)
class TaggedSentence:
    tokens: TokenSeq
    entity_spans: Tuple[Span, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "entity_spans", tuple(tuple(s) for s in self.entity_spans))
        check_spans(self.entity_spans, len(self.tokens))

    def entities(self) -> List[TokenSeq]:
        return [self.tokens[s:e] for s, e in self.entity_spans]


@dataclass(frozen=True)
class NameList:
    names: Tuple[TokenSeq, ...] = ()

    def __post_init__(self):
        names = tuple(tuple(n) for n in self.names)
        for i, n in enumerate(names):
            if not n:
                raise ValueError(f"name #{i} is empty")
        object.__setattr__(self, "names", names)

    def __len__(self) -> int:
        return len(self.names)

    def __iter__(self):
        return iter(self.names)

    def unique(self) -> List[TokenSeq]:
        """Names in first-seen order with duplicates removed."""
        return list(dict.fromkeys(self.names))


# --- files -----------------------------------------------------------------


def load_vocab(path) -> Vocabulary:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return Vocabulary(tuple(line.strip() for line in lines if line.strip()))


def save_vocab(vocab: Vocabulary, path) -> None:
    Path(path).write_text("".join(t + "\n" for t in vocab.tokens), encoding="utf-8")


def load_names(path, vocab: Vocabulary) -> NameList:
    names = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            names.append(tokenize(line, vocab))
        except TokenizationError as e:
            raise FormatError(f"{path}:{lineno}: {e}") from None
    return NameList(tuple(names))


def save_names(names: NameList, vocab: Vocabulary, path) -> None:
    Path(path).write_text("".join(surface(n, vocab) + "\n" for n in names), encoding="utf-8")


def header_line(vocab: Vocabulary) -> str:
    return json.dumps({"header": {"vocab_hash": vocab.hash}})


def read_jsonl(path, vocab: Optional[Vocabulary] = None) -> List[dict]:
    """Read JSON lines, checking the optional vocabulary header line."""
    rows = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise FormatError(f"{path}:{lineno}: {e}") from None
            if isinstance(obj, dict) and "header" in obj:
                want = obj["header"].get("vocab_hash")
                if vocab is not None and want is not None and want != vocab.hash:
                    raise FormatError(
                        f"{path}: vocabulary hash {want} does not match {vocab.hash}"
                    )
                continue
            rows.append(obj)
    return rows


def load_refs(path, vocab: Vocabulary) -> List[TaggedSentence]:
    out = []
    for i, row in enumerate(read_jsonl(path, vocab)):
        try:
            out.append(
                TaggedSentence(vocab.ids(row["tokens"]), tuple(tuple(s) for s in row.get("entity_spans", [])))
            )
        except (KeyError, ValueError) as e:
            raise FormatError(f"{path}: utterance {i}: {e}") from None
    return out


def save_refs(refs: Sequence[TaggedSentence], vocab: Vocabulary, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(header_line(vocab) + "\n")
        for r in refs:
            row = {"tokens": vocab.strings(r.tokens), "entity_spans": [list(s) for s in r.entity_spans]}
            f.write(json.dumps(row) + "\n")
