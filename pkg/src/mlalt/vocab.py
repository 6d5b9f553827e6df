"""Multilingual character vocabulary: union of per-language alphabets plus specials.

Token layout is fixed so checkpoints are portable::

    0 <blank>   CTC blank
    1 <bos>
    2 <eos>
    3 <unk>
    4 ' '       word separator
    5.. characters of the union, sorted by code point

On disk a vocabulary is UTF-8 text with one token per line (line number =
index); the space token is written as ``<space>``.

A charset config lists one language per line as ``<lang-id>: <characters>``;
blank lines and lines starting with ``#`` are ignored.  Whitespace inside the
character list is not significant.
"""

from __future__ import annotations

import hashlib
import re
import unicodedata
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .errors import ConfigError, EmptyTargetError

BLANK, BOS, EOS, UNK, SPACE = "<blank>", "<bos>", "<eos>", "<unk>", " "
SPECIALS = (BLANK, BOS, EOS, UNK, SPACE)
BLANK_ID, BOS_ID, EOS_ID, UNK_ID, SPACE_ID = range(5)
_SPACE_FILE_TOKEN = "<space>"

_WS = re.compile(r"\s+")


def normalize_text(text: str) -> str:
    """NFC, lowercase, single spaces, no leading/trailing whitespace."""
    text = unicodedata.normalize("NFC", text).lower()
    return _WS.sub(" ", text).strip()


@dataclass(frozen=True)
class LanguageSet:
    languages: tuple
    charsets: dict

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[str, Iterable[str]]]) -> "LanguageSet":
        languages, charsets = [], {}
        for lang, chars in pairs:
            if lang in charsets:
                raise ConfigError(f"duplicate language id {lang!r}")
            cs = set()
            for ch in chars:
                for c in normalize_text(ch):
                    if not c.isspace():
                        cs.add(c)
            if not cs:
                raise ConfigError(f"language {lang!r} has an empty character set")
            languages.append(lang)
            charsets[lang] = frozenset(cs)
        if not languages:
            raise ConfigError("at least one language is required")
        return cls(tuple(languages), charsets)

    @property
    def num_languages(self) -> int:
        return len(self.languages)

    def index(self, lang: str) -> int:
        try:
            return self.languages.index(lang)
        except ValueError:
            raise ConfigError(f"unknown language id {lang!r}") from None


def parse_charset_config(text: str) -> LanguageSet:
    pairs = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if ":" not in line:
            raise ConfigError(f"charset config line {lineno}: expected '<lang>: <chars>'")
        lang, chars = line.split(":", 1)
        pairs.append((lang.strip(), list(chars.replace(" ", "").replace("\t", ""))))
    return LanguageSet.from_pairs(pairs)


def load_charset_config(path) -> LanguageSet:
    return parse_charset_config(Path(path).read_text(encoding="utf-8"))


class Vocabulary:
    """Immutable index <-> token mapping."""

    def __init__(self, tokens: Sequence[str]):
        tokens = tuple(tokens)
        if tokens[: len(SPECIALS)] != SPECIALS:
            raise ConfigError(f"vocabulary must start with {SPECIALS}")
        if len(set(tokens)) != len(tokens):
            raise ConfigError("vocabulary tokens must be unique")
        self._tokens = tokens
        self._index = {t: i for i, t in enumerate(tokens)}

    @property
    def tokens(self) -> tuple:
        return self._tokens

    @property
    def characters(self) -> tuple:
        return self._tokens[len(SPECIALS):]

    def __len__(self) -> int:
        return len(self._tokens)

    @property
    def size(self) -> int:
        return len(self._tokens)

    def __getitem__(self, i: int) -> str:
        return self._tokens[i]

    def index(self, token: str) -> int:
        return self._index.get(token, UNK_ID)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and other._tokens == self._tokens

    def __hash__(self) -> int:
        return hash(self._tokens)

    def to_text(self) -> str:
        return "".join((_SPACE_FILE_TOKEN if t == SPACE else t) + "\n" for t in self._tokens)

    @classmethod
    def from_text(cls, text: str) -> "Vocabulary":
        lines = text.split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls([SPACE if t == _SPACE_FILE_TOKEN else t for t in lines])

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_text().encode("utf-8"))

    @classmethod
    def load(cls, path) -> "Vocabulary":
        return cls.from_text(Path(path).read_bytes().decode("utf-8"))

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()

    def __repr__(self) -> str:
        return f"Vocabulary(N={len(self)})"


def build_vocab(langs: LanguageSet) -> Vocabulary:
    union = set()
    for lang in langs.languages:
        union |= langs.charsets[lang]
    return Vocabulary(SPECIALS + tuple(sorted(union)))


@dataclass(frozen=True)
class TokenSequence:
    """A target ``y``; ``with_bos``/``with_eos`` give the teacher-forcing forms."""

    ids: tuple

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def with_bos(self) -> tuple:
        return (BOS_ID,) + self.ids

    @property
    def with_eos(self) -> tuple:
        return self.ids + (EOS_ID,)


def encode(text: str, vocab: Vocabulary) -> TokenSequence:
    norm = normalize_text(text)
    if not norm:
        raise EmptyTargetError(f"empty target after normalization: {text!r}")
    return TokenSequence(tuple(vocab.index(c) for c in norm))


def decode(ids: Iterable[int], vocab: Vocabulary) -> str:
    out = []
    n = len(vocab)
    for i in ids:
        i = int(i)
        if not 0 <= i < n:
            raise IndexError(f"token id {i} out of range [0, {n})")
        if i == SPACE_ID or i >= len(SPECIALS):
            out.append(vocab[i])
    return "".join(out)


def collapse_ctc(path: Iterable[int], blank: int = BLANK_ID) -> list:
    """Merge adjacent repeats, then drop blanks."""
    out = []
    prev = None
    for p in path:
        p = int(p)
        if p != prev and p != blank:
            out.append(p)
        prev = p
    return out
