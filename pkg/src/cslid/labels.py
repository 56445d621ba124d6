"""Character-level language tags for code-switched transcripts.

Every character of a Hindi word becomes an ``H``-family tag and every
character of an English word an ``E``-family tag.  The first character of a
word carries the ``b`` (begin) suffix, the last one the ``e`` (end) suffix,
and words are separated by the boundary tag ``|``.  ``sil`` marks leading and
trailing silence in training targets.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence

import regex


class LidTag(enum.IntEnum):
    HB = 0
    H = 1
    HE = 2
    EB = 3
    E = 4
    EE = 5
    BOUNDARY = 6
    SIL = 7

    @property
    def token(self) -> str:
        return _TOKENS[self]

    @property
    def family(self) -> Optional[str]:
        if self <= LidTag.HE:
            return "H"
        if self <= LidTag.EE:
            return "E"
        return None

    @classmethod
    def from_token(cls, token: str) -> "LidTag":
        try:
            return _FROM_TOKEN[token]
        except KeyError:
            raise ValueError(f"unknown LID tag {token!r}") from None


_TOKENS = {
    LidTag.HB: "Hb",
    LidTag.H: "H",
    LidTag.HE: "He",
    LidTag.EB: "Eb",
    LidTag.E: "E",
    LidTag.EE: "Ee",
    LidTag.BOUNDARY: "|",
    LidTag.SIL: "sil",
}
_FROM_TOKEN = {v: k for k, v in _TOKENS.items()}

NUM_TAGS = len(LidTag)
LANGS = ("H", "E")

_BEGIN = {"H": LidTag.HB, "E": LidTag.EB}
_INNER = {"H": LidTag.H, "E": LidTag.E}
_END = {"H": LidTag.HE, "E": LidTag.EE}


class ScriptError(ValueError):
    """Raised when a word's script does not identify a single language."""


@dataclass(frozen=True)
class TaggedWord:
    text: str
    lang: str

    def __post_init__(self):
        if self.lang not in LANGS:
            raise ValueError(f"language must be one of {LANGS}, got {self.lang!r}")
        if self.char_count < 1:
            raise ValueError("word has no characters")

    @property
    def char_count(self) -> int:
        return count_chars(self.text)

    @classmethod
    def auto(cls, text: str) -> "TaggedWord":
        return cls(text, detect_language(text))


def count_chars(text: str) -> int:
    """Number of user-perceived characters (extended grapheme clusters)."""
    return len(regex.findall(r"\X", text))


def _is_devanagari(ch: str) -> bool:
    cp = ord(ch)
    return 0x0900 <= cp <= 0x097F or 0xA8E0 <= cp <= 0xA8FF


def _is_latin_letter(ch: str) -> bool:
    return ("a" <= ch <= "z") or ("A" <= ch <= "Z")


def detect_language(text: str) -> str:
    """Return ``"H"`` for Devanagari words and ``"E"`` for Latin-letter words."""
    if not text:
        raise ScriptError("empty word")
    if all(_is_devanagari(ch) for ch in text):
        return "H"
    if all(_is_latin_letter(ch) for ch in text):
        return "E"
    raise ScriptError(f"ambiguous script in word {text!r}")


def word_tags(lang: str, char_count: int) -> List[LidTag]:
    if lang not in LANGS:
        raise ValueError(f"language must be one of {LANGS}, got {lang!r}")
    if char_count < 1:
        raise ValueError("word must have at least one character")
    if char_count == 1:
        # one tag per character; the begin tag takes precedence
        return [_BEGIN[lang]]
    return [_BEGIN[lang]] + [_INNER[lang]] * (char_count - 2) + [_END[lang]]


def labelize(words: Sequence[TaggedWord], add_sil: bool = False) -> List[LidTag]:
    if not words:
        raise ValueError("no words to labelize")
    tags: List[LidTag] = [LidTag.SIL] if add_sil else []
    for k, word in enumerate(words):
        if k:
            tags.append(LidTag.BOUNDARY)
        tags.extend(word_tags(word.lang, word.char_count))
    if add_sil:
        tags.append(LidTag.SIL)
    return tags


def strip_sil(tags: Iterable[LidTag]) -> List[LidTag]:
    return [t for t in tags if t != LidTag.SIL]


def majority_vote(tags: Iterable[LidTag]) -> List[str]:
    """Collapse a character-level tag stream into one language per word.

    Accepts arbitrary (possibly malformed) decoder output.  Ties go to the
    family of the segment's first tag.
    """
    langs: List[str] = []
    segment: List[str] = []

    def flush():
        if segment:
            n_h = segment.count("H")
            n_e = len(segment) - n_h
            if n_h == n_e:
                langs.append(segment[0])
            else:
                langs.append("H" if n_h > n_e else "E")
            segment.clear()

    for tag in tags:
        if tag == LidTag.SIL:
            continue
        if tag == LidTag.BOUNDARY:
            flush()
        else:
            segment.append(tag.family)
    flush()
    return langs


def format_tags(tags: Iterable[LidTag]) -> str:
    return " ".join(LidTag(t).token for t in tags)


def parse_tags(text: str) -> List[LidTag]:
    return [LidTag.from_token(tok) for tok in text.split()]


def format_words(langs: Iterable[str]) -> str:
    return " | ".join(langs)


def segment_spans(tags: Sequence[LidTag]) -> List[tuple]:
    """(start, stop, family) index spans of the words in a well-formed sequence."""
    spans = []
    start = None
    for i, tag in enumerate(list(tags) + [LidTag.BOUNDARY]):
        if tag.family is not None:
            if start is None:
                start = i
        elif start is not None:
            spans.append((start, i, tags[start].family))
            start = None
    return spans
