"""Spanish-aware normalization and tokenization.

Extraction and indexing both go through :func:`tokenize`, so a phrase in
the catalog and the same phrase in a referral always produce the same
normalized tokens. Offsets always point into the original text.
"""

from __future__ import annotations

import unicodedata
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable

if TYPE_CHECKING:
    from .terminology import AbbreviationTable

_TILDE = "̃"

# Spanish articles, prepositions and conjunctions. Not applied unless passed
# to AnalyzerConfig. "sin", "con" and "ni" are left out on purpose: ICD-10
# descriptions use them to separate sibling codes.
SPANISH_STOPWORDS = frozenset(
    """
    a al de del e el en la las lo los o para por su sus u un una y
    """.split()
)


@dataclass(frozen=True)
class AnalyzerConfig:
    lowercase: bool = True
    strip_accents: bool = True
    fold_punctuation: bool = True
    stopwords: frozenset[str] = field(default_factory=frozenset)

    def __post_init__(self):
        # stopwords are compared against normalized tokens
        words = (_fold(w, self.lowercase, self.strip_accents).strip() for w in self.stopwords)
        object.__setattr__(self, "stopwords", frozenset(w for w in words if w))

    def to_dict(self) -> dict:
        return {
            "lowercase": self.lowercase,
            "strip_accents": self.strip_accents,
            "fold_punctuation": self.fold_punctuation,
            "stopwords": sorted(self.stopwords),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "AnalyzerConfig":
        return cls(
            lowercase=bool(data.get("lowercase", True)),
            strip_accents=bool(data.get("strip_accents", True)),
            fold_punctuation=bool(data.get("fold_punctuation", True)),
            stopwords=frozenset(data.get("stopwords", ())),
        )


DEFAULT_CONFIG = AnalyzerConfig()


@dataclass(frozen=True)
class Token:
    surface: str
    normalized: str
    start: int
    end: int


def _fold_accents(text: str) -> str:
    out = []
    for ch in unicodedata.normalize("NFD", text):
        if unicodedata.category(ch) == "Mn":
            # keep the tilde of ñ/Ñ, drop every other combining mark
            if ch == _TILDE and out and out[-1] in "nN":
                out.append(ch)
            continue
        out.append(ch)
    return unicodedata.normalize("NFC", "".join(out))


def _fold(text: str, lowercase: bool, strip_accents: bool) -> str:
    # A few code points (e.g. U+0130) lowercase into sequences that fold
    # further on a second pass; iterate to a fixed point for idempotence.
    for _ in range(4):
        folded = text.lower() if lowercase else text
        if strip_accents:
            folded = _fold_accents(folded)
        if folded == text:
            break
        text = folded
    return text


def normalize(text: str, cfg: AnalyzerConfig = DEFAULT_CONFIG) -> str:
    """Lowercase and fold accents (except ñ) according to ``cfg``.

    >>> normalize("Obesidad Mórbida")
    'obesidad morbida'
    """
    return _fold(text, cfg.lowercase, cfg.strip_accents)


def _is_word_char(ch: str) -> bool:
    return unicodedata.category(ch)[0] in "LNM"


def tokenize(text: str, cfg: AnalyzerConfig = DEFAULT_CONFIG) -> list[Token]:
    """Split ``text`` into word tokens with offsets into the original string.

    Words are maximal runs of letters, digits and combining marks. Any other
    non-space character is punctuation: dropped when ``fold_punctuation`` is
    set, otherwise emitted as a one-character token.
    """
    tokens = []
    n = len(text)
    i = 0
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
            continue
        if _is_word_char(ch):
            j = i + 1
            while j < n and _is_word_char(text[j]):
                j += 1
        else:
            j = i + 1
            if cfg.fold_punctuation:
                i = j
                continue
        surface = text[i:j]
        norm = normalize(surface, cfg)
        if norm and not norm.isspace() and norm not in cfg.stopwords:
            tokens.append(Token(surface, norm, i, j))
        i = j
    return tokens


def phrase_key(text: str, cfg: AnalyzerConfig = DEFAULT_CONFIG) -> str:
    """Normalized tokens of ``text`` joined by single spaces."""
    return " ".join(t.normalized for t in tokenize(text, cfg))


def _join(tokens: Iterable[str]) -> str:
    return " ".join(t for t in tokens if t)


def expand_abbreviations(
    tokens: list[Token],
    table: "AbbreviationTable",
    cfg: AnalyzerConfig = DEFAULT_CONFIG,
) -> list[str]:
    """Return the original phrase followed by one variant per expansion.

    Abbreviations are substituted one type at a time: for each distinct
    abbreviation (in order of first occurrence) and each of its expansions,
    every occurrence of that abbreviation is replaced and nothing else.
    """
    words = [t.normalized for t in tokens]
    phrases = [_join(words)]
    seen = set()
    for word in words:
        if word in seen or word not in table:
            continue
        seen.add(word)
        for expansion in table[word]:
            replacement = phrase_key(expansion, cfg)
            phrases.append(_join(replacement if w == word else w for w in words))
    return phrases
