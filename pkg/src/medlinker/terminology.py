"""ICD-10 codes, concept catalogs and abbreviation tables."""

from __future__ import annotations

import json
import re
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from enum import Enum
from functools import total_ordering
from pathlib import Path

from .errors import MalformedCode, MalformedRecord
from .textnorm import phrase_key

_CODE_RE = re.compile(r"^([A-Z][0-9]{2})(?:\.?([0-9]))?$")


@total_ordering
@dataclass(frozen=True)
class CodeId:
    category: str
    subcategory: str | None = None

    def __post_init__(self):
        if not re.fullmatch(r"[A-Z][0-9]{2}", self.category or ""):
            raise MalformedCode(f"bad ICD-10 category: {self.category!r}")
        if self.subcategory is not None and not re.fullmatch(r"[0-9]", self.subcategory):
            raise MalformedCode(f"bad ICD-10 subcategory: {self.subcategory!r}")

    def __str__(self) -> str:
        return self.render()

    def __lt__(self, other):
        if not isinstance(other, CodeId):
            return NotImplemented
        return self.render() < other.render()

    def render(self) -> str:
        if self.subcategory is None:
            return self.category
        return f"{self.category}.{self.subcategory}"

    @property
    def is_category(self) -> bool:
        return self.subcategory is None


def parse_code(text: str) -> CodeId:
    """Parse ``"K02.2"``, ``"k022"`` or ``"K02"`` into a :class:`CodeId`."""
    m = _CODE_RE.match(text.strip().upper())
    if not m:
        raise MalformedCode(f"not an ICD-10 code: {text!r}")
    return CodeId(m.group(1), m.group(2))


def truncate_to_category(code: CodeId) -> CodeId:
    if code.subcategory is None:
        return code
    return CodeId(code.category)


class SourceTag(str, Enum):
    TABULAR = "TABULAR"
    ALPHA_INDEX = "ALPHA_INDEX"
    IRIS = "IRIS"
    UMLS_ES = "UMLS_ES"
    ABBREV_LIST = "ABBREV_LIST"
    USER = "USER"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class Synonym:
    phrase: str
    source: SourceTag


@dataclass(frozen=True)
class ConceptEntry:
    """One code with its tabular description and tagged synonyms.

    ``source`` records where ``canonical_description`` came from; merging
    uses it to prefer the tabular list.
    """

    code: CodeId
    canonical_description: str
    synonyms: tuple[Synonym, ...] = ()
    source: SourceTag = SourceTag.TABULAR

    def __post_init__(self):
        if not self.canonical_description or not self.canonical_description.strip():
            raise ValueError(f"{self.code}: empty canonical description")
        object.__setattr__(self, "synonyms", _dedup_synonyms(self.canonical_description, self.synonyms))

    def phrases(self) -> list[str]:
        return [self.canonical_description] + [s.phrase for s in self.synonyms]


def _dedup_synonyms(description: str, synonyms: Iterable[Synonym]) -> tuple[Synonym, ...]:
    seen = {phrase_key(description)}
    kept = []
    for syn in synonyms:
        key = phrase_key(syn.phrase)
        if not key or key in seen:
            continue
        seen.add(key)
        kept.append(syn)
    return tuple(kept)


def _parse_concept(raw: str, lineno: int, source: SourceTag) -> ConceptEntry:
    try:
        obj = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise MalformedRecord(f"invalid JSON ({exc.msg})", lineno) from None
    if not isinstance(obj, dict):
        raise MalformedRecord("record is not a JSON object", lineno)
    code = obj.get("code")
    if not isinstance(code, str):
        raise MalformedRecord("missing code", lineno)
    try:
        code_id = parse_code(code)
    except MalformedCode as exc:
        raise MalformedRecord(str(exc), lineno) from None
    description = obj.get("description")
    if not isinstance(description, str) or not phrase_key(description):
        raise MalformedRecord(f"{code}: missing description", lineno)
    synonyms = obj.get("synonyms", [])
    if not isinstance(synonyms, list) or not all(isinstance(s, str) for s in synonyms):
        raise MalformedRecord(f"{code}: synonyms must be a list of strings", lineno)
    for s in synonyms:
        if not phrase_key(s):
            raise MalformedRecord(f"{code}: synonym {s!r} has no tokens", lineno)
    return ConceptEntry(
        code=code_id,
        canonical_description=description.strip(),
        synonyms=tuple(Synonym(s.strip(), source) for s in synonyms),
        source=source,
    )


def load_concepts(path: str | Path, source: SourceTag | str = SourceTag.TABULAR) -> list[ConceptEntry]:
    """Read a JSON-lines concept file. Fails on the first bad record."""
    source = SourceTag(source)
    entries = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            entries.append(_parse_concept(line, lineno, source))
    return entries


def dump_concepts(entries: Iterable[ConceptEntry], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in entries:
            record = {
                "code": e.code.render(),
                "description": e.canonical_description,
                "synonyms": [s.phrase for s in e.synonyms],
            }
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def merge_sources(catalogs: Iterable[Iterable[ConceptEntry]]) -> list[ConceptEntry]:
    """Merge several catalogs into one entry per code, sorted by code.

    The description comes from the first TABULAR entry for a code, falling
    back to the first entry seen. Every other description becomes a
    synonym. Synonyms are deduplicated on their normalized phrase, keeping
    the first occurrence and its source.
    """
    grouped: dict[CodeId, list[ConceptEntry]] = {}
    for catalog in catalogs:
        for entry in catalog:
            grouped.setdefault(entry.code, []).append(entry)

    merged = []
    for code in sorted(grouped, key=CodeId.render):
        entries = grouped[code]
        primary = next((e for e in entries if e.source is SourceTag.TABULAR), entries[0])
        synonyms = []
        for e in entries:
            if e is not primary:
                synonyms.append(Synonym(e.canonical_description, e.source))
            synonyms.extend(e.synonyms)
        merged.append(
            ConceptEntry(
                code=code,
                canonical_description=primary.canonical_description,
                synonyms=tuple(synonyms),
                source=primary.source,
            )
        )
    return merged


@dataclass(frozen=True)
class AbbreviationTable:
    """Normalized short form -> ordered expansion phrases."""

    entries: Mapping[str, tuple[str, ...]] = field(default_factory=dict)

    def __contains__(self, short: str) -> bool:
        return short in self.entries

    def __getitem__(self, short: str) -> tuple[str, ...]:
        return self.entries[short]

    def __len__(self) -> int:
        return len(self.entries)

    def get(self, short: str, default=()):
        return self.entries.get(short, default)

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[str, str]]) -> "AbbreviationTable":
        table: dict[str, list[str]] = {}
        for short, expansion in pairs:
            key = phrase_key(short)
            expansion = " ".join(expansion.split())
            if not key or not phrase_key(expansion):
                raise ValueError(f"empty abbreviation or expansion: {short!r} -> {expansion!r}")
            bucket = table.setdefault(key, [])
            if expansion not in bucket:
                bucket.append(expansion)
        return cls({k: tuple(v) for k, v in table.items()})

    def to_dict(self) -> dict[str, list[str]]:
        return {k: list(v) for k, v in sorted(self.entries.items())}


def load_abbreviations(path: str | Path) -> AbbreviationTable:
    """Read ``short<TAB>expansion`` lines; ``#`` lines and blank lines are skipped."""
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise MalformedRecord("expected exactly one tab", lineno)
            short, expansion = parts
            if not phrase_key(short) or not phrase_key(expansion):
                raise MalformedRecord("empty short form or expansion", lineno)
            pairs.append((short, expansion))
    return AbbreviationTable.from_pairs(pairs)
