"""Fielded inverted index over ICD-10 concepts with BM25 ranking.

Each concept becomes one document with two fields: ``canonical`` (the
tabular description, a single phrase) and ``synonym`` (zero or more
phrases). A field is scored as the best BM25 score over its phrases, each
phrase being treated as its own short document for length normalization.
The document score is ``max(canonical_boost * canonical, synonym)``.
"""

from __future__ import annotations

import json
import math
import struct
import zlib
from collections import Counter
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path

from .errors import CorruptIndex, EmptyCatalog, EmptyMention, VersionMismatch
from .terminology import AbbreviationTable, CodeId, ConceptEntry, SourceTag, Synonym, merge_sources, parse_code
from .textnorm import DEFAULT_CONFIG, AnalyzerConfig, Token, expand_abbreviations, tokenize

FORMAT_VERSION = "ti-v1"
CANONICAL = "canonical"
SYNONYM = "synonym"
FIELDS = (CANONICAL, SYNONYM)


@dataclass(frozen=True)
class ScoringParams:
    k1: float = 1.2
    b: float = 0.75
    canonical_boost: float = 2.0

    def __post_init__(self):
        if self.k1 < 0 or not 0 <= self.b <= 1 or self.canonical_boost < 0:
            raise ValueError(f"invalid scoring parameters: {self}")

    def to_dict(self) -> dict:
        return {"k1": self.k1, "b": self.b, "canonical_boost": self.canonical_boost}

    @classmethod
    def from_dict(cls, data: dict) -> "ScoringParams":
        return cls(
            k1=float(data.get("k1", 1.2)),
            b=float(data.get("b", 0.75)),
            canonical_boost=float(data.get("canonical_boost", 2.0)),
        )


@dataclass(frozen=True)
class FieldedDoc:
    code: CodeId
    source: SourceTag
    # field -> phrase texts / token tuples, aligned by position
    texts: dict[str, tuple[str, ...]]
    fields: dict[str, tuple[tuple[str, ...], ...]]
    sources: tuple[SourceTag, ...] = ()  # one per synonym phrase
    _tf: dict[str, tuple[Counter, ...]] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_tf", {f: tuple(Counter(p) for p in self.fields[f]) for f in FIELDS})

    def lengths(self, name: str) -> list[int]:
        return [len(p) for p in self.fields[name]]

    def to_concept(self) -> ConceptEntry:
        synonyms = tuple(Synonym(t, s) for t, s in zip(self.texts[SYNONYM], self.sources))
        return ConceptEntry(self.code, self.texts[CANONICAL][0], synonyms, self.source)


@dataclass(frozen=True)
class CodeCandidate:
    code: CodeId
    score: float
    rank: int
    matched_field: str
    matched_phrase: str

    def to_dict(self) -> dict:
        return {
            "code": self.code.render(),
            "score": self.score,
            "rank": self.rank,
            "matched_field": self.matched_field,
            "matched_phrase": self.matched_phrase,
        }


@dataclass(frozen=True, eq=False)
class TermIndex:
    docs: tuple[FieldedDoc, ...]
    # (field, term) -> ((doc ordinal, phrase ordinal, term frequency), ...)
    postings: dict[tuple[str, str], tuple[tuple[int, int, int], ...]]
    avg_len: dict[str, float]
    analyzer: AnalyzerConfig = DEFAULT_CONFIG
    params: ScoringParams = ScoringParams()
    abbreviations: AbbreviationTable = AbbreviationTable()
    _doc_freq: dict[tuple[str, str], int] = field(init=False, repr=False)

    def __post_init__(self):
        df = {key: len({p[0] for p in plist}) for key, plist in self.postings.items()}
        object.__setattr__(self, "_doc_freq", df)

    @property
    def doc_count(self) -> int:
        return len(self.docs)

    @property
    def term_count(self) -> int:
        return len({term for _, term in self.postings})

    def idf(self, field_name: str, term: str) -> float:
        n = self._doc_freq.get((field_name, term), 0)
        N = len(self.docs)
        return math.log(1.0 + (N - n + 0.5) / (n + 0.5))

    def stats(self) -> dict:
        return {
            "doc_count": self.doc_count,
            "term_count": self.term_count,
            "posting_keys": len(self.postings),
            "phrase_count": {f: sum(len(d.fields[f]) for d in self.docs) for f in FIELDS},
            "avg_len": dict(self.avg_len),
        }

    def manifest(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "analyzer": self.analyzer.to_dict(),
            "params": self.params.to_dict(),
            "stats": self.stats(),
        }

    def concepts(self) -> list[ConceptEntry]:
        return [d.to_concept() for d in self.docs]

    def code_ordinal(self, code: CodeId) -> int:
        for i, d in enumerate(self.docs):
            if d.code == code:
                return i
        raise KeyError(code)


def _analyze(text: str, cfg: AnalyzerConfig) -> tuple[str, ...]:
    return tuple(t.normalized for t in tokenize(text, cfg))


def _make_index(docs, analyzer, params, abbreviations, avg_len=None) -> TermIndex:
    postings: dict[tuple[str, str], list[tuple[int, int, int]]] = {}
    for ordinal, doc in enumerate(docs):
        for name in FIELDS:
            for p, tf in enumerate(doc._tf[name]):
                for term in sorted(tf):
                    postings.setdefault((name, term), []).append((ordinal, p, tf[term]))
    if avg_len is None:
        avg_len = {}
        for name in FIELDS:
            lengths = [n for d in docs for n in d.lengths(name) if n]
            avg_len[name] = sum(lengths) / len(lengths) if lengths else 0.0
    return TermIndex(
        docs=tuple(docs),
        postings={key: tuple(postings[key]) for key in sorted(postings)},
        avg_len=avg_len,
        analyzer=analyzer,
        params=params,
        abbreviations=abbreviations,
    )


def build_index(
    concepts: Iterable[ConceptEntry],
    cfg: AnalyzerConfig = DEFAULT_CONFIG,
    params: ScoringParams = ScoringParams(),
    abbreviations: AbbreviationTable | None = None,
) -> TermIndex:
    # merging a merged catalog is a no-op; it also sorts by code so the
    # index does not depend on input order
    catalog = merge_sources([list(concepts)])
    if not catalog:
        raise EmptyCatalog("cannot build an index from an empty catalog")
    docs = []
    for entry in catalog:
        synonyms = entry.synonyms
        docs.append(
            FieldedDoc(
                code=entry.code,
                source=entry.source,
                texts={
                    CANONICAL: (entry.canonical_description,),
                    SYNONYM: tuple(s.phrase for s in synonyms),
                },
                fields={
                    CANONICAL: (_analyze(entry.canonical_description, cfg),),
                    SYNONYM: tuple(_analyze(s.phrase, cfg) for s in synonyms),
                },
                sources=tuple(s.source for s in synonyms),
            )
        )
    return _make_index(docs, cfg, params, abbreviations or AbbreviationTable())


def _terms(query_tokens: Iterable[str | Token]) -> list[str]:
    terms = []
    for tok in query_tokens:
        term = tok.normalized if isinstance(tok, Token) else tok
        if term and term not in terms:
            terms.append(term)
    return terms


def _phrase_score(index: TermIndex, name: str, terms: Sequence[str], tf: Counter, length: int) -> float:
    k1, b = index.params.k1, index.params.b
    norm = k1 * (1.0 - b + b * length / index.avg_len[name]) if length else 0.0
    total = 0.0
    for term in terms:
        f = tf.get(term, 0)
        if f:
            total += index.idf(name, term) * f * (k1 + 1.0) / (f + norm)
    return total


def _field_best(index: TermIndex, doc: FieldedDoc, name: str, terms: Sequence[str]) -> tuple[float, int]:
    best, best_p = 0.0, -1
    for p, tf in enumerate(doc._tf[name]):
        s = _phrase_score(index, name, terms, tf, len(doc.fields[name][p]))
        if s > best:
            best, best_p = s, p
    return best, best_p


def _score_detail(index: TermIndex, terms: Sequence[str], ordinal: int) -> tuple[float, str, int]:
    doc = index.docs[ordinal]
    canon, canon_p = _field_best(index, doc, CANONICAL, terms)
    syn, syn_p = _field_best(index, doc, SYNONYM, terms)
    boosted = index.params.canonical_boost * canon
    if syn > boosted:
        return syn, SYNONYM, syn_p
    return boosted, CANONICAL, canon_p


def score(index: TermIndex, query_tokens: Iterable[str | Token], ordinal: int) -> float:
    """BM25 score of one document for the given normalized query terms.

    Repeated query terms count once.
    """
    if not 0 <= ordinal < len(index.docs):
        raise IndexError(f"document ordinal {ordinal} out of range")
    return _score_detail(index, _terms(query_tokens), ordinal)[0]


def query(
    index: TermIndex,
    mention: str,
    table: AbbreviationTable | None = None,
    k: int = 5,
) -> list[CodeCandidate]:
    """Rank codes for a mention; ties go to the lower code string.

    ``table`` defaults to the abbreviation table stored with the index.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    if table is None:
        table = index.abbreviations
    tokens = tokenize(mention, index.analyzer)
    if not tokens:
        raise EmptyMention(f"mention {mention!r} has no searchable tokens")

    best: dict[int, tuple[float, str, str]] = {}
    for variant in expand_abbreviations(tokens, table, index.analyzer):
        terms = _terms(variant.split(" "))
        ordinals = {
            posting[0]
            for name in FIELDS
            for term in terms
            for posting in index.postings.get((name, term), ())
        }
        for ordinal in ordinals:
            s, name, p = _score_detail(index, terms, ordinal)
            if s > 0 and (ordinal not in best or s > best[ordinal][0]):
                best[ordinal] = (s, name, index.docs[ordinal].texts[name][p])

    ranked = sorted(best.items(), key=lambda item: (-item[1][0], index.docs[item[0]].code.render()))
    return [
        CodeCandidate(index.docs[ordinal].code, s, rank, name, phrase)
        for rank, (ordinal, (s, name, phrase)) in enumerate(ranked[:k], 1)
    ]


# -- on-disk format ---------------------------------------------------------
#
# MAGIC, then sections in a fixed order. Each section is
#   tag (4 bytes) | payload length (u64 LE) | crc32 of payload (u32 LE) | payload
# MANI is JSON, DOCS/TERM/ABBR are JSON, POST is packed (u32 doc, u32 phrase,
# u32 tf) records. TERM maps (field, term) to a slice of POST.

MAGIC = b"MLTIDX\r\n"
_SECTION_ORDER = (b"MANI", b"DOCS", b"TERM", b"POST", b"ABBR")
_SECTION_HEAD = struct.Struct("<4sQI")
_POSTING = struct.Struct("<III")


def _json_bytes(obj) -> bytes:
    return json.dumps(obj, ensure_ascii=False, sort_keys=True, separators=(",", ":")).encode("utf-8")


def serialize(index: TermIndex) -> bytes:
    docs = [
        {
            "code": d.code.render(),
            "source": d.source.value,
            "canonical": d.texts[CANONICAL][0],
            "canonical_tokens": list(d.fields[CANONICAL][0]),
            "synonyms": [
                {"phrase": text, "source": src.value, "tokens": list(tokens)}
                for text, src, tokens in zip(d.texts[SYNONYM], d.sources, d.fields[SYNONYM])
            ],
        }
        for d in index.docs
    ]
    terms = []
    packed = bytearray()
    offset = 0
    for (name, term), plist in index.postings.items():
        terms.append([name, term, offset, len(plist)])
        for posting in plist:
            packed += _POSTING.pack(*posting)
        offset += len(plist)

    payloads = {
        b"MANI": _json_bytes(index.manifest()),
        b"DOCS": _json_bytes(docs),
        b"TERM": _json_bytes(terms),
        b"POST": bytes(packed),
        b"ABBR": _json_bytes(index.abbreviations.to_dict()),
    }
    out = bytearray(MAGIC)
    for tag in _SECTION_ORDER:
        payload = payloads[tag]
        out += _SECTION_HEAD.pack(tag, len(payload), zlib.crc32(payload))
        out += payload
    return bytes(out)


def save_index(index: TermIndex, path: str | Path) -> None:
    Path(path).write_bytes(serialize(index))


def _read_sections(data: bytes) -> dict[bytes, tuple[int, bytes]]:
    if not data.startswith(MAGIC):
        raise CorruptIndex("not a term index file (bad magic)")
    pos = len(MAGIC)
    sections = {}
    for expected in _SECTION_ORDER:
        if pos + _SECTION_HEAD.size > len(data):
            raise CorruptIndex(f"truncated before section {expected.decode()}")
        tag, length, crc = _SECTION_HEAD.unpack_from(data, pos)
        if tag != expected:
            raise CorruptIndex(f"expected section {expected.decode()}, found {tag!r}")
        pos += _SECTION_HEAD.size
        if pos + length > len(data):
            raise CorruptIndex(f"section {tag.decode()} truncated")
        sections[tag] = (crc, data[pos : pos + length])
        pos += length
    if pos != len(data):
        raise CorruptIndex(f"{len(data) - pos} trailing bytes after last section")
    return sections


def deserialize(data: bytes) -> TermIndex:
    sections = _read_sections(data)
    try:
        manifest = json.loads(sections[b"MANI"][1].decode("utf-8"))
        version = manifest["format_version"]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError):
        raise CorruptIndex("unreadable manifest") from None
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"index format {version!r}, expected {FORMAT_VERSION!r}")
    for tag, (crc, payload) in sections.items():
        if zlib.crc32(payload) != crc:
            raise CorruptIndex(f"checksum mismatch in section {tag.decode()}")

    try:
        analyzer = AnalyzerConfig.from_dict(manifest["analyzer"])
        params = ScoringParams.from_dict(manifest["params"])
        stats = manifest["stats"]
        docs = []
        for d in json.loads(sections[b"DOCS"][1]):
            syns = d["synonyms"]
            docs.append(
                FieldedDoc(
                    code=parse_code(d["code"]),
                    source=SourceTag(d["source"]),
                    texts={CANONICAL: (d["canonical"],), SYNONYM: tuple(s["phrase"] for s in syns)},
                    fields={
                        CANONICAL: (tuple(d["canonical_tokens"]),),
                        SYNONYM: tuple(tuple(s["tokens"]) for s in syns),
                    },
                    sources=tuple(SourceTag(s["source"]) for s in syns),
                )
            )
        packed = sections[b"POST"][1]
        if len(packed) % _POSTING.size:
            raise CorruptIndex("postings section has a partial record")
        flat = list(_POSTING.iter_unpack(packed))
        postings = {}
        for name, term, offset, count in json.loads(sections[b"TERM"][1]):
            postings[(name, term)] = tuple(flat[offset : offset + count])
        abbreviations = AbbreviationTable(
            {k: tuple(v) for k, v in json.loads(sections[b"ABBR"][1]).items()}
        )
        avg_len = {name: float(stats["avg_len"][name]) for name in FIELDS}
    except CorruptIndex:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptIndex(f"inconsistent index contents: {exc}") from None

    index = TermIndex(tuple(docs), postings, avg_len, analyzer, params, abbreviations)
    if index.doc_count != stats.get("doc_count") or index.term_count != stats.get("term_count"):
        raise CorruptIndex("manifest statistics disagree with index contents")
    return index


def load_index(path: str | Path) -> TermIndex:
    return deserialize(Path(path).read_bytes())
