"""Disease-mention extraction.

Any extractor is an object with ``extract(text) -> list[MentionSpan]``
returning non-overlapping spans sorted by start. Two implementations ship
here: :class:`GazetteerExtractor` (leftmost-longest dictionary matching)
and :class:`ExternalExtractor`, which talks JSON lines to a subprocess so a
trained sequence tagger can be plugged in.
"""

from __future__ import annotations

import json
import subprocess
import sys
import threading
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from enum import Enum
from typing import IO, Protocol

from .errors import LengthMismatch, MedlinkerError
from .terminology import AbbreviationTable, CodeId, ConceptEntry
from .textnorm import DEFAULT_CONFIG, AnalyzerConfig, Token, tokenize


@dataclass(frozen=True)
class MentionSpan:
    start: int
    end: int
    surface: str
    normalized: str

    def to_dict(self) -> dict:
        return {
            "start": self.start,
            "end": self.end,
            "surface": self.surface,
            "normalized": self.normalized,
        }


class BioLabel(str, Enum):
    B = "B"
    I = "I"  # noqa: E741
    O = "O"  # noqa: E741


class Extractor(Protocol):
    def extract(self, text: str) -> list[MentionSpan]: ...


@dataclass(frozen=True)
class Gazetteer:
    phrases: dict[tuple[str, ...], frozenset[CodeId]] = field(default_factory=dict)
    max_len: int = 0

    def __len__(self) -> int:
        return len(self.phrases)

    def __contains__(self, words) -> bool:
        return tuple(words) in self.phrases

    def lookup(self, words: Sequence[str]) -> frozenset[CodeId]:
        return self.phrases.get(tuple(words), frozenset())


def _contractions(words: tuple[str, ...], short_forms) -> list[tuple[str, ...]]:
    """Variants of ``words`` with one expansion replaced by its short form."""
    variants = []
    for short, expansion in short_forms:
        n = len(expansion)
        hits = [i for i in range(len(words) - n + 1) if words[i : i + n] == expansion]
        if not hits:
            continue
        out, i = [], 0
        while i < len(words):
            if i in hits:
                out.append(short)
                i += n
            else:
                out.append(words[i])
                i += 1
        variants.append(tuple(out))
    return variants


def build_gazetteer(
    concepts: Iterable[ConceptEntry],
    cfg: AnalyzerConfig = DEFAULT_CONFIG,
    abbreviations: AbbreviationTable | None = None,
) -> Gazetteer:
    """Index every description and synonym by its normalized tokens.

    With ``abbreviations``, a phrase containing an expansion is also stored
    with that expansion contracted to its short form, so "dm 2" is found in
    text when "diabetes mellitus 2" is a catalog phrase.
    """
    short_forms = []
    for short, expansions in (abbreviations.entries.items() if abbreviations else ()):
        for expansion in expansions:
            exp_words = tuple(t.normalized for t in tokenize(expansion, cfg))
            short_words = tuple(t.normalized for t in tokenize(short, cfg))
            if exp_words and len(short_words) == 1:
                short_forms.append((short_words[0], exp_words))

    table: dict[tuple[str, ...], set[CodeId]] = {}
    for entry in concepts:
        for phrase in entry.phrases():
            words = tuple(t.normalized for t in tokenize(phrase, cfg))
            if not words:
                continue
            for variant in [words, *_contractions(words, short_forms)]:
                table.setdefault(variant, set()).add(entry.code)
    phrases = {words: frozenset(codes) for words, codes in table.items()}
    return Gazetteer(phrases, max((len(w) for w in phrases), default=0))


def _span(text: str, tokens: Sequence[Token]) -> MentionSpan:
    start, end = tokens[0].start, tokens[-1].end
    return MentionSpan(start, end, text[start:end], " ".join(t.normalized for t in tokens))


def extract_mentions(text: str, gz: Gazetteer, cfg: AnalyzerConfig = DEFAULT_CONFIG) -> list[MentionSpan]:
    """Greedy leftmost-longest gazetteer matching over the token sequence."""
    tokens = tokenize(text, cfg)
    words = [t.normalized for t in tokens]
    spans = []
    i = 0
    while i < len(tokens):
        longest = min(gz.max_len, len(tokens) - i)
        for width in range(longest, 0, -1):
            if tuple(words[i : i + width]) in gz.phrases:
                spans.append(_span(text, tokens[i : i + width]))
                i += width
                break
        else:
            i += 1
    return spans


def spans_from_bio(
    tokens: Sequence[Token],
    labels: Sequence[BioLabel | str],
    text: str | None = None,
) -> list[MentionSpan]:
    """Decode B/I/O labels into spans; an I with no open span starts one.

    Surfaces are sliced from ``text`` when given. Without it they are
    rebuilt from token surfaces separated by single spaces.
    """
    if len(tokens) != len(labels):
        raise LengthMismatch(f"{len(tokens)} tokens but {len(labels)} labels")
    runs: list[list[Token]] = []
    open_run = False
    for tok, label in zip(tokens, labels):
        label = BioLabel(label)
        if label is BioLabel.O:
            open_run = False
        elif label is BioLabel.B or not open_run:
            runs.append([tok])
            open_run = True
        else:
            runs[-1].append(tok)

    spans = []
    for run in runs:
        if text is not None:
            spans.append(_span(text, run))
        else:
            start, end = run[0].start, run[-1].end
            surface = " ".join(t.surface for t in run)
            spans.append(MentionSpan(start, end, surface, " ".join(t.normalized for t in run)))
    return spans


def bio_from_spans(tokens: Sequence[Token], spans: Iterable[MentionSpan]) -> list[BioLabel]:
    """Label tokens from gold spans; tokens outside any span get O."""
    labels = [BioLabel.O] * len(tokens)
    for span in spans:
        first = True
        for i, tok in enumerate(tokens):
            if tok.start >= span.start and tok.end <= span.end:
                labels[i] = BioLabel.B if first else BioLabel.I
                first = False
    return labels


class GazetteerExtractor:
    def __init__(self, gazetteer: Gazetteer, cfg: AnalyzerConfig = DEFAULT_CONFIG):
        self.gazetteer = gazetteer
        self.cfg = cfg

    @classmethod
    def from_concepts(
        cls,
        concepts: Iterable[ConceptEntry],
        cfg: AnalyzerConfig = DEFAULT_CONFIG,
        abbreviations: AbbreviationTable | None = None,
    ):
        return cls(build_gazetteer(concepts, cfg, abbreviations), cfg)

    def extract(self, text: str) -> list[MentionSpan]:
        return extract_mentions(text, self.gazetteer, self.cfg)


class PluginError(MedlinkerError):
    pass


def spans_from_offsets(text: str, offsets: Iterable, cfg: AnalyzerConfig = DEFAULT_CONFIG) -> list[MentionSpan]:
    """Validate ``[{start, end}, ...]`` from a plug-in and build spans."""
    spans = []
    for item in offsets:
        try:
            start, end = int(item["start"]), int(item["end"])
        except (KeyError, TypeError, ValueError):
            raise PluginError(f"bad span object: {item!r}") from None
        if not 0 <= start < end <= len(text):
            raise PluginError(f"span [{start}, {end}) outside text of length {len(text)}")
        surface = text[start:end]
        normalized = " ".join(t.normalized for t in tokenize(surface, cfg))
        spans.append(MentionSpan(start, end, surface, normalized))
    spans.sort(key=lambda s: (s.start, s.end))
    for a, b in zip(spans, spans[1:]):
        if b.start < a.end:
            raise PluginError(f"overlapping spans [{a.start}, {a.end}) and [{b.start}, {b.end})")
    return spans


class ExternalExtractor:
    """Run an extractor in a child process speaking the JSON-lines protocol.

    Each request is one line ``{"id": ..., "text": ...}``; the child must
    answer with one line ``{"id": ..., "spans": [{"start": s, "end": e}]}``.
    Offsets count Unicode code points.
    """

    def __init__(self, command: Sequence[str], cfg: AnalyzerConfig = DEFAULT_CONFIG):
        self.command = list(command)
        self.cfg = cfg
        self._lock = threading.Lock()
        self._proc: subprocess.Popen | None = None
        self._counter = 0

    def _ensure_started(self) -> subprocess.Popen:
        if self._proc is None or self._proc.poll() is not None:
            self._proc = subprocess.Popen(
                self.command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                encoding="utf-8",
                bufsize=1,
            )
        return self._proc

    def extract(self, text: str) -> list[MentionSpan]:
        with self._lock:
            proc = self._ensure_started()
            self._counter += 1
            req_id = str(self._counter)
            proc.stdin.write(json.dumps({"id": req_id, "text": text}, ensure_ascii=False) + "\n")
            proc.stdin.flush()
            line = proc.stdout.readline()
        if not line:
            raise PluginError(f"extractor process {self.command[0]!r} closed its output")
        try:
            reply = json.loads(line)
        except json.JSONDecodeError:
            raise PluginError(f"extractor replied with invalid JSON: {line[:80]!r}") from None
        if str(reply.get("id")) != req_id:
            raise PluginError(f"reply id {reply.get('id')!r} does not match request {req_id!r}")
        return spans_from_offsets(text, reply.get("spans", []), self.cfg)

    def close(self) -> None:
        if self._proc is not None:
            self._proc.stdin.close()
            self._proc.wait(timeout=10)
            self._proc = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def serve_plugin(extractor: Extractor, stdin: IO[str] = sys.stdin, stdout: IO[str] = sys.stdout) -> None:
    """Answer plug-in protocol requests from ``stdin`` until EOF."""
    for line in stdin:
        if not line.strip():
            continue
        req = json.loads(line)
        spans = extractor.extract(req.get("text", ""))
        reply = {"id": req.get("id"), "spans": [{"start": s.start, "end": s.end} for s in spans]}
        stdout.write(json.dumps(reply) + "\n")
        stdout.flush()
