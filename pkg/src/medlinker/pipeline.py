"""End-to-end coding of referrals: extract mentions, link each, flatten a run."""

from __future__ import annotations

import json
import logging
import os
import shlex
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import EmptyMention, MalformedRecord
from .evaluation import RunEntry, format_run_lines
from .extractor import Extractor, ExternalExtractor, GazetteerExtractor, MentionSpan, build_gazetteer
from .index import CodeCandidate, ScoringParams, TermIndex, load_index, query
from .terminology import AbbreviationTable, load_abbreviations
from .textnorm import AnalyzerConfig

log = logging.getLogger(__name__)

CONFIG_ENV = "MEDLINKER_CONFIG"
FIELD_SEPARATOR = " | "


@dataclass(frozen=True)
class Referral:
    id: str
    text: str
    specialty: str | None = None

    @classmethod
    def from_dict(cls, obj: dict) -> "Referral":
        """Accepts ``text`` or the ``suspicion``/``confirmation`` pair."""
        if not isinstance(obj, dict):
            raise ValueError("referral must be a JSON object")
        rid = obj.get("id")
        if isinstance(rid, int) and not isinstance(rid, bool):
            rid = str(rid)
        if not isinstance(rid, str) or not rid:
            raise ValueError("referral needs a non-empty string id")
        if "text" in obj:
            text = obj["text"]
            if text is None:
                text = ""
        else:
            parts = [obj.get("suspicion"), obj.get("confirmation")]
            if all(p is None for p in parts):
                raise ValueError("referral has neither text nor suspicion/confirmation")
            text = FIELD_SEPARATOR.join(p for p in parts if p)
        if not isinstance(text, str):
            raise ValueError("referral text must be a string")
        specialty = obj.get("specialty")
        if specialty is not None and not isinstance(specialty, str):
            raise ValueError("specialty must be a string")
        return cls(rid, text, specialty)


@dataclass(frozen=True)
class LinkedMention:
    span: MentionSpan
    candidates: tuple[CodeCandidate, ...]

    def to_dict(self) -> dict:
        return {**self.span.to_dict(), "candidates": [c.to_dict() for c in self.candidates]}


@dataclass(frozen=True)
class CodingResult:
    referral_id: str
    mentions: tuple[LinkedMention, ...]
    run: tuple[RunEntry, ...]
    specialty: str | None = None

    def to_dict(self) -> dict:
        out = {
            "id": self.referral_id,
            "mentions": [m.to_dict() for m in self.mentions],
            "run": [{"code": e.code.render(), "rank": e.rank, "score": e.score} for e in self.run],
        }
        if self.specialty is not None:
            out["specialty"] = self.specialty
        return out


@dataclass(frozen=True)
class PipelineConfig:
    k: int = 5
    analyzer: AnalyzerConfig | None = None  # None: use the index's analyzer
    params: ScoringParams | None = None  # None: use the index's parameters
    index_path: str | None = None
    abbrev_path: str | None = None
    extractor: str = "gazetteer"
    extractor_command: tuple[str, ...] = ()
    workers: int = 1

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if self.extractor not in ("gazetteer", "external"):
            raise ValueError(f"unknown extractor {self.extractor!r}")
        if self.extractor == "external" and not self.extractor_command:
            raise ValueError("external extractor needs extractor_command")

    def check_paths(self) -> None:
        for path in (self.index_path, self.abbrev_path):
            if path is not None and not Path(path).exists():
                raise FileNotFoundError(path)

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        command = data.get("extractor_command", ())
        if isinstance(command, str):
            command = shlex.split(command)
        return cls(
            k=int(data.get("k", 5)),
            analyzer=AnalyzerConfig.from_dict(data["analyzer"]) if "analyzer" in data else None,
            params=ScoringParams.from_dict(data["params"]) if "params" in data else None,
            index_path=data.get("index_path"),
            abbrev_path=data.get("abbrev_path"),
            extractor=data.get("extractor", "gazetteer"),
            extractor_command=tuple(command),
            workers=int(data.get("workers", 1)),
        )

    @classmethod
    def from_env(cls, **overrides) -> "PipelineConfig":
        """Load the JSON file named by ``MEDLINKER_CONFIG``; non-None overrides win."""
        data = {}
        path = os.environ.get(CONFIG_ENV)
        if path:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        data.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_dict(data)


def flatten_run(mentions) -> tuple[RunEntry, ...]:
    """Mention order first, then candidate rank; a repeated code keeps its first slot."""
    entries = []
    seen = set()
    for mention in mentions:
        for cand in mention.candidates:
            if cand.code in seen:
                continue
            seen.add(cand.code)
            entries.append(RunEntry(cand.code, len(entries) + 1, cand.score))
    return tuple(entries)


def code_referral(
    referral: Referral,
    extractor: Extractor,
    index: TermIndex,
    table: AbbreviationTable | None = None,
    cfg: PipelineConfig = PipelineConfig(),
) -> CodingResult:
    mentions = []
    for span in extractor.extract(referral.text):
        try:
            candidates = query(index, span.surface, table, cfg.k)
        except EmptyMention:
            # only external extractors can return spans with no word tokens
            candidates = []
        mentions.append(LinkedMention(span, tuple(candidates)))
    return CodingResult(referral.id, tuple(mentions), flatten_run(mentions), referral.specialty)


class Coder:
    """Bundles the loaded resources needed to code referrals."""

    def __init__(
        self,
        index: TermIndex,
        extractor: Extractor | None = None,
        table: AbbreviationTable | None = None,
        cfg: PipelineConfig = PipelineConfig(),
    ):
        if cfg.analyzer is not None and cfg.analyzer != index.analyzer:
            raise ValueError("configured analyzer differs from the one the index was built with")
        if cfg.params is not None and cfg.params != index.params:
            index = replace(index, params=cfg.params)
        self.index = index
        self.table = table if table is not None else index.abbreviations
        self.cfg = cfg
        if extractor is None:
            gazetteer = build_gazetteer(index.concepts(), index.analyzer, self.table)
            extractor = GazetteerExtractor(gazetteer, index.analyzer)
        self.extractor = extractor

    @classmethod
    def from_config(cls, cfg: PipelineConfig) -> "Coder":
        if cfg.index_path is None:
            raise ValueError("no index path configured")
        cfg.check_paths()
        index = load_index(cfg.index_path)
        table = load_abbreviations(cfg.abbrev_path) if cfg.abbrev_path else None
        extractor = None
        if cfg.extractor == "external":
            extractor = ExternalExtractor(cfg.extractor_command, index.analyzer)
        return cls(index, extractor, table, cfg)

    def extract(self, text: str) -> list[MentionSpan]:
        return self.extractor.extract(text)

    def link(self, mention: str, k: int | None = None) -> list[CodeCandidate]:
        return query(self.index, mention, self.table, k or self.cfg.k)

    def code(self, referral: Referral) -> CodingResult:
        return code_referral(referral, self.extractor, self.index, self.table, self.cfg)


@dataclass
class BatchSummary:
    processed: int = 0
    mentions: int = 0
    zero_mentions: int = 0
    skipped: int = 0
    errors: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "processed": self.processed,
            "mentions": self.mentions,
            "zero_mentions": self.zero_mentions,
            "skipped": self.skipped,
        }


def _parse_lines(lines):
    seen_ids = set()
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            referral = Referral.from_dict(json.loads(line))
        except (json.JSONDecodeError, ValueError) as exc:
            yield MalformedRecord(str(exc), lineno)
            continue
        if referral.id in seen_ids:
            yield MalformedRecord(f"duplicate referral id {referral.id!r}", lineno)
            continue
        seen_ids.add(referral.id)
        yield referral


def code_batch(
    input_path: str | Path,
    output_path: str | Path,
    coder: Coder,
    run_path: str | Path | None = None,
    workers: int | None = None,
    tag: str = "medlinker",
) -> BatchSummary:
    """Code a JSONL file of referrals.

    Malformed lines are skipped and counted. Output order follows input
    order whatever the number of workers.
    """
    summary = BatchSummary()
    with open(input_path, encoding="utf-8") as fh:
        items = list(_parse_lines(fh))
    referrals = []
    for item in items:
        if isinstance(item, MalformedRecord):
            summary.skipped += 1
            summary.errors.append(str(item))
            log.warning("skipping %s", item)
        else:
            referrals.append(item)

    workers = workers or coder.cfg.workers
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(coder.code, referrals))
    else:
        results = [coder.code(r) for r in referrals]

    with open(output_path, "w", encoding="utf-8", newline="\n") as out:
        for result in results:
            out.write(json.dumps(result.to_dict(), ensure_ascii=False, sort_keys=True) + "\n")
    if run_path is not None:
        with open(run_path, "w", encoding="utf-8", newline="\n") as run:
            for result in results:
                run.writelines(format_run_lines(result.referral_id, result.run, tag))

    for result in results:
        summary.processed += 1
        summary.mentions += len(result.mentions)
        if not result.mentions:
            summary.zero_mentions += 1
    return summary
