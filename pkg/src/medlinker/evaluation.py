"""MAP evaluation against expert-coded referrals.

Runs are ordered by their stored rank, not by score: in a coding run the
rank reflects the order in which mentions appear in the text, so scores
from different mentions are not comparable.
"""

from __future__ import annotations

import json
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import NamedTuple

from .errors import EmptyRelevantSet, MalformedRecord
from .terminology import CodeId, parse_code, truncate_to_category

UNSPECIFIED = "UNSPECIFIED"


class Level(str, Enum):
    CATEGORY = "category"
    SUBCATEGORY = "subcategory"

    def __str__(self) -> str:
        return self.value


class RunEntry(NamedTuple):
    code: CodeId
    rank: int
    score: float


@dataclass
class Qrels:
    gold: dict[str, frozenset[CodeId]]
    groups: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        for qid, codes in self.gold.items():
            if not codes:
                raise ValueError(f"empty gold set for {qid!r}")
        self.gold = {qid: frozenset(codes) for qid, codes in self.gold.items()}

    def group_of(self, qid: str) -> str:
        return self.groups.get(qid) or UNSPECIFIED


RunFile = dict[str, list[RunEntry]]


@dataclass
class EvalReport:
    map: float
    per_query: dict[str, float]
    per_group: dict[str, float]
    level: Level
    query_count: int

    def to_dict(self) -> dict:
        return {
            "map": self.map,
            "level": self.level.value,
            "query_count": self.query_count,
            "per_query": dict(sorted(self.per_query.items())),
            "per_group": dict(sorted(self.per_group.items())),
        }


def average_precision(ranked: Sequence[CodeId], relevant: Iterable[CodeId]) -> float:
    """Sum of precision at each relevant rank, divided by the number of relevant codes."""
    relevant = set(relevant)
    if not relevant:
        raise EmptyRelevantSet("average precision needs at least one relevant code")
    if len(set(ranked)) != len(ranked):
        raise ValueError("ranked list contains duplicate codes")
    hits = 0
    total = 0.0
    for k, code in enumerate(ranked, 1):
        if code in relevant:
            hits += 1
            total += hits / k
    return total / len(relevant)


def _ranked_codes(entries: Iterable[RunEntry], level: Level) -> list[CodeId]:
    codes = []
    seen = set()
    for entry in sorted(entries, key=lambda e: e.rank):
        code = truncate_to_category(entry.code) if level is Level.CATEGORY else entry.code
        # keep the best-ranked occurrence of a truncated code
        if code not in seen:
            seen.add(code)
            codes.append(code)
    return codes


def _gold_codes(codes: Iterable[CodeId], level: Level) -> set[CodeId]:
    if level is Level.CATEGORY:
        return {truncate_to_category(c) for c in codes}
    return set(codes)


def _mean(values: Mapping[str, float], ids: Iterable[str]) -> float:
    ids = sorted(ids)
    if not ids:
        return 0.0
    total = 0.0
    for qid in ids:
        total += values[qid]
    return total / len(ids)


def per_group_map(per_query: Mapping[str, float], groups: Mapping[str, str]) -> dict[str, float]:
    """MAP within each group; ids without a label fall under ``UNSPECIFIED``.

    Groups with no evaluated ids do not appear in the result.
    """
    members: dict[str, list[str]] = {}
    for qid in per_query:
        members.setdefault(groups.get(qid) or UNSPECIFIED, []).append(qid)
    return {g: _mean(per_query, ids) for g, ids in sorted(members.items())}


def mean_average_precision(run: Mapping[str, Sequence[RunEntry]], qrels: Qrels, level: Level | str) -> EvalReport:
    level = Level(level)
    per_query = {}
    for qid, gold in qrels.gold.items():
        ranked = _ranked_codes(run.get(qid, ()), level)
        per_query[qid] = average_precision(ranked, _gold_codes(gold, level))
    return EvalReport(
        map=_mean(per_query, per_query),
        per_query=per_query,
        per_group=per_group_map(per_query, qrels.groups),
        level=level,
        query_count=len(per_query),
    )


def qrels_to_run(qrels: Qrels) -> RunFile:
    """Rank each id's codes by ascending code string (scores all 1.0)."""
    return {
        qid: [RunEntry(code, rank, 1.0) for rank, code in enumerate(sorted(codes, key=CodeId.render), 1)]
        for qid, codes in qrels.gold.items()
    }


def coder_agreement(coder_a: Qrels, coder_b: Qrels, level: Level | str) -> float:
    """MAP of coder A's codes scored against coder B as the gold standard.

    The mean runs over the union of both id sets; ids coded by only one
    side score 0.
    """
    report = mean_average_precision(qrels_to_run(coder_a), coder_b, level)
    ids = set(coder_a.gold) | set(coder_b.gold)
    per_query = {qid: report.per_query.get(qid, 0.0) for qid in ids}
    return _mean(per_query, ids)


def symmetric_agreement(coder_a: Qrels, coder_b: Qrels, level: Level | str) -> float:
    return (coder_agreement(coder_a, coder_b, level) + coder_agreement(coder_b, coder_a, level)) / 2


# -- trec-style files ---------------------------------------------------------


def read_groups(path: str | Path) -> dict[str, str]:
    groups = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0].strip():
                raise MalformedRecord("expected qid<TAB>specialty", lineno)
            qid = parts[0].strip()
            if qid in groups and groups[qid] != parts[1].strip():
                raise MalformedRecord(f"{qid} has more than one group label", lineno)
            groups[qid] = parts[1].strip()
    return groups


def read_qrels(path: str | Path, groups_path: str | Path | None = None) -> Qrels:
    gold: dict[str, set[CodeId]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 4:
                raise MalformedRecord("expected 'qid 0 code rel'", lineno)
            qid, _, code, rel = parts
            try:
                code_id = parse_code(code)
                relevant = int(rel) > 0
            except ValueError as exc:
                raise MalformedRecord(str(exc), lineno) from None
            if relevant:
                gold.setdefault(qid, set()).add(code_id)
    groups = read_groups(groups_path) if groups_path else {}
    return Qrels(gold, groups)


def write_qrels(qrels: Qrels, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for qid in sorted(qrels.gold):
            for code in sorted(qrels.gold[qid], key=CodeId.render):
                fh.write(f"{qid} 0 {code.render()} 1\n")


def read_run(path: str | Path) -> RunFile:
    run: dict[str, list[RunEntry]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 6:
                raise MalformedRecord("expected 'qid Q0 code rank score tag'", lineno)
            qid, _, code, rank, score, _tag = parts
            try:
                entry = RunEntry(parse_code(code), int(rank), float(score))
            except ValueError as exc:
                raise MalformedRecord(str(exc), lineno) from None
            run.setdefault(qid, []).append(entry)
    for qid, entries in run.items():
        entries.sort(key=lambda e: e.rank)
        if len({e.code for e in entries}) != len(entries):
            raise MalformedRecord(f"duplicate code in run for {qid}")
    return run


def format_run_lines(qid: str, entries: Iterable[RunEntry], tag: str = "medlinker") -> list[str]:
    return [f"{qid} Q0 {e.code.render()} {e.rank} {e.score:.6f} {tag}\n" for e in entries]


def write_run(run: Mapping[str, Sequence[RunEntry]], path: str | Path, tag: str = "medlinker") -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for qid in sorted(run):
            fh.writelines(format_run_lines(qid, run[qid], tag))


def write_report(report: EvalReport, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
