"""Small Spanish ICD-10 catalog shipped with the package for demos and tests."""

from __future__ import annotations

from importlib import resources

from .index import ScoringParams, TermIndex, build_index
from .terminology import AbbreviationTable, ConceptEntry, SourceTag, load_abbreviations, load_concepts
from .textnorm import SPANISH_STOPWORDS, AnalyzerConfig

ANALYZER = AnalyzerConfig(stopwords=SPANISH_STOPWORDS)


def concepts_path():
    return resources.files("medlinker") / "data" / "toy_concepts.jsonl"


def abbreviations_path():
    return resources.files("medlinker") / "data" / "toy_abbreviations.tsv"


def concepts() -> list[ConceptEntry]:
    with resources.as_file(concepts_path()) as path:
        return load_concepts(path, SourceTag.TABULAR)


def abbreviations() -> AbbreviationTable:
    with resources.as_file(abbreviations_path()) as path:
        return load_abbreviations(path)


def index(params: ScoringParams = ScoringParams()) -> TermIndex:
    return build_index(concepts(), ANALYZER, params, abbreviations())
