"""Two-step ICD-10 coding of Spanish clinical text.

Disease mentions are found in referral text, then each mention is linked to
ranked ICD-10 codes through a synonym-enriched inverted index.
"""

from .errors import (
    CorruptIndex,
    EmptyCatalog,
    EmptyMention,
    EmptyRelevantSet,
    LengthMismatch,
    MalformedCode,
    MalformedRecord,
    MedlinkerError,
    VersionMismatch,
)
from .evaluation import (
    EvalReport,
    Level,
    Qrels,
    RunEntry,
    average_precision,
    coder_agreement,
    mean_average_precision,
    per_group_map,
)
from .extractor import (
    BioLabel,
    ExternalExtractor,
    Gazetteer,
    GazetteerExtractor,
    MentionSpan,
    build_gazetteer,
    extract_mentions,
    spans_from_bio,
)
from .index import CodeCandidate, ScoringParams, TermIndex, build_index, load_index, query, save_index, score
from .pipeline import Coder, CodingResult, PipelineConfig, Referral, code_batch, code_referral
from .terminology import (
    AbbreviationTable,
    CodeId,
    ConceptEntry,
    SourceTag,
    Synonym,
    load_abbreviations,
    load_concepts,
    merge_sources,
    parse_code,
    truncate_to_category,
)
from .textnorm import AnalyzerConfig, Token, expand_abbreviations, normalize, tokenize

__version__ = "0.1.0"
