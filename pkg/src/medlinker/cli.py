"""Command-line entry point.

Exit status: 0 on success, 1 on usage errors, 2 on data errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .errors import MedlinkerError
from .evaluation import Level, coder_agreement, mean_average_precision, read_qrels, read_run, symmetric_agreement, write_report
from .index import ScoringParams, build_index, load_index, save_index
from .pipeline import Coder, PipelineConfig, code_batch
from .terminology import AbbreviationTable, SourceTag, load_abbreviations, load_concepts, merge_sources
from .textnorm import SPANISH_STOPWORDS, AnalyzerConfig

log = logging.getLogger("medlinker")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _concept_source(arg: str) -> tuple[SourceTag, str]:
    """``TAG=path`` or a bare path (tagged TABULAR)."""
    tag, sep, path = arg.partition("=")
    if sep and tag.upper() in SourceTag.__members__:
        return SourceTag(tag.upper()), path
    return SourceTag.TABULAR, arg


def _stopwords(value: str) -> frozenset[str]:
    if value == "none":
        return frozenset()
    if value == "spanish":
        return SPANISH_STOPWORDS
    with open(value, encoding="utf-8") as fh:
        return frozenset(w.strip() for w in fh if w.strip() and not w.startswith("#"))


def cmd_build_index(args) -> int:
    catalogs = []
    for arg in args.concepts:
        source, path = _concept_source(arg)
        catalogs.append(load_concepts(path, source))
    table = load_abbreviations(args.abbrev) if args.abbrev else AbbreviationTable()
    cfg = AnalyzerConfig(stopwords=_stopwords(args.stopwords))
    params = ScoringParams(k1=args.k1, b=args.b, canonical_boost=args.canonical_boost)
    index = build_index(merge_sources(catalogs), cfg, params, table)
    save_index(index, args.out)
    print(json.dumps(index.stats(), sort_keys=True))
    return EXIT_OK


def _pipeline_config(args) -> PipelineConfig:
    overrides = {
        "index_path": args.index,
        "k": getattr(args, "k", None),
        "abbrev_path": getattr(args, "abbrev", None),
        "workers": getattr(args, "workers", None),
    }
    command = getattr(args, "extractor_command", None)
    if command:
        overrides["extractor"] = "external"
        overrides["extractor_command"] = command
    cfg = PipelineConfig.from_env(**overrides)
    if cfg.index_path is None:
        raise UsageError("no index given (use --index or MEDLINKER_CONFIG)")
    return cfg


def cmd_code(args) -> int:
    cfg = _pipeline_config(args)
    coder = Coder.from_config(cfg)
    summary = code_batch(args.input, args.output, coder, args.run, cfg.workers)
    print(json.dumps(summary.to_dict(), sort_keys=True))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    qrels = read_qrels(args.qrels, args.groups)
    run = read_run(args.run)
    report = mean_average_precision(run, qrels, Level(args.level))
    if args.report:
        write_report(report, args.report)
    print(f"MAP ({report.level}) over {report.query_count} referrals: {report.map:.4f}")
    for group, value in report.per_group.items():
        print(f"  {group}\t{value:.4f}")
    return EXIT_OK


def cmd_agreement(args) -> int:
    a, b = read_qrels(args.a), read_qrels(args.b)
    level = Level(args.level)
    print(f"agreement A vs B ({level}): {coder_agreement(a, b, level):.4f}")
    print(f"symmetric agreement ({level}): {symmetric_agreement(a, b, level):.4f}")
    return EXIT_OK


def cmd_serve(args) -> int:
    from .service import serve

    cfg = _pipeline_config(args)
    cfg.check_paths()
    serve(lambda: Coder.from_config(cfg), host=args.host, port=args.port)
    return EXIT_OK


def cmd_extract_plugin(args) -> int:
    from .extractor import serve_plugin

    serve_plugin(Coder(load_index(args.index)).extractor)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="medlinker", description="ICD-10 coding of Spanish clinical referrals")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("build-index", help="build a term index from concept files")
    p.add_argument("--concepts", nargs="+", required=True, metavar="[TAG=]FILE",
                   help="concept JSONL files; prefix with a source tag, e.g. IRIS=iris.jsonl")
    p.add_argument("--abbrev", help="abbreviation TSV stored in the index")
    p.add_argument("--out", required=True)
    p.add_argument("--stopwords", default="none", help="none, spanish, or a file with one word per line")
    p.add_argument("--k1", type=float, default=1.2)
    p.add_argument("--b", type=float, default=0.75)
    p.add_argument("--canonical-boost", type=float, default=2.0)
    p.set_defaults(func=cmd_build_index)

    p = sub.add_parser("code", help="code a JSONL file of referrals")
    p.add_argument("--index")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--run", help="also write a trec run file")
    p.add_argument("--k", type=int)
    p.add_argument("--abbrev", help="override the index's abbreviation table")
    p.add_argument("--workers", type=int)
    p.add_argument("--extractor-command", help="external extractor command line")
    p.set_defaults(func=cmd_code)

    p = sub.add_parser("evaluate", help="MAP of a run against qrels")
    p.add_argument("--run", required=True)
    p.add_argument("--qrels", required=True)
    p.add_argument("--level", choices=[lv.value for lv in Level], default="subcategory")
    p.add_argument("--groups", help="TSV of qid<TAB>specialty")
    p.add_argument("--report", help="write a JSON report here")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("agreement", help="MAP agreement between two coders")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--level", choices=[lv.value for lv in Level], required=True)
    p.set_defaults(func=cmd_agreement)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--index")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--k", type=int)
    p.add_argument("--extractor-command")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("extract-plugin", help="answer the extractor plug-in protocol on stdin/stdout")
    p.add_argument("--index", required=True)
    p.set_defaults(func=cmd_extract_plugin)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"medlinker: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (MedlinkerError, OSError, ValueError, KeyError) as exc:
        print(f"medlinker: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
