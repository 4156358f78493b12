"""Command-line entry point: ``tlmsum <subcommand> [options]``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 missing artifact (the message names the stage to rerun).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .bpe import Vocabulary, VocabularyError
from .corpus import CorpusError, convert_release_file, write_corpus
from .nn.checkpoint import CheckpointError
from .pipeline import (ABSTRACTIVE, ArtifactMissingError, ConfigError, Run, RunConfig, export_embeddings, read_jsonl,
                       set_threads, tfidf_words)

logger = logging.getLogger("tlmsum")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_MISSING = 0, 1, 2, 3


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    # Global flags are accepted before or after the subcommand. Defaults are
    # suppressed so a subparser never overwrites a value given up front.
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", type=Path, help="TOML run configuration")
    common.add_argument("--seed", type=int, help="root seed (overrides the config)")
    common.add_argument("--out-dir", type=Path, help="run directory (default: ./run)")
    common.add_argument("--scale", choices=["desk", "paper"], help="model size preset (overrides the config)")
    common.add_argument("--data-dir", type=Path, help="directory with train/valid/test.jsonl (overrides the config)")
    common.add_argument("--threads", type=int, help="torch CPU threads")
    common.add_argument("--force", action="store_true", help="recompute even when artifacts are current")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress")

    p = Parser(prog="tlmsum", description="Extract-then-abstract summarization experiments.", parents=[common])
    sub = p.add_subparsers(dest="command", required=True, parser_class=Parser)

    s = sub.add_parser("convert-data", parents=[common], help="convert a public release file into corpus records")
    s.add_argument("src", type=Path)
    s.add_argument("dst", type=Path)
    s.add_argument("--domain", default="scientific", choices=["scientific", "news", "patent"])

    s = sub.add_parser("make-synthetic", parents=[common], help="write a seeded synthetic corpus")
    s.add_argument("dest", type=Path)
    s.add_argument("--kind", choices=["key-sentence", "marker"], default="key-sentence")
    s.add_argument("--sizes", type=int, nargs=3, default=[200, 40, 40], metavar=("TRAIN", "VALID", "TEST"))

    sub.add_parser("train-bpe", parents=[common], help="learn the subword vocabulary")
    sub.add_parser("make-labels", parents=[common], help="build oracle extract labels")
    s = sub.add_parser("train-extractor", parents=[common], help="train a sentence extractor")
    s.add_argument("kind", choices=["pointer", "classifier"])
    s = sub.add_parser("extract", parents=[common], help="run an extractor over a split")
    s.add_argument("--split", default="test", choices=["train", "valid", "test"])
    s.add_argument("--method", default="pointer", choices=["pointer", "classifier", "lead"])
    s = sub.add_parser("train-tlm", parents=[common], help="train a transformer language model")
    s.add_argument("--variant", required=True, choices=list(ABSTRACTIVE),
                   help="abstractive variant whose training condition to use")
    s = sub.add_parser("generate", parents=[common], help="sample abstracts for the evaluation split")
    s.add_argument("--variant", required=True, choices=list(ABSTRACTIVE))
    sub.add_parser("evaluate", parents=[common], help="score every configured variant with ROUGE")
    sub.add_parser("analyze-copying", parents=[common], help="n-gram copy profiles of generated abstracts")
    sub.add_parser("pipeline", parents=[common], help="run every stage needed for the configured variants")

    s = sub.add_parser("export-embeddings", parents=[common], help="write the token embedding table as TSV")
    s.add_argument("--checkpoint", type=Path, required=True)
    s.add_argument("--vocab", type=Path, required=True)
    s.add_argument("--output", type=Path, required=True)

    s = sub.add_parser("tfidf-words", parents=[common], help="most representative words per category")
    s.add_argument("corpus", type=Path)
    s.add_argument("--category-field", default="category")
    s.add_argument("--per-category", type=int, default=300)
    s.add_argument("--output", type=Path, required=True)
    return p


GLOBAL_DEFAULTS = dict(config=None, seed=None, out_dir=Path("run"), scale=None, data_dir=None, threads=None,
                       force=False, verbose=False)


def load_config(args) -> RunConfig:
    config = RunConfig.load(args.config) if args.config else RunConfig()
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.scale is not None:
        changes["scale"] = args.scale
    if args.data_dir is not None:
        changes["data"] = dataclasses.replace(config.data, dir=str(args.data_dir))
    return dataclasses.replace(config, **changes)


def open_run(args) -> Run:
    config = load_config(args)
    run = Run(config, args.out_dir)
    snapshot = run.out / "run_config.json"
    if snapshot.exists():
        previous = json.loads(snapshot.read_text())
        if previous.get("config_hash") != config.hash:
            logger.warning("configuration differs from the previous run in %s (%s -> %s); stale stages will rerun",
                           run.out, previous.get("config_hash", "?")[:12], config.hash[:12])
    snapshot.write_text(json.dumps({"config_hash": config.hash, "config": config.to_dict()}, indent=2,
                                   sort_keys=True))
    return run


def _run_stage(args, name: str) -> None:
    run = open_run(args)
    ran = run.run_stage(name, force=args.force)
    print(f"{name}: {'done' if ran else 'up to date'}")


def cmd_convert_data(args):
    n = convert_release_file(args.src, args.dst, args.domain)
    print(f"wrote {n} records to {args.dst}")


def cmd_make_synthetic(args):
    from . import synthetic

    seed = args.seed or 0
    args.dest.mkdir(parents=True, exist_ok=True)
    for split, size, offset in zip(("train", "valid", "test"), args.sizes, (0, 1, 2)):
        if args.kind == "marker":
            docs, _ = synthetic.marker_corpus(size, seed=seed * 3 + offset, prefix=split)
        else:
            docs = synthetic.key_sentence_corpus(size, seed=seed * 3 + offset, prefix=split)
        write_corpus(docs, args.dest / f"{split}.jsonl")
    print(f"wrote {sum(args.sizes)} documents to {args.dest}")


def cmd_pipeline(args):
    run = open_run(args)
    report = run.run_all(force=args.force)
    print((run.out / "report.md").read_text(), end="")
    print(f"report: {run.report_path}")
    return report


def cmd_export_embeddings(args):
    if not args.checkpoint.exists():
        raise ArtifactMissingError(args.checkpoint, "train-tlm or train-extractor")
    if not args.vocab.exists():
        raise ArtifactMissingError(args.vocab, "train-bpe")
    n = export_embeddings(args.checkpoint, Vocabulary.load(args.vocab), args.output)
    print(f"wrote {n} embedding rows to {args.output}")


def cmd_tfidf_words(args):
    if not args.corpus.exists():
        raise CorpusError(f"corpus not found: {args.corpus}")
    ranked = tfidf_words(read_jsonl(args.corpus), args.category_field, args.per_category)
    with open(args.output, "w", encoding="utf-8") as fh:
        for cat, words in ranked.items():
            for word, score in words:
                fh.write(f"{cat}\t{word}\t{score:.6f}\n")
    print(f"wrote top words for {len(ranked)} categories to {args.output}")


def dispatch(args):
    c = args.command
    if c == "convert-data":
        return cmd_convert_data(args)
    if c == "make-synthetic":
        return cmd_make_synthetic(args)
    if c == "pipeline":
        return cmd_pipeline(args)
    if c == "export-embeddings":
        return cmd_export_embeddings(args)
    if c == "tfidf-words":
        return cmd_tfidf_words(args)
    if c == "train-extractor":
        return _run_stage(args, f"train-extractor:{args.kind}")
    if c == "extract":
        return _run_stage(args, f"extract:{args.split}:{args.method}")
    if c == "train-tlm":
        from .pipeline import tlm_tag

        return _run_stage(args, f"train-tlm:{tlm_tag(args.variant)}")
    if c == "generate":
        return _run_stage(args, f"generate:{args.variant}")
    return _run_stage(args, c)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    for key, value in GLOBAL_DEFAULTS.items():
        if not hasattr(args, key):
            setattr(args, key, value)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    set_threads(args.threads)
    try:
        dispatch(args)
    except (ConfigError, UsageError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ArtifactMissingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename or exc}", file=sys.stderr)
        return EXIT_MISSING
    except (CorpusError, VocabularyError, CheckpointError, KeyError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
