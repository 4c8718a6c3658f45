"""``domainvocab`` command line: one subcommand per pipeline stage.

Exit codes: 0 ok, 1 usage, 2 config, 3 runtime. Failures print one line
``error[<kind>]: <message>`` on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import anisotropy, compare_corpora, bucket_frequencies, export_freq_stratified, CATEGORY_NAMES
from .config import ConfigError, RunConfig, load_config, validate
from .corpus_scan import (
    CorpusSource,
    count_frequencies,
    read_frequencies,
    read_hits,
    scan_for_tokens,
    write_frequencies,
    write_hits,
)
from .curriculum import LrPlan, default_phases, emit_schedule
from .curriculum import example_seed
from .masking import build_example, write_packed
from .packing import pack_sequences
from .providers import ExchangeProvider, StaticProvider, WindowContextProvider
from .transfer import (
    InitMode,
    build_embedding_matrix,
    context_requests,
    diff_vocab,
    export_matrix,
    import_matrix,
    read_context_requests,
    read_context_responses,
    write_context_requests,
)
from .wordpiece import load_vocab, save_vocab, train_vocab, count_words

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error[usage]: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


# flag -> config key; None values are left alone
COMMON = {"seed": "seed", "workers": "workers"}


def _common(p):
    p.add_argument("--config", help="INI config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out", required=True, help="output artifact path")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="domainvocab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"domainvocab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train-vocab", help="train a WordPiece vocab on a corpus")
    _common(p)
    p.add_argument("--corpus", dest="paths.corpus")
    p.add_argument("--vocab-size", dest="tokenizer.vocab_size", type=int)

    p = sub.add_parser("scan", help="sample sentences containing target tokens")
    _common(p)
    p.add_argument("--corpus", dest="paths.corpus")
    p.add_argument("--vocab", dest="paths.vocab")
    p.add_argument("--base-vocab", dest="paths.base_vocab", help="scan every domain token missing from this vocab")
    p.add_argument("--targets", dest="paths.targets", help="file with one target token per line")
    p.add_argument("--cap", dest="scan.cap", type=int)
    p.add_argument("--min-count", dest="scan.min_count", type=int)
    p.add_argument("--segmenter", dest="scan.segmenter")
    p.add_argument("--dedup", dest="scan.dedup", action="store_const", const=True)

    p = sub.add_parser("diff", help="split the domain vocab into shared and new tokens")
    _common(p)
    p.add_argument("--vocab", dest="paths.vocab")
    p.add_argument("--base-vocab", dest="paths.base_vocab")

    p = sub.add_parser("build-matrix", help="initialize the domain embedding matrix")
    _common(p)
    p.add_argument("--mode", dest="transfer.mode", choices=[m.value for m in InitMode])
    p.add_argument("--vocab", dest="paths.vocab")
    p.add_argument("--base-vocab", dest="paths.base_vocab")
    p.add_argument("--base-matrix", dest="paths.base_matrix")
    p.add_argument("--hits", dest="paths.hits")
    p.add_argument("--provider", dest="transfer.provider", choices=["exchange", "static", "window"])
    p.add_argument("--context-responses", dest="paths.context_responses")
    p.add_argument("--emit-requests", metavar="PATH", help="write context requests for an external encoder and stop")
    p.add_argument("--dim", dest="transfer.dim", type=int)
    p.add_argument("--exclude-distilled", dest="transfer.include_distilled", action="store_const", const=False)

    p = sub.add_parser("collate", help="pack sequences and build MLM examples")
    _common(p)
    p.add_argument("--corpus", dest="paths.corpus")
    p.add_argument("--vocab", dest="paths.vocab")
    p.add_argument("--phase", dest="masking.phase", choices=["0.1", "0.2", "0.3", "0.4"])
    p.add_argument("--strategy", dest="masking.masking_strategy")
    p.add_argument("--rate", dest="masking.masking_rate", type=float)
    p.add_argument("--corruption", dest="masking.corruption_strategy")
    p.add_argument("--max-len", dest="masking.max_len", type=int)
    p.add_argument("--packed", metavar="PATH", help="also write the binary packed format")

    p = sub.add_parser("schedule", help="emit the four-phase curriculum manifest")
    _common(p)
    p.add_argument("--base-steps", dest="curriculum.base_steps", type=int)
    p.add_argument("--peak-lr", dest="curriculum.maximum_learning_rate", type=float)
    p.add_argument("--warmup", dest="curriculum.warmup_proportion", type=float)

    p = sub.add_parser("freq", help="word frequencies and four-category comparison")
    _common(p)
    p.add_argument("--corpus", dest="paths.corpus")
    p.add_argument("--compare", dest="paths.compare_corpus", help="second corpus for the category comparison")
    p.add_argument("--boundaries", dest="analysis.boundaries")

    p = sub.add_parser("anisotropy", help="mean pairwise cosine of matrix rows")
    _common(p)
    p.add_argument("--matrix", dest="paths.matrix")
    p.add_argument("--pairs", dest="analysis.pairs", type=int)
    p.add_argument("--vocab", dest="paths.vocab")
    p.add_argument("--freq-table", dest="paths.freq_table")
    p.add_argument("--export", metavar="PATH", help="also write the frequency-stratified TSV")
    p.add_argument("--boundaries", dest="analysis.boundaries")
    return parser


def _overrides(args) -> dict:
    out = {}
    for key, value in vars(args).items():
        if key in COMMON:
            out[COMMON[key]] = value
        elif "." in key:
            out[key] = value
    return out


def _write_manifest(cfg: RunConfig, command: str, out: Path, extra: dict | None = None) -> None:
    manifest = {
        "command": command,
        "version": __version__,
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "config": cfg.to_dict(),
    }
    if extra:
        manifest.update(extra)
    Path(str(out) + ".manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _corpus(path: str) -> CorpusSource:
    return CorpusSource.from_directory(path)


def _vocab(cfg, path):
    return load_vocab(path, cfg.tokenizer_options())


def cmd_train_vocab(cfg, args, out):
    validate(cfg, ["corpus"], ["corpus"])
    corpus = _corpus(cfg.paths.corpus)
    counts = None
    for i in range(len(corpus)):
        part = count_words(corpus.documents(i), cfg.tokenizer_options())
        counts = part if counts is None else counts + part
    vocab = train_vocab(counts or {}, cfg.tokenizer.vocab_size, options=cfg.tokenizer_options())
    save_vocab(vocab, out)
    return {"tokens": len(vocab), "vocab_sha256": vocab.sha256()}


def _targets(cfg):
    vocab = _vocab(cfg, cfg.paths.vocab)
    if cfg.paths.targets:
        lines = Path(cfg.paths.targets).read_text(encoding="utf-8").splitlines()
        return vocab, sorted({t for t in lines if t})
    base = _vocab(cfg, cfg.paths.base_vocab)
    return vocab, diff_vocab(vocab, base).new_tokens()


def cmd_scan(cfg, args, out):
    validate(cfg, ["corpus", "vocab"], ["corpus", "vocab", "targets", "base_vocab"])
    if not cfg.paths.targets and not cfg.paths.base_vocab:
        raise ConfigError(["scan needs paths.targets or paths.base_vocab"])
    vocab, targets = _targets(cfg)
    s = cfg.scan
    result = scan_for_tokens(
        _corpus(cfg.paths.corpus), targets, vocab, cap=s.cap, seed=cfg.seed, workers=cfg.workers,
        min_count=s.min_count, segmenter=s.segmenter, dedup=s.dedup,
    )
    write_hits(result, out)
    found = sum(1 for hits in result.values() if hits)
    return {"targets": targets, "tokens_found": found, "hits": sum(len(h) for h in result.values())}


def cmd_diff(cfg, args, out):
    validate(cfg, ["vocab", "base_vocab"], ["vocab", "base_vocab"])
    mapping = diff_vocab(_vocab(cfg, cfg.paths.vocab), _vocab(cfg, cfg.paths.base_vocab))
    base_of = dict(mapping.shared)
    with open(out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("domain_id\ttoken\tbase_id\n")
        for did, tok in enumerate(mapping.domain.tokens):
            fh.write(f"{did}\t{tok}\t{base_of.get(did, -1)}\n")
    return {"shared": len(mapping.shared), "new": len(mapping.new), "coverage_ratio": mapping.coverage_ratio}


def _provider(cfg, mapping, hits):
    if not cfg.paths.base_matrix:
        raise ConfigError(["paths.base_matrix is required for this mode"])
    table = import_matrix(cfg.paths.base_matrix).rows
    if table.shape[0] != len(mapping.base):
        raise ConfigError([f"base matrix has {table.shape[0]} rows, base vocab has {len(mapping.base)} tokens"])
    kind = cfg.transfer.provider
    if kind == "static":
        return StaticProvider(table)
    if kind == "window":
        return WindowContextProvider(table)
    if cfg.transfer.mode != InitMode.CONTEXTUALIZED.value:
        return StaticProvider(table)
    if not cfg.paths.context_responses:
        raise ConfigError(["paths.context_responses is required with the exchange provider"])
    requests = context_requests(mapping, hits)
    return ExchangeProvider(table, read_context_responses(cfg.paths.context_responses, requests, table.shape[1]))


def cmd_build_matrix(cfg, args, out):
    mode = InitMode(cfg.transfer.mode)
    required = ["vocab"]
    if mode is not InitMode.SCRATCH:
        required.append("base_vocab")
    if mode is InitMode.CONTEXTUALIZED:
        required.append("hits")
    validate(cfg, required, ["vocab", "base_vocab", "base_matrix", "hits", "context_responses"])
    domain = _vocab(cfg, cfg.paths.vocab)
    base = _vocab(cfg, cfg.paths.base_vocab) if cfg.paths.base_vocab else domain
    mapping = diff_vocab(domain, base)
    hits = None
    if mode is InitMode.CONTEXTUALIZED:
        hits = read_hits(cfg.paths.hits, _scanned_targets(cfg.paths.hits))
        if args.emit_requests:
            requests = context_requests(mapping, hits)
            write_context_requests(requests, args.emit_requests)
            return {"requests": len(requests), "emitted": str(args.emit_requests)}
    provider = None if mode is InitMode.SCRATCH else _provider(cfg, mapping, hits)
    matrix = build_embedding_matrix(
        mode, mapping, provider, hits, seed=cfg.seed, dim=cfg.transfer.dim,
        include_distilled=cfg.transfer.include_distilled, on_unknown=cfg.transfer.on_unknown,
        workers=cfg.workers,
    )
    matrix.meta["config_hash"] = cfg.config_hash()
    export_matrix(matrix, out)
    return {"shape": list(matrix.shape), "provenance": matrix.provenance_counts()}


def _scanned_targets(hits_path):
    manifest = Path(str(hits_path) + ".manifest.json")
    if manifest.exists():
        return json.loads(manifest.read_text(encoding="utf-8")).get("targets", [])
    return []


def cmd_collate(cfg, args, out):
    validate(cfg, ["corpus", "vocab"], ["corpus", "vocab"])
    vocab = _vocab(cfg, cfg.paths.vocab)
    config = cfg.masking_config()
    sequences = pack_sequences(_corpus(cfg.paths.corpus), vocab, cfg.masking.max_len, cfg.scan.segmenter)
    examples = [build_example(seq, vocab, config, example_seed(cfg.seed, i)) for i, seq in enumerate(sequences)]
    with open(out, "w", encoding="utf-8", newline="\n") as fh:
        for ex in examples:
            fh.write(ex.to_json() + "\n")
    if args.packed:
        with open(args.packed, "wb") as fh:
            write_packed(examples, fh)
    return {"examples": len(examples), "masking": config.describe()}


def cmd_schedule(cfg, args, out):
    validate(cfg)
    c = cfg.curriculum
    phases = default_phases(c.base_steps, c.step_ratio, c.maximum_learning_rate)
    plan = LrPlan.for_phases(phases, c.warmup_proportion)
    rows = emit_schedule(phases, plan, out)
    return {"steps": len(rows), "phase_steps": list(plan.phase_steps)}


def cmd_freq(cfg, args, out):
    validate(cfg, ["corpus"], ["corpus", "compare_corpus"])
    table = count_frequencies(_corpus(cfg.paths.corpus), cfg.workers)
    write_frequencies(table, out)
    hist = bucket_frequencies(table, cfg.analysis.boundaries)
    extra = {"histogram": dict(zip(CATEGORY_NAMES, hist.counts)), "words": sum(table.values())}
    if cfg.paths.compare_corpus:
        other = count_frequencies(_corpus(cfg.paths.compare_corpus), cfg.workers)
        report = compare_corpora(table, other, cfg.analysis.boundaries)
        names = (Path(cfg.paths.corpus).name, Path(cfg.paths.compare_corpus).name)
        if names[0] == names[1]:
            names = ("a", "b")
        Path(str(out) + ".compare.tsv").write_text(report.to_tsv(names), encoding="utf-8")
        Path(str(out) + ".compare.json").write_text(report.to_json(names), encoding="utf-8")
        extra["zero_overlap"] = report.zero_overlap
    return extra


def cmd_anisotropy(cfg, args, out):
    validate(cfg, ["matrix"], ["matrix", "vocab", "freq_table"])
    matrix = import_matrix(cfg.paths.matrix)
    value = anisotropy(matrix.rows, cfg.analysis.pairs, cfg.seed)
    result = {"anisotropy": value, "rows": matrix.shape[0], "pairs": cfg.analysis.pairs}
    Path(out).write_text(json.dumps(result, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if args.export:
        validate(cfg, ["vocab", "freq_table"])
        vocab = _vocab(cfg, cfg.paths.vocab)
        export_freq_stratified(matrix, read_frequencies(cfg.paths.freq_table), vocab, args.export, cfg.analysis.boundaries)
    return result


COMMANDS = {
    "train-vocab": cmd_train_vocab,
    "scan": cmd_scan,
    "diff": cmd_diff,
    "build-matrix": cmd_build_matrix,
    "collate": cmd_collate,
    "schedule": cmd_schedule,
    "freq": cmd_freq,
    "anisotropy": cmd_anisotropy,
}


def _fail(kind: str, message: str, code: int) -> int:
    print(f"error[{kind}]: {' '.join(str(message).split())}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = load_config(args.config, _overrides(args))
        validate(cfg)
    except ConfigError as exc:
        return _fail("config", exc, EXIT_CONFIG)
    print(f"repro: version={__version__} config_hash={cfg.config_hash()} seed={cfg.seed}")
    out = Path(args.out)
    try:
        extra = COMMANDS[args.command](cfg, args, out)
    except ConfigError as exc:
        return _fail("config", exc, EXIT_CONFIG)
    except (OSError, ValueError, KeyError, ArithmeticError) as exc:
        return _fail("runtime", f"{type(exc).__name__}: {exc}", EXIT_RUNTIME)
    _write_manifest(cfg, args.command, out, extra)
    print(json.dumps({"command": args.command, "out": str(out), **extra}, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
