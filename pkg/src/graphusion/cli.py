"""Command line interface.

Subcommands cover the pipeline stages (ingest, seeds, extract, fuse, build),
the evaluation harnesses (linkpred, qa, eval-ratings) and graph inspection
(kg inspect). Configuration errors and bad usage exit with status 2; runtime
failures such as backend errors exit with status 1.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import ConfigError, RunConfig, load_config, make_backend, make_embedder
from .corpus import ChunkParams, build_index, chunk_document, ingest_corpus
from .kgraph import KnowledgeGraph, find_conflicts, load_expert_kg, load_kg, save_kg
from .llm import BackendError, LLMBackend, LoggingBackend
from .metrics import evaluate_ratings, load_ratings_csv
from .linkpred import LPResources, evaluate_linkpred, load_lp_items, load_wiki_summaries
from .pipeline import (
    RunReport,
    _config_dict,
    _new_counters,
    build_zskg,
    fuse_all,
    normalize_fused,
    run_graphusion,
)
from .seeds import cluster_corpus, generate_seed_concepts, load_seeds, write_seeds
from .tutorqa import load_tutorqa_items, run_task


def _add_config_arg(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="run configuration INI file")


def _add_llm_log_arg(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--llm-log", help="append one JSON line per model call to this file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="graphusion", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="load a corpus and report its statistics")
    _add_config_arg(p)

    p = sub.add_parser("seeds", help="generate seed concepts from the corpus")
    _add_config_arg(p)
    p.add_argument("--output", required=True, help="seeds file to write, one concept per line")

    p = sub.add_parser("extract", help="extract a zero-shot graph from seed concepts")
    _add_config_arg(p)
    _add_llm_log_arg(p)
    p.add_argument("--seeds", help="seeds file (defaults to [inputs] seeds from the config)")
    p.add_argument("--output", required=True, help="graph file to write")

    p = sub.add_parser("fuse", help="fuse a zero-shot graph with an expert graph")
    _add_config_arg(p)
    _add_llm_log_arg(p)
    p.add_argument("--zskg", required=True, help="zero-shot graph from the extract stage")
    p.add_argument("--seeds", help="seeds file (defaults to [inputs] seeds from the config)")
    p.add_argument("--output-dir", required=True, help="directory for kg.jsonl and report.json")

    p = sub.add_parser("build", help="run the full pipeline end to end")
    _add_config_arg(p)
    _add_llm_log_arg(p)
    p.add_argument("--output-dir", required=True, help="directory for all run outputs")

    p = sub.add_parser("linkpred", help="evaluate prerequisite prediction on labeled pairs")
    _add_config_arg(p)
    _add_llm_log_arg(p)
    p.add_argument("--pairs", required=True, help="tab-separated concept pairs with labels")
    p.add_argument("--variant", default="none", choices=["none", "doc", "con", "wiki"])
    p.add_argument("--cot", action="store_true", help="use the chain-of-thought prompt")
    p.add_argument("--kg", help="graph file, required for the con variant")
    p.add_argument("--wiki", help="summaries file, required for the wiki variant")
    p.add_argument("--output", help="also write the report as JSON")

    p = sub.add_parser("qa", help="run one question answering task against a graph")
    _add_config_arg(p)
    _add_llm_log_arg(p)
    p.add_argument("--items", required=True, help="task items as JSON lines")
    p.add_argument("--kg", required=True, help="graph file to query")
    p.add_argument("--out-dir", help="output directory, required for task 6")
    p.add_argument("--output", help="also write the report as JSON")

    p = sub.add_parser("eval-ratings", help="summarize human ratings and rater agreement")
    p.add_argument("--ratings", required=True, help="ratings CSV")
    p.add_argument("--output", help="also write the report as JSON")

    p = sub.add_parser("kg", help="graph utilities")
    kg_sub = p.add_subparsers(dest="kg_command", required=True)
    p = kg_sub.add_parser("inspect", help="print size, relation mix and conflicts of a graph")
    p.add_argument("--kg", required=True, help="graph file to inspect")

    return parser


def _wrap_backend(backend: LLMBackend, args: argparse.Namespace) -> LLMBackend:
    if getattr(args, "llm_log", None):
        return LoggingBackend(backend, args.llm_log)
    return backend


def _load_corpus(cfg: RunConfig):
    return ingest_corpus(cfg.corpus_path, cfg.corpus_format)


def _load_seed_file(args: argparse.Namespace, cfg: RunConfig):
    path = getattr(args, "seeds", None) or cfg.seeds_path
    if path is None:
        raise ConfigError("no seeds file given: pass --seeds or set [inputs] seeds")
    return load_seeds(path)


def _load_expert(cfg: RunConfig) -> KnowledgeGraph:
    if cfg.expert_kg_path is None:
        return KnowledgeGraph()
    return load_expert_kg(cfg.expert_kg_path)


def _write_json(path: str, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _cmd_ingest(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    corpus = _load_corpus(cfg)
    chunks = [
        c
        for doc in corpus
        for c in chunk_document(doc, max_tokens=cfg.max_tokens, overlap=cfg.overlap)
    ]
    index = build_index(corpus, ChunkParams(max_tokens=cfg.max_tokens, overlap=cfg.overlap))
    print(f"documents: {len(corpus)}")
    print(f"skipped records: {corpus.skipped_records}")
    print(f"chunks: {len(chunks)}")
    print(f"vocabulary terms: {index.n_terms}")
    print(f"average chunk length: {index.avg_length:.1f} tokens")
    return 0


def _cmd_seeds(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    corpus = _load_corpus(cfg)
    embedder = make_embedder(cfg)
    clusters = cluster_corpus(corpus, embedder, cfg.pipeline.n_clusters, cfg.pipeline.random_seed)
    seeds = generate_seed_concepts(corpus, clusters, cfg.pipeline.top_n)
    write_seeds(seeds, args.output)
    print(f"seed concepts: {len(seeds)} -> {args.output}")
    return 0


def _cmd_extract(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    corpus = _load_corpus(cfg)
    seeds = _load_seed_file(args, cfg)
    backend = _wrap_backend(make_backend(cfg), args)
    index = build_index(corpus, ChunkParams(max_tokens=cfg.max_tokens, overlap=cfg.overlap))
    counters = _new_counters()
    zskg = build_zskg(seeds, index, backend, cfg.pipeline, counters)
    save_kg(zskg, args.output)
    print(f"zero-shot graph: {len(zskg)} triplets -> {args.output}")
    print(f"extraction calls: {counters['extraction_calls']}, skipped: {counters['extraction_skipped_no_context']}")
    return 0


def _cmd_fuse(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    corpus = _load_corpus(cfg)
    seeds = _load_seed_file(args, cfg)
    zskg = load_kg(args.zskg)
    expert = _load_expert(cfg)
    backend = _wrap_backend(make_backend(cfg), args)
    index = build_index(corpus, ChunkParams(max_tokens=cfg.max_tokens, overlap=cfg.overlap))
    counters = _new_counters()
    counters["seeds_total"] = len(seeds)
    counters["zskg_triplets"] = len(zskg)

    fused, presented = fuse_all(seeds, zskg, expert, index, backend, cfg.pipeline, counters)
    carryover = [t for t in zskg.triplets() if t.pair not in presented]
    counters["carryover_triplets"] = len(carryover)
    final_kg, conflicts = normalize_fused(fused + carryover)
    counters["conflicts_resolved"] = conflicts
    counters["final_triplets"] = len(final_kg)
    counters["final_concepts"] = len(final_kg.concepts())

    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_kg(final_kg, out / "kg.jsonl")
    RunReport(config=_config_dict(cfg.pipeline), counters=counters).save(out / "report.json")
    print(f"fused graph: {len(final_kg)} triplets -> {out / 'kg.jsonl'}")
    print(f"conflicts resolved: {conflicts}, carried over: {len(carryover)}")
    return 0


def _cmd_build(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    corpus = _load_corpus(cfg)
    backend = _wrap_backend(make_backend(cfg), args)
    embedder = make_embedder(cfg)
    seeds = load_seeds(cfg.seeds_path) if cfg.seeds_path else None
    expert = _load_expert(cfg)
    kg, report = run_graphusion(
        corpus,
        backend,
        embedder,
        cfg.pipeline,
        args.output_dir,
        expert_kg=expert,
        seeds=seeds,
    )
    print(f"final graph: {len(kg)} triplets, {len(kg.concepts())} concepts -> {args.output_dir}")
    for key in ("zskg_triplets", "fused_triplets", "carryover_triplets", "conflicts_resolved"):
        print(f"{key.replace('_', ' ')}: {report.counters[key]}")
    return 0


def _cmd_linkpred(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    items = load_lp_items(args.pairs)
    backend = _wrap_backend(make_backend(cfg), args)
    resources = LPResources()
    if args.variant == "doc":
        corpus = _load_corpus(cfg)
        resources.index = build_index(corpus, ChunkParams(max_tokens=cfg.max_tokens, overlap=cfg.overlap))
    elif args.variant == "con":
        if not args.kg:
            raise ConfigError("the con variant needs --kg")
        resources.kg = load_kg(args.kg)
    elif args.variant == "wiki":
        if not args.wiki:
            raise ConfigError("the wiki variant needs --wiki")
        resources.wiki = load_wiki_summaries(args.wiki)
    report = evaluate_linkpred(items, backend, args.variant, resources, use_cot=args.cot)
    for name in sorted(report.metrics):
        print(f"{name}: {report.metrics[name]:.4f}")
    print(f"items: {report.counts['items']}, unparseable: {report.counts['unparseable_responses']}")
    if args.output:
        _write_json(args.output, report.to_dict())
    return 0


def _cmd_qa(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    items = load_tutorqa_items(args.items)
    kg = load_kg(args.kg)
    backend = _wrap_backend(make_backend(cfg), args)
    embedder = make_embedder(cfg)
    report = run_task(items, kg, backend, embedder=embedder, out_dir=args.out_dir)
    for name in sorted(report.metrics):
        print(f"{name}: {report.metrics[name]:.2f}")
    print(f"items: {report.counts['items']}")
    if args.output:
        _write_json(args.output, report.to_dict())
    return 0


def _cmd_eval_ratings(args: argparse.Namespace) -> int:
    records = load_ratings_csv(args.ratings)
    result = evaluate_ratings(records)
    for dimension in ("concept", "relation"):
        stats = result[dimension]
        line = f"{dimension}: mean {stats['mean']:.2f}, stddev {stats['stddev']:.2f}"
        if "kappa" in stats:
            line += f", kappa {stats['kappa']:.4f}"
        print(line)
    print(f"records: {result['n_records']}, raters: {result['n_raters']}")
    if args.output:
        _write_json(args.output, result)
    return 0


def _cmd_kg_inspect(args: argparse.Namespace) -> int:
    kg = load_kg(args.kg)
    total = len(kg)
    print(f"concepts: {len(kg.concepts())}")
    print(f"triplets: {total}")
    print("relations:")
    for relation, count in sorted(kg.relation_counts().items(), key=lambda kv: (-kv[1], kv[0])):
        pct = 100.0 * count / total if total else 0.0
        print(f"  {relation:<24} {count:>5}  {pct:.2f}%")
    print(f"conflicts: {len(find_conflicts(kg))}")
    return 0


_HANDLERS = {
    "ingest": _cmd_ingest,
    "seeds": _cmd_seeds,
    "extract": _cmd_extract,
    "fuse": _cmd_fuse,
    "build": _cmd_build,
    "linkpred": _cmd_linkpred,
    "qa": _cmd_qa,
    "eval-ratings": _cmd_eval_ratings,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "kg":
            return _cmd_kg_inspect(args)
        return _HANDLERS[args.command](args)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (BackendError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
