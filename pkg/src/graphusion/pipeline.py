"""Three-stage knowledge graph construction.

Stage 1 produces seed concepts (or loads them from a file). Stage 2 asks the
model for candidate triplets per seed, grounded in retrieved corpus chunks,
and merges everything into a zero-shot graph. Stage 3 fuses each seed's
zero-shot subgraph with the matching expert subgraph, then a normalization
pass enforces a single relation per concept pair. Candidate triplets whose
concept pair was never shown to the model during fusion are carried over
unchanged, so stage 2 evidence is not silently lost.

Stage 2 runs seeds concurrently, but results merge in sorted-seed order, so
output bytes do not depend on the degree of parallelism.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .corpus import (
    DEFAULT_MAX_TOKENS,
    DEFAULT_OVERLAP,
    ChunkParams,
    Corpus,
    RetrievalIndex,
    build_index,
    retrieve,
)
from .embed import Embedder
from .kgraph import (
    Concept,
    KnowledgeGraph,
    Provenance,
    RelationType,
    Triplet,
    canonicalize_concept,
    save_kg,
    subgraph,
)
from .llm import (
    BackendError,
    LLMBackend,
    LLMRequest,
    parse_triplet_list,
    render_prompt,
    serialize_kg_for_prompt,
)
from .seeds import cluster_corpus, generate_seed_concepts, write_seeds

DEFAULT_RELATION_PRIORITY = [
    RelationType.PREREQUISITE,
    RelationType.USED_FOR,
    RelationType.HYPONYM_OF,
    RelationType.PART_OF,
    RelationType.EVALUATE_FOR,
    RelationType.COMPARE,
    RelationType.CONJUNCTION,
]


@dataclass
class PipelineConfig:
    model_id: str = "scripted"
    n_clusters: int = 8
    top_n: int = 10
    random_seed: int = 0
    max_tokens: int = DEFAULT_MAX_TOKENS
    overlap: int = DEFAULT_OVERLAP
    extract_k: int = 3
    background_k: int = 2
    parallelism: int = 1
    failure_threshold: float = 0.1

    def __post_init__(self):
        if self.parallelism < 1:
            raise ValueError("parallelism must be >= 1")
        if not 0.0 <= self.failure_threshold <= 1.0:
            raise ValueError("failure_threshold must be in [0, 1]")


@dataclass
class RunReport:
    config: dict
    counters: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"config": self.config, "counters": dict(sorted(self.counters.items()))}

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _new_counters() -> dict[str, int]:
    return {
        "seeds_total": 0,
        "extraction_calls": 0,
        "extraction_skipped_no_context": 0,
        "extraction_failures": 0,
        "malformed_extraction_groups": 0,
        "candidate_triplets": 0,
        "self_loops_dropped": 0,
        "empty_concepts_dropped": 0,
        "zskg_triplets": 0,
        "fusion_calls": 0,
        "fusion_skipped_empty": 0,
        "fusion_failures": 0,
        "malformed_fusion_groups": 0,
        "fused_triplets": 0,
        "carryover_triplets": 0,
        "conflicts_resolved": 0,
        "final_triplets": 0,
        "final_concepts": 0,
    }


def _build_triplets(
    raw: Sequence[tuple[str, RelationType, str]],
    stage: str,
    model_id: str,
    seed: Concept,
    chunk_ids: list[str],
    counters: dict[str, int],
) -> list[Triplet]:
    out: list[Triplet] = []
    for head, relation, tail in raw:
        try:
            h = canonicalize_concept(head)
            t = canonicalize_concept(tail)
        except ValueError:
            counters["empty_concepts_dropped"] += 1
            continue
        if h.canonical == t.canonical:
            counters["self_loops_dropped"] += 1
            continue
        prov = Provenance(stage=stage, model_id=model_id, query_concept=seed, chunk_ids=list(chunk_ids))
        out.append(Triplet(head=h, relation=relation, tail=t, provenance=[prov]))
    return out


def extract_candidates(
    seed: Concept,
    index: RetrievalIndex,
    backend: LLMBackend,
    cfg: PipelineConfig,
    counters: dict[str, int],
) -> list[Triplet]:
    """Candidate triplets for one seed, grounded in retrieved chunks.

    When retrieval returns nothing the model is not called at all; an empty
    context could only produce hallucinated triplets.
    """
    hits = retrieve(index, seed.display, cfg.extract_k)
    if not hits:
        counters["extraction_skipped_no_context"] += 1
        return []
    context = "\n\n".join(chunk.text for chunk, _ in hits)
    chunk_ids = [chunk.id for chunk, _ in hits]
    prompt = render_prompt("extraction", {"context": context, "query": seed.display})
    counters["extraction_calls"] += 1
    response = backend.complete(LLMRequest(rendered_text=prompt, template_id="extraction"))
    raw, malformed = parse_triplet_list(response.text)
    counters["malformed_extraction_groups"] += malformed
    triplets = _build_triplets(raw, "extraction", cfg.model_id, seed, chunk_ids, counters)
    counters["candidate_triplets"] += len(triplets)
    return triplets


def build_zskg(
    seeds: Sequence[Concept],
    index: RetrievalIndex,
    backend: LLMBackend,
    cfg: PipelineConfig,
    counters: Optional[dict[str, int]] = None,
) -> KnowledgeGraph:
    """Run extraction over all seeds and merge into one zero-shot graph.

    Seeds run concurrently up to cfg.parallelism, but merging happens in
    sorted-seed order. Backend failures are tolerated per seed up to
    cfg.failure_threshold as a fraction of all seeds, then the run aborts.
    """
    if counters is None:
        counters = _new_counters()
    if not seeds:
        raise ValueError("no seed concepts to extract from")
    ordered = sorted(seeds, key=lambda s: s.canonical)

    results: dict[str, list[Triplet]] = {}
    failures: list[str] = []

    def _one(seed: Concept) -> tuple[str, list[Triplet], Optional[str], dict[str, int]]:
        local = _new_counters()
        try:
            trips = extract_candidates(seed, index, backend, cfg, local)
            return seed.canonical, trips, None, local
        except BackendError as exc:
            return seed.canonical, [], str(exc), local

    if cfg.parallelism == 1:
        outcomes = [_one(s) for s in ordered]
    else:
        with ThreadPoolExecutor(max_workers=cfg.parallelism) as pool:
            outcomes = list(pool.map(_one, ordered))
    for canonical, trips, error, local in outcomes:
        if error is not None:
            failures.append(canonical)
        results[canonical] = trips
        for key, value in local.items():
            counters[key] += value

    counters["extraction_failures"] += len(failures)
    if len(failures) / len(ordered) > cfg.failure_threshold:
        raise RuntimeError(
            f"extraction failed for {len(failures)}/{len(ordered)} seeds, "
            f"over the {cfg.failure_threshold:.0%} threshold: {sorted(failures)[:5]}"
        )

    kg = KnowledgeGraph()
    for seed in ordered:
        for t in results[seed.canonical]:
            kg.insert(t)
    counters["zskg_triplets"] = len(kg)
    return kg


def fuse_concept(
    seed: Concept,
    zskg: KnowledgeGraph,
    expert_kg: KnowledgeGraph,
    index: RetrievalIndex,
    backend: LLMBackend,
    cfg: PipelineConfig,
    counters: dict[str, int],
) -> tuple[list[Triplet], set[tuple[str, str]]]:
    """Fuse one seed's zero-shot and expert subgraphs with the model.

    Returns the fused triplets plus the set of unordered concept pairs that
    were presented to the model, so the caller can tell which candidate
    triplets have been adjudicated. Skips the call when both subgraphs are
    empty.
    """
    local = subgraph(zskg, seed)
    expert = subgraph(expert_kg, seed)
    presented = {t.pair for t in local.triplets()}
    if not len(local) and not len(expert):
        counters["fusion_skipped_empty"] += 1
        return [], set()

    hits = retrieve(index, seed.display, cfg.background_k)
    background = "\n\n".join(chunk.text for chunk, _ in hits) if hits else "None"
    chunk_ids = [chunk.id for chunk, _ in hits]
    prompt = render_prompt(
        "fusion",
        {
            "concept": seed.display,
            "LLM-KG": serialize_kg_for_prompt(local),
            "E-G": serialize_kg_for_prompt(expert),
            "background": background,
        },
    )
    counters["fusion_calls"] += 1
    response = backend.complete(LLMRequest(rendered_text=prompt, template_id="fusion"))
    raw, malformed = parse_triplet_list(response.text)
    counters["malformed_fusion_groups"] += malformed
    triplets = _build_triplets(raw, "fusion", cfg.model_id, seed, chunk_ids, counters)
    counters["fused_triplets"] += len(triplets)
    return triplets, presented


def fuse_all(
    seeds: Sequence[Concept],
    zskg: KnowledgeGraph,
    expert_kg: KnowledgeGraph,
    index: RetrievalIndex,
    backend: LLMBackend,
    cfg: PipelineConfig,
    counters: dict[str, int],
) -> tuple[list[Triplet], set[tuple[str, str]]]:
    """Fuse every seed in sorted order, tolerating failures up to the threshold."""
    fused: list[Triplet] = []
    presented: set[tuple[str, str]] = set()
    failures = 0
    ordered = sorted(seeds, key=lambda s: s.canonical)
    for seed in ordered:
        try:
            trips, pairs = fuse_concept(seed, zskg, expert_kg, index, backend, cfg, counters)
        except BackendError:
            failures += 1
            continue
        fused.extend(trips)
        presented |= pairs
    counters["fusion_failures"] = failures
    if failures / max(len(ordered), 1) > cfg.failure_threshold:
        raise RuntimeError(
            f"fusion failed for {failures}/{len(ordered)} seeds, "
            f"over the {cfg.failure_threshold:.0%} threshold"
        )
    return fused, presented


def normalize_fused(
    triplets: Iterable[Triplet],
    priority: Optional[Sequence[RelationType]] = None,
) -> tuple[KnowledgeGraph, int]:
    """Collapse to one triplet per unordered concept pair.

    Duplicate keys merge their provenance first. Within a pair the winner has
    the most provenance entries, then the highest-priority relation, then the
    lexicographically smaller direction. Returns the graph and how many pairs
    actually had competing triplets.
    """
    if priority is None:
        priority = DEFAULT_RELATION_PRIORITY
    rank = {rel: i for i, rel in enumerate(priority)}
    missing = [r.canonical for r in RelationType if r not in rank]
    if missing:
        raise ValueError(f"relation priority is missing: {missing}")

    merged: dict[tuple[str, str, str], Triplet] = {}
    for t in triplets:
        if t.key in merged:
            merged[t.key].provenance.extend(t.provenance)
        else:
            merged[t.key] = Triplet(
                head=t.head, relation=t.relation, tail=t.tail, provenance=list(t.provenance)
            )

    by_pair: dict[tuple[str, str], list[Triplet]] = {}
    for t in merged.values():
        by_pair.setdefault(t.pair, []).append(t)

    kg = KnowledgeGraph()
    conflicts = 0
    for pair in sorted(by_pair):
        candidates = by_pair[pair]
        if len(candidates) > 1:
            conflicts += 1
        best = min(
            candidates,
            key=lambda t: (
                -len(t.provenance),
                rank[t.relation],
                (t.head.canonical, t.tail.canonical),
            ),
        )
        kg.insert(best)
    return kg, conflicts


def run_graphusion(
    corpus: Corpus,
    backend: LLMBackend,
    embedder: Embedder,
    cfg: PipelineConfig,
    output_dir: str | Path,
    expert_kg: Optional[KnowledgeGraph] = None,
    seeds: Optional[Sequence[Concept]] = None,
) -> tuple[KnowledgeGraph, RunReport]:
    """End-to-end run: seeds, extraction, fusion, normalization, persistence.

    Writes seeds.txt, zskg.jsonl, kg.jsonl and report.json under output_dir
    and returns the final graph with its run report.
    """
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    counters = _new_counters()
    if expert_kg is None:
        expert_kg = KnowledgeGraph()

    index = build_index(corpus, ChunkParams(max_tokens=cfg.max_tokens, overlap=cfg.overlap))

    if seeds is None:
        clusters = cluster_corpus(corpus, embedder, cfg.n_clusters, cfg.random_seed)
        seeds = generate_seed_concepts(corpus, clusters, cfg.top_n)
    seeds = list(seeds)
    counters["seeds_total"] = len(seeds)
    write_seeds(seeds, out / "seeds.txt")

    zskg = build_zskg(seeds, index, backend, cfg, counters)
    save_kg(zskg, out / "zskg.jsonl")

    fused, presented = fuse_all(seeds, zskg, expert_kg, index, backend, cfg, counters)

    carryover = [t for t in zskg.triplets() if t.pair not in presented]
    counters["carryover_triplets"] = len(carryover)

    final_kg, conflicts = normalize_fused(fused + carryover)
    counters["conflicts_resolved"] = conflicts
    counters["final_triplets"] = len(final_kg)
    counters["final_concepts"] = len(final_kg.concepts())

    save_kg(final_kg, out / "kg.jsonl")
    report = RunReport(config=_config_dict(cfg), counters=counters)
    report.save(out / "report.json")
    return final_kg, report


def _config_dict(cfg: PipelineConfig) -> dict:
    return {
        "model_id": cfg.model_id,
        "n_clusters": cfg.n_clusters,
        "top_n": cfg.top_n,
        "random_seed": cfg.random_seed,
        "max_tokens": cfg.max_tokens,
        "overlap": cfg.overlap,
        "extract_k": cfg.extract_k,
        "background_k": cfg.background_k,
        "failure_threshold": cfg.failure_threshold,
    }
