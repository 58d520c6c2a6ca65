import json

import pytest

from graphusion.corpus import ChunkParams, Corpus, Document, build_index
from graphusion.kgraph import (
    KnowledgeGraph,
    Provenance,
    RelationType,
    canonicalize_concept,
    find_conflicts,
    load_kg,
    make_triplet,
    save_kg,
)
from graphusion.llm import ScriptRule, ScriptedBackend
from graphusion.pipeline import (
    DEFAULT_RELATION_PRIORITY,
    PipelineConfig,
    build_zskg,
    extract_candidates,
    fuse_all,
    fuse_concept,
    normalize_fused,
    run_graphusion,
)


def test_config_validation():
    with pytest.raises(ValueError):
        PipelineConfig(parallelism=0)
    with pytest.raises(ValueError):
        PipelineConfig(failure_threshold=1.5)


def test_priority_covers_all_relations():
    assert set(DEFAULT_RELATION_PRIORITY) == set(RelationType)
    assert DEFAULT_RELATION_PRIORITY[0] is RelationType.PREREQUISITE


# -- a tiny end-to-end scenario used across the stage tests -----------------

_ALPHA_EXTRACTION = "(alpha, Used-for, beta)(alpha, Used-for, beta)(x ray, Compare, y axis)"
_BETA_EXTRACTION = "(beta, Part-of, gamma)(beta, Part-of)(beta, Used-for, beta)(., Used-for, gamma)"


def _mini_corpus():
    return Corpus(
        [
            Document(id="m1", title="alpha", text="alpha beta gamma"),
            Document(id="m2", title="beta", text="beta gamma delta"),
        ]
    )


def _mini_seeds():
    return [canonicalize_concept(s) for s in ("alpha", "beta", "zeta")]


def _mini_index():
    return build_index(_mini_corpus(), ChunkParams(max_tokens=16, overlap=4))


def _mini_rules(include_fusion=True):
    rules = [
        ScriptRule("### Concept:\nalpha", _ALPHA_EXTRACTION),
        ScriptRule("### Concept:\nbeta", _BETA_EXTRACTION),
    ]
    if include_fusion:
        rules += [
            ScriptRule('about the concept "alpha"', "(alpha, Used-for, beta)"),
            ScriptRule('about the concept "beta"', "(beta, Part-of, gamma)(gamma, Conjunction, delta)"),
        ]
    return rules


def _counters():
    from graphusion.pipeline import _new_counters

    return _new_counters()


def test_extract_skips_seed_without_context():
    backend = ScriptedBackend([])
    counters = _counters()
    out = extract_candidates(
        canonicalize_concept("zeta"), _mini_index(), backend, PipelineConfig(), counters
    )
    assert out == []
    assert counters["extraction_skipped_no_context"] == 1
    assert backend.calls == []


def test_extract_counts_and_provenance():
    backend = ScriptedBackend(_mini_rules(include_fusion=False))
    counters = _counters()
    cfg = PipelineConfig(model_id="mini", extract_k=2)
    out = extract_candidates(canonicalize_concept("beta"), _mini_index(), backend, cfg, counters)
    assert [t.key for t in out] == [("beta", "Part-of", "gamma")]
    assert counters["extraction_calls"] == 1
    assert counters["malformed_extraction_groups"] == 1
    assert counters["self_loops_dropped"] == 1
    assert counters["empty_concepts_dropped"] == 1
    assert counters["candidate_triplets"] == 1
    prov = out[0].provenance[0]
    assert prov.stage == "extraction"
    assert prov.model_id == "mini"
    assert prov.query_concept.canonical == "beta"
    assert prov.chunk_ids  # the retrieved chunks are recorded


def test_extract_prompt_contains_context_and_query():
    backend = ScriptedBackend(_mini_rules(include_fusion=False))
    extract_candidates(
        canonicalize_concept("alpha"), _mini_index(), backend, PipelineConfig(), _counters()
    )
    prompt = backend.calls[0].rendered_text
    assert "alpha beta gamma" in prompt
    assert prompt.rstrip().endswith("### Concept:\nalpha")


def test_build_zskg_unions_duplicate_candidates():
    backend = ScriptedBackend(_mini_rules(include_fusion=False))
    counters = _counters()
    kg = build_zskg(_mini_seeds(), _mini_index(), backend, PipelineConfig(), counters)
    assert counters["candidate_triplets"] == 4
    assert counters["zskg_triplets"] == len(kg) == 3
    dup = kg.triplets_between("alpha", "beta")[0]
    assert len(dup.provenance) == 2


def test_build_zskg_parallelism_is_invisible(tmp_path):
    outputs = []
    for parallelism in (1, 3):
        backend = ScriptedBackend(_mini_rules(include_fusion=False))
        counters = _counters()
        cfg = PipelineConfig(parallelism=parallelism)
        kg = build_zskg(_mini_seeds(), _mini_index(), backend, cfg, counters)
        path = tmp_path / f"zskg-{parallelism}.jsonl"
        save_kg(kg, path)
        outputs.append((path.read_bytes(), counters))
    assert outputs[0][0] == outputs[1][0]
    assert outputs[0][1] == outputs[1][1]


def test_build_zskg_failure_over_threshold():
    backend = ScriptedBackend([ScriptRule("### Concept:\nalpha", _ALPHA_EXTRACTION)])
    with pytest.raises(RuntimeError, match="extraction failed"):
        build_zskg(
            _mini_seeds(), _mini_index(), backend, PipelineConfig(failure_threshold=0.1), _counters()
        )


def test_build_zskg_failure_under_threshold():
    backend = ScriptedBackend([ScriptRule("### Concept:\nalpha", _ALPHA_EXTRACTION)])
    counters = _counters()
    kg = build_zskg(
        _mini_seeds(), _mini_index(), backend, PipelineConfig(failure_threshold=0.5), counters
    )
    assert counters["extraction_failures"] == 1
    assert ("alpha", "Used-for", "beta") in kg


def test_build_zskg_requires_seeds():
    with pytest.raises(ValueError):
        build_zskg([], _mini_index(), ScriptedBackend([]), PipelineConfig(), _counters())


def _mini_zskg(backend=None):
    backend = backend or ScriptedBackend(_mini_rules(include_fusion=False))
    return build_zskg(_mini_seeds(), _mini_index(), backend, PipelineConfig(), _counters())


def test_fuse_concept_skips_when_both_subgraphs_empty():
    backend = ScriptedBackend([])
    counters = _counters()
    trips, presented = fuse_concept(
        canonicalize_concept("zeta"),
        _mini_zskg(),
        KnowledgeGraph(),
        _mini_index(),
        backend,
        PipelineConfig(),
        counters,
    )
    assert trips == [] and presented == set()
    assert counters["fusion_skipped_empty"] == 1
    assert backend.calls == []


def test_fuse_concept_prompt_and_presented_pairs():
    zskg = _mini_zskg()
    expert = KnowledgeGraph([make_triplet("beta", "Hyponym-Of", "letters")])
    backend = ScriptedBackend(_mini_rules())
    counters = _counters()
    trips, presented = fuse_concept(
        canonicalize_concept("beta"), zskg, expert, _mini_index(), backend, PipelineConfig(), counters
    )
    prompt = backend.calls[0].rendered_text
    assert 'about the concept "beta"' in prompt
    assert "Graph 1: (alpha, Used-for, beta)(beta, Part-of, gamma)" in prompt
    assert "Graph 2: (beta, Hyponym-Of, letters)" in prompt
    # presented covers only what the model saw in Graph 1
    assert presented == {("alpha", "beta"), ("beta", "gamma")}
    assert counters["fused_triplets"] == len(trips) == 2
    assert all(p.stage == "fusion" for t in trips for p in t.provenance)


def test_fuse_concept_expert_only_has_background_none():
    zskg = KnowledgeGraph()
    expert = KnowledgeGraph([make_triplet("zeta", "Part-of", "alphabet")])
    backend = ScriptedBackend(
        [ScriptRule('about the concept "zeta"', "(zeta, Part-of, alphabet)")]
    )
    counters = _counters()
    trips, presented = fuse_concept(
        canonicalize_concept("zeta"), zskg, expert, _mini_index(), backend, PipelineConfig(), counters
    )
    assert "### Background:\nNone" in backend.calls[0].rendered_text
    assert presented == set()
    assert [t.key for t in trips] == [("zeta", "Part-of", "alphabet")]


def test_fuse_all_failure_over_threshold():
    zskg = _mini_zskg()
    backend = ScriptedBackend([ScriptRule('about the concept "alpha"', "(alpha, Used-for, beta)")])
    with pytest.raises(RuntimeError, match="fusion failed"):
        fuse_all(
            _mini_seeds(),
            zskg,
            KnowledgeGraph(),
            _mini_index(),
            backend,
            PipelineConfig(failure_threshold=0.1),
            _counters(),
        )


def test_fuse_all_failure_under_threshold():
    zskg = _mini_zskg()
    backend = ScriptedBackend([ScriptRule('about the concept "alpha"', "(alpha, Used-for, beta)")])
    counters = _counters()
    fused, presented = fuse_all(
        _mini_seeds(),
        zskg,
        KnowledgeGraph(),
        _mini_index(),
        backend,
        PipelineConfig(failure_threshold=0.5),
        counters,
    )
    assert counters["fusion_failures"] == 1
    assert ("alpha", "beta") in presented
    # the failed seed contributes neither triplets nor presented pairs
    assert ("beta", "gamma") not in presented


def _t(head, rel, tail, n_prov=1, stage="fusion"):
    provs = [Provenance(stage=stage, model_id="m") for _ in range(n_prov)]
    return make_triplet(head, rel, tail, provs)


def test_normalize_merges_duplicate_keys():
    kg, conflicts = normalize_fused([_t("a", "Used-for", "b"), _t("a", "Used-for", "b")])
    assert conflicts == 0
    assert len(kg) == 1
    assert len(kg.triplets()[0].provenance) == 2


def test_normalize_provenance_count_beats_priority():
    kg, conflicts = normalize_fused(
        [_t("a", "Compare", "b", n_prov=2), _t("a", "Is-a-Prerequisite-of", "b")]
    )
    assert conflicts == 1
    assert kg.triplets()[0].relation is RelationType.COMPARE


def test_normalize_priority_breaks_even_counts():
    kg, conflicts = normalize_fused(
        [_t("a", "Evaluate-for", "b"), _t("a", "Hyponym-Of", "b")]
    )
    assert conflicts == 1
    assert kg.triplets()[0].relation is RelationType.HYPONYM_OF


def test_normalize_direction_tie_break():
    kg, _ = normalize_fused([_t("b", "Used-for", "a"), _t("a", "Used-for", "b")])
    assert kg.triplets()[0].key == ("a", "Used-for", "b")


def test_normalize_custom_priority():
    triplets = [_t("a", "Evaluate-for", "b"), _t("a", "Hyponym-Of", "b")]
    priority = [
        RelationType.EVALUATE_FOR,
        RelationType.HYPONYM_OF,
        RelationType.PREREQUISITE,
        RelationType.USED_FOR,
        RelationType.PART_OF,
        RelationType.COMPARE,
        RelationType.CONJUNCTION,
    ]
    kg, _ = normalize_fused(triplets, priority=priority)
    assert kg.triplets()[0].relation is RelationType.EVALUATE_FOR


def test_normalize_incomplete_priority_rejected():
    with pytest.raises(ValueError, match="Conjunction"):
        normalize_fused([_t("a", "Used-for", "b")], priority=[RelationType.USED_FOR])


def test_normalize_leaves_no_conflicts():
    triplets = [
        _t("a", "Used-for", "b", n_prov=2),
        _t("b", "Part-of", "a"),
        _t("b", "Compare", "c"),
        _t("b", "Conjunction", "c"),
        _t("d", "Evaluate-for", "a"),
    ]
    kg, conflicts = normalize_fused(triplets)
    assert find_conflicts(kg) == []
    assert conflicts == 2


def test_normalize_symmetric_duplicates_merge_without_conflict():
    kg, conflicts = normalize_fused([_t("b", "Compare", "c"), _t("c", "Compare", "b")])
    assert conflicts == 0
    assert len(kg) == 1
    assert len(kg.triplets()[0].provenance) == 2


def test_run_graphusion_mini_end_to_end(tmp_path):
    backend = ScriptedBackend(_mini_rules())
    out_dir = tmp_path / "run"
    kg, report = run_graphusion(
        corpus=_mini_corpus(),
        backend=backend,
        embedder=None,
        cfg=PipelineConfig(model_id="mini", max_tokens=16, overlap=4),
        output_dir=out_dir,
        seeds=_mini_seeds(),
    )
    assert {t.key for t in kg.triplets()} == {
        ("alpha", "Used-for", "beta"),
        ("beta", "Part-of", "gamma"),
        ("delta", "Conjunction", "gamma"),
        ("x ray", "Compare", "y axis"),
    }
    expected = {
        "seeds_total": 3,
        "extraction_calls": 2,
        "extraction_skipped_no_context": 1,
        "extraction_failures": 0,
        "malformed_extraction_groups": 1,
        "candidate_triplets": 4,
        "self_loops_dropped": 1,
        "empty_concepts_dropped": 1,
        "zskg_triplets": 3,
        "fusion_calls": 2,
        "fusion_skipped_empty": 1,
        "fusion_failures": 0,
        "malformed_fusion_groups": 0,
        "fused_triplets": 3,
        "carryover_triplets": 1,
        "conflicts_resolved": 0,
        "final_triplets": 4,
        "final_concepts": 6,
    }
    assert report.counters == expected
    for name in ("seeds.txt", "zskg.jsonl", "kg.jsonl", "report.json"):
        assert (out_dir / name).exists()
    assert load_kg(out_dir / "kg.jsonl") == kg


def test_run_graphusion_carryover_keeps_extraction_provenance(tmp_path):
    backend = ScriptedBackend(_mini_rules())
    kg, report = run_graphusion(
        corpus=_mini_corpus(),
        backend=backend,
        embedder=None,
        cfg=PipelineConfig(max_tokens=16, overlap=4),
        output_dir=tmp_path / "run",
        seeds=_mini_seeds(),
    )
    carried = kg.triplets_between("x ray", "y axis")[0]
    assert {p.stage for p in carried.provenance} == {"extraction"}
    assert report.counters["carryover_triplets"] == 1


def test_fusion_can_eliminate_presented_pairs(tmp_path):
    # the model saw (alpha, beta) during fusion and dropped it; the candidate
    # must not sneak back in through carryover
    rules = _mini_rules(include_fusion=False) + [
        ScriptRule('about the concept "alpha"', "None"),
        ScriptRule('about the concept "beta"', "(beta, Part-of, gamma)"),
    ]
    kg, report = run_graphusion(
        corpus=_mini_corpus(),
        backend=ScriptedBackend(rules),
        embedder=None,
        cfg=PipelineConfig(max_tokens=16, overlap=4),
        output_dir=tmp_path / "run",
        seeds=_mini_seeds(),
    )
    assert kg.triplets_between("alpha", "beta") == []
    assert ("beta", "Part-of", "gamma") in kg


def test_report_config_is_parallelism_free(tmp_path):
    backend = ScriptedBackend(_mini_rules())
    _, report = run_graphusion(
        corpus=_mini_corpus(),
        backend=backend,
        embedder=None,
        cfg=PipelineConfig(max_tokens=16, overlap=4, parallelism=4),
        output_dir=tmp_path / "run",
        seeds=_mini_seeds(),
    )
    assert "parallelism" not in report.config
    saved = json.loads((tmp_path / "run" / "report.json").read_text())
    assert saved == report.to_dict()
