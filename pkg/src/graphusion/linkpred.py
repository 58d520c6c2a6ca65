"""Concept prerequisite prediction over labeled concept pairs.

Each item asks whether learning concept A helps in understanding concept B.
The question can be asked bare, or augmented with one of three context
variants: retrieved corpus passages (doc), prerequisite neighborhoods pulled
from a knowledge graph (con), or encyclopedia summaries (wiki). Responses
are parsed as YES/NO; unparseable responses count as NO so a noisy model
degrades measurably instead of crashing the harness.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .corpus import RetrievalIndex, retrieve
from .kgraph import KnowledgeGraph, RelationType, canonicalize_concept, neighbors
from .llm import LLMBackend, LLMRequest, ResponseParseError, parse_yes_no, render_prompt
from .metrics import MetricReport, binary_accuracy_f1

VARIANTS = ("none", "doc", "con", "wiki")

_TRUE_LABELS = {"1", "yes", "true"}
_FALSE_LABELS = {"0", "no", "false"}

_PREREQ = {RelationType.PREREQUISITE}


@dataclass(frozen=True)
class LinkPredItem:
    concept_a: str
    concept_b: str
    label: bool


def load_lp_items(path: str | Path) -> list[LinkPredItem]:
    """Tab-separated pairs: concept_a, concept_b, label (1/0, yes/no, true/false)."""
    items: list[LinkPredItem] = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 3:
            raise ValueError(f"{path}: line {lineno}: expected 3 tab-separated fields, got {len(fields)}")
        a, b, raw_label = (f.strip() for f in fields)
        lowered = raw_label.lower()
        if lowered in _TRUE_LABELS:
            label = True
        elif lowered in _FALSE_LABELS:
            label = False
        else:
            raise ValueError(f"{path}: line {lineno}: bad label {raw_label!r}")
        if not a or not b:
            raise ValueError(f"{path}: line {lineno}: empty concept")
        items.append(LinkPredItem(concept_a=a, concept_b=b, label=label))
    if not items:
        raise ValueError(f"no items in {path}")
    return items


@dataclass
class LPResources:
    """Everything the context variants can draw on."""

    domain: str = "natural language processing"
    index: Optional[RetrievalIndex] = None
    kg: Optional[KnowledgeGraph] = None
    wiki: dict[str, str] = field(default_factory=dict)
    doc_k: int = 3


def load_wiki_summaries(path: str | Path) -> dict[str, str]:
    """JSONL with concept and summary fields, keyed by canonical concept."""
    out: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
                concept = canonicalize_concept(record["concept"])
                out[concept.canonical] = str(record["summary"])
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise ValueError(f"{path}: line {lineno}: bad wiki record: {exc}") from None
    return out


def _prereq_sentences(kg: KnowledgeGraph, surface: str) -> str:
    concept = canonicalize_concept(surface)
    in_graph = concept.canonical in set(kg.concepts())
    if in_graph:
        succ = sorted(
            kg.display_for(c)
            for c in neighbors(kg, concept.canonical, direction="out", relation_filter=_PREREQ, depth=1)
        )
        pred = sorted(
            kg.display_for(c)
            for c in neighbors(kg, concept.canonical, direction="in", relation_filter=_PREREQ, depth=1)
        )
    else:
        succ, pred = [], []
    succ_text = ", ".join(succ) if succ else "None"
    pred_text = ", ".join(pred) if pred else "None"
    return (
        f"We know that {surface} is a prerequisite of the following concepts: {succ_text}. "
        f"And the following concepts are prerequisites of {surface}: {pred_text}."
    )


def build_lp_context(variant: str, a: str, b: str, resources: LPResources) -> str:
    """The additional-information block for one pair, without any lead-in line."""
    if variant == "none":
        return ""
    if variant == "doc":
        if resources.index is None:
            raise ValueError("doc variant needs a retrieval index")
        hits = retrieve(resources.index, f"{a} {b}", resources.doc_k)
        if not hits:
            return "None"
        return "\n\n".join(chunk.text for chunk, _ in hits)
    if variant == "con":
        if resources.kg is None:
            raise ValueError("con variant needs a knowledge graph")
        return "\n".join([_prereq_sentences(resources.kg, a), _prereq_sentences(resources.kg, b)])
    if variant == "wiki":
        parts = []
        for surface in (a, b):
            canonical = canonicalize_concept(surface).canonical
            if canonical not in resources.wiki:
                raise ValueError(f"no wiki summary for concept {surface!r}")
            parts.append(f"{surface}: {resources.wiki[canonical]}")
        return "\n\n".join(parts)
    raise ValueError(f"unknown variant: {variant!r}")


def predict_link(
    a: str,
    b: str,
    backend: LLMBackend,
    variant: str = "none",
    resources: Optional[LPResources] = None,
    use_cot: bool = False,
    counters: Optional[dict[str, int]] = None,
) -> bool:
    """One YES/NO prerequisite decision. Unparseable responses come back False."""
    if resources is None:
        resources = LPResources()
    context = build_lp_context(variant, a, b, resources)
    if use_cot:
        template_id = "lp_cot"
        # the chain-of-thought template has no lead-in of its own
        if context:
            context = "And here are related contents to help:\n" + context
    else:
        template_id = "lp" if variant == "none" else f"lp_{variant}"
    prompt = render_prompt(
        template_id,
        {
            "domain": resources.domain,
            "concept_1": a,
            "concept_2": b,
            "Additional Information": context,
        },
    )
    response = backend.complete(LLMRequest(rendered_text=prompt, template_id=template_id))
    try:
        return parse_yes_no(response.text, mode="cot" if use_cot else "plain")
    except ResponseParseError:
        if counters is not None:
            counters["unparseable_responses"] = counters.get("unparseable_responses", 0) + 1
        return False


def evaluate_linkpred(
    items: Sequence[LinkPredItem],
    backend: LLMBackend,
    variant: str = "none",
    resources: Optional[LPResources] = None,
    use_cot: bool = False,
) -> MetricReport:
    """Accuracy and F1 over labeled pairs, on a 0 to 1 scale."""
    if not items:
        raise ValueError("no link prediction items")
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant: {variant!r}")
    counters = {"unparseable_responses": 0}
    labels = [item.label for item in items]
    preds = [
        predict_link(item.concept_a, item.concept_b, backend, variant, resources, use_cot, counters)
        for item in items
    ]
    metrics = binary_accuracy_f1(labels, preds)
    return MetricReport(
        metrics=metrics,
        counts={"items": len(items), "unparseable_responses": counters["unparseable_responses"]},
    )
