"""Concept knowledge graph: the triplet data model plus graph-side operations.

Concepts are identified by a canonical surface form, relations come from a
closed 7-type taxonomy, and the graph itself supports the queries the rest of
the pipeline needs: per-concept subgraphs, conflict detection on concept
pairs, neighborhood expansion, shortest paths and JSONL persistence.
"""

from __future__ import annotations

import csv
import json
import re
from collections import Counter, deque
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional, Sequence


class RelationType(Enum):
    """The closed relation taxonomy. Compare and Conjunction are symmetric."""

    COMPARE = "Compare"
    PART_OF = "Part-of"
    CONJUNCTION = "Conjunction"
    EVALUATE_FOR = "Evaluate-for"
    PREREQUISITE = "Is-a-Prerequisite-of"
    USED_FOR = "Used-for"
    HYPONYM_OF = "Hyponym-Of"

    @property
    def canonical(self) -> str:
        return self.value

    @property
    def directional(self) -> bool:
        return self not in (RelationType.COMPARE, RelationType.CONJUNCTION)

    @classmethod
    def parse(cls, text: str) -> "RelationType":
        """Resolve a relation spelling through the alias table.

        Matching ignores case and treats hyphens, underscores and spaces as
        equivalent, so e.g. ``Prerequisite_of``, ``prerequisite of`` and
        ``Is-a-Prerequisite-of`` all resolve to PREREQUISITE.
        """
        key = re.sub(r"[\s_\-]+", "", text.strip().lower())
        try:
            return _RELATION_ALIASES[key]
        except KeyError:
            raise ValueError(f"unknown relation type: {text!r}") from None


_RELATION_ALIASES: dict[str, RelationType] = {}
for _rel, _aliases in [
    (RelationType.COMPARE, ["compare"]),
    (RelationType.PART_OF, ["part-of", "part_of", "part of"]),
    (RelationType.CONJUNCTION, ["conjunction"]),
    (RelationType.EVALUATE_FOR, ["evaluate-for", "evaluate_for", "evaluate for"]),
    (
        RelationType.PREREQUISITE,
        [
            "is-a-prerequisite-of",
            "prerequisite_of",
            "prerequisite of",
            "prerequisite-of",
            "is a prerequisite of",
        ],
    ),
    (RelationType.USED_FOR, ["used-for", "used_for", "used for"]),
    (RelationType.HYPONYM_OF, ["hyponym-of", "hyponym_of", "hyponym of"]),
]:
    for _a in _aliases:
        _RELATION_ALIASES[re.sub(r"[\s_\-]+", "", _a.lower())] = _rel


_SURROUNDING_QUOTES = "\"'`“”‘’"
_TRAILING_PUNCT = ".,;:"


def canonicalize_concept(surface: str) -> "Concept":
    """Normalize a raw concept mention into a Concept.

    Canonical form: trimmed, surrounding quotes stripped, trailing .,;:
    stripped, lowercased, internal whitespace collapsed to single spaces.
    The display form keeps the original trimmed surface.
    """
    display = surface.strip()
    text = display
    while True:
        before = text
        text = text.strip()
        if len(text) >= 2 and text[0] in _SURROUNDING_QUOTES and text[-1] in _SURROUNDING_QUOTES:
            text = text[1:-1]
        text = text.rstrip(_TRAILING_PUNCT)
        if text == before:
            break
    canonical = re.sub(r"\s+", " ", text.lower()).strip()
    if not canonical:
        raise ValueError(f"concept empty after normalization: {surface!r}")
    return Concept(canonical=canonical, display=display)


@dataclass(frozen=True)
class Concept:
    canonical: str
    display: str

    def __post_init__(self):
        if not self.canonical:
            raise ValueError("canonical form must be non-empty")


@dataclass
class Provenance:
    """Where a triplet came from: pipeline stage, model, query and source chunks."""

    stage: str
    model_id: str
    query_concept: Optional[Concept] = None
    chunk_ids: list[str] = field(default_factory=list)

    STAGES = ("extraction", "fusion", "expert")

    def __post_init__(self):
        if self.stage not in self.STAGES:
            raise ValueError(f"unknown provenance stage: {self.stage!r}")

    def to_dict(self) -> dict:
        return {
            "stage": self.stage,
            "model_id": self.model_id,
            "query_concept": self.query_concept.display if self.query_concept else None,
            "chunk_ids": list(self.chunk_ids),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Provenance":
        query = d.get("query_concept")
        return cls(
            stage=d["stage"],
            model_id=d.get("model_id", ""),
            query_concept=canonicalize_concept(query) if query else None,
            chunk_ids=list(d.get("chunk_ids", [])),
        )


@dataclass
class Triplet:
    head: Concept
    relation: RelationType
    tail: Concept
    provenance: list[Provenance] = field(default_factory=list)

    def __post_init__(self):
        if self.head.canonical == self.tail.canonical:
            raise ValueError(f"self-loop triplet on {self.head.canonical!r}")
        # symmetric relations are stored with endpoints in lexicographic order
        if not self.relation.directional and self.head.canonical > self.tail.canonical:
            self.head, self.tail = self.tail, self.head

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.head.canonical, self.relation.canonical, self.tail.canonical)

    @property
    def pair(self) -> tuple[str, str]:
        """Unordered endpoint pair, in lexicographic canonical order."""
        a, b = self.head.canonical, self.tail.canonical
        return (a, b) if a <= b else (b, a)


def make_triplet(
    head: str,
    relation: RelationType | str,
    tail: str,
    provenance: Optional[Sequence[Provenance]] = None,
) -> Triplet:
    """Build a Triplet from raw surface strings, canonicalizing as it goes."""
    rel = relation if isinstance(relation, RelationType) else RelationType.parse(relation)
    return Triplet(
        head=canonicalize_concept(head),
        relation=rel,
        tail=canonicalize_concept(tail),
        provenance=list(provenance or []),
    )


class KnowledgeGraph:
    """A set of triplets with a per-concept incidence index.

    At most one stored triplet per (head, relation, tail) key; re-inserting an
    existing key unions the provenance lists. Display forms are tracked per
    canonical concept and the most frequently observed one wins.
    """

    def __init__(self, triplets: Optional[Iterable[Triplet]] = None):
        self._triplets: dict[tuple[str, str, str], Triplet] = {}
        self._incident: dict[str, set[tuple[str, str, str]]] = {}
        self._displays: dict[str, Counter] = {}
        for t in triplets or []:
            self.insert(t)

    def __len__(self) -> int:
        return len(self._triplets)

    def __contains__(self, key: tuple[str, str, str]) -> bool:
        return key in self._triplets

    def __eq__(self, other) -> bool:
        if not isinstance(other, KnowledgeGraph):
            return NotImplemented
        if self._triplets != other._triplets:
            return False
        # display counters need not match entry for entry, the chosen forms must
        return {c: self.display_for(c) for c in self._displays} == {
            c: other.display_for(c) for c in other._displays
        }

    def __iter__(self):
        return iter(self._triplets.values())

    def triplets(self) -> list[Triplet]:
        """All triplets, sorted by (head, relation, tail) canonical key."""
        return [self._triplets[k] for k in sorted(self._triplets)]

    def concepts(self) -> list[str]:
        return sorted(self._incident)

    def insert(self, triplet: Triplet) -> None:
        if triplet.head.canonical == triplet.tail.canonical:
            raise ValueError(f"self-loop triplet on {triplet.head.canonical!r}")
        self._observe(triplet.head)
        self._observe(triplet.tail)
        key = triplet.key
        existing = self._triplets.get(key)
        if existing is not None:
            existing.provenance.extend(triplet.provenance)
            return
        self._triplets[key] = triplet
        self._incident.setdefault(triplet.head.canonical, set()).add(key)
        self._incident.setdefault(triplet.tail.canonical, set()).add(key)

    def _observe(self, concept: Concept) -> None:
        self._displays.setdefault(concept.canonical, Counter())[concept.display] += 1

    def display_for(self, canonical: str) -> str:
        """Most frequent observed display form; ties break lexicographically."""
        counter = self._displays.get(canonical)
        if not counter:
            return canonical
        return min(counter, key=lambda d: (-counter[d], d))

    def concept(self, canonical: str) -> Concept:
        return Concept(canonical=canonical, display=self.display_for(canonical))

    def incident(self, canonical: str) -> list[Triplet]:
        return [self._triplets[k] for k in sorted(self._incident.get(canonical, ()))]

    def triplets_between(self, a: str, b: str) -> list[Triplet]:
        """Stored triplets linking two canonical concepts, either direction."""
        keys = self._incident.get(a, set()) & self._incident.get(b, set())
        return [self._triplets[k] for k in sorted(keys)]

    def relation_counts(self) -> dict[str, int]:
        counts = Counter(t.relation.canonical for t in self._triplets.values())
        return {r.canonical: counts.get(r.canonical, 0) for r in RelationType}


def insert_triplet(kg: KnowledgeGraph, triplet: Triplet) -> KnowledgeGraph:
    kg.insert(triplet)
    return kg


def subgraph(kg: KnowledgeGraph, q: Concept | str) -> KnowledgeGraph:
    """Triplets whose head or tail is q. Absent q gives an empty graph."""
    canonical = q if isinstance(q, str) else q.canonical
    out = KnowledgeGraph()
    for t in kg.incident(canonical):
        out.insert(
            Triplet(head=t.head, relation=t.relation, tail=t.tail, provenance=list(t.provenance))
        )
    return out


def find_conflicts(kg: KnowledgeGraph) -> list[tuple[tuple[str, str], list[Triplet]]]:
    """Unordered concept pairs linked by more than one stored triplet."""
    by_pair: dict[tuple[str, str], list[Triplet]] = {}
    for t in kg.triplets():
        by_pair.setdefault(t.pair, []).append(t)
    return [(pair, sorted(ts, key=lambda t: t.key)) for pair, ts in sorted(by_pair.items()) if len(ts) > 1]


def neighbors(
    kg: KnowledgeGraph,
    concept: Concept | str,
    direction: str = "both",
    relation_filter: Optional[set[RelationType]] = None,
    depth: int = 1,
) -> set[str]:
    """Concepts reachable within `depth` hops, excluding the start concept.

    Directional edges follow head->tail for ``out`` and tail->head for ``in``;
    symmetric relations are traversed both ways regardless of direction.
    """
    if depth < 1:
        raise ValueError("depth must be >= 1")
    if direction not in ("in", "out", "both"):
        raise ValueError(f"unknown direction: {direction!r}")
    start = concept if isinstance(concept, str) else concept.canonical
    seen = {start}
    frontier = {start}
    for _ in range(depth):
        nxt: set[str] = set()
        for node in frontier:
            for t in kg.incident(node):
                if relation_filter is not None and t.relation not in relation_filter:
                    continue
                for other in _step_targets(t, node, direction):
                    if other not in seen:
                        nxt.add(other)
        seen |= nxt
        frontier = nxt
        if not frontier:
            break
    seen.discard(start)
    return seen


def _step_targets(t: Triplet, node: str, direction: str) -> list[str]:
    out: list[str] = []
    if not t.relation.directional:
        other = t.tail.canonical if t.head.canonical == node else t.head.canonical
        out.append(other)
        return out
    if direction in ("out", "both") and t.head.canonical == node:
        out.append(t.tail.canonical)
    if direction in ("in", "both") and t.tail.canonical == node:
        out.append(t.head.canonical)
    return out


def shortest_path(
    kg: KnowledgeGraph,
    a: Concept | str,
    b: Concept | str,
    forward_only: Optional[set[RelationType]] = None,
) -> Optional[list[Concept]]:
    """BFS shortest path from a to b, or None when unreachable.

    Relations in `forward_only` are traversed head->tail only; everything
    else is traversed both ways. The default treats every directional
    relation as forward-only. Ties between equal-length paths are broken by
    visiting neighbors in lexicographic order.
    """
    start = a if isinstance(a, str) else a.canonical
    goal = b if isinstance(b, str) else b.canonical
    if start == goal:
        raise ValueError("path endpoints must differ")
    if forward_only is None:
        forward_only = {r for r in RelationType if r.directional}

    parent: dict[str, Optional[str]] = {start: None}
    queue = deque([start])
    while queue:
        node = queue.popleft()
        if node == goal:
            break
        succ: set[str] = set()
        for t in kg.incident(node):
            if t.relation in forward_only:
                if t.head.canonical == node:
                    succ.add(t.tail.canonical)
            else:
                succ.add(t.tail.canonical if t.head.canonical == node else t.head.canonical)
        for other in sorted(succ):
            if other not in parent:
                parent[other] = node
                queue.append(other)
    if goal not in parent:
        return None
    path: list[str] = []
    cur: Optional[str] = goal
    while cur is not None:
        path.append(cur)
        cur = parent[cur]
    path.reverse()
    return [kg.concept(c) for c in path]


def save_kg(kg: KnowledgeGraph, path: str | Path) -> None:
    """Write the graph as JSONL, one triplet per line, sorted for diff-stability."""
    path = Path(path)
    lines = []
    for t in kg.triplets():
        record = {
            "head": kg.display_for(t.head.canonical),
            "relation": t.relation.canonical,
            "tail": kg.display_for(t.tail.canonical),
            "provenance": [p.to_dict() for p in t.provenance],
        }
        lines.append(json.dumps(record, ensure_ascii=False))
    path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def load_kg(path: str | Path) -> KnowledgeGraph:
    """Load a JSONL triplet file; malformed lines are reported by number."""
    kg = KnowledgeGraph()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}: line {lineno}: invalid JSON: {exc}") from None
            try:
                provenance = [Provenance.from_dict(p) for p in record.get("provenance", [])]
                kg.insert(make_triplet(record["head"], record["relation"], record["tail"], provenance))
            except (KeyError, ValueError) as exc:
                raise ValueError(f"{path}: line {lineno}: {exc}") from None
    return kg


def load_expert_kg(path: str | Path) -> KnowledgeGraph:
    """Load an expert-annotated graph from JSONL or headerless CSV head,relation,tail."""
    path = Path(path)
    if path.suffix.lower() != ".csv":
        return load_kg(path)
    kg = KnowledgeGraph()
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != 3:
                raise ValueError(f"{path}: line {lineno}: expected 3 fields, got {len(row)}")
            try:
                kg.insert(
                    make_triplet(
                        row[0],
                        row[1],
                        row[2],
                        [Provenance(stage="expert", model_id="expert")],
                    )
                )
            except ValueError as exc:
                raise ValueError(f"{path}: line {lineno}: {exc}") from None
    return kg


def persist_roundtrip(kg: KnowledgeGraph, path: str | Path) -> KnowledgeGraph:
    save_kg(kg, path)
    return load_kg(path)
