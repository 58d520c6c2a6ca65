"""Graph-assisted question answering over six task families.

Tasks: 1 yes/no prerequisite judgment, 2 ordered learning path, 3 concept
listing, 4 relation naming, 5 concept recommendation from known concepts,
6 free-form project proposal. Answering is two model calls: a planning call
that emits graph query commands, and an answering call that sees the
executed evidence. Scores are reported on a 0 to 100 scale.
"""

from __future__ import annotations

import json
import re
import shutil
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

from .embed import Embedder
from .kgraph import (
    KnowledgeGraph,
    RelationType,
    canonicalize_concept,
    neighbors,
    shortest_path,
    subgraph,
)
from .llm import LLMBackend, LLMRequest, ResponseParseError, parse_yes_no, render_prompt
from .metrics import MetricReport, binary_accuracy_f1, hit_rate, similarity_score

TASKS = (1, 2, 3, 4, 5, 6)

_LIST_TASKS = {2, 3, 5}

_PREREQ = {RelationType.PREREQUISITE}

_FORMAT_INSTRUCTIONS = {
    1: "Answer YES or NO only.",
    2: "Answer with an ordered, comma-separated list of concepts only.",
    3: "Answer with a comma-separated list of concepts only.",
    4: "Answer with a single relation name only.",
    5: "Answer with a comma-separated list of concepts only.",
    6: "Write the answer as free text.",
}


@dataclass
class TutorQAItem:
    task: int
    item_id: str
    question: str
    answer: object = None


def load_tutorqa_items(path: str | Path) -> list[TutorQAItem]:
    """JSONL items with task, id, question and a task-shaped answer field."""
    items: list[TutorQAItem] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}: line {lineno}: bad JSON: {exc}") from None
            try:
                item = TutorQAItem(
                    task=int(record["task"]),
                    item_id=str(record["id"]),
                    question=str(record["question"]),
                    answer=record.get("answer"),
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}: line {lineno}: bad item: {exc}") from None
            try:
                _validate_answer(item)
            except ValueError as exc:
                raise ValueError(f"{path}: line {lineno}: {exc}") from None
            items.append(item)
    if not items:
        raise ValueError(f"no items in {path}")
    return items


def _validate_answer(item: TutorQAItem) -> None:
    if item.task not in TASKS:
        raise ValueError(f"unknown task {item.task}")
    answer = item.answer
    if item.task == 1:
        if not isinstance(answer, bool):
            raise ValueError(f"task 1 answer must be a boolean, got {answer!r}")
    elif item.task in _LIST_TASKS:
        if not isinstance(answer, list) or not answer or not all(isinstance(x, str) for x in answer):
            raise ValueError(f"task {item.task} answer must be a non-empty list of strings")
    elif item.task == 4:
        if not isinstance(answer, str):
            raise ValueError(f"task 4 answer must be a relation string, got {answer!r}")
        RelationType.parse(answer)
    elif item.task == 6:
        if answer is not None:
            raise ValueError("task 6 items are rubric-scored and carry no gold answer")


@dataclass(frozen=True)
class GraphCommand:
    kind: str
    args: tuple[str, ...]

    def render(self) -> str:
        return f"{self.kind}({'; '.join(self.args)})"


_COMMAND_ARITY = {"NEIGHBORS": 4, "PATH": 2, "RELATION": 2, "SUBGRAPH": 1}

_COMMAND_RE = re.compile(r"^\s*(NEIGHBORS|PATH|RELATION|SUBGRAPH)\s*\((.*)\)\s*$")


def parse_commands(text: str) -> tuple[list[GraphCommand], int]:
    """One command per line; malformed lines are skipped and counted."""
    commands: list[GraphCommand] = []
    skipped = 0
    for line in text.splitlines():
        if not line.strip():
            continue
        m = _COMMAND_RE.match(line)
        if m is None:
            skipped += 1
            continue
        kind = m.group(1)
        args = tuple(a.strip() for a in m.group(2).split(";"))
        if len(args) != _COMMAND_ARITY[kind] or not all(args):
            skipped += 1
            continue
        if kind == "NEIGHBORS" and not _valid_neighbors_args(args):
            skipped += 1
            continue
        commands.append(GraphCommand(kind=kind, args=args))
    return commands, skipped


def _valid_neighbors_args(args: tuple[str, ...]) -> bool:
    _, direction, relation, depth = args
    if direction not in ("in", "out", "both"):
        return False
    if relation.lower() != "any":
        try:
            RelationType.parse(relation)
        except ValueError:
            return False
    return depth.isdigit() and int(depth) >= 1


def plan_commands(question: str, backend: LLMBackend) -> tuple[list[GraphCommand], int]:
    prompt = render_prompt("qa_plan", {"question": question})
    response = backend.complete(LLMRequest(rendered_text=prompt, template_id="qa_plan"))
    return parse_commands(response.text)


def _triplet_groups(triplets) -> str:
    return "".join(
        f"({t.head.display}, {t.relation.canonical}, {t.tail.display})" for t in triplets
    )


def execute_commands(commands: Sequence[GraphCommand], kg: KnowledgeGraph) -> str:
    """Run commands against the graph; one evidence line per command."""
    lines: list[str] = []
    for cmd in commands:
        result = _execute_one(cmd, kg)
        lines.append(f"{cmd.render()}: {result or 'no result'}")
    if not lines:
        return "no result"
    return "\n".join(lines)


def _execute_one(cmd: GraphCommand, kg: KnowledgeGraph) -> str:
    known = set(kg.concepts())
    if cmd.kind == "NEIGHBORS":
        concept, direction, relation, depth = cmd.args
        canonical = canonicalize_concept(concept).canonical
        if canonical not in known:
            return ""
        rel_filter = None if relation.lower() == "any" else {RelationType.parse(relation)}
        found = neighbors(kg, canonical, direction=direction, relation_filter=rel_filter, depth=int(depth))
        return ", ".join(sorted(kg.display_for(c) for c in found))
    if cmd.kind == "PATH":
        a = canonicalize_concept(cmd.args[0]).canonical
        b = canonicalize_concept(cmd.args[1]).canonical
        if a == b or a not in known or b not in known:
            return ""
        path = shortest_path(kg, a, b, forward_only=_PREREQ)
        if path is None:
            return ""
        return " -> ".join(kg.display_for(c.canonical) for c in path)
    if cmd.kind == "RELATION":
        a = canonicalize_concept(cmd.args[0]).canonical
        b = canonicalize_concept(cmd.args[1]).canonical
        return _triplet_groups(kg.triplets_between(a, b))
    if cmd.kind == "SUBGRAPH":
        canonical = canonicalize_concept(cmd.args[0]).canonical
        if canonical not in known:
            return ""
        return _triplet_groups(subgraph(kg, canonical).triplets())
    raise ValueError(f"unknown command kind: {cmd.kind!r}")


def parse_concept_list(text: str) -> list[str]:
    """Comma- or newline-separated concepts, canonicalized and deduplicated."""
    out: list[str] = []
    seen: set[str] = set()
    for piece in re.split(r"[,\n]", text):
        piece = piece.strip()
        if not piece:
            continue
        try:
            concept = canonicalize_concept(piece)
        except ValueError:
            continue
        if concept.canonical not in seen:
            seen.add(concept.canonical)
            out.append(concept.display)
    return out


def generate_answer(
    item: TutorQAItem,
    kg: KnowledgeGraph,
    backend: LLMBackend,
    counters: Optional[dict[str, int]] = None,
):
    """Plan graph queries, execute them, answer with the evidence in view.

    Returns a bool for task 1, a concept list for tasks 2, 3 and 5, a
    RelationType for task 4 (raising ResponseParseError when the response
    does not name a relation), and raw text for task 6.
    """
    if counters is None:
        counters = {}

    def _bump(key: str, amount: int = 1) -> None:
        counters[key] = counters.get(key, 0) + amount

    commands, skipped = plan_commands(item.question, backend)
    _bump("commands_planned", len(commands))
    _bump("commands_skipped", skipped)
    evidence = execute_commands(commands, kg)
    prompt = render_prompt(
        "qa_answer",
        {
            "evidence": evidence,
            "question": item.question,
            "format_instruction": _FORMAT_INSTRUCTIONS[item.task],
        },
    )
    response = backend.complete(LLMRequest(rendered_text=prompt, template_id="qa_answer"))
    text = response.text

    if item.task == 1:
        try:
            return parse_yes_no(text, mode="plain")
        except ResponseParseError:
            _bump("unparseable_responses")
            return False
    if item.task in _LIST_TASKS:
        concepts = parse_concept_list(text)
        if not concepts:
            _bump("empty_predictions")
        return concepts
    if item.task == 4:
        try:
            return RelationType.parse(text.strip())
        except ValueError:
            raise ResponseParseError(f"response does not name a relation: {text[:80]!r}") from None
    return text


def _require_single_task(items: Sequence[TutorQAItem]) -> int:
    tasks = {item.task for item in items}
    if len(tasks) != 1:
        raise ValueError(f"items span multiple tasks: {sorted(tasks)}")
    return tasks.pop()


def run_task(
    items: Sequence[TutorQAItem],
    kg: KnowledgeGraph,
    backend: LLMBackend,
    embedder: Optional[Embedder] = None,
    out_dir: Optional[str | Path] = None,
) -> MetricReport:
    """Score one task's items; all scores are on a 0 to 100 scale.

    Task 1 and 4 report accuracy; tasks 2 and 3 report mean embedding
    similarity between predicted and gold concept lists (an empty prediction
    scores zero); task 5 reports mean hit rate. Task 6 has no automatic
    metric: answers and the scoring rubric are written to out_dir for human
    rating.
    """
    if not items:
        raise ValueError("no items to run")
    task = _require_single_task(items)
    counters: dict[str, int] = {}

    if task in (2, 3) and embedder is None:
        raise ValueError(f"task {task} needs an embedder for similarity scoring")
    if task == 6 and out_dir is None:
        raise ValueError("task 6 needs out_dir for answers and rubric")

    predictions = [generate_answer(item, kg, backend, counters) for item in items]

    counts = {"items": len(items)}
    for key in sorted(counters):
        counts[key] = counters[key]

    if task == 1:
        labels = [bool(item.answer) for item in items]
        raw = binary_accuracy_f1(labels, predictions)
        metrics = {"accuracy": 100.0 * raw["accuracy"], "f1": 100.0 * raw["f1"]}
    elif task in (2, 3):
        scores = []
        for item, pred in zip(items, predictions):
            if not pred:
                scores.append(0.0)
            else:
                scores.append(similarity_score(pred, list(item.answer), embedder))
        metrics = {"similarity": 100.0 * sum(scores) / len(scores)}
    elif task == 4:
        gold = [RelationType.parse(item.answer) for item in items]
        correct = sum(1 for g, p in zip(gold, predictions) if g is p)
        metrics = {"accuracy": 100.0 * correct / len(items)}
    elif task == 5:
        rates = [hit_rate(pred, list(item.answer)) for item, pred in zip(items, predictions)]
        metrics = {"hit_rate": 100.0 * sum(rates) / len(rates)}
    else:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "answers.jsonl", "w", encoding="utf-8") as fh:
            for item, pred in zip(items, predictions):
                fh.write(json.dumps({"id": item.item_id, "answer": pred}, ensure_ascii=False) + "\n")
        _copy_rubric(out / "rubric.md")
        counts["answers_written"] = len(items)
        metrics = {}

    return MetricReport(metrics=metrics, counts=counts)


def _copy_rubric(dest: Path) -> None:
    rubric = resources.files("graphusion").joinpath("data/task6_rubric.md")
    with resources.as_file(rubric) as src:
        shutil.copyfile(src, dest)
