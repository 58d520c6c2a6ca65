"""Prompt templating, completion backends and output parsers.

Templates are plain text with ``{slot}`` placeholders; rendering is exact
substitution and fails loudly on unbound slots. Backends share a minimal
complete() contract, with a deterministic scripted backend for offline runs
and an HTTP backend for real services. The parsers implement the two output
grammars the pipeline relies on: YES/NO decisions and concatenated
``(head, relation, tail)`` triplet groups.
"""

from __future__ import annotations

import hashlib
import json
import re
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

from .kgraph import RelationType


class BackendError(RuntimeError):
    """A completion backend failed to produce a response."""


class ScriptedMissError(BackendError):
    """No scripted rule matched the rendered prompt."""


class ResponseParseError(ValueError):
    """A backend response did not follow the expected output grammar."""


RELATION_DEFINITION = """\
   a) Compare: Represents a relation between two or more entities where a comparison is being made. For example, "A is larger than B" or "X is more efficient than Y."

   b) Part-of: Denotes a relation where one entity is a constituent or component of another. For instance, "Wheel is a part of a Car."

   c) Conjunction: Indicates a logical or semantic relation where two or more entities are connected to form a group or composite idea. For example, "Salt and Pepper."

   d) Evaluate-for: Represents an evaluative relation where one entity is assessed in the context of another. For example, "A tool is evaluated for its effectiveness."

   e) Is-a-Prerequisite-of: This dual-purpose relation implies that one entity is either a characteristic of another or a required precursor for another. For instance, "The ability to code is a prerequisite of software development."

   f) Used-for: Denotes a functional relation where one entity is utilized in accomplishing or facilitating the other. For example, "A hammer is used for driving nails."

   g) Hyponym-Of: Establishes a hierarchical relation where one entity is a more specific version or subtype of another. For instance, "A Sedan is a hyponym of a Car."\
"""

_LP_BASE = """\
We have two {domain} related concepts: A: {concept_1} and B: {concept_2}.

Do you think learning {concept_1} will help in understanding {concept_2}?

Hints:
1. Answer YES or NO only.
2. This is a directional relation, which means if the answer is "YES", (B, A) is false, but (A, B) is true.
3. Your answer will be used to create a knowledge graph.
"""

LP_PROMPT = _LP_BASE + """
{Additional Information}
"""

_LP_WITH_CONTENTS = _LP_BASE + """
And here are related contents to help:
{Additional Information}
"""

LP_COT_PROMPT = """\
We have two {domain} related concepts: A: {concept_1} and B: {concept_2}.

Assess if learning {concept_1} is a prerequisite for understanding {concept_2}.

Employ the Chain of Thought to detail your reasoning before giving a final answer.

# Identify the Domain and Concepts: Clearly define A and B within their domain. Understand the specific content and scope of each concept.

# Analyze the Directional Relationship: Determine if knowledge of concept A is essential before one can fully grasp concept B. This involves considering if A provides foundational knowledge or skills required for understanding B.

# Evaluate Dependency: Assess whether B is dependent on A in such a way that without understanding A, one cannot understand B.

# Draw a Conclusion: Based on your analysis, decide if understanding A is a necessary prerequisite for understanding B.

# Provide a Clear Answer: After detailed reasoning, conclude with a distinct answer: <result>YES</result> if understanding A is a prerequisite for understanding B, or <result>NO</result> if it is not.

{Additional Information}
"""

EXTRACTION_PROMPT = """\
### Instruction:
You are a domain expert in natural language processing, and now you are building a knowledge graph in this domain.

Given a context (### Content), and a query concept (### Concept), do the following:

1. Extract the query concept and in-domain concepts from the context, which should be fine-grained: could be introduced by a lecture slide page, or a whole lecture, or possibly to have a Wikipedia page.

2. Determine the relations between the query concept and the extracted concepts, in a triplet format: (<head concept>, <relation>, <tail concept>). The relation should be functional, aiding learners in understanding the knowledge. The query concept can be the head concept or tail concept.

   We define 7 types of the relations:

{Relation Definition}

3. Please note some relations are strictly directional. For example, "A tool is evaluated for B" indicates (A, Evaluate-for, B), NOT (B, Evaluate-for, A). Among the seven relation types, only "a) Compare" and "c) Conjunction" are not direction-sensitive.

4. You can also extract triplets from the extracted concepts, and the query concept may not be necessary in the triplets.

5. Your answer should ONLY contain a list of triplets, each triplet is in this format: (concept, relation, concept). For example: "(concept, relation, concept)(concept, relation, concept)." No numbering and other explanations are needed.

6. If ### Content is empty, output None.

### Content:
{context}

### Concept:
{query}
"""

FUSION_PROMPT = """\
### Instruction: You are a knowledge graph builder. Now please fuse two sub-knowledge graphs about the concept "{concept}".

Graph 1: {LLM-KG}   Graph 2: {E-G}

Rules for Fusing the Graphs:
1. Union the concepts and edges.

2. If two concepts are similar, or refer to the same concept, merge them into one concept, keeping the one that is meaningful or specific. For example, "lstm" versus "long short-term memory", please keep "long short-term memory".

3. Only one relation is allowed between two concepts. If there is a conflict, read the "### Background" to help you keep the correct relation. For example, (ROUGE, Evaluate-for, question answering model) and (ROUGE, Used-for, question answering model) are considered to be conflicts.

4. Once step 3 is done, consider every possible concept pair not covered in step 2. For example, take a concept from Graph 1, and match it with a concept from Graph 2. Then, please refer to "### Background" to summarize new triplets.

Hint: the relation types and their definition. You can use it to do Step 3.
We define 7 types of the relations:

{Relation Definition}

### Background:
{background}

### Output Instruction:
Output the new merged data by listing the triplets. Your answer should ONLY contain triplets in this format: (concept, relation, concept). No other explanations or numbering are needed. Only triplets, no intermediate results.
"""

QA_PLAN_PROMPT = """\
You can query a concept knowledge graph before answering a question. Write one command per line, using only these commands:

NEIGHBORS(concept; direction; relation; depth) lists concepts connected to the given concept. direction is one of in, out, both; relation is one of the 7 relation types or any; depth is a positive integer. Example: NEIGHBORS(word embedding; in; Is-a-Prerequisite-of; 1)
PATH(concept_1; concept_2) finds a learning path between two concepts. Example: PATH(tokenization; machine translation)
RELATION(concept_1; concept_2) looks up the stored relation between two concepts. Example: RELATION(bleu; machine translation)
SUBGRAPH(concept) lists every triplet involving the concept. Example: SUBGRAPH(language model)

Output the commands only, no other text.

### Question:
{question}
"""

QA_ANSWER_PROMPT = """\
Answer the question below. Use the graph evidence when it is relevant.

### Evidence:
{evidence}

### Question:
{question}

{format_instruction}
"""

TEMPLATES: dict[str, str] = {
    "lp": LP_PROMPT,
    "lp_cot": LP_COT_PROMPT,
    "lp_doc": _LP_WITH_CONTENTS,
    "lp_con": _LP_WITH_CONTENTS,
    "lp_wiki": _LP_WITH_CONTENTS,
    "extraction": EXTRACTION_PROMPT,
    "fusion": FUSION_PROMPT,
    "qa_plan": QA_PLAN_PROMPT,
    "qa_answer": QA_ANSWER_PROMPT,
}

_SLOT_RE = re.compile(r"\{([^{}]+)\}")

# slots filled from package constants unless the caller overrides them
_AUTO_BINDINGS = {"Relation Definition": RELATION_DEFINITION}


def register_template(template_id: str, body: str) -> None:
    TEMPLATES[template_id] = body


def template_slots(template_id: str) -> list[str]:
    body = TEMPLATES[template_id]
    seen: list[str] = []
    for m in _SLOT_RE.finditer(body):
        if m.group(1) not in seen:
            seen.append(m.group(1))
    return seen


def render_prompt(template_id: str, bindings: dict[str, str]) -> str:
    """Substitute slot values into a template. Unbound slots raise, naming the slot."""
    try:
        body = TEMPLATES[template_id]
    except KeyError:
        raise ValueError(f"unknown template_id: {template_id!r}") from None
    values = dict(_AUTO_BINDINGS)
    values.update(bindings)

    def _sub(match: re.Match) -> str:
        slot = match.group(1)
        if slot not in values:
            raise ValueError(f"template {template_id!r}: unbound slot {slot!r}")
        return values[slot]

    return _SLOT_RE.sub(_sub, body)


@dataclass
class LLMRequest:
    rendered_text: str
    temperature: float = 0.0
    max_tokens: Optional[int] = None
    template_id: Optional[str] = None


@dataclass
class LLMResponse:
    text: str
    backend_id: str


class LLMBackend:
    backend_id: str = "backend"

    def complete(self, request: LLMRequest) -> LLMResponse:
        raise NotImplementedError


@dataclass
class ScriptRule:
    match: str
    response: str
    regex: bool = False

    def matches(self, prompt: str) -> bool:
        if self.regex:
            return re.search(self.match, prompt) is not None
        return self.match in prompt


class ScriptedBackend(LLMBackend):
    """Deterministic transcript backend: first matching rule wins.

    ``on_miss`` is "error" to fail on unmatched prompts, or any other string
    to use that string as a fixed fallback response.
    """

    def __init__(self, rules: list[ScriptRule], on_miss: str = "error", backend_id: str = "scripted"):
        self.rules = list(rules)
        self.on_miss = on_miss
        self.backend_id = backend_id
        self.calls: list[LLMRequest] = []

    @classmethod
    def from_jsonl(cls, path: str | Path, on_miss: str = "error") -> "ScriptedBackend":
        rules = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    record = json.loads(line)
                    rules.append(
                        ScriptRule(
                            match=record["match"],
                            response=record["response"],
                            regex=bool(record.get("regex", False)),
                        )
                    )
                except (json.JSONDecodeError, KeyError) as exc:
                    raise ValueError(f"{path}: line {lineno}: bad script rule: {exc}") from None
        return cls(rules, on_miss=on_miss, backend_id=f"scripted:{Path(path).name}")

    def complete(self, request: LLMRequest) -> LLMResponse:
        self.calls.append(request)
        for rule in self.rules:
            if rule.matches(request.rendered_text):
                return LLMResponse(text=rule.response, backend_id=self.backend_id)
        if self.on_miss == "error":
            raise ScriptedMissError(
                f"no scripted rule matched prompt (template_id={request.template_id!r})"
            )
        return LLMResponse(text=self.on_miss, backend_id=self.backend_id)


class RemoteBackend(LLMBackend):
    """HTTP completion backend with idempotent retries and exponential backoff."""

    def __init__(
        self,
        url: str,
        model: str,
        token: str = "",
        system_text: str = "",
        retries: int = 3,
        backoff: float = 1.0,
        session=None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if session is None:
            import requests

            session = requests.Session()
        self.url = url
        self.model = model
        self.token = token
        self.system_text = system_text
        self.retries = retries
        self.backoff = backoff
        self.backend_id = f"remote:{model}"
        self._session = session
        self._sleep = sleep

    def complete(self, request: LLMRequest) -> LLMResponse:
        payload = {
            "model": self.model,
            "system": self.system_text,
            "user": request.rendered_text,
            "temperature": request.temperature,
        }
        if request.max_tokens is not None:
            payload["max_tokens"] = request.max_tokens
        headers = {"Authorization": f"Bearer {self.token}"} if self.token else {}
        last_error: Optional[Exception] = None
        for attempt in range(self.retries + 1):
            if attempt:
                self._sleep(self.backoff * 2 ** (attempt - 1))
            try:
                resp = self._session.post(self.url, json=payload, headers=headers, timeout=120)
                if resp.status_code != 200:
                    raise BackendError(f"completion service returned HTTP {resp.status_code}")
                return LLMResponse(text=resp.json()["text"], backend_id=self.backend_id)
            except BackendError as exc:
                last_error = exc
            except Exception as exc:  # connection errors, bad payloads
                last_error = exc
        raise BackendError(
            f"completion failed after {self.retries + 1} attempts "
            f"(template_id={request.template_id!r}): {last_error}"
        )


class LoggingBackend(LLMBackend):
    """Wraps a backend and appends one JSON line per call to a log file."""

    def __init__(self, inner: LLMBackend, log_path: str | Path):
        self.inner = inner
        self.backend_id = inner.backend_id
        self.log_path = Path(log_path)

    def complete(self, request: LLMRequest) -> LLMResponse:
        started = time.monotonic()
        response = self.inner.complete(request)
        entry = {
            "template_id": request.template_id,
            "prompt_sha256": hashlib.sha256(request.rendered_text.encode("utf-8")).hexdigest(),
            "backend": self.inner.backend_id,
            "temperature": request.temperature,
            "latency_ms": round((time.monotonic() - started) * 1000.0, 3),
            "response_chars": len(response.text),
        }
        with open(self.log_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(entry) + "\n")
        return response


def complete(backend: LLMBackend, request: LLMRequest) -> LLMResponse:
    return backend.complete(request)


_YES_NO_RE = re.compile(r"\b(yes|no)\b", re.IGNORECASE)
_RESULT_TAG_RE = re.compile(r"<result>(.*?)</result>", re.IGNORECASE | re.DOTALL)


def parse_yes_no(text: str, mode: str = "plain") -> bool:
    """Decide YES/NO from a response.

    Plain mode takes the first standalone YES/NO token; cot mode reads the
    first <result>...</result> tag. Raises ResponseParseError when no
    decision is found.
    """
    if mode == "plain":
        scope = text
    elif mode == "cot":
        tag = _RESULT_TAG_RE.search(text)
        if tag is None:
            raise ResponseParseError("no <result> tag in chain-of-thought response")
        scope = tag.group(1)
    else:
        raise ValueError(f"unknown parse mode: {mode!r}")
    m = _YES_NO_RE.search(scope)
    if m is None:
        raise ResponseParseError(f"no YES/NO decision in response: {text[:80]!r}")
    return m.group(1).lower() == "yes"


_GROUP_RE = re.compile(r"\(([^()]*)\)")

RawTriplet = tuple[str, RelationType, str]


def parse_triplet_list(text: str) -> tuple[list[RawTriplet], int]:
    """Scan a response for ``(head, relation, tail)`` groups.

    Groups that do not split into exactly three non-empty fields, or whose
    relation does not resolve through the alias table, are counted as
    malformed rather than raised. A literal "None" response is an empty list.
    """
    if text.strip().lower() == "none":
        return [], 0
    triplets: list[RawTriplet] = []
    malformed = 0
    for group in _GROUP_RE.findall(text):
        fields = [f.strip() for f in group.split(",")]
        if len(fields) != 3 or not fields[0] or not fields[2]:
            malformed += 1
            continue
        try:
            relation = RelationType.parse(fields[1])
        except ValueError:
            malformed += 1
            continue
        triplets.append((fields[0], relation, fields[2]))
    return triplets, malformed


def format_triplet_groups(triplets: list[RawTriplet]) -> str:
    """Inverse of parse_triplet_list for comma- and parenthesis-free fields."""
    return "".join(f"({h}, {r.canonical}, {t})" for h, r, t in triplets)


def serialize_kg_for_prompt(kg) -> str:
    """Render a graph as sorted triplet groups for the graph slots of prompts."""
    groups = [
        (kg.display_for(t.head.canonical), t.relation, kg.display_for(t.tail.canonical))
        for t in kg.triplets()
    ]
    if not groups:
        return "None"
    return format_triplet_groups(groups)
