"""Shared fixtures: fixture-data paths, corpora, embedders and scripted backends."""

from __future__ import annotations

import re
from pathlib import Path

import pytest

from graphusion.corpus import ingest_corpus
from graphusion.embed import HashEmbedder
from graphusion.kgraph import load_kg
from graphusion.llm import ScriptRule, ScriptedBackend

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def data_dir() -> Path:
    return DATA


@pytest.fixture(scope="session")
def fixture_corpus():
    return ingest_corpus(DATA / "corpus.jsonl", "jsonl")


@pytest.fixture(scope="session")
def toy_corpus():
    return ingest_corpus(DATA / "toy_corpus.jsonl", "jsonl")


@pytest.fixture(scope="session")
def hash_embedder() -> HashEmbedder:
    return HashEmbedder(dim=64)


@pytest.fixture(scope="session")
def golden_kg():
    return load_kg(DATA / "golden_kg.jsonl")


def _qa_backend(plans: dict[str, str], answers: dict[str, str]) -> ScriptedBackend:
    """Scripted backend for two-call question answering.

    Keys are question texts. Planning prompts are told apart from answering
    prompts by a marker unique to each template, so the same question can
    route to two different responses.
    """
    rules = []
    for question, response in plans.items():
        rules.append(
            ScriptRule(
                match=r"Output the commands only[\s\S]*" + re.escape(question),
                response=response,
                regex=True,
            )
        )
    for question, response in answers.items():
        rules.append(
            ScriptRule(
                match=r"### Evidence:[\s\S]*" + re.escape(question),
                response=response,
                regex=True,
            )
        )
    return ScriptedBackend(rules)


def _pair_backend(responses: dict[tuple[str, str], str]) -> ScriptedBackend:
    """Scripted backend answering prerequisite questions per concept pair."""
    rules = [
        ScriptRule(match=f"A: {a} and B: {b}", response=response)
        for (a, b), response in responses.items()
    ]
    return ScriptedBackend(rules)


@pytest.fixture
def make_qa_backend():
    return _qa_backend


@pytest.fixture
def make_pair_backend():
    return _pair_backend
