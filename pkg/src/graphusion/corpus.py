"""Free-text corpus handling: ingestion, chunking and lexical retrieval.

Documents come in as JSONL records or a directory of plain-text files, get
split into overlapping token-window chunks, and are served back through a
BM25 inverted index so pipeline stages can pull context for a query concept.
"""

from __future__ import annotations

import json
import math
import string
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

_PUNCT = string.punctuation + "“”‘’«»…–—"

# classic BM25 constants, also pinned by the retrieval tests
BM25_K1 = 1.2
BM25_B = 0.75

DEFAULT_MAX_TOKENS = 256
DEFAULT_OVERLAP = 64


def tokenize(text: str) -> list[str]:
    """Canonical tokenization: lowercase, split on whitespace, strip edge punctuation."""
    tokens = []
    for raw in text.lower().split():
        tok = raw.strip(_PUNCT)
        if tok:
            tokens.append(tok)
    return tokens


@dataclass(frozen=True)
class Document:
    id: str
    title: str
    text: str
    source_uri: Optional[str] = None

    def __post_init__(self):
        if not self.id:
            raise ValueError("document id must be non-empty")
        if not self.text.strip():
            raise ValueError(f"document {self.id!r} has empty text")


class Corpus:
    """An ordered collection of documents with unique ids."""

    def __init__(self, documents: Optional[list[Document]] = None):
        self._docs: dict[str, Document] = {}
        self.skipped_records = 0
        for doc in documents or []:
            self.add(doc)

    def add(self, doc: Document) -> None:
        if doc.id in self._docs:
            raise ValueError(f"duplicate document id: {doc.id!r}")
        self._docs[doc.id] = doc

    @property
    def documents(self) -> list[Document]:
        return list(self._docs.values())

    def get(self, doc_id: str) -> Document:
        return self._docs[doc_id]

    def __len__(self) -> int:
        return len(self._docs)

    def __iter__(self):
        return iter(self._docs.values())

    def __contains__(self, doc_id: str) -> bool:
        return doc_id in self._docs


@dataclass(frozen=True)
class Chunk:
    doc_id: str
    chunk_index: int
    text: str
    token_count: int

    @property
    def id(self) -> str:
        return f"{self.doc_id}#{self.chunk_index}"


def ingest_corpus(path: str | Path, format: str, on_error: str = "abort") -> Corpus:
    """Load a corpus from a JSONL file or a directory of .txt files.

    JSONL records need ``id`` and ``text`` (``title`` and ``source_uri`` are
    optional); plain-text documents get their filename stem as id and title.
    ``on_error`` is either "abort" (default) or "skip"; skipped records are
    counted on the returned corpus as ``skipped_records``.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"corpus path does not exist: {path}")
    if format == "jsonl":
        corpus = _ingest_jsonl(path, on_error)
    elif format == "plain-text-dir":
        corpus = _ingest_text_dir(path)
    else:
        raise ValueError(f"unknown corpus format: {format!r}")
    return corpus


def _ingest_jsonl(path: Path, on_error: str) -> Corpus:
    if on_error not in ("abort", "skip"):
        raise ValueError(f"unknown on_error policy: {on_error!r}")
    corpus = Corpus()
    skipped = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                if on_error == "skip":
                    skipped += 1
                    continue
                raise ValueError(f"{path}: line {lineno}: invalid JSON: {exc}") from None
            try:
                doc = Document(
                    id=str(record["id"]),
                    title=str(record.get("title", "")),
                    text=str(record["text"]),
                    source_uri=record.get("source_uri"),
                )
                corpus.add(doc)
            except (KeyError, ValueError, TypeError) as exc:
                if on_error == "skip":
                    skipped += 1
                    continue
                detail = f"missing field {exc}" if isinstance(exc, KeyError) else str(exc)
                raise ValueError(f"{path}: line {lineno}: {detail}") from None
    corpus.skipped_records = skipped
    if len(corpus) == 0:
        raise ValueError(f"{path}: no usable records")
    return corpus


def _ingest_text_dir(path: Path) -> Corpus:
    if not path.is_dir():
        raise ValueError(f"not a directory: {path}")
    corpus = Corpus()
    for file in sorted(path.glob("*.txt")):
        corpus.add(Document(id=file.stem, title=file.stem, text=file.read_text(encoding="utf-8")))
    if len(corpus) == 0:
        raise ValueError(f"no .txt files found in {path}")
    return corpus


def chunk_document(doc: Document, max_tokens: int = DEFAULT_MAX_TOKENS, overlap: int = DEFAULT_OVERLAP) -> list[Chunk]:
    """Split a document into token windows of at most max_tokens.

    Consecutive chunks share exactly `overlap` tokens (the last chunk may
    share more if it is shorter). Tokens here are plain whitespace splits so
    that de-overlapped concatenation reconstructs the document token stream.
    """
    if max_tokens < 1:
        raise ValueError("max_tokens must be positive")
    if overlap < 0 or overlap >= max_tokens:
        raise ValueError(f"overlap must satisfy 0 <= overlap < max_tokens, got {overlap}")
    tokens = doc.text.split()
    chunks: list[Chunk] = []
    start = 0
    stride = max_tokens - overlap
    while True:
        end = min(start + max_tokens, len(tokens))
        window = tokens[start:end]
        chunks.append(
            Chunk(doc_id=doc.id, chunk_index=len(chunks), text=" ".join(window), token_count=len(window))
        )
        if end == len(tokens):
            break
        start += stride
    return chunks


@dataclass
class ChunkParams:
    max_tokens: int = DEFAULT_MAX_TOKENS
    overlap: int = DEFAULT_OVERLAP


class RetrievalIndex:
    """BM25 inverted index over the chunks of a corpus."""

    def __init__(self, chunks: list[Chunk], k1: float = BM25_K1, b: float = BM25_B):
        self.k1 = k1
        self.b = b
        self._chunks: dict[str, Chunk] = {}
        self._postings: dict[str, dict[str, int]] = {}
        self._lengths: dict[str, int] = {}
        for chunk in chunks:
            if chunk.id in self._chunks:
                raise ValueError(f"duplicate chunk id: {chunk.id}")
            self._chunks[chunk.id] = chunk
            terms = tokenize(chunk.text)
            self._lengths[chunk.id] = len(terms)
            for term, freq in Counter(terms).items():
                self._postings.setdefault(term, {})[chunk.id] = freq
        self.n_chunks = len(self._chunks)
        total = sum(self._lengths.values())
        self.avg_length = total / self.n_chunks if self.n_chunks else 0.0

    def __eq__(self, other) -> bool:
        if not isinstance(other, RetrievalIndex):
            return NotImplemented
        return (
            self._chunks == other._chunks
            and self._postings == other._postings
            and (self.k1, self.b) == (other.k1, other.b)
        )

    @property
    def n_terms(self) -> int:
        return len(self._postings)

    def document_frequency(self, term: str) -> int:
        return len(self._postings.get(term, {}))

    def chunk(self, chunk_id: str) -> Chunk:
        return self._chunks[chunk_id]

    def _idf(self, term: str) -> float:
        # non-negative variant, so rare terms always score above absent ones
        df = self.document_frequency(term)
        return math.log(1.0 + (self.n_chunks - df + 0.5) / (df + 0.5))

    def score(self, query_terms: list[str], chunk_id: str) -> float:
        length = self._lengths[chunk_id]
        norm = self.k1 * (1.0 - self.b + self.b * length / self.avg_length)
        score = 0.0
        for term in query_terms:
            freq = self._postings.get(term, {}).get(chunk_id, 0)
            if freq == 0:
                continue
            score += self._idf(term) * freq * (self.k1 + 1.0) / (freq + norm)
        return score


def build_index(corpus: Corpus, chunk_params: Optional[ChunkParams] = None) -> RetrievalIndex:
    """Chunk every document and index the result. Deterministic per (corpus, params)."""
    if len(corpus) == 0:
        raise ValueError("cannot index an empty corpus")
    params = chunk_params or ChunkParams()
    chunks: list[Chunk] = []
    for doc in sorted(corpus, key=lambda d: d.id):
        chunks.extend(chunk_document(doc, params.max_tokens, params.overlap))
    return RetrievalIndex(chunks)


def retrieve(index: RetrievalIndex, query: str, k: int) -> list[tuple[Chunk, float]]:
    """Top-k chunks by BM25 score, descending; zero-score chunks excluded.

    Ties break by (doc_id, chunk_index) ascending. Multi-term queries score
    as the sum of per-term contributions.
    """
    if k < 1:
        raise ValueError("k must be positive")
    if not query.strip():
        raise ValueError("query must be non-empty")
    terms = tokenize(query)
    candidates: set[str] = set()
    for term in terms:
        candidates.update(index._postings.get(term, ()))
    scored = []
    for chunk_id in candidates:
        s = index.score(terms, chunk_id)
        if s > 0.0:
            chunk = index.chunk(chunk_id)
            scored.append((chunk, s))
    scored.sort(key=lambda cs: (-cs[1], cs[0].doc_id, cs[0].chunk_index))
    return scored[:k]
