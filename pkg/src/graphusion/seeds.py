"""Seed concept generation: cluster documents, score terms per cluster.

Documents are embedded, grouped with k-means, and each cluster is mined for
characteristic unigrams and bigrams using a class-based tf-idf weighting:
weight(t, c) = tf(t, c) * ln(1 + A / f(t)), where tf(t, c) is the term count
inside cluster c, f(t) the term count over the whole corpus, and A the
average token count per cluster. The top terms of every cluster, minus
stopwords, become the seed concept list.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from sklearn.cluster import KMeans

from .corpus import Corpus, Document, tokenize
from .embed import Embedder
from .kgraph import Concept, canonicalize_concept


@dataclass
class SeedParams:
    n_clusters: int = 8
    top_n: int = 10
    random_seed: int = 0


@dataclass
class TopicCluster:
    cluster_id: int
    doc_ids: list[str] = field(default_factory=list)


def _doc_embedding_text(doc: Document) -> str:
    if doc.title:
        return f"{doc.title}\n{doc.text}"
    return doc.text


def cluster_corpus(
    corpus: Corpus,
    embedder: Embedder,
    n_clusters: int,
    random_seed: int = 0,
) -> list[TopicCluster]:
    """Group documents into topic clusters over their embeddings.

    Cluster ids are relabeled so that cluster 0 contains the lexicographically
    smallest document id, making the labeling independent of k-means
    initialization order.
    """
    docs = corpus.documents
    if not docs:
        raise ValueError("cannot cluster an empty corpus")
    if n_clusters < 1:
        raise ValueError("n_clusters must be >= 1")
    if n_clusters > len(docs):
        raise ValueError(f"n_clusters={n_clusters} exceeds corpus size {len(docs)}")

    vectors = np.array(
        [e.vector for e in embedder.embed_batch([_doc_embedding_text(d) for d in docs])]
    )
    km = KMeans(n_clusters=n_clusters, random_state=random_seed, n_init=10)
    labels = km.fit_predict(vectors)

    by_label: dict[int, list[str]] = {}
    for doc, label in zip(docs, labels):
        by_label.setdefault(int(label), []).append(doc.id)
    # stable relabeling: order raw labels by their smallest member doc id
    ordered = sorted(by_label.items(), key=lambda item: min(item[1]))
    return [
        TopicCluster(cluster_id=new_id, doc_ids=sorted(doc_ids))
        for new_id, (_, doc_ids) in enumerate(ordered)
    ]


def _doc_terms(doc: Document) -> Counter:
    """Unigram and bigram counts; bigrams never span the title/text boundary."""
    counts: Counter = Counter()
    for stream in (tokenize(doc.title), tokenize(doc.text)):
        counts.update(stream)
        counts.update(f"{a} {b}" for a, b in zip(stream, stream[1:]))
    return counts


def ctfidf_weight(tf: int, corpus_freq: int, avg_class_tokens: float) -> float:
    """Class-based tf-idf: tf * ln(1 + A / f)."""
    if tf < 0 or corpus_freq <= 0:
        raise ValueError("term frequencies must be positive")
    return tf * math.log(1.0 + avg_class_tokens / corpus_freq)


def class_tfidf(corpus: Corpus, clusters: Sequence[TopicCluster]) -> dict[int, list[tuple[str, float]]]:
    """Per-cluster ranked term lists, by descending weight then term text."""
    if not clusters:
        raise ValueError("no clusters given")
    per_cluster: dict[int, Counter] = {}
    token_totals: list[int] = []
    for cluster in clusters:
        counts: Counter = Counter()
        tokens = 0
        for doc_id in cluster.doc_ids:
            doc = corpus.get(doc_id)
            counts.update(_doc_terms(doc))
            tokens += len(tokenize(doc.title)) + len(tokenize(doc.text))
        per_cluster[cluster.cluster_id] = counts
        token_totals.append(tokens)

    corpus_freq: Counter = Counter()
    for counts in per_cluster.values():
        corpus_freq.update(counts)
    avg_class_tokens = sum(token_totals) / len(clusters)

    ranked: dict[int, list[tuple[str, float]]] = {}
    for cluster_id, counts in per_cluster.items():
        scored = [
            (term, ctfidf_weight(tf, corpus_freq[term], avg_class_tokens))
            for term, tf in counts.items()
        ]
        scored.sort(key=lambda item: (-item[1], item[0]))
        ranked[cluster_id] = scored
    return ranked


def load_stoplist(path: Optional[str | Path] = None) -> set[str]:
    """Stopword set, from the given file or the packaged default list."""
    if path is None:
        text = resources.files("graphusion").joinpath("data/stopwords.txt").read_text("utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    return {line.strip().lower() for line in text.splitlines() if line.strip()}


def _is_stopped(term: str, stoplist: set[str]) -> bool:
    if term in stoplist:
        return True
    return any(tok in stoplist for tok in term.split())


def generate_seed_concepts(
    corpus: Corpus,
    clusters: Sequence[TopicCluster],
    top_n: int = 10,
    stoplist: Optional[set[str]] = None,
) -> list[Concept]:
    """Top-ranked cluster terms as deduplicated seed concepts.

    Takes the top_n terms of each cluster, drops any containing a stopword
    token, and deduplicates on canonical form. Order is (cluster_id, rank)
    of first appearance.
    """
    if top_n < 1:
        raise ValueError("top_n must be >= 1")
    if stoplist is None:
        stoplist = load_stoplist()
    ranked = class_tfidf(corpus, clusters)
    seeds: list[Concept] = []
    seen: set[str] = set()
    for cluster in sorted(clusters, key=lambda c: c.cluster_id):
        for term, _ in ranked[cluster.cluster_id][:top_n]:
            if _is_stopped(term, stoplist):
                continue
            concept = canonicalize_concept(term)
            if concept.canonical in seen:
                continue
            seen.add(concept.canonical)
            seeds.append(concept)
    return seeds


def write_seeds(seeds: Sequence[Concept], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for seed in seeds:
            fh.write(seed.display + "\n")


def load_seeds(path: str | Path) -> list[Concept]:
    """One concept per line; blank lines are skipped; duplicates collapse."""
    seeds: list[Concept] = []
    seen: set[str] = set()
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line:
            continue
        concept = canonicalize_concept(line)
        if concept.canonical not in seen:
            seen.add(concept.canonical)
            seeds.append(concept)
    if not seeds:
        raise ValueError(f"no seed concepts in {path}")
    return seeds
