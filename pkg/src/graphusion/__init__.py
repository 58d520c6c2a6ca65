"""Zero-shot knowledge graph construction and evaluation for scientific corpora."""

from .kgraph import (
    Concept,
    KnowledgeGraph,
    Provenance,
    RelationType,
    Triplet,
    canonicalize_concept,
    load_kg,
    make_triplet,
    save_kg,
)
from .pipeline import PipelineConfig, RunReport, run_graphusion

__version__ = "0.1.0"

__all__ = [
    "Concept",
    "KnowledgeGraph",
    "PipelineConfig",
    "Provenance",
    "RelationType",
    "RunReport",
    "Triplet",
    "canonicalize_concept",
    "load_kg",
    "make_triplet",
    "run_graphusion",
    "save_kg",
    "__version__",
]
