"""Text embedding providers.

Two implementations of a common interface: a deterministic hashing provider
that needs no network or model weights (used throughout the test suite and
for desk-scale runs), and an HTTP provider for a real embedding service.
All providers L2-normalize on output, so cosine similarity is a plain dot
product.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .corpus import tokenize

NORM_TOLERANCE = 1e-9


@dataclass(frozen=True)
class Embedding:
    vector: tuple[float, ...]
    dim: int

    def __post_init__(self):
        if len(self.vector) != self.dim:
            raise ValueError(f"vector length {len(self.vector)} != dim {self.dim}")
        norm = float(np.linalg.norm(self.vector))
        if abs(norm - 1.0) > NORM_TOLERANCE:
            raise ValueError(f"embedding is not unit-norm (|v| = {norm})")

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "Embedding":
        norm = float(np.linalg.norm(arr))
        if norm == 0.0:
            raise ValueError("cannot normalize a zero vector")
        return cls(vector=tuple(float(x) for x in arr / norm), dim=len(arr))


class Embedder:
    """Interface: deterministic text -> unit vector of a fixed dimension."""

    provider_id: str
    dim: int

    def embed(self, text: str) -> Embedding:
        raise NotImplementedError

    def embed_batch(self, texts: list[str]) -> list[Embedding]:
        return [self.embed(t) for t in texts]


class HashEmbedder(Embedder):
    """Hashes the token multiset into a sparse signed vector, then normalizes.

    Each token maps to a bucket and a sign derived from a stable digest, so
    the same text always produces the same vector and distinct token
    multisets almost surely produce distinct signatures.
    """

    def __init__(self, dim: int = 256):
        if dim < 2:
            raise ValueError("dim must be >= 2")
        self.dim = dim
        self.provider_id = f"hash-{dim}"

    def _bucket(self, token: str) -> tuple[int, int]:
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
        value = int.from_bytes(digest, "big")
        sign = 1 if value & 1 else -1
        return (value >> 1) % self.dim, sign

    def embed(self, text: str) -> Embedding:
        if not text.strip():
            raise ValueError("cannot embed empty text")
        tokens = tokenize(text)
        if not tokens:
            # punctuation-only input still deserves a stable vector
            tokens = [text.strip()]
        vec = np.zeros(self.dim)
        for token in tokens:
            idx, sign = self._bucket(token)
            vec[idx] += sign
        if not vec.any():
            idx, _ = self._bucket("".join(tokens))
            vec[idx] = 1.0
        return Embedding.from_array(vec)


class RemoteEmbedder(Embedder):
    """Calls an embedding HTTP service; request is a list of texts, response
    one vector per text in order."""

    def __init__(self, url: str, dim: int, token: str = "", batch_size: int = 32, session=None):
        if session is None:
            import requests

            session = requests.Session()
        self.url = url
        self.dim = dim
        self.token = token
        self.batch_size = batch_size
        self.provider_id = f"remote-{url}"
        self._session = session

    def embed(self, text: str) -> Embedding:
        return self.embed_batch([text])[0]

    def embed_batch(self, texts: list[str]) -> list[Embedding]:
        for text in texts:
            if not text.strip():
                raise ValueError("cannot embed empty text")
        out: list[Embedding] = []
        headers = {"Authorization": f"Bearer {self.token}"} if self.token else {}
        for start in range(0, len(texts), self.batch_size):
            batch = texts[start : start + self.batch_size]
            resp = self._session.post(self.url, json={"texts": batch}, headers=headers, timeout=60)
            if resp.status_code != 200:
                raise RuntimeError(f"embedding service returned HTTP {resp.status_code}")
            vectors = resp.json()["vectors"]
            if len(vectors) != len(batch):
                raise RuntimeError(
                    f"embedding service returned {len(vectors)} vectors for {len(batch)} texts"
                )
            out.extend(Embedding.from_array(np.asarray(v, dtype=float)) for v in vectors)
        return out


def embed_text(embedder: Embedder, text: str) -> Embedding:
    if not text.strip():
        raise ValueError("cannot embed empty text")
    return embedder.embed(text)


def cosine(a: Embedding, b: Embedding) -> float:
    """Cosine similarity of two unit vectors, clamped to [-1, 1]."""
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} != {b.dim}")
    dot = float(np.dot(a.vector, b.vector))
    return max(-1.0, min(1.0, dot))
