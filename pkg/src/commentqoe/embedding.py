"""Sentence embedding providers and anchor similarity."""

from __future__ import annotations

import hashlib
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import httpx
import numpy as np

from commentqoe.normalize import NormalizationConfig, default_normalization, normalize_text
from commentqoe.resources import default_path

logger = logging.getLogger(__name__)

DEFAULT_DIM = 384


class ProviderError(RuntimeError):
    """The embedding provider could not produce a usable vector."""


class EmbeddingProvider(Protocol):
    name: str
    dim: int

    def embed_batch(self, texts: Sequence[str]) -> np.ndarray: ...


def embed(text: str, provider: EmbeddingProvider) -> np.ndarray:
    return provider.embed_batch([text])[0]


def _token_bucket(token: str, dim: int) -> int:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big") % dim


class HashedBagOfWordsEmbedder:
    """Offline test double: token counts hashed into ``dim`` buckets, then
    L2-normalized.

    Each whitespace token lands in bucket ``blake2b-64(token) mod dim``
    (digest read big-endian), so a single-token text embeds to a unit basis
    vector. Similarity is lexical overlap, not meaning.
    """

    def __init__(self, dim: int = DEFAULT_DIM):
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = dim
        self.name = f"hashed-bow-{dim}"

    def bucket(self, token: str) -> int:
        return _token_bucket(token, self.dim)

    def embed_batch(self, texts: Sequence[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.dim), dtype=np.float64)
        for row, text in enumerate(texts):
            tokens = text.split()
            if not tokens:
                raise ProviderError("cannot embed empty text")
            for tok in tokens:
                out[row, self.bucket(tok)] += 1.0
            out[row] /= np.linalg.norm(out[row])
        return out


class RemoteEmbeddingClient:
    """Client for an HTTP embedding service.

    Request: ``POST <endpoint>`` with JSON ``{"model": ..., "input": [texts]}``
    and a bearer token. Response: ``{"data": [{"index": i, "embedding": [...]}]}``
    (OpenAI style) or ``{"embeddings": [[...], ...]}``.
    """

    def __init__(
        self,
        endpoint: str,
        api_key: str | None = None,
        model: str = "all-MiniLM-L6-v2",
        dim: int = DEFAULT_DIM,
        timeout: float = 30.0,
        transport: httpx.BaseTransport | None = None,
    ):
        self.endpoint = endpoint
        self.model = model
        self.dim = dim
        self.name = f"remote:{model}:{dim}"
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._client = httpx.Client(timeout=timeout, headers=headers, transport=transport)

    @classmethod
    def from_env(cls, **kwargs) -> "RemoteEmbeddingClient":
        endpoint = os.environ.get("COMMENTQOE_EMBED_ENDPOINT")
        if not endpoint:
            raise ProviderError("COMMENTQOE_EMBED_ENDPOINT is not set")
        kwargs.setdefault("api_key", os.environ.get("COMMENTQOE_EMBED_API_KEY"))
        if os.environ.get("COMMENTQOE_EMBED_MODEL"):
            kwargs.setdefault("model", os.environ["COMMENTQOE_EMBED_MODEL"])
        return cls(endpoint, **kwargs)

    def embed_batch(self, texts: Sequence[str]) -> np.ndarray:
        if not texts:
            return np.zeros((0, self.dim))
        try:
            resp = self._client.post(self.endpoint, json={"model": self.model, "input": list(texts)})
            resp.raise_for_status()
            body = resp.json()
        except (httpx.HTTPError, ValueError) as err:
            raise ProviderError(f"embedding request failed: {err}") from err

        if "data" in body:
            items = sorted(body["data"], key=lambda d: d.get("index", 0))
            vectors = [item["embedding"] for item in items]
        elif "embeddings" in body:
            vectors = body["embeddings"]
        else:
            raise ProviderError("embedding response has neither 'data' nor 'embeddings'")
        arr = np.asarray(vectors, dtype=np.float64)
        if arr.shape != (len(texts), self.dim):
            raise ProviderError(f"expected {(len(texts), self.dim)} embeddings, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ProviderError("embedding response contains non-finite values")
        if np.any(np.linalg.norm(arr, axis=1) == 0):
            raise ProviderError("embedding response contains an all-zero vector")
        return arr


class SentenceTransformerEmbedder:
    """Local sentence-transformers model; weights are fetched by the library."""

    def __init__(self, model_name: str = "all-MiniLM-L6-v2"):
        from sentence_transformers import SentenceTransformer

        self._model = SentenceTransformer(model_name)
        self.dim = self._model.get_sentence_embedding_dimension()
        self.name = f"sentence-transformers:{model_name}"

    def embed_batch(self, texts: Sequence[str]) -> np.ndarray:
        if not texts:
            return np.zeros((0, self.dim))
        return np.asarray(self._model.encode(list(texts), convert_to_numpy=True), dtype=np.float64)


def cosine(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: {u.shape} vs {v.shape}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise ValueError("cosine is undefined for a zero vector")
    return float(np.dot(u, v) / (nu * nv))


def _unit_rows(mat: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ProviderError("zero-norm embedding")
    return mat / norms


@dataclass(frozen=True)
class AnchorSet:
    phrases: tuple
    vectors: np.ndarray

    def __post_init__(self):
        if len(self.phrases) != len(self.vectors):
            raise ValueError("anchor phrases and vectors differ in length")

    @classmethod
    def build(
        cls,
        phrases: Sequence[str],
        provider: EmbeddingProvider,
        cfg: NormalizationConfig | None = None,
    ) -> "AnchorSet":
        cfg = cfg or default_normalization()
        normed = tuple(normalize_text(p, cfg) for p in phrases)
        if not normed or not all(normed):
            raise ValueError("anchor set must be non-empty and every anchor must survive normalization")
        return cls(normed, provider.embed_batch(list(normed)))

    def unit_vectors(self) -> np.ndarray:
        return _unit_rows(np.asarray(self.vectors, dtype=np.float64))


def max_similarities(embeddings: np.ndarray, anchors: AnchorSet) -> np.ndarray:
    """Row-wise maximum cosine similarity against the anchor vectors."""
    if len(anchors.phrases) == 0:
        raise ValueError("anchor set is empty")
    if len(embeddings) == 0:
        return np.zeros(0)
    sims = _unit_rows(np.asarray(embeddings, dtype=np.float64)) @ anchors.unit_vectors().T
    return sims.max(axis=1)


def max_anchor_similarity(text: str, anchors: AnchorSet, provider: EmbeddingProvider) -> float:
    return float(max_similarities(provider.embed_batch([text]), anchors)[0])


def read_anchor_file(path: str | Path) -> list[str]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [ln.strip() for ln in lines if ln.strip() and not ln.lstrip().startswith("#")]


def default_anchor_phrases() -> list[str]:
    return read_anchor_file(default_path("anchors.txt"))
