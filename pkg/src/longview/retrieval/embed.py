"""Text embedders behind one minimal protocol: ``dim`` and ``embed``.

The built-in embedder hashes a bag of words into a fixed-width signed
vector, then L2-normalises. It is deterministic across processes
(hashes come from blake2b, not the salted builtin ``hash``) and
insensitive to token order, which is exactly what the harness ground
truth needs. Empty text embeds to the zero vector, the non-retrievable
marker.
"""

from __future__ import annotations

import hashlib
from typing import Protocol

import numpy as np

from ..errors import HttpError
from .tokenizer import tokenize

DEFAULT_DIM = 256


class Embedder(Protocol):
    dim: int

    def embed(self, text: str) -> np.ndarray: ...


class HashedBowEmbedder:
    """Hashed bag-of-words embedder, unit-norm output."""

    def __init__(self, dim: int = DEFAULT_DIM):
        self.dim = dim

    def embed(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim, dtype=np.float64)
        for token in tokenize(text):
            h = int.from_bytes(hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest(), "little")
            sign = 1.0 if (h >> 63) & 1 else -1.0
            vec[h % self.dim] += sign
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            return np.zeros(self.dim, dtype=np.float32)
        return (vec / norm).astype(np.float32)


class RemoteEmbedder:
    """Embeddings endpoint client (OpenAI-compatible ``/embeddings``)."""

    def __init__(self, endpoint: str, model: str, dim: int, api_key: str = "", timeout: float = 30.0, transport=None):
        import httpx

        self.endpoint = endpoint.rstrip("/")
        self.model = model
        self.dim = dim
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._client = httpx.Client(headers=headers, timeout=timeout, transport=transport)

    def embed(self, text: str) -> np.ndarray:
        import httpx

        try:
            resp = self._client.post(
                f"{self.endpoint}/embeddings",
                json={"model": self.model, "input": text},
            )
        except httpx.HTTPError as exc:
            raise HttpError(f"embedder unreachable: {exc}", backend_id=self.model) from exc
        if resp.status_code != 200:
            raise HttpError(f"embedder returned {resp.status_code}", backend_id=self.model)
        try:
            raw = resp.json()["data"][0]["embedding"]
        except (KeyError, IndexError, ValueError) as exc:
            raise HttpError(f"malformed embedder reply: {exc}", backend_id=self.model) from exc
        vec = np.asarray(raw, dtype=np.float64)
        if vec.shape != (self.dim,):
            raise HttpError(f"embedder returned dim {vec.shape}, expected {self.dim}", backend_id=self.model)
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            return np.zeros(self.dim, dtype=np.float32)
        return (vec / norm).astype(np.float32)
