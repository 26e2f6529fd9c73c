"""Step rendering, embedding provider client, and the content-addressed vector cache."""

from __future__ import annotations

import hashlib
import json
import re
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import httpx
import numpy as np

from .errors import EmbeddingTransportError, InputError, ProviderContractError
from .trajlog import Step, Trajectory

_SEPARATOR = "\n---\n"
_ESCAPABLE_LINE = re.compile(r"\\*---$")


def escape_observation(observation: str) -> str:
    """Escape lines that would collide with the observation/action separator."""
    lines = observation.split("\n")
    return "\n".join("\\" + line if _ESCAPABLE_LINE.fullmatch(line) else line for line in lines)


def unescape_observation(escaped: str) -> str:
    lines = escaped.split("\n")
    return "\n".join(line[1:] if _ESCAPABLE_LINE.fullmatch(line) else line for line in lines)


def render_step(step: Step) -> str:
    """Canonical embedding input for one step: observation, separator, action.

    The intent and previous action are deliberately excluded; only the
    observation/action pair is embedded.
    """
    return escape_observation(step.observation) + _SEPARATOR + step.action.render()


@dataclass(frozen=True)
class EmbeddedTrajectory:
    task_id: str
    vectors: np.ndarray  # shape (steps, dim)

    def __post_init__(self):
        if self.vectors.ndim != 2 or self.vectors.shape[0] == 0:
            raise InputError(f"task {self.task_id!r}: embedded trajectory must be a non-empty 2-D array")
        if not np.all(np.isfinite(self.vectors)):
            raise InputError(f"task {self.task_id!r}: embedded trajectory contains non-finite components")

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


def cache_key(model: str, text: str) -> str:
    """Content hash keying a vector by provider identity and exact input text."""
    digest = hashlib.sha256()
    digest.update(model.encode("utf-8"))
    digest.update(b"\x00")
    digest.update(text.encode("utf-8"))
    return digest.hexdigest()


class EmbeddingCache:
    """Content-addressed vector store, optionally persisted as append-only JSONL.

    Concurrent readers are safe; writes are serialized by a lock. A stored
    vector is never mutated.
    """

    def __init__(self, path: Optional[Path] = None):
        self.path = Path(path) if path is not None else None
        self._entries: dict[str, np.ndarray] = {}
        self._lock = threading.Lock()
        if self.path is not None and self.path.exists():
            with self.path.open("r", encoding="utf-8") as fh:
                for line in fh:
                    if not line.strip():
                        continue
                    obj = json.loads(line)
                    vector = np.asarray(obj["vector"], dtype=np.float64)
                    if vector.shape != (obj["dim"],):
                        raise ProviderContractError(
                            f"cache entry {obj['key']} declares dim {obj['dim']} "
                            f"but holds {vector.shape[0]} components"
                        )
                    self._entries[obj["key"]] = vector

    def get(self, key: str) -> Optional[np.ndarray]:
        return self._entries.get(key)

    def put(self, key: str, vector: np.ndarray) -> None:
        with self._lock:
            if key in self._entries:
                return
            self._entries[key] = vector
            if self.path is not None:
                entry = {"key": key, "dim": int(vector.shape[0]), "vector": vector.tolist()}
                with self.path.open("a", encoding="utf-8") as fh:
                    fh.write(json.dumps(entry) + "\n")

    def __len__(self) -> int:
        return len(self._entries)


class HttpEmbeddingProvider:
    """Client for the embedding wire contract: POST /embed -> {"dim", "embeddings"}."""

    def __init__(self, base_url: str, model: str, batch_limit: int = 64, client: Optional[httpx.Client] = None):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.batch_limit = batch_limit
        self._client = client or httpx.Client(timeout=60.0)

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        vectors: list[np.ndarray] = []
        for start in range(0, len(texts), self.batch_limit):
            chunk = list(texts[start : start + self.batch_limit])
            try:
                response = self._client.post(
                    self.base_url + "/embed", json={"model": self.model, "texts": chunk}
                )
                response.raise_for_status()
            except httpx.HTTPError as exc:
                raise EmbeddingTransportError(f"embedding request failed: {exc}") from exc
            body = response.json()
            embeddings = body.get("embeddings")
            if embeddings is None or len(embeddings) != len(chunk):
                raise ProviderContractError(
                    f"provider returned {0 if embeddings is None else len(embeddings)} "
                    f"embeddings for {len(chunk)} texts"
                )
            dim = body.get("dim")
            for row in embeddings:
                vector = np.asarray(row, dtype=np.float64)
                if vector.shape != (dim,):
                    raise ProviderContractError(f"embedding of length {vector.shape[0]} under declared dim {dim}")
                vectors.append(vector)
        return vectors


class Embedder:
    """Cache-through embedding front end bound to one provider identity."""

    def __init__(
        self,
        model: str,
        provider: Optional[HttpEmbeddingProvider] = None,
        cache: Optional[EmbeddingCache] = None,
    ):
        self.model = model
        self.provider = provider
        self.cache = cache if cache is not None else EmbeddingCache()

    def embed_texts(self, texts: Sequence[str]) -> list[np.ndarray]:
        """Embed texts in order, consulting the cache first and populating it after."""
        keys = [cache_key(self.model, text) for text in texts]
        vectors: list[Optional[np.ndarray]] = [self.cache.get(key) for key in keys]
        missing = [i for i, v in enumerate(vectors) if v is None]
        if missing:
            if self.provider is None:
                raise EmbeddingTransportError(
                    f"no provider configured and text at index {missing[0]} is not cached"
                )
            fetched = self.provider.embed([texts[i] for i in missing])
            if len(fetched) != len(missing):
                raise ProviderContractError(
                    f"provider returned {len(fetched)} vectors for {len(missing)} texts"
                )
            for i, vector in zip(missing, fetched):
                self.cache.put(keys[i], vector)
                vectors[i] = vector
        dims = {v.shape[0] for v in vectors}  # type: ignore[union-attr]
        if len(dims) > 1:
            raise ProviderContractError(f"mixed embedding dimensions in one batch: {sorted(dims)}")
        return vectors  # type: ignore[return-value]

    def embed_trajectory(self, traj: Trajectory) -> EmbeddedTrajectory:
        if not traj.steps:
            raise InputError(f"task {traj.task_id!r}: cannot embed an empty trajectory")
        vectors = self.embed_texts([render_step(step) for step in traj.steps])
        return EmbeddedTrajectory(task_id=traj.task_id, vectors=np.vstack(vectors))
