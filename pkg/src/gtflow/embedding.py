"""Vector embedding providers and the cosine similarity kernel.

All stored vectors are L2-normalized at ingestion, so downstream cosine
similarity reduces to a dot product. Three interchangeable providers:

* HashingEmbedder      — pure function of (text, d, seed); offline and exact
* RemoteEmbedder       — HTTP service speaking a text-list/float-array API
* ReplayEmbedder       — serves vectors recorded in a prior run
"""

from __future__ import annotations

import hashlib
import json
import math
import re
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionMismatchError,
    EmptyInputError,
    ReplayImpossibleError,
    TransportError,
    ZeroVectorError,
)

DEFAULT_DIMENSION = 1536
NORM_TOLERANCE = 1e-9

_TOKEN = re.compile(r"[^\W_]+", re.UNICODE)


def normalize(values) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise ZeroVectorError("vector has non-finite values")
    n = float(np.linalg.norm(v))
    if n == 0.0:
        raise ZeroVectorError("cannot normalize a zero vector")
    return v / n


def cosine_similarity(u, v) -> float:
    """Cosine of the angle between u and v, clamped to [-1, 1].

    Raises ZeroVectorError for zero inputs and DimensionMismatchError when
    the dimensions differ.
    """
    a = np.asarray(u, dtype=np.float64)
    b = np.asarray(v, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"dimensions differ: {a.shape} vs {b.shape}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise ZeroVectorError("cosine similarity undefined for zero vectors")
    return float(min(1.0, max(-1.0, float(np.dot(a, b)) / (na * nb))))


@dataclass(frozen=True)
class EmbeddedSegment:
    """A segment id paired with a unit-norm vector and its provenance."""

    seg_id: str
    vector: np.ndarray
    provider_id: str
    model_version: str

    def __post_init__(self):
        n = float(np.linalg.norm(self.vector))
        if abs(n - 1.0) > NORM_TOLERANCE:
            raise ZeroVectorError(f"stored vector for {self.seg_id} has norm {n}")

    @property
    def d(self) -> int:
        return int(self.vector.shape[0])


class EmbeddingProvider(ABC):
    """Maps texts to vectors. Implementations must be safe to call from
    multiple workers concurrently."""

    provider_id: str = "abstract"
    model_version: str = "0"
    dimension: int = DEFAULT_DIMENSION

    @abstractmethod
    def embed_texts(self, texts: list[str]) -> list[np.ndarray]:
        """One unit-norm vector per text, in input order."""


class HashingEmbedder(EmbeddingProvider):
    """Deterministic local embedder: token-level feature hashing into d
    buckets with a signed count, then L2 normalization.

    Identical texts give identical vectors; texts sharing tokens land nearer
    in cosine than disjoint texts.
    """

    def __init__(self, dimension: int = DEFAULT_DIMENSION, seed: int = 7):
        if dimension < 2:
            raise DimensionMismatchError("dimension must be >= 2")
        self.dimension = dimension
        self.seed = seed
        self.provider_id = "hashing-local"
        self.model_version = f"hash-v1-d{dimension}-s{seed}"

    def _tokens(self, text: str) -> list[str]:
        out = []
        for tok in _TOKEN.findall(text.lower()):
            if any(ord(c) >= 0x3040 for c in tok):
                out.extend(tok)  # CJK runs token-split per character
            else:
                out.append(tok)
        return out

    def embed_text(self, text: str) -> np.ndarray:
        tokens = self._tokens(text)
        if not tokens:
            raise EmptyInputError("cannot embed empty text")
        v = np.zeros(self.dimension, dtype=np.float64)
        for tok in tokens:
            digest = hashlib.blake2b(
                tok.encode("utf-8"), digest_size=8, salt=str(self.seed).encode()[:16]
            ).digest()
            h = int.from_bytes(digest, "big")
            bucket = h % self.dimension
            sign = 1.0 if (h >> 63) & 1 else -1.0
            v[bucket] += sign
        return normalize(v)

    def embed_texts(self, texts: list[str]) -> list[np.ndarray]:
        return [self.embed_text(t) for t in texts]


class RemoteEmbedder(EmbeddingProvider):
    """HTTP embedding service client.

    POSTs {"model": ..., "input": [texts]} and expects
    {"data": [{"embedding": [floats]}, ...]} in input order. Retries
    transport failures with exponential backoff.
    """

    def __init__(self, endpoint: str, model: str, dimension: int = DEFAULT_DIMENSION,
                 api_key: str | None = None, max_attempts: int = 3,
                 backoff_s: float = 0.5, client=None):
        import httpx

        self.endpoint = endpoint
        self.model = model
        self.dimension = dimension
        self.max_attempts = max_attempts
        self.backoff_s = backoff_s
        self.provider_id = "remote-http"
        self.model_version = model
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._client = client or httpx.Client(headers=headers, timeout=60.0)

    def embed_texts(self, texts: list[str]) -> list[np.ndarray]:
        import httpx

        last_error = None
        for attempt in range(self.max_attempts):
            if attempt:
                time.sleep(self.backoff_s * (2 ** (attempt - 1)))
            try:
                resp = self._client.post(
                    self.endpoint, json={"model": self.model, "input": list(texts)}
                )
                resp.raise_for_status()
                rows = resp.json()["data"]
            except (httpx.HTTPError, KeyError, json.JSONDecodeError) as exc:
                last_error = exc
                continue
            if len(rows) != len(texts):
                raise TransportError(
                    f"service returned {len(rows)} vectors for {len(texts)} texts"
                )
            out = []
            for row in rows:
                vec = np.asarray(row["embedding"], dtype=np.float64)
                if vec.shape[0] != self.dimension:
                    raise DimensionMismatchError(
                        f"service returned d={vec.shape[0]}, configured d={self.dimension}"
                    )
                out.append(normalize(vec))
            return out
        raise TransportError(f"embedding service unreachable: {last_error}")


class ReplayEmbedder(EmbeddingProvider):
    """Serves vectors recorded by a prior run, keyed by text digest."""

    def __init__(self, records: dict[str, np.ndarray], dimension: int,
                 provider_id: str, model_version: str):
        self._records = records
        self.dimension = dimension
        self.provider_id = provider_id
        self.model_version = model_version

    @staticmethod
    def text_key(text: str) -> str:
        return hashlib.sha256(text.encode("utf-8")).hexdigest()

    def embed_texts(self, texts: list[str]) -> list[np.ndarray]:
        missing = [t[:40] for t in texts if self.text_key(t) not in self._records]
        if missing:
            raise ReplayImpossibleError(
                f"{len(missing)} texts missing from the recorded vectors", missing
            )
        return [np.array(self._records[self.text_key(t)]) for t in texts]


def embed_batch(segments, provider: EmbeddingProvider,
                batch_size: int = 64) -> list[EmbeddedSegment]:
    """Embed segments in order, in batches, recording provenance.

    Dimension mismatches are hard errors; transport errors carry the ids of
    the segments that were in flight.
    """
    if not segments:
        raise EmptyInputError("no segments to embed")
    out: list[EmbeddedSegment] = []
    for i in range(0, len(segments), batch_size):
        chunk = segments[i:i + batch_size]
        try:
            vectors = provider.embed_texts([s.text for s in chunk])
        except TransportError as exc:
            exc.failed_ids = [s.seg_id for s in chunk]
            raise
        for seg, vec in zip(chunk, vectors):
            if vec.shape[0] != provider.dimension:
                raise DimensionMismatchError(
                    f"provider returned d={vec.shape[0]} for segment {seg.seg_id}, "
                    f"configured d={provider.dimension}"
                )
            out.append(EmbeddedSegment(
                seg_id=seg.seg_id,
                vector=vec,
                provider_id=provider.provider_id,
                model_version=provider.model_version,
            ))
    return out


# --- vector cache file -------------------------------------------------------

def write_vector_cache(path, embedded: list[EmbeddedSegment],
                       texts: dict[str, str] | None = None) -> None:
    """One JSON record per segment; float repr round-trips bit-exactly."""
    with open(path, "w", encoding="utf-8") as f:
        for e in embedded:
            rec = {
                "seg_id": e.seg_id,
                "provider_id": e.provider_id,
                "model_version": e.model_version,
                "d": e.d,
                "values": [float(x) for x in e.vector],
            }
            if texts and e.seg_id in texts:
                rec["text_key"] = ReplayEmbedder.text_key(texts[e.seg_id])
            f.write(json.dumps(rec, sort_keys=True, separators=(",", ":")) + "\n")


def read_vector_cache(path) -> list[EmbeddedSegment]:
    out = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            rec = json.loads(line)
            vec = np.asarray(rec["values"], dtype=np.float64)
            if vec.shape[0] != rec["d"]:
                raise DimensionMismatchError(
                    f"cache record for {rec['seg_id']} has {vec.shape[0]} values, d={rec['d']}"
                )
            out.append(EmbeddedSegment(
                seg_id=rec["seg_id"],
                vector=vec,
                provider_id=rec["provider_id"],
                model_version=rec["model_version"],
            ))
    return out


def read_replay_records(path) -> tuple[dict[str, np.ndarray], dict]:
    """Load a vector cache into text-keyed replay records plus provider meta."""
    records: dict[str, np.ndarray] = {}
    meta: dict = {}
    with open(path, encoding="utf-8") as f:
        for line in f:
            rec = json.loads(line)
            meta = {
                "provider_id": rec["provider_id"],
                "model_version": rec["model_version"],
                "d": rec["d"],
            }
            if "text_key" in rec:
                records[rec["text_key"]] = np.asarray(rec["values"], dtype=np.float64)
    return records, meta
