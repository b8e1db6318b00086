"""Knowledge-base chunking, embedding, flat vector search and retrieval precision.

Documents are segmented into fixed-length overlapping character chunks
(defaults: 250 chars, 50 overlap), embedded, and stored in a flat index that
is scanned exhaustively at query time. Vectors are L2-normalized; ranking is
by L2 distance ascending with similarity reported as the equivalent cosine
``1 - d^2 / 2``, thresholded at 0.5 by default. Ties break on chunk id.

The deterministic offline embedder hashes character trigrams (FNV-1a) into a
256-bucket count vector; a remote embedder speaks
``POST {"text": ...} -> {"vector": [...]}``.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import numpy as np
import requests

from .corpus import Document
from .errors import IntegrityError, ServiceError

logger = logging.getLogger(__name__)

DEFAULT_SEGMENT_CHARS = 250
DEFAULT_OVERLAP_CHARS = 50
DEFAULT_TOP_K = 3
DEFAULT_SIMILARITY_THRESHOLD = 0.5

_INDEX_MAGIC = b"DBQAIDX1"


@dataclass(frozen=True)
class Chunk:
    """One fixed-length slice of a document; char_range = (start, end) offsets."""

    chunk_id: str
    doc_id: str
    text: str
    start: int
    end: int


def segment_text(
    doc: Document,
    seg_len: int = DEFAULT_SEGMENT_CHARS,
    overlap: int = DEFAULT_OVERLAP_CHARS,
) -> list[Chunk]:
    """Split a document into overlapping character chunks.

    Stride is ``seg_len - overlap``; every chunk except the last has exactly
    ``seg_len`` characters, consecutive chunks share exactly ``overlap``
    characters, and concatenating the chunks with overlaps removed
    reconstructs the document. An empty body yields no chunks.
    """
    if not 0 <= overlap < seg_len:
        raise ValueError(f"need 0 <= overlap < seg_len, got seg_len={seg_len} overlap={overlap}")
    body = doc.body
    if not body:
        return []
    stride = seg_len - overlap
    chunks: list[Chunk] = []
    start = 0
    while True:
        end = min(start + seg_len, len(body))
        chunks.append(
            Chunk(
                chunk_id=f"{doc.doc_id}:{len(chunks):04d}",
                doc_id=doc.doc_id,
                text=body[start:end],
                start=start,
                end=end,
            )
        )
        if end == len(body):
            return chunks
        start += stride


def reconstruct(chunks: Sequence[Chunk], overlap: int = DEFAULT_OVERLAP_CHARS) -> str:
    """Inverse of segment_text: concatenate chunks with overlaps removed."""
    if not chunks:
        return ""
    return chunks[0].text + "".join(c.text[overlap:] for c in chunks[1:])


def _fnv1a(data: bytes) -> int:
    h = 0x811C9DC5
    for byte in data:
        h ^= byte
        h = (h * 0x01000193) & 0xFFFFFFFF
    return h


class Embedder(Protocol):
    dim: int

    def embed(self, text: str) -> np.ndarray: ...


class TrigramEmbedder:
    """Deterministic offline embedder: FNV-1a-hashed character trigram counts, L2-normalized.

    Texts with no trigram (shorter than 3 characters) map to the zero
    vector, which is flagged with a warning.
    """

    def __init__(self, dim: int = 256):
        if dim <= 0:
            raise ValueError("dim must be positive")
        self.dim = dim

    def embed(self, text: str) -> np.ndarray:
        counts = np.zeros(self.dim, dtype=np.float64)
        for i in range(len(text) - 2):
            bucket = _fnv1a(text[i : i + 3].encode("utf-8")) % self.dim
            counts[bucket] += 1.0
        norm = float(np.linalg.norm(counts))
        if norm == 0.0:
            logger.warning("text %r embeds to the zero vector", text[:40])
            return counts
        return counts / norm


class RemoteEmbedder:
    """Embedding service client: POST {"text": ...} -> {"vector": [...]}."""

    def __init__(self, endpoint_url: str, dim: int, timeout_s: float = 30.0):
        self.endpoint_url = endpoint_url
        self.dim = dim
        self.timeout_s = timeout_s

    def embed(self, text: str) -> np.ndarray:
        try:
            resp = requests.post(
                self.endpoint_url, json={"text": text}, timeout=self.timeout_s
            )
        except requests.RequestException as exc:
            raise ServiceError(f"embedder {self.endpoint_url} unreachable: {exc}") from exc
        if not 200 <= resp.status_code < 300:
            raise ServiceError(f"embedder {self.endpoint_url} answered {resp.status_code}")
        try:
            vector = np.asarray(resp.json()["vector"], dtype=np.float64)
        except (ValueError, KeyError, TypeError) as exc:
            raise ServiceError(f"embedder returned an unusable body: {exc}") from exc
        if vector.shape != (self.dim,):
            raise ServiceError(
                f"embedder returned shape {vector.shape}, expected ({self.dim},)"
            )
        norm = float(np.linalg.norm(vector))
        return vector if norm == 0.0 else vector / norm


@dataclass(frozen=True)
class ScoredChunk:
    chunk_id: str
    similarity: float


class VectorIndex:
    """Flat (exhaustive-scan) index over L2-normalized vectors, immutable once built."""

    def __init__(self, chunk_ids: Sequence[str], vectors: np.ndarray, embedder: Embedder | None):
        if len(set(chunk_ids)) != len(chunk_ids):
            dupes = sorted({c for c in chunk_ids if list(chunk_ids).count(c) > 1})
            raise IntegrityError(f"duplicate chunk ids in index: {dupes}")
        vectors = np.asarray(vectors, dtype=np.float64)
        if vectors.ndim != 2 and len(chunk_ids) == 0:
            vectors = vectors.reshape(0, embedder.dim if embedder else 0)
        if vectors.shape[0] != len(chunk_ids):
            raise ValueError("one vector per chunk id required")
        self.chunk_ids = list(chunk_ids)
        self.vectors = vectors
        self.embedder = embedder

    def __len__(self) -> int:
        return len(self.chunk_ids)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1] if self.vectors.ndim == 2 else 0


def build_index(chunks: Iterable[Chunk], embedder: Embedder) -> VectorIndex:
    """Embed every chunk and build the flat index. Chunk ids must be unique."""
    chunks = list(chunks)
    ids = [c.chunk_id for c in chunks]
    if len(set(ids)) != len(ids):
        dupes = sorted({c for c in ids if ids.count(c) > 1})
        raise IntegrityError(f"duplicate chunk ids: {dupes}")
    if not chunks:
        return VectorIndex([], np.zeros((0, embedder.dim), dtype=np.float64), embedder)
    vectors = np.stack([embedder.embed(c.text) for c in chunks])
    return VectorIndex(ids, vectors, embedder)


def retrieve(
    index: VectorIndex,
    query: str,
    k: int = DEFAULT_TOP_K,
    threshold: float = DEFAULT_SIMILARITY_THRESHOLD,
) -> list[ScoredChunk]:
    """Exhaustively scan the index for the top-k chunks above the similarity threshold.

    Ranking is by L2 distance ascending (equivalently cosine descending for
    unit vectors); exact distance ties break on chunk id. An empty result is
    valid.
    """
    if len(index) == 0:
        return []
    if index.embedder is None:
        raise ValueError("index has no embedder attached")
    q = index.embedder.embed(query)
    diff = index.vectors - q
    d2 = np.einsum("ij,ij->i", diff, diff)
    sims = 1.0 - d2 / 2.0
    order = sorted(range(len(index)), key=lambda i: (d2[i], index.chunk_ids[i]))
    out: list[ScoredChunk] = []
    for i in order:
        if len(out) >= k:
            break
        if sims[i] >= threshold:
            out.append(ScoredChunk(index.chunk_ids[i], float(sims[i])))
    return out


def p_at_3(
    results: Sequence[Sequence[str] | Sequence[ScoredChunk]],
    labels: Sequence[Iterable[str]],
) -> float:
    """Precision of the top-3 retrieved chunks, averaged over queries.

    ``results[j]`` is query j's ranked chunk ids (ScoredChunk entries are
    accepted); ``labels[j]`` its relevant ids. Queries returning fewer than
    three results count the missing slots as irrelevant.
    """
    if len(results) != len(labels):
        raise ValueError("results and labels must align by query")
    if not results:
        raise ValueError("p_at_3 needs at least one query")
    hits = 0
    for ranked, relevant in zip(results, labels):
        relevant = set(relevant)
        for entry in list(ranked)[:3]:
            chunk_id = entry.chunk_id if isinstance(entry, ScoredChunk) else entry
            if chunk_id in relevant:
                hits += 1
    return hits / (3 * len(results))


def write_index(index: VectorIndex, path: str | Path) -> None:
    """Persist an index as a binary file of (dim, entries). The embedder is not stored."""
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(_INDEX_MAGIC)
        fh.write(struct.pack("<II", index.dim, len(index)))
        for chunk_id, vector in zip(index.chunk_ids, index.vectors):
            encoded = chunk_id.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(np.ascontiguousarray(vector, dtype="<f8").tobytes())


def read_index(path: str | Path, embedder: Embedder | None = None) -> VectorIndex:
    """Load a persisted index; reattach the embedder used at build time."""
    path = Path(path)
    data = path.read_bytes()
    if data[: len(_INDEX_MAGIC)] != _INDEX_MAGIC:
        raise ValueError(f"{path} is not an index file")
    offset = len(_INDEX_MAGIC)
    dim, count = struct.unpack_from("<II", data, offset)
    offset += 8
    ids: list[str] = []
    vectors = np.zeros((count, dim), dtype=np.float64)
    for i in range(count):
        (id_len,) = struct.unpack_from("<H", data, offset)
        offset += 2
        ids.append(data[offset : offset + id_len].decode("utf-8"))
        offset += id_len
        vectors[i] = np.frombuffer(data, dtype="<f8", count=dim, offset=offset)
        offset += dim * 8
    return VectorIndex(ids, vectors, embedder)


def save_chunks(chunks: Iterable[Chunk], path: str | Path) -> None:
    """Persist a chunk store as JSONL."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for c in chunks:
            fh.write(
                json.dumps(
                    {
                        "chunk_id": c.chunk_id,
                        "doc_id": c.doc_id,
                        "text": c.text,
                        "start": c.start,
                        "end": c.end,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


def load_chunks(path: str | Path) -> list[Chunk]:
    """Load a JSONL chunk store."""
    chunks = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            chunks.append(
                Chunk(
                    chunk_id=obj["chunk_id"],
                    doc_id=obj["doc_id"],
                    text=obj["text"],
                    start=int(obj["start"]),
                    end=int(obj["end"]),
                )
            )
    return chunks
