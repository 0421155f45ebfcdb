"""Bottleneck embedding cache (FDKE files) and the frozen-backbone embedding pass.

File layout, little-endian::

    magic        4 bytes  b"FDKE"
    version      u32      1
    fingerprint  32 bytes SHA-256 of the backbone that produced the vectors
    dim          u32      D
    count        u64
    records      count x (content hash u64, D float32)

Records are written in ascending hash order so equal caches are equal files.
"""
from __future__ import annotations

import logging
import struct
from collections.abc import Iterable, Iterator
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .._io import atomic_write_bytes
from ..data.dataset import DatasetManifest, ImageRecord
from ..data.images import load_input
from ..errors import CacheFormatError, DataError, DecodeError, FingerprintMismatch, MissingEmbedding
from ..graph.executor import Graph, backbone_fingerprint, extract_features
from ..graph.manifest import ModelManifest

log = logging.getLogger(__name__)

MAGIC = b"FDKE"
VERSION = 1
_HEADER = struct.Struct("<4sI32sIQ")


class EmbeddingCache:
    """Mapping from image content hash to a float32 embedding of length ``dim``."""

    def __init__(self, fingerprint: bytes, dim: int):
        if len(fingerprint) != 32:
            raise ValueError("fingerprint must be 32 bytes")
        self.fingerprint = bytes(fingerprint)
        self.dim = int(dim)
        self._entries: dict[int, np.ndarray] = {}

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, key: int) -> bool:
        return key in self._entries

    def __iter__(self) -> Iterator[int]:
        return iter(self._entries)

    def __getitem__(self, key: int) -> np.ndarray:
        try:
            return self._entries[key]
        except KeyError:
            raise MissingEmbedding(f"no embedding for content hash {key:016x}") from None

    def add(self, key: int, vector: np.ndarray) -> None:
        vec = np.ascontiguousarray(vector, dtype=np.float32).reshape(-1)
        if vec.size != self.dim:
            raise ValueError(f"embedding has length {vec.size}, cache dim is {self.dim}")
        vec.flags.writeable = False
        self._entries[int(key)] = vec

    def matrix(self, records: Iterable[ImageRecord]) -> np.ndarray:
        """Stack the embeddings of ``records`` into an (n, dim) array."""
        rows = []
        for r in records:
            if r.content_hash not in self._entries:
                raise MissingEmbedding(f"no cached embedding for {r.path} ({r.content_hash:016x})")
            rows.append(self._entries[r.content_hash])
        return np.stack(rows) if rows else np.zeros((0, self.dim), np.float32)

    def to_bytes(self) -> bytes:
        parts = [_HEADER.pack(MAGIC, VERSION, self.fingerprint, self.dim, len(self._entries))]
        for key in sorted(self._entries):
            parts.append(struct.pack("<Q", key))
            parts.append(self._entries[key].astype("<f4").tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, blob: bytes) -> EmbeddingCache:
        if len(blob) < _HEADER.size:
            raise CacheFormatError("embedding cache shorter than its header")
        magic, version, fingerprint, dim, count = _HEADER.unpack_from(blob, 0)
        if magic != MAGIC:
            raise CacheFormatError(f"bad embedding cache magic {magic!r}")
        if version != VERSION:
            raise CacheFormatError(f"unsupported embedding cache version {version}")
        stride = 8 + 4 * dim
        if len(blob) != _HEADER.size + count * stride:
            raise CacheFormatError("embedding cache size does not match its header")
        cache = cls(fingerprint, dim)
        pos = _HEADER.size
        for _ in range(count):
            (key,) = struct.unpack_from("<Q", blob, pos)
            cache.add(key, np.frombuffer(blob, dtype="<f4", count=dim, offset=pos + 8))
            pos += stride
        return cache

    def save(self, path) -> None:
        atomic_write_bytes(path, self.to_bytes())

    @classmethod
    def load(cls, path) -> EmbeddingCache:
        return cls.from_bytes(Path(path).read_bytes())


@dataclass(frozen=True)
class EmbedRun:
    cache: EmbeddingCache
    computed: int
    reused: int


def check_cache(cache: EmbeddingCache, g: Graph) -> None:
    if cache.fingerprint != backbone_fingerprint(g) or cache.dim != g.manifest.embedding_dim:
        raise FingerprintMismatch("embedding cache was produced by a different backbone")


def embed_image(g: Graph, path, model: ModelManifest | None = None) -> np.ndarray:
    try:
        x = load_input(path, model or g.manifest)
    except (DataError, OSError) as exc:
        raise DecodeError(path, exc) from exc
    return extract_features(g, x)[0]


def compute_embeddings(
    g: Graph,
    m: DatasetManifest,
    model: ModelManifest | None = None,
    cache: EmbeddingCache | None = None,
    threads: int = 1,
) -> EmbedRun:
    """Embed every record of ``m`` not already in ``cache`` (which is updated in place).

    Records are keyed by content hash, so duplicate images are embedded once.
    """
    if cache is None:
        cache = EmbeddingCache(backbone_fingerprint(g), g.manifest.embedding_dim)
    else:
        check_cache(cache, g)
    todo: dict[int, str] = {}
    for r in m.records:
        if r.content_hash not in cache and r.content_hash not in todo:
            todo[r.content_hash] = r.path
    keys = list(todo)
    paths = [todo[k] for k in keys]
    if threads > 1 and len(paths) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            vectors = list(pool.map(lambda p: embed_image(g, p, model), paths))
    else:
        vectors = [embed_image(g, p, model) for p in paths]
    for key, vec in zip(keys, vectors):
        cache.add(key, vec)
    reused = len({r.content_hash for r in m.records}) - len(keys)
    log.info("embeddings computed: %d, reused: %d", len(keys), reused)
    return EmbedRun(cache, len(keys), reused)
