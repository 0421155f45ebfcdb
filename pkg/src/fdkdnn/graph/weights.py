"""FDKW weight blob: named runs of little-endian float32 values.

Layout (all integers little-endian)::

    magic         4 bytes   b"FDKW"
    version       u32       1
    entry_count   u32
    payload_size  u64       bytes of float payload
    entry table   entry_count x (name_len u16, name utf-8,
                                 offset u64 [bytes into payload],
                                 length u64 [number of floats])
    payload       payload_size bytes

The file must end exactly at the end of the payload.
"""
from __future__ import annotations

import struct
from collections.abc import Iterator, Mapping

import numpy as np

from ..errors import MissingWeight, ParseError

MAGIC = b"FDKW"
VERSION = 1
_HEADER = struct.Struct("<4sIIQ")
_OFFSETS = struct.Struct("<QQ")


class WeightStore(Mapping):
    """Immutable name -> flat float32 array mapping."""

    def __init__(self, entries: Mapping[str, np.ndarray] | None = None):
        self._entries: dict[str, np.ndarray] = {}
        for name, values in (entries or {}).items():
            arr = np.ascontiguousarray(values, dtype="<f4").reshape(-1)
            arr.flags.writeable = False
            self._entries[name] = arr

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self._entries[name]
        except KeyError:
            raise MissingWeight(f"weight {name!r} not in store") from None

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def subset(self, names) -> WeightStore:
        return WeightStore({n: self[n] for n in names})

    def to_bytes(self) -> bytes:
        table = bytearray()
        offset = 0
        for name, arr in self._entries.items():
            raw = name.encode("utf-8")
            table += struct.pack("<H", len(raw)) + raw + _OFFSETS.pack(offset, arr.size)
            offset += arr.size * 4
        payload = b"".join(arr.tobytes() for arr in self._entries.values())
        return _HEADER.pack(MAGIC, VERSION, len(self._entries), len(payload)) + bytes(table) + payload

    @classmethod
    def from_bytes(cls, blob: bytes) -> WeightStore:
        if len(blob) < _HEADER.size:
            raise ParseError("weight blob shorter than its header")
        magic, version, count, payload_size = _HEADER.unpack_from(blob, 0)
        if magic != MAGIC:
            raise ParseError(f"bad weight blob magic {magic!r}")
        if version != VERSION:
            raise ParseError(f"unsupported weight blob version {version}")
        pos = _HEADER.size
        table = []
        try:
            for _ in range(count):
                (name_len,) = struct.unpack_from("<H", blob, pos)
                pos += 2
                name = blob[pos : pos + name_len].decode("utf-8")
                pos += name_len
                offset, length = _OFFSETS.unpack_from(blob, pos)
                pos += _OFFSETS.size
                table.append((name, offset, length))
        except (struct.error, UnicodeDecodeError) as exc:
            raise ParseError(f"corrupt weight table: {exc}") from None
        if len(blob) - pos != payload_size:
            raise ParseError(
                f"payload is {len(blob) - pos} bytes, header declares {payload_size}"
            )
        payload = memoryview(blob)[pos:]
        entries = {}
        for name, offset, length in table:
            if offset % 4 or offset + 4 * length > payload_size:
                raise ParseError(f"weight {name!r} lies outside the payload")
            if name in entries:
                raise ParseError(f"duplicate weight name {name!r}")
            entries[name] = np.frombuffer(payload, dtype="<f4", count=length, offset=offset)
        return cls(entries)
