"""Hashing primitives and node addressing for history trees.

Leaves hash as SHA-256(0x00 || payload) and interior nodes as
SHA-256(0x01 || left || right).  Nodes are addressed by ``(height, index)``;
node ``(h, i)`` covers leaves ``[i * 2**h, (i + 1) * 2**h)``.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from typing import Sequence

from .errors import DecodeError, EmptyRange, RangeOutOfBounds

Digest = bytes

DIGEST_SIZE = 32
LEAF_PREFIX = b"\x00"
NODE_PREFIX = b"\x01"

# Root of a log with no entries.
EMPTY_ROOT: Digest = hashlib.sha256(b"").digest()

_sha256 = hashlib.sha256


def leaf_hash(payload: bytes) -> Digest:
    return _sha256(LEAF_PREFIX + payload).digest()


def node_hash(left: Digest, right: Digest) -> Digest:
    return _sha256(NODE_PREFIX + left + right).digest()


@dataclass(frozen=True, order=True)
class NodeId:
    height: int
    index: int

    def __post_init__(self):
        if self.height < 0 or self.index < 0:
            raise ValueError(f"negative node coordinates {self.height}, {self.index}")

    @property
    def begin(self) -> int:
        return self.index << self.height

    @property
    def end(self) -> int:
        return (self.index + 1) << self.height

    @property
    def size(self) -> int:
        return 1 << self.height

    def parent(self) -> "NodeId":
        return NodeId(self.height + 1, self.index >> 1)

    def children(self) -> tuple["NodeId", "NodeId"]:
        if self.height == 0:
            raise ValueError("leaves have no children")
        return NodeId(self.height - 1, 2 * self.index), NodeId(self.height - 1, 2 * self.index + 1)

    def sibling(self) -> "NodeId":
        return NodeId(self.height, self.index ^ 1)

    def is_left(self) -> bool:
        return self.index & 1 == 0

    def to_bytes(self) -> bytes:
        return struct.pack(">QQ", self.height, self.index)

    @classmethod
    def from_bytes(cls, data: bytes) -> "NodeId":
        if len(data) != 16:
            raise DecodeError(f"NodeId needs 16 bytes, got {len(data)}")
        return cls(*struct.unpack(">QQ", data))


def check_digest(value: bytes) -> Digest:
    if not isinstance(value, (bytes, bytearray)) or len(value) != DIGEST_SIZE:
        raise DecodeError("digest must be exactly 32 bytes")
    return bytes(value)


def split_point(n: int) -> int:
    """Largest power of two strictly less than ``n`` (n >= 2)."""
    return 1 << ((n - 1).bit_length() - 1)


def mth(entries: Sequence[bytes], lo: int = 0, hi: int | None = None) -> Digest:
    """Reference Merkle tree hash of ``entries[lo:hi]``.

    Deliberately naive; used as an oracle in tests and by ``ver_com``.
    """
    if hi is None:
        hi = len(entries)
    if not 0 <= lo <= hi <= len(entries):
        raise RangeOutOfBounds(f"[{lo}, {hi}) outside {len(entries)} entries")
    if lo == hi:
        raise EmptyRange("mth of an empty range")
    n = hi - lo
    if n == 1:
        return leaf_hash(entries[lo])
    k = split_point(n)
    return node_hash(mth(entries, lo, lo + k), mth(entries, lo + k, hi))
