"""Verifiable append-only log with signed checkpoints.

The log keeps every complete perfect-subtree hash, level by level, so any
compact range (and hence any inclusion or consistency proof) is assembled by
lookup rather than rehashing.
"""

from __future__ import annotations

import base64
import hashlib
import struct
import time
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

from .compact import (
    CompactRange,
    ConsistencyProof,
    InclusionProof,
    compute_range,
    decompose,
    range_to_root,
)
from .errors import DecodeError, EntryNotFound, RangeOutOfBounds, UnknownCheckpoint
from .merkle import EMPTY_ROOT, Digest, NodeId, leaf_hash, mth

CHECKPOINT_BODY_SIZE = 48
SIGNATURE_SIZE = 64
CHECKPOINT_SIZE = CHECKPOINT_BODY_SIZE + SIGNATURE_SIZE

_BODY = struct.Struct(">32sQQ")

Clock = Callable[[], int]


class ManualClock:
    """Deterministic clock for tests and the simulator."""

    def __init__(self, now: int = 0):
        self.now = now

    def __call__(self) -> int:
        return self.now

    def advance(self, seconds: int = 1) -> int:
        self.now += seconds
        return self.now


def system_clock() -> int:
    return int(time.time())


class Signer:
    """Ed25519 signing key.  ``seed`` gives reproducible keys."""

    def __init__(self, seed: bytes | str | None = None):
        if seed is None:
            self._key = Ed25519PrivateKey.generate()
        else:
            if isinstance(seed, str):
                seed = seed.encode()
            self._key = Ed25519PrivateKey.from_private_bytes(hashlib.sha256(seed).digest())
        self.public_key = self._key.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)

    def sign(self, message: bytes) -> bytes:
        return self._key.sign(message)

    def private_bytes(self) -> bytes:
        from cryptography.hazmat.primitives.serialization import NoEncryption, PrivateFormat

        return self._key.private_bytes(Encoding.Raw, PrivateFormat.Raw, NoEncryption())

    @classmethod
    def from_private_bytes(cls, raw: bytes) -> "Signer":
        obj = cls.__new__(cls)
        obj._key = Ed25519PrivateKey.from_private_bytes(raw)
        obj.public_key = obj._key.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
        return obj


def verify_signature(public_key: bytes, message: bytes, signature: bytes) -> bool:
    try:
        Ed25519PublicKey.from_public_bytes(public_key).verify(signature, message)
    except (InvalidSignature, ValueError):
        return False
    return True


@dataclass(frozen=True)
class Checkpoint:
    root: Digest
    size: int
    timestamp: int
    signature: bytes = b"\x00" * SIGNATURE_SIZE

    @property
    def version(self) -> int:
        return self.size

    def body(self) -> bytes:
        return _BODY.pack(self.root, self.size, self.timestamp)

    def to_bytes(self) -> bytes:
        return self.body() + self.signature

    @classmethod
    def from_bytes(cls, data: bytes) -> "Checkpoint":
        if len(data) != CHECKPOINT_SIZE:
            raise DecodeError(f"checkpoint must be {CHECKPOINT_SIZE} bytes, got {len(data)}")
        root, size, ts = _BODY.unpack_from(data)
        return cls(root, size, ts, bytes(data[CHECKPOINT_BODY_SIZE:]))

    def to_text(self) -> str:
        return base64.b64encode(self.to_bytes()).decode()

    @classmethod
    def from_text(cls, text: str) -> "Checkpoint":
        try:
            raw = base64.b64decode(text.strip(), validate=True)
        except ValueError as exc:
            raise DecodeError(f"bad base64 checkpoint: {exc}") from None
        return cls.from_bytes(raw)

    @classmethod
    def signed(cls, root: Digest, size: int, timestamp: int, signer: Signer) -> "Checkpoint":
        body = _BODY.pack(root, size, timestamp)
        return cls(root, size, timestamp, signer.sign(body))

    def verify(self, public_key: bytes) -> bool:
        return verify_signature(public_key, self.body(), self.signature)

    def freshness(self) -> tuple[int, int]:
        return self.size, self.timestamp


class LogState:
    """History tree over appended entries.

    ``levels[h][i]`` holds the hash of perfect node ``(h, i)`` once all its
    leaves exist.  Those hashes never change afterwards.
    """

    def __init__(self, entries: Iterable[bytes] = ()):
        self.entries: list[bytes] = []
        self.levels: list[list[Digest]] = [[]]
        self._first_index: dict[bytes, int] = {}
        for e in entries:
            self._push(e)

    @property
    def size(self) -> int:
        return len(self.entries)

    def _push(self, entry: bytes) -> None:
        index = len(self.entries)
        self.entries.append(entry)
        self._first_index.setdefault(entry, index)
        self.push_leaf_digest(leaf_hash(entry))

    def push_leaf_digest(self, digest: Digest) -> None:
        levels = self.levels
        levels[0].append(digest)
        h, i = 0, len(levels[0]) - 1
        while i & 1:
            if len(levels) == h + 1:
                levels.append([])
            levels[h + 1].append(_hash_pair(levels[h][i - 1], levels[h][i]))
            h, i = h + 1, i >> 1

    def node(self, node: NodeId) -> Digest:
        try:
            return self.levels[node.height][node.index]
        except IndexError:
            raise RangeOutOfBounds(f"node {node} not complete at size {self.size}") from None

    def frontier(self) -> CompactRange:
        return compute_range(self, 0, self.size)

    def root_at(self, size: int) -> Digest:
        if not 0 <= size <= self.size:
            raise RangeOutOfBounds(f"size {size} beyond log of size {self.size}")
        if size == 0:
            return EMPTY_ROOT
        return range_to_root(compute_range(self, 0, size))

    @property
    def root(self) -> Digest:
        return self.root_at(self.size)

    def append(self, entries: Sequence[bytes], signer: Signer, clock: Clock = system_clock) -> Checkpoint:
        """Append a batch (possibly empty) and sign a checkpoint for the result."""
        for e in entries:
            self._push(bytes(e))
        return Checkpoint.signed(self.root, self.size, clock(), signer)

    def index_of(self, entry: bytes) -> int:
        try:
            return self._first_index[entry]
        except KeyError:
            raise EntryNotFound("entry not in log") from None

    def prove_incl(self, entry: bytes, size: int | None = None) -> InclusionProof:
        """Inclusion proof for the first occurrence of ``entry``."""
        index = self.index_of(entry)
        return self.prove_incl_at(index, size)

    def prove_incl_at(self, index: int, size: int | None = None) -> InclusionProof:
        size = self.size if size is None else size
        if not 0 <= index < size <= self.size:
            raise RangeOutOfBounds(f"index {index} outside tree of size {size}")
        return InclusionProof(index, compute_range(self, 0, index), compute_range(self, index + 1, size))

    def prove_append(self, old: Checkpoint, new: Checkpoint) -> ConsistencyProof:
        for c in (old, new):
            if c.size > self.size or self.root_at(c.size) != c.root:
                raise UnknownCheckpoint(f"no checkpoint with that root at size {c.size}")
        if old.size > new.size:
            raise UnknownCheckpoint("old checkpoint is newer than new checkpoint")
        return self.prove_range_append(old.size, new.size)

    def prove_range_append(self, old_size: int, new_size: int) -> ConsistencyProof:
        return ConsistencyProof(compute_range(self, 0, old_size), compute_range(self, old_size, new_size))

    def copy(self) -> "LogState":
        other = LogState.__new__(LogState)
        other.entries = list(self.entries)
        other.levels = [list(level) for level in self.levels]
        other._first_index = dict(self._first_index)
        return other


def _hash_pair(left: Digest, right: Digest) -> Digest:
    return hashlib.sha256(b"\x01" + left + right).digest()


_RECLEN = struct.Struct(">I")


def append_records(path, records: Iterable[bytes]) -> None:
    """Append length-prefixed records to an append-only file."""
    with open(path, "ab") as fh:
        for r in records:
            fh.write(_RECLEN.pack(len(r)) + r)


def read_records(path) -> list[bytes]:
    with open(path, "rb") as fh:
        data = fh.read()
    out = []
    pos = 0
    while pos < len(data):
        if pos + 4 > len(data):
            raise DecodeError(f"truncated record header in {path}")
        (n,) = _RECLEN.unpack_from(data, pos)
        pos += 4
        if pos + n > len(data):
            raise DecodeError(f"truncated record in {path}")
        out.append(data[pos : pos + n])
        pos += n
    return out


def ver_com(checkpoint: Checkpoint, entries: Sequence[bytes]) -> bool:
    """Does ``checkpoint`` commit to exactly ``entries``?  Oracle only."""
    if len(entries) != checkpoint.size:
        return False
    if not entries:
        return checkpoint.root == EMPTY_ROOT
    return mth(entries, 0, len(entries)) == checkpoint.root


__all__ = [
    "CHECKPOINT_SIZE",
    "Checkpoint",
    "Clock",
    "LogState",
    "ManualClock",
    "Signer",
    "append_records",
    "read_records",
    "decompose",
    "system_clock",
    "ver_com",
    "verify_signature",
]
