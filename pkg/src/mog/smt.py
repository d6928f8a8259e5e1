"""Sparse Merkle tree over 256-bit keys.

The tree is persistent: every batch update produces a new root node while
sharing untouched subtrees with earlier versions, so proofs against any past
version stay cheap.  Subtrees holding a single key are stored as one node
carrying the key's precomputed hash chain, which keeps the 256-level depth
from costing 256 node objects per key.
"""

from __future__ import annotations

import hashlib
from concurrent.futures import Executor, ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import DecodeError, DuplicateKey, MalformedProof, VerificationFailed
from .merkle import Digest, leaf_hash, node_hash

DEPTH = 256


def _defaults() -> list[Digest]:
    out = [leaf_hash(b"")]
    for _ in range(DEPTH):
        out.append(node_hash(out[-1], out[-1]))
    return out


DEFAULTS: tuple[Digest, ...] = tuple(_defaults())
DEFAULT_LEAF = DEFAULTS[0]


def default_hash(height: int) -> Digest:
    if not 0 <= height <= DEPTH:
        raise ValueError(f"height {height} outside 0..{DEPTH}")
    return DEFAULTS[height]


def map_key(key: bytes | str) -> bytes:
    """Hash an application key into its 256-bit map position."""
    if isinstance(key, str):
        key = key.encode()
    return hashlib.sha256(key).digest()


def _bit(key: int, depth: int) -> int:
    return (key >> (DEPTH - 1 - depth)) & 1


class _Single:
    """Subtree containing exactly one key; ``chain[h]`` is its hash at height h."""

    __slots__ = ("key", "value", "chain")

    def __init__(self, key: int, value: Digest):
        self.key = key
        self.value = value
        chain = [value]
        cur = value
        for h in range(DEPTH):
            if (key >> h) & 1:
                cur = node_hash(DEFAULTS[h], cur)
            else:
                cur = node_hash(cur, DEFAULTS[h])
            chain.append(cur)
        self.chain = chain


class _Branch:
    __slots__ = ("left", "right", "hash")

    def __init__(self, left, right, digest: Digest):
        self.left = left
        self.right = right
        self.hash = digest


def _hash_at(node, depth: int) -> Digest:
    if node is None:
        return DEFAULTS[DEPTH - depth]
    if isinstance(node, _Single):
        return node.chain[DEPTH - depth]
    return node.hash


def _as_single(key: int, value) -> _Single:
    return value if isinstance(value, _Single) else _Single(key, value)


def _update(node, depth: int, items: list) -> object:
    """Apply sorted ``(key, value)`` items below ``node`` at ``depth``."""
    if not items:
        return node
    if node is None:
        if len(items) == 1:
            return _as_single(*items[0])
        return _split(None, None, depth, items)
    if isinstance(node, _Single):
        if len(items) == 1 and items[0][0] == node.key:
            return _as_single(*items[0])
        if all(k != node.key for k, _ in items):
            items = sorted(items + [(node.key, node)], key=lambda kv: kv[0])
        return _split(None, None, depth, items)
    return _split(node.left, node.right, depth, items)


def _split(left, right, depth: int, items: list) -> _Branch:
    cut = 0
    while cut < len(items) and not _bit(items[cut][0], depth):
        cut += 1
    new_left = _update(left, depth + 1, items[:cut])
    new_right = _update(right, depth + 1, items[cut:])
    digest = node_hash(_hash_at(new_left, depth + 1), _hash_at(new_right, depth + 1))
    return _Branch(new_left, new_right, digest)


def _update_parallel(node, depth: int, items: list, split_depth: int, pool: Executor):
    """Fan the top ``split_depth`` levels out over ``pool``, then rebuild."""
    if depth >= split_depth or len(items) < 2 or isinstance(node, _Single) or node is None and len(items) < 2:
        return pool.submit(_update, node, depth, items)
    if node is None:
        left = right = None
    else:
        left, right = node.left, node.right
    cut = 0
    while cut < len(items) and not _bit(items[cut][0], depth):
        cut += 1
    return _PendingBranch(
        _update_parallel(left, depth + 1, items[:cut], split_depth, pool),
        _update_parallel(right, depth + 1, items[cut:], split_depth, pool),
        depth,
    )


class _PendingBranch:
    def __init__(self, left, right, depth):
        self.left, self.right, self.depth = left, right, depth

    def result(self):
        left = self.left.result()
        right = self.right.result()
        digest = node_hash(_hash_at(left, self.depth + 1), _hash_at(right, self.depth + 1))
        return _Branch(left, right, digest)


@dataclass(frozen=True)
class MapInclusionProof:
    """Siblings bottom-up; bit ``h`` of ``bitmap`` marks a non-default sibling at height ``h``."""

    bitmap: int
    siblings: tuple[Digest, ...]

    def expand(self) -> list[Digest]:
        if self.bitmap < 0 or self.bitmap >> DEPTH:
            raise MalformedProof("bitmap wider than 256 bits", stage="map-bitmap")
        if bin(self.bitmap).count("1") != len(self.siblings):
            raise MalformedProof("bitmap and sibling count disagree", stage="map-bitmap")
        out = list(DEFAULTS[:DEPTH])
        it = iter(self.siblings)
        for h in range(DEPTH):
            if (self.bitmap >> h) & 1:
                d = next(it)
                if len(d) != 32 or d == DEFAULTS[h]:
                    raise MalformedProof("explicit sibling equals the default", stage="map-bitmap")
                out[h] = d
        return out

    @classmethod
    def from_full(cls, siblings: Sequence[Digest]) -> "MapInclusionProof":
        bitmap = 0
        kept = []
        for h, d in enumerate(siblings):
            if d != DEFAULTS[h]:
                bitmap |= 1 << h
                kept.append(d)
        return cls(bitmap, tuple(kept))

    def non_default_count(self) -> int:
        return len(self.siblings)

    def to_bytes(self) -> bytes:
        return self.bitmap.to_bytes(32, "big") + b"".join(self.siblings)

    @classmethod
    def read(cls, data: bytes, offset: int = 0) -> tuple["MapInclusionProof", int]:
        if len(data) < offset + 32:
            raise DecodeError("truncated map proof")
        bitmap = int.from_bytes(data[offset : offset + 32], "big")
        offset += 32
        n = bin(bitmap).count("1")
        end = offset + 32 * n
        if len(data) < end:
            raise DecodeError("truncated map proof siblings")
        sibs = tuple(data[offset + 32 * i : offset + 32 * (i + 1)] for i in range(n))
        return cls(bitmap, sibs), end

    @classmethod
    def from_bytes(cls, data: bytes) -> "MapInclusionProof":
        proof, end = cls.read(data)
        if end != len(data):
            raise DecodeError("trailing bytes after map proof")
        return proof


EMPTY_PROOF = MapInclusionProof(0, ())


def root_from_proof(key: bytes, value: Digest, proof: MapInclusionProof) -> Digest:
    k = int.from_bytes(key, "big")
    cur = value
    for h, sib in enumerate(proof.expand()):
        if (k >> h) & 1:
            cur = node_hash(sib, cur)
        else:
            cur = node_hash(cur, sib)
    return cur


def check_inclusion(root: Digest, key: bytes, value: Digest, proof: MapInclusionProof) -> None:
    if len(key) != 32:
        raise MalformedProof("map keys are 32 bytes", stage="map-key")
    if root_from_proof(key, value, proof) != root:
        raise VerificationFailed("map root mismatch", stage="map-root")


def verify_inclusion(root: Digest, key: bytes, value: Digest, proof: MapInclusionProof) -> bool:
    try:
        check_inclusion(root, key, value, proof)
    except VerificationFailed:
        return False
    return True


def proof_delta(prev: MapInclusionProof, cur: MapInclusionProof) -> tuple[tuple[int, Digest], ...]:
    """Heights (and new digests) where ``cur`` differs from ``prev``."""
    a, b = prev.expand(), cur.expand()
    return tuple((h, b[h]) for h in range(DEPTH) if a[h] != b[h])


def apply_delta(prev: MapInclusionProof, delta: Iterable[tuple[int, Digest]]) -> MapInclusionProof:
    full = prev.expand()
    last = -1
    for h, d in delta:
        if not last < h < DEPTH or len(d) != 32:
            raise MalformedProof("delta heights must be increasing and < 256", stage="between-delta")
        if full[h] == d:
            raise MalformedProof("delta entry does not change anything", stage="between-delta")
        full[h] = d
        last = h
    return MapInclusionProof.from_full(full)


class SparseMap:
    """Versioned sparse Merkle map.  Version 0 is the empty map."""

    def __init__(self, workers: int = 1):
        self.workers = workers
        self._roots: list = [None]
        self._populated: list[int] = [0]

    @property
    def version(self) -> int:
        return len(self._roots) - 1

    def root(self, version: int | None = None) -> Digest:
        node = self._roots[self.version if version is None else version]
        return _hash_at(node, 0)

    def size(self, version: int | None = None) -> int:
        return self._populated[self.version if version is None else version]

    def batch_update(self, updates: Sequence[tuple[bytes, Digest]]) -> Digest:
        """Apply one batch of distinct-key updates as a new version."""
        items = []
        seen = set()
        for key, value in updates:
            if len(key) != 32 or len(value) != 32:
                raise ValueError("map keys and values are 32 bytes")
            k = int.from_bytes(key, "big")
            if k in seen:
                raise DuplicateKey(key.hex())
            seen.add(k)
            items.append((k, bytes(value)))
        items.sort(key=lambda kv: kv[0])
        base = self._roots[-1]
        added = sum(1 for k, _ in items if self._get(base, k) is None)
        if self.workers > 1 and len(items) > 1:
            split_depth = min(8, max(1, (len(items) // 64).bit_length()))
            with ThreadPoolExecutor(self.workers) as pool:
                node = _update_parallel(base, 0, items, split_depth, pool).result()
        else:
            node = _update(base, 0, items)
        self._roots.append(node)
        self._populated.append(self._populated[-1] + added)
        return _hash_at(node, 0)

    @staticmethod
    def _get(node, k: int) -> Digest | None:
        depth = 0
        while node is not None:
            if isinstance(node, _Single):
                return node.value if node.key == k else None
            node = node.right if _bit(k, depth) else node.left
            depth += 1
        return None

    def get(self, key: bytes, version: int | None = None) -> Digest:
        """Stored value digest, or the default leaf for an absent key."""
        node = self._roots[self.version if version is None else version]
        value = self._get(node, int.from_bytes(key, "big"))
        return DEFAULT_LEAF if value is None else value

    def prove_inclusion(self, key: bytes, version: int | None = None) -> MapInclusionProof:
        k = int.from_bytes(key, "big")
        node = self._roots[self.version if version is None else version]
        full = list(DEFAULTS[:DEPTH])
        depth = 0
        while node is not None:
            if isinstance(node, _Single):
                if node.key != k:
                    c = DEPTH - (node.key ^ k).bit_length()
                    h = DEPTH - 1 - c
                    full[h] = node.chain[h]
                break
            if _bit(k, depth):
                full[DEPTH - 1 - depth] = _hash_at(node.left, depth + 1)
                node = node.right
            else:
                full[DEPTH - 1 - depth] = _hash_at(node.right, depth + 1)
                node = node.left
            depth += 1
        return MapInclusionProof.from_full(full)

    def items(self, version: int | None = None) -> list[tuple[bytes, Digest]]:
        """Sorted populated (key, value) records of one version."""
        out: list[tuple[bytes, Digest]] = []

        def walk(node):
            if node is None:
                return
            if isinstance(node, _Single):
                out.append((node.key.to_bytes(32, "big"), node.value))
                return
            walk(node.left)
            walk(node.right)

        walk(self._roots[self.version if version is None else version])
        return out


def naive_root(items: dict[bytes, Digest]) -> Digest:
    """Root by explicit recursion over key prefixes; independent test oracle."""
    keyed = sorted((int.from_bytes(k, "big"), v) for k, v in items.items())

    def rec(depth: int, entries: list) -> Digest:
        if not entries:
            return DEFAULTS[DEPTH - depth]
        if depth == DEPTH:
            return entries[0][1]
        left = [e for e in entries if not _bit(e[0], depth)]
        right = [e for e in entries if _bit(e[0], depth)]
        return node_hash(rec(depth + 1, left), rec(depth + 1, right))

    return rec(0, keyed)

