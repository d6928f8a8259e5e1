"""Compact ranges over history trees.

A compact range is the minimal set of perfect-subtree nodes whose leaves
exactly cover ``[lo, hi)``.  Inclusion and consistency proofs are expressed
as pairs of compact ranges; verifiers merge them and fold the result into a
root hash.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .errors import (
    DecodeError,
    EmptyRange,
    MalformedProof,
    NonContiguousRanges,
    NotPrefixRange,
    RangeOutOfBounds,
    ShrinkingLog,
    VerificationFailed,
)
from .merkle import Digest, NodeId, check_digest, mth, node_hash

_NODE = struct.Struct(">BQ32s")
_U16 = struct.Struct(">H")
_U64 = struct.Struct(">Q")


def decompose(lo: int, hi: int) -> list[NodeId]:
    """Node ids of the compact range ``[lo, hi)``, left to right.

    Greedy top-down recursion: a node fully inside the range is taken, a
    node disjoint from it is dropped, anything else is split.
    """
    if lo < 0 or hi < lo:
        raise RangeOutOfBounds(f"bad range [{lo}, {hi})")
    if lo == hi:
        return []
    out: list[NodeId] = []
    top = (hi - 1).bit_length()

    def walk(height: int, index: int) -> None:
        left = index << height
        right = left + (1 << height)
        if left >= lo and right <= hi:
            out.append(NodeId(height, index))
        elif left >= hi or right <= lo:
            return
        else:
            walk(height - 1, 2 * index)
            walk(height - 1, 2 * index + 1)

    walk(top, 0)
    return out


@dataclass(frozen=True)
class CompactRange:
    lo: int
    hi: int
    nodes: tuple[tuple[NodeId, Digest], ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))

    @classmethod
    def empty(cls, at: int) -> "CompactRange":
        return cls(at, at, ())

    @classmethod
    def leaf(cls, index: int, digest: Digest) -> "CompactRange":
        return cls(index, index + 1, ((NodeId(0, index), digest),))

    @classmethod
    def leaves(cls, lo: int, digests: Sequence[Digest]) -> "CompactRange":
        """Compact range of consecutive leaf digests starting at ``lo``."""
        return merge(*(cls.leaf(lo + k, d) for k, d in enumerate(digests)), at=lo)

    @property
    def ids(self) -> list[NodeId]:
        return [n for n, _ in self.nodes]

    @property
    def digests(self) -> list[Digest]:
        return [d for _, d in self.nodes]

    def __len__(self) -> int:
        return len(self.nodes)

    def is_empty(self) -> bool:
        return self.lo == self.hi

    def check_structure(self) -> None:
        """Raise MalformedProof unless the nodes are exactly decompose(lo, hi)."""
        if self.lo < 0 or self.hi < self.lo:
            raise MalformedProof(f"bad endpoints [{self.lo}, {self.hi})", stage="range-endpoints")
        if self.ids != decompose(self.lo, self.hi):
            raise MalformedProof(
                f"nodes do not form the compact range [{self.lo}, {self.hi})",
                stage="range-structure",
            )
        for _, d in self.nodes:
            if len(d) != 32:
                raise MalformedProof("digest length", stage="range-structure")

    def with_digest(self, pos: int, digest: Digest) -> "CompactRange":
        nodes = list(self.nodes)
        nodes[pos] = (nodes[pos][0], digest)
        return CompactRange(self.lo, self.hi, tuple(nodes))

    # wire format: count u16, then (height u8, index u64, digest 32) per node
    def to_bytes(self) -> bytes:
        parts = [_U16.pack(len(self.nodes))]
        parts += [_NODE.pack(n.height, n.index, d) for n, d in self.nodes]
        return b"".join(parts)

    @classmethod
    def read(cls, data: bytes, offset: int = 0, lo: int | None = None) -> tuple["CompactRange", int]:
        """Decode one range at ``offset``; ``lo`` anchors empty ranges."""
        try:
            (count,) = _U16.unpack_from(data, offset)
            offset += _U16.size
            nodes = []
            for _ in range(count):
                h, i, d = _NODE.unpack_from(data, offset)
                offset += _NODE.size
                nodes.append((NodeId(h, i), d))
        except struct.error as exc:
            raise DecodeError(f"truncated compact range: {exc}") from None
        if nodes:
            start, end = nodes[0][0].begin, nodes[-1][0].end
            if lo is not None and lo != start:
                raise MalformedProof(f"range starts at {start}, expected {lo}", stage="range-endpoints")
            return cls(start, end, tuple(nodes)), offset
        at = 0 if lo is None else lo
        return cls.empty(at), offset

    @classmethod
    def from_bytes(cls, data: bytes, lo: int | None = None) -> "CompactRange":
        rng, end = cls.read(data, 0, lo)
        if end != len(data):
            raise DecodeError("trailing bytes after compact range")
        return rng

    def to_text(self) -> str:
        return "".join(f"{n.height} {n.index} {d.hex()}\n" for n, d in self.nodes)

    @classmethod
    def from_text(cls, text: str, lo: int | None = None) -> "CompactRange":
        nodes = []
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            try:
                h, i, d = line.split()
                nodes.append((NodeId(int(h), int(i)), check_digest(bytes.fromhex(d))))
            except ValueError as exc:
                raise DecodeError(f"bad node line {line!r}: {exc}") from None
        if not nodes:
            return cls.empty(0 if lo is None else lo)
        return cls(nodes[0][0].begin, nodes[-1][0].end, tuple(nodes))


def _node_digest(tree, node: NodeId) -> Digest:
    if hasattr(tree, "node"):
        return tree.node(node)
    return mth(tree, node.begin, node.end)


def compute_range(tree, lo: int, hi: int) -> CompactRange:
    """Compact range ``[lo, hi)`` of ``tree``.

    ``tree`` is either a sequence of entry payloads or an object exposing
    ``size`` and ``node(NodeId) -> Digest`` (e.g. a :class:`LogState`).
    """
    size = tree.size if hasattr(tree, "node") else len(tree)
    if not 0 <= lo <= hi <= size:
        raise RangeOutOfBounds(f"[{lo}, {hi}) outside tree of size {size}")
    return CompactRange(lo, hi, tuple((n, _node_digest(tree, n)) for n in decompose(lo, hi)))


def merge(*ranges: CompactRange, at: int | None = None) -> CompactRange:
    """Merge adjacent compact ranges, given left to right.

    Sibling pairs collapse into their parent, lowest heights first; the
    stack discipline below does this in one left-to-right pass.
    """
    if not ranges:
        if at is None:
            raise EmptyRange("nothing to merge")
        return CompactRange.empty(at)
    lo = ranges[0].lo
    cursor = lo
    stack: list[tuple[NodeId, Digest]] = []
    for rng in ranges:
        if rng.lo != cursor or rng.hi < rng.lo:
            raise NonContiguousRanges(f"range [{rng.lo}, {rng.hi}) does not start at {cursor}")
        cursor = rng.hi
        for item in rng.nodes:
            stack.append(item)
            while len(stack) >= 2:
                (ln, ld), (rn, rd) = stack[-2], stack[-1]
                if ln.height != rn.height or not ln.is_left() or rn.index != ln.index + 1:
                    break
                stack[-2:] = [(ln.parent(), node_hash(ld, rd))]
    return CompactRange(lo, cursor, tuple(stack))


def range_to_root(rng: CompactRange) -> Digest:
    if rng.lo != 0:
        raise NotPrefixRange(f"range starts at {rng.lo}, not 0")
    if rng.hi == 0 or not rng.nodes:
        raise EmptyRange("no root for an empty range")
    # Height-sorted stack with the lowest node on top: for a prefix range
    # that is simply the left-to-right order.
    stack = list(rng.digests)
    while len(stack) > 1:
        right = stack.pop()
        left = stack.pop()
        stack.append(node_hash(left, right))
    return stack[0]


@dataclass(frozen=True)
class InclusionProof:
    index: int
    left: CompactRange
    right: CompactRange

    def to_bytes(self) -> bytes:
        return _U64.pack(self.index) + self.left.to_bytes() + self.right.to_bytes()

    @classmethod
    def read(cls, data: bytes, offset: int = 0) -> tuple["InclusionProof", int]:
        try:
            (index,) = _U64.unpack_from(data, offset)
        except struct.error:
            raise DecodeError("truncated inclusion proof") from None
        left, offset = CompactRange.read(data, offset + 8, lo=0)
        right, offset = CompactRange.read(data, offset, lo=index + 1)
        return cls(index, left, right), offset

    @classmethod
    def from_bytes(cls, data: bytes) -> "InclusionProof":
        proof, end = cls.read(data)
        if end != len(data):
            raise DecodeError("trailing bytes after inclusion proof")
        return proof


@dataclass(frozen=True)
class ConsistencyProof:
    first: CompactRange
    second: CompactRange

    def to_bytes(self) -> bytes:
        return _U64.pack(self.first.hi) + self.first.to_bytes() + self.second.to_bytes()

    @classmethod
    def read(cls, data: bytes, offset: int = 0) -> tuple["ConsistencyProof", int]:
        try:
            (old,) = _U64.unpack_from(data, offset)
        except struct.error:
            raise DecodeError("truncated consistency proof") from None
        first, offset = CompactRange.read(data, offset + 8, lo=0)
        if first.hi != old and first.nodes:
            raise MalformedProof("first range does not end at the old size", stage="range-endpoints")
        if not first.nodes:
            first = CompactRange.empty(0) if old == 0 else CompactRange(0, old, ())
        second, offset = CompactRange.read(data, offset, lo=old)
        return cls(first, second), offset

    @classmethod
    def from_bytes(cls, data: bytes) -> "ConsistencyProof":
        proof, end = cls.read(data)
        if end != len(data):
            raise DecodeError("trailing bytes after consistency proof")
        return proof


def check_inclusion(root: Digest, size: int, leaf: Digest, index: int, proof: InclusionProof) -> None:
    """Raise VerificationFailed unless ``leaf`` sits at ``index`` under ``root``."""
    if not 0 <= index < size:
        raise MalformedProof(f"index {index} outside size {size}", stage="inclusion-endpoints")
    left, right = proof.left, proof.right
    if proof.index != index or (left.lo, left.hi) != (0, index) or (right.lo, right.hi) != (index + 1, size):
        raise MalformedProof("proof ranges do not match [0,i) and [i+1,N)", stage="inclusion-endpoints")
    left.check_structure()
    right.check_structure()
    merged = merge(left, CompactRange.leaf(index, leaf), right)
    if range_to_root(merged) != root:
        raise VerificationFailed("recomputed root differs", stage="inclusion-root")


def verify_inclusion(root: Digest, size: int, leaf: Digest, index: int, proof: InclusionProof) -> bool:
    try:
        check_inclusion(root, size, leaf, index, proof)
    except VerificationFailed:
        return False
    return True


def check_multi_inclusion(
    root: Digest, size: int, leaves: Sequence[tuple[int, Digest]], gaps: Sequence[CompactRange]
) -> None:
    """Inclusion of leaves at sorted indices, with one gap range around each.

    ``gaps`` has ``len(leaves) + 1`` ranges: ``[0, i_1)``, ``[i_1+1, i_2)``,
    ..., ``[i_k+1, size)``.  Consecutive indices give empty gaps.
    """
    if len(gaps) != len(leaves) + 1 or not leaves:
        raise MalformedProof("need one gap range per leaf plus one", stage="inclusion-endpoints")
    bounds = [-1] + [i for i, _ in leaves] + [size]
    if any(b >= c for b, c in zip(bounds, bounds[1:])) or bounds[-2] >= size:
        raise MalformedProof("leaf indices must be strictly increasing and < size", stage="inclusion-endpoints")
    parts: list[CompactRange] = []
    for k, gap in enumerate(gaps):
        if (gap.lo, gap.hi) != (bounds[k] + 1, bounds[k + 1]):
            raise MalformedProof(f"gap {k} has wrong endpoints", stage="inclusion-endpoints")
        gap.check_structure()
        parts.append(gap)
        if k < len(leaves):
            parts.append(CompactRange.leaf(*leaves[k]))
    if range_to_root(merge(*parts)) != root:
        raise VerificationFailed("recomputed root differs", stage="inclusion-root")


def verify_multi_inclusion(root, size, leaves, gaps) -> bool:
    try:
        check_multi_inclusion(root, size, leaves, gaps)
    except VerificationFailed:
        return False
    return True


def check_consistency(
    old_root: Digest, old_size: int, new_root: Digest, new_size: int, proof: ConsistencyProof
) -> CompactRange:
    """Raise unless ``(new_root, new_size)`` extends ``(old_root, old_size)``.

    Returns the verified compact range ``[0, new_size)`` so callers can keep
    it for cheaper future updates.  An empty old log (size 0) is consistent
    with anything.
    """
    if new_size < old_size:
        raise ShrinkingLog(f"size went from {old_size} to {new_size}")
    first, second = proof.first, proof.second
    if (first.lo, first.hi) != (0, old_size) or (second.lo, second.hi) != (old_size, new_size):
        raise MalformedProof("ranges do not match [0,l) and [l,l_new)", stage="consistency-endpoints")
    first.check_structure()
    second.check_structure()
    if old_size > 0 and range_to_root(first) != old_root:
        raise VerificationFailed("old root mismatch", stage="consistency-old-root")
    merged = merge(first, second)
    if new_size == 0:
        return merged
    if range_to_root(merged) != new_root:
        raise VerificationFailed("new root mismatch", stage="consistency-new-root")
    return merged


def verify_consistency(old_root, old_size, new_root, new_size, proof) -> bool:
    try:
        check_consistency(old_root, old_size, new_root, new_size, proof)
    except VerificationFailed:
        return False
    return True


def incremental_update(stored: CompactRange, delta: CompactRange) -> CompactRange:
    """Extend a stored prefix range ``[0, l)`` by ``[l, l_new)``."""
    if stored.lo != 0:
        raise NotPrefixRange("stored range must start at 0")
    if delta.lo != stored.hi:
        raise NonContiguousRanges(f"delta starts at {delta.lo}, stored ends at {stored.hi}")
    return merge(stored, delta)


def append_leaves(stored: CompactRange, digests: Iterable[Digest]) -> CompactRange:
    """Fold new leaf digests onto a prefix range."""
    out = stored
    for d in digests:
        out = merge(out, CompactRange.leaf(out.hi, d))
    return out
