"""Mog: a verifiable registry built as a map of logs.

Every key owns a leaf log of its value hashes.  A sparse Merkle map binds
each key to its leaf log (root and size), and every map root is appended to
the map root log (MRL), whose signed checkpoints are what clients gossip.

Proofs:

* lookup: latest value, as the rightmost leaf of the leaf log, under the
  rightmost map root of the MRL.
* hist: the leaf-log entries added since the client last looked.
* audit: every version since the client last looked, showing the leaf log
  only changed when a new value was appended.
"""

from __future__ import annotations

import bisect
import hashlib
import os
import struct
from dataclasses import dataclass
from typing import Sequence

from .compact import CompactRange, append_leaves, compute_range, merge, range_to_root
from .errors import (
    BadSignature,
    DecodeError,
    DuplicateKey,
    GapInCoverage,
    InconsistentCheckpoint,
    KeyNotFound,
    MalformedProof,
    ShrinkingLog,
    StaleAhead,
    UnknownCheckpoint,
    VerificationFailed,
)
from .log import CHECKPOINT_SIZE, Checkpoint, Clock, LogState, Signer, append_records, read_records, system_clock
from .merkle import EMPTY_ROOT, Digest, leaf_hash
from . import smt
from .smt import EMPTY_PROOF, MapInclusionProof, SparseMap

_U8 = struct.Struct(">B")
_U16 = struct.Struct(">H")
_U32 = struct.Struct(">I")
_U64 = struct.Struct(">Q")


def _key_bytes(key: bytes | str) -> bytes:
    return key.encode() if isinstance(key, str) else bytes(key)


def value_entry(value: bytes) -> Digest:
    """Leaf-log entry for a value: H(val)."""
    return hashlib.sha256(value).digest()


def map_leaf(leaflog_root: Digest, leaflog_size: int) -> Digest:
    """Map leaf committing to a leaf log.  An empty leaf log is the default leaf."""
    if leaflog_size == 0:
        return smt.DEFAULT_LEAF
    return leaf_hash(leaflog_root + _U64.pack(leaflog_size))


@dataclass(frozen=True)
class HistRep:
    """What a client keeps about one key: checkpoint plus leaf-log root and size."""

    checkpoint: Checkpoint
    leaflog_root: Digest
    leaflog_size: int

    def to_bytes(self) -> bytes:
        return self.checkpoint.to_bytes() + self.leaflog_root + _U64.pack(self.leaflog_size)

    @classmethod
    def from_bytes(cls, data: bytes) -> "HistRep":
        if len(data) != CHECKPOINT_SIZE + 40:
            raise DecodeError("hist_rep must be 152 bytes")
        cp = Checkpoint.from_bytes(data[:CHECKPOINT_SIZE])
        root = data[CHECKPOINT_SIZE : CHECKPOINT_SIZE + 32]
        (size,) = _U64.unpack_from(data, CHECKPOINT_SIZE + 32)
        return cls(cp, root, size)


def empty_hist_rep(genesis: Checkpoint) -> HistRep:
    return HistRep(genesis, EMPTY_ROOT, 0)


# ---------------------------------------------------------------- framing

TAG_LOOKUP = 1
TAG_HIST = 2
TAG_AUDIT = 3
TAG_BETWEEN = 4
TAG_ABSENCE = 5


def frame(tag: int, body: bytes) -> bytes:
    return _U8.pack(tag) + _U32.pack(len(body)) + body


def unframe(data: bytes, tag: int) -> bytes:
    if len(data) < 5:
        raise DecodeError("proof shorter than its frame header")
    if data[0] != tag:
        raise DecodeError(f"expected proof tag {tag}, got {data[0]}")
    (n,) = _U32.unpack_from(data, 1)
    if len(data) != 5 + n:
        raise DecodeError("proof length does not match its frame")
    return data[5:]


def _read_opt_range(data: bytes, off: int) -> tuple[CompactRange | None, int]:
    if off >= len(data):
        raise DecodeError("truncated optional range")
    flag = data[off]
    if flag == 0:
        return None, off + 1
    if flag != 1:
        raise DecodeError("bad presence flag")
    return CompactRange.read(data, off + 1, lo=0)


def _opt_range_bytes(rng: CompactRange | None) -> bytes:
    return b"\x00" if rng is None else b"\x01" + rng.to_bytes()


def _decoded(cls, data: bytes, tag: int):
    body = unframe(data, tag)
    obj, end = cls.read_body(body, 0)
    if end != len(body):
        raise DecodeError("trailing bytes in proof body")
    return obj


# ---------------------------------------------------------------- proofs


@dataclass(frozen=True)
class LookupProof:
    leaflog: CompactRange  # [0, l-1): the value is the rightmost leaf
    map: MapInclusionProof
    mrl: CompactRange  # [0, S-1): the map root is the rightmost MRL leaf

    def body(self) -> bytes:
        return self.leaflog.to_bytes() + self.map.to_bytes() + self.mrl.to_bytes()

    def to_bytes(self) -> bytes:
        return frame(TAG_LOOKUP, self.body())

    @classmethod
    def read_body(cls, data: bytes, off: int):
        leaflog, off = CompactRange.read(data, off, lo=0)
        mp, off = MapInclusionProof.read(data, off)
        mrl, off = CompactRange.read(data, off, lo=0)
        return cls(leaflog, mp, mrl), off

    @classmethod
    def from_bytes(cls, data: bytes) -> "LookupProof":
        return _decoded(cls, data, TAG_LOOKUP)


@dataclass(frozen=True)
class AbsenceProof:
    """Non-inclusion: the map holds the default leaf for the key."""

    map: MapInclusionProof
    mrl: CompactRange

    def to_bytes(self) -> bytes:
        return frame(TAG_ABSENCE, self.map.to_bytes() + self.mrl.to_bytes())

    @classmethod
    def read_body(cls, data: bytes, off: int):
        mp, off = MapInclusionProof.read(data, off)
        mrl, off = CompactRange.read(data, off, lo=0)
        return cls(mp, mrl), off

    @classmethod
    def from_bytes(cls, data: bytes) -> "AbsenceProof":
        return _decoded(cls, data, TAG_ABSENCE)


@dataclass(frozen=True)
class HistProof:
    """Map and MRL proofs, plus the old leaf-log frontier.

    The client only keeps the old leaf-log root, so the server supplies the
    compact range ``[0, l_old)`` and the client checks it against that root
    before appending.  Inside an audit the client already holds the
    frontier and ``prefix`` is omitted.
    """

    map: MapInclusionProof
    mrl: CompactRange
    prefix: CompactRange | None = None

    def body(self) -> bytes:
        return self.map.to_bytes() + self.mrl.to_bytes() + _opt_range_bytes(self.prefix)

    def to_bytes(self) -> bytes:
        return frame(TAG_HIST, self.body())

    @classmethod
    def read_body(cls, data: bytes, off: int):
        mp, off = MapInclusionProof.read(data, off)
        mrl, off = CompactRange.read(data, off, lo=0)
        prefix, off = _read_opt_range(data, off)
        return cls(mp, mrl, prefix), off

    @classmethod
    def from_bytes(cls, data: bytes) -> "HistProof":
        return _decoded(cls, data, TAG_HIST)


Delta = tuple[tuple[int, Digest], ...]


@dataclass(frozen=True)
class BetweenProof:
    """Witness for the versions in which a key's leaf log stayed put.

    ``roots`` are the consecutive map roots; the verifier folds them into
    its MRL range itself, so no MRL proof is sent.  ``deltas[i]`` lists the
    map-proof siblings that changed from the previous version's proof.
    ``mrl_prefix`` is only present in stand-alone proofs; inside an audit
    the verifier already holds the range.
    """

    roots: tuple[Digest, ...] = ()
    deltas: tuple[Delta, ...] = ()
    mrl_prefix: CompactRange | None = None

    def body(self) -> bytes:
        parts = [_U32.pack(len(self.roots))]
        for root, delta in zip(self.roots, self.deltas):
            parts.append(root)
            parts.append(_U16.pack(len(delta)))
            parts += [_U8.pack(h) + d for h, d in delta]
        parts.append(_opt_range_bytes(self.mrl_prefix))
        return b"".join(parts)

    def to_bytes(self) -> bytes:
        return frame(TAG_BETWEEN, self.body())

    @classmethod
    def read_body(cls, data: bytes, off: int):
        try:
            (n,) = _U32.unpack_from(data, off)
            off += 4
            roots, deltas = [], []
            for _ in range(n):
                roots.append(bytes(data[off : off + 32]))
                if len(roots[-1]) != 32:
                    raise DecodeError("truncated between-proof root")
                off += 32
                (m,) = _U16.unpack_from(data, off)
                off += 2
                delta = []
                for _ in range(m):
                    h = data[off]
                    d = bytes(data[off + 1 : off + 33])
                    if len(d) != 32:
                        raise DecodeError("truncated delta digest")
                    delta.append((h, d))
                    off += 33
                deltas.append(tuple(delta))
        except (struct.error, IndexError):
            raise DecodeError("truncated between proof") from None
        prefix, off = _read_opt_range(data, off)
        return cls(tuple(roots), tuple(deltas), prefix), off

    @classmethod
    def from_bytes(cls, data: bytes) -> "BetweenProof":
        return _decoded(cls, data, TAG_BETWEEN)

    def digest_count(self) -> int:
        return len(self.roots) + sum(len(d) for d in self.deltas)


@dataclass(frozen=True)
class AuditChange:
    checkpoint: Checkpoint  # MRL checkpoint of the version that appended the value
    hist: HistProof


@dataclass(frozen=True)
class AuditProof:
    """``segments[0]`` covers versions after the old checkpoint up to the
    first change; ``segments[j]`` covers versions after change ``j``."""

    mrl_prefix: CompactRange
    leaflog_prefix: CompactRange
    changes: tuple[AuditChange, ...] = ()
    segments: tuple[BetweenProof, ...] = (BetweenProof(),)

    def body(self) -> bytes:
        parts = [self.mrl_prefix.to_bytes(), self.leaflog_prefix.to_bytes(), _U32.pack(len(self.changes))]
        for ch in self.changes:
            parts.append(ch.checkpoint.to_bytes())
            parts.append(ch.hist.body())
        parts += [s.body() for s in self.segments]
        return b"".join(parts)

    def to_bytes(self) -> bytes:
        return frame(TAG_AUDIT, self.body())

    @classmethod
    def read_body(cls, data: bytes, off: int):
        mrl, off = CompactRange.read(data, off, lo=0)
        leaf, off = CompactRange.read(data, off, lo=0)
        try:
            (k,) = _U32.unpack_from(data, off)
        except struct.error:
            raise DecodeError("truncated audit proof") from None
        off += 4
        changes = []
        for _ in range(k):
            cp = Checkpoint.from_bytes(bytes(data[off : off + CHECKPOINT_SIZE]))
            off += CHECKPOINT_SIZE
            hp, off = HistProof.read_body(data, off)
            changes.append(AuditChange(cp, hp))
        segments = []
        for _ in range(k + 1):
            seg, off = BetweenProof.read_body(data, off)
            segments.append(seg)
        return cls(mrl, leaf, tuple(changes), tuple(segments)), off

    @classmethod
    def from_bytes(cls, data: bytes) -> "AuditProof":
        return _decoded(cls, data, TAG_AUDIT)

    def counts(self) -> list[int]:
        """Version counts n_j implied by the change checkpoints (last one open)."""
        sizes = [self.mrl_prefix.hi] + [c.checkpoint.size for c in self.changes]
        return [b - a for a, b in zip(sizes, sizes[1:])]


# ---------------------------------------------------------------- server


class Registry:
    """Server-side registry state.  Version ``v`` has MRL size ``v``."""

    def __init__(self, signer: Signer, clock: Clock = system_clock, workers: int = 1):
        self.signer = signer
        self.clock = clock
        self.table: dict[bytes, list[bytes]] = {}
        self.leaflogs: dict[bytes, LogState] = {}
        self.changed_at: dict[bytes, list[int]] = {}
        self.map = SparseMap(workers=workers)
        self.mrl = LogState()
        self.batches: list[list[tuple[bytes, bytes]]] = [[]]
        self.checkpoints: list[Checkpoint] = [Checkpoint.signed(EMPTY_ROOT, 0, clock(), signer)]

    @property
    def public_key(self) -> bytes:
        return self.signer.public_key

    @property
    def version(self) -> int:
        return self.mrl.size

    @property
    def genesis(self) -> Checkpoint:
        return self.checkpoints[0]

    @property
    def checkpoint(self) -> Checkpoint:
        return self.checkpoints[-1]

    def empty_hist_rep(self) -> HistRep:
        return empty_hist_rep(self.genesis)

    def append(self, batch: Sequence[tuple[bytes | str, bytes | str]]) -> Checkpoint:
        pairs = [(_key_bytes(k), _key_bytes(v)) for k, v in batch]
        if len({k for k, _ in pairs}) != len(pairs):
            raise DuplicateKey("a key appears twice in one batch")
        version = self.version + 1
        updates = []
        for key, value in pairs:
            mk = smt.map_key(key)
            self.table.setdefault(key, []).append(value)
            log = self.leaflogs.setdefault(mk, LogState())
            log._push(value_entry(value))
            self.changed_at.setdefault(mk, []).append(version)
            updates.append((mk, map_leaf(log.root, log.size)))
        root = self.map.batch_update(updates)
        self.mrl._push(root)
        self.batches.append(pairs)
        cp = Checkpoint.signed(self.mrl.root, self.mrl.size, self.clock(), self.signer)
        self.checkpoints.append(cp)
        return cp

    # -- helpers over past versions

    def leaf_size_at(self, mk: bytes, version: int) -> int:
        return bisect.bisect_right(self.changed_at.get(mk, []), version)

    def leaf_root_at(self, mk: bytes, version: int) -> Digest:
        size = self.leaf_size_at(mk, version)
        return self.leaflogs[mk].root_at(size) if size else EMPTY_ROOT

    def hist_rep_at(self, key: bytes | str, version: int) -> HistRep:
        mk = smt.map_key(_key_bytes(key))
        return HistRep(self.checkpoints[version], self.leaf_root_at(mk, version), self.leaf_size_at(mk, version))

    def map_root_at(self, version: int) -> Digest:
        return self.map.root(version)

    def _mrl_left(self, version: int) -> CompactRange:
        return compute_range(self.mrl, 0, version - 1)

    # -- lookup

    def lookup(self, key: bytes | str) -> tuple[bytes, LookupProof]:
        key = _key_bytes(key)
        if key not in self.table:
            raise KeyNotFound(key.hex())
        mk = smt.map_key(key)
        log = self.leaflogs[mk]
        proof = LookupProof(
            leaflog=compute_range(log, 0, log.size - 1),
            map=self.map.prove_inclusion(mk),
            mrl=self._mrl_left(self.version),
        )
        return self.table[key][-1], proof

    def prove_absence(self, key: bytes | str) -> AbsenceProof:
        key = _key_bytes(key)
        if key in self.table:
            raise DuplicateKey("key is registered")
        if self.version == 0:
            return AbsenceProof(EMPTY_PROOF, CompactRange.empty(0))
        return AbsenceProof(self.map.prove_inclusion(smt.map_key(key)), self._mrl_left(self.version))

    # -- hist

    def _check_old(self, mk: bytes, old: HistRep, version: int) -> None:
        if old.checkpoint.size > version or old.leaflog_size > self.leaf_size_at(mk, version):
            raise StaleAhead("client state is ahead of the registry")
        if old.checkpoint != self.checkpoints[old.checkpoint.size]:
            raise UnknownCheckpoint("old checkpoint was not issued by this registry")

    def hist(self, key: bytes | str, old: HistRep, version: int | None = None) -> tuple[list[bytes], HistProof]:
        """New values since ``old`` and a proof at ``version`` (default: latest)."""
        key = _key_bytes(key)
        version = self.version if version is None else version
        mk = smt.map_key(key)
        self._check_old(mk, old, version)
        size = self.leaf_size_at(mk, version)
        values = self.table.get(key, [])[old.leaflog_size : size]
        log = self.leaflogs.get(mk) or LogState()
        return values, self._hist_proof(mk, log, old.leaflog_size, version, with_prefix=True)

    def _hist_proof(self, mk, log, old_size, version, with_prefix) -> HistProof:
        if version == 0:
            return HistProof(EMPTY_PROOF, CompactRange.empty(0), CompactRange.empty(0) if with_prefix else None)
        return HistProof(
            map=self.map.prove_inclusion(mk, version),
            mrl=self._mrl_left(version),
            prefix=compute_range(log, 0, old_size) if with_prefix else None,
        )

    # -- audit

    def _between(self, mk: bytes, first: int, last: int, base: MapInclusionProof) -> BetweenProof:
        """Proof for versions ``first..last`` inclusive (empty if last < first)."""
        roots, deltas = [], []
        prev = base
        for v in range(first, last + 1):
            cur = self.map.prove_inclusion(mk, v)
            roots.append(self.map.root(v))
            deltas.append(smt.proof_delta(prev, cur))
            prev = cur
        return BetweenProof(tuple(roots), tuple(deltas))

    def audit(self, key: bytes | str, old: HistRep) -> tuple[list[bytes], AuditProof]:
        key = _key_bytes(key)
        mk = smt.map_key(key)
        version = self.version
        self._check_old(mk, old, version)
        s0 = old.checkpoint.size
        if old.leaflog_size != self.leaf_size_at(mk, s0):
            raise UnknownCheckpoint("old leaf-log size does not match the old checkpoint")
        change_versions = [v for v in self.changed_at.get(mk, []) if v > s0]
        log = self.leaflogs.get(mk) or LogState()
        values = self.table.get(key, [])[old.leaflog_size :]
        changes = []
        bounds = [s0] + change_versions + [version + 1]
        segments = []
        base = EMPTY_PROOF
        for j, v in enumerate(change_versions):
            segments.append(self._between(mk, bounds[j] + 1, v - 1, base))
            hp = self._hist_proof(mk, log, old.leaflog_size + j, v, with_prefix=False)
            changes.append(AuditChange(self.checkpoints[v], hp))
            base = hp.map
        segments.append(self._between(mk, bounds[-2] + 1, version, base))
        proof = AuditProof(
            mrl_prefix=compute_range(self.mrl, 0, s0),
            leaflog_prefix=compute_range(log, 0, old.leaflog_size),
            changes=tuple(changes),
            segments=tuple(segments),
        )
        return values, proof

    def prove_between(self, key: bytes | str, start: int, n: int) -> BetweenProof:
        """Stand-alone proof that the key's leaf log is unchanged in versions start+1..start+n."""
        mk = smt.map_key(_key_bytes(key))
        if start < 0 or n < 0 or start + n > self.version:
            raise UnknownCheckpoint("between-range outside the registry's versions")
        if self.changed_at.get(mk) and any(start < v <= start + n for v in self.changed_at[mk]):
            raise UnknownCheckpoint("the key changed inside the requested versions")
        if n == 0:
            return BetweenProof()
        proof = self._between(mk, start + 1, start + n, EMPTY_PROOF)
        return BetweenProof(proof.roots, proof.deltas, compute_range(self.mrl, 0, start))

    # -- persistence: per-version delta files, leaf-log record files, MRL record file

    def save(self, directory: str) -> None:
        os.makedirs(os.path.join(directory, "versions"), exist_ok=True)
        os.makedirs(os.path.join(directory, "leaflogs"), exist_ok=True)
        with open(os.path.join(directory, "signing.key"), "wb") as fh:
            fh.write(self.signer.private_bytes())
        for v, (cp, batch) in enumerate(zip(self.checkpoints, self.batches)):
            path = os.path.join(directory, "versions", f"{v:08d}.delta")
            if os.path.exists(path):
                continue
            recs = [_U64.pack(cp.timestamp)]
            for k, val in batch:
                recs += [k, val]
            append_records(path, recs)
        mrl_path = os.path.join(directory, "mrl.log")
        have = len(read_records(mrl_path)) if os.path.exists(mrl_path) else 0
        append_records(mrl_path, self.mrl.entries[have:])
        for mk, log in self.leaflogs.items():
            path = os.path.join(directory, "leaflogs", mk.hex() + ".log")
            have = len(read_records(path)) if os.path.exists(path) else 0
            append_records(path, log.entries[have:])

    @classmethod
    def load(cls, directory: str, workers: int = 1) -> "Registry":
        with open(os.path.join(directory, "signing.key"), "rb") as fh:
            signer = Signer.from_private_bytes(fh.read())
        vdir = os.path.join(directory, "versions")
        files = sorted(os.listdir(vdir))
        if not files or files[0] != f"{0:08d}.delta":
            raise DecodeError("registry directory has no genesis version")
        stamps = []
        batches = []
        for v, name in enumerate(files):
            if name != f"{v:08d}.delta":
                raise DecodeError(f"missing version file before {name}")
            recs = read_records(os.path.join(vdir, name))
            if not recs or len(recs[0]) != 8 or len(recs) % 2 != 1:
                raise DecodeError(f"corrupt version file {name}")
            stamps.append(_U64.unpack(recs[0])[0])
            batches.append(list(zip(recs[1::2], recs[2::2])))
        it = iter(stamps)
        reg = cls(signer, clock=lambda: next(it), workers=workers)
        for batch in batches[1:]:
            reg.append(batch)
        reg.clock = system_clock
        if read_records(os.path.join(directory, "mrl.log")) != reg.mrl.entries:
            raise DecodeError("MRL record file disagrees with the version files")
        for mk, log in reg.leaflogs.items():
            if read_records(os.path.join(directory, "leaflogs", mk.hex() + ".log")) != log.entries:
                raise DecodeError("leaf-log record file disagrees with the version files")
        return reg


# ---------------------------------------------------------------- verification


def _check_signature(cp: Checkpoint, public_key: bytes | None) -> None:
    if public_key is not None and not cp.verify(public_key):
        raise BadSignature("checkpoint signature does not verify", stage="checkpoint-signature")


def _check_mrl_rightmost(cp: Checkpoint, map_root: Digest, mrl_left: CompactRange) -> None:
    """``map_root`` must be the last leaf of the MRL committed to by ``cp``."""
    if cp.size == 0:
        raise VerificationFailed("checkpoint commits to an empty MRL", stage="mrl-inclusion")
    if (mrl_left.lo, mrl_left.hi) != (0, cp.size - 1):
        raise VerificationFailed("map root is not the rightmost MRL leaf", stage="mrl-rightmost")
    mrl_left.check_structure()
    rng = merge(mrl_left, CompactRange.leaf(cp.size - 1, leaf_hash(map_root)))
    if range_to_root(rng) != cp.root:
        raise VerificationFailed("MRL root mismatch", stage="mrl-inclusion")


def check_lookup(cp: Checkpoint, key: bytes | str, value: bytes, proof: LookupProof, public_key: bytes | None = None) -> None:
    _check_signature(cp, public_key)
    leaf = proof.leaflog
    if leaf.lo != 0:
        raise MalformedProof("leaf-log range must start at 0", stage="leaflog-endpoints")
    leaf.check_structure()
    size = leaf.hi + 1
    rng = merge(leaf, CompactRange.leaf(leaf.hi, leaf_hash(value_entry(_key_bytes(value)))))
    leaflog_root = range_to_root(rng)
    mk = smt.map_key(_key_bytes(key))
    map_root = smt.root_from_proof(mk, map_leaf(leaflog_root, size), proof.map)
    _check_mrl_rightmost(cp, map_root, proof.mrl)


def check_absence(cp: Checkpoint, key: bytes | str, proof: AbsenceProof, public_key: bytes | None = None) -> None:
    _check_signature(cp, public_key)
    if cp.size == 0:
        if cp.root != EMPTY_ROOT or proof.map != EMPTY_PROOF or proof.mrl != CompactRange.empty(0):
            raise VerificationFailed("empty registry must have the empty root", stage="mrl-inclusion")
        return
    map_root = smt.root_from_proof(smt.map_key(_key_bytes(key)), smt.DEFAULT_LEAF, proof.map)
    _check_mrl_rightmost(cp, map_root, proof.mrl)


def _extend_leaflog(prefix: CompactRange, old: HistRep, entries: Sequence[bytes]) -> tuple[CompactRange, Digest, int]:
    """Check ``prefix`` against the old leaf-log root and append entries."""
    if (prefix.lo, prefix.hi) != (0, old.leaflog_size):
        raise MalformedProof("leaf-log prefix does not cover [0, l_old)", stage="leaflog-prefix")
    prefix.check_structure()
    if old.leaflog_size == 0:
        if old.leaflog_root != EMPTY_ROOT:
            raise VerificationFailed("empty leaf log with a non-empty root", stage="leaflog-prefix")
    elif range_to_root(prefix) != old.leaflog_root:
        raise VerificationFailed("leaf-log prefix does not match the stored root", stage="leaflog-prefix")
    rng = append_leaves(prefix, (leaf_hash(value_entry(_key_bytes(e))) for e in entries))
    root = range_to_root(rng) if rng.hi else EMPTY_ROOT
    return rng, root, rng.hi


def _check_hist_core(cp, key_mk, root, size, proof: HistProof) -> Digest:
    """Verify map and MRL stages; returns the recomputed map root."""
    if cp.size == 0:
        if size != 0 or cp.root != EMPTY_ROOT or proof.map != EMPTY_PROOF or proof.mrl != CompactRange.empty(0):
            raise VerificationFailed("version 0 holds no values", stage="mrl-inclusion")
        return smt.default_hash(smt.DEPTH)
    map_root = smt.root_from_proof(key_mk, map_leaf(root, size), proof.map)
    _check_mrl_rightmost(cp, map_root, proof.mrl)
    return map_root


def check_hist(
    cp: Checkpoint,
    key: bytes | str,
    old: HistRep,
    entries: Sequence[bytes],
    proof: HistProof,
    public_key: bytes | None = None,
) -> HistRep:
    """Raise unless the proof verifies; return the updated HistRep."""
    _check_signature(cp, public_key)
    if cp.size < old.checkpoint.size:
        raise ShrinkingLog("checkpoint is older than the stored one", stage="hist-version")
    if proof.prefix is None:
        raise MalformedProof("stand-alone hist proof needs the leaf-log prefix", stage="leaflog-prefix")
    _, root, size = _extend_leaflog(proof.prefix, old, entries)
    _check_hist_core(cp, smt.map_key(_key_bytes(key)), root, size, proof)
    return HistRep(cp, root, size)


def _fold_between(
    rng: CompactRange,
    mk: bytes,
    leaflog_root: Digest,
    leaflog_size: int,
    proof: BetweenProof,
    base: MapInclusionProof,
) -> CompactRange:
    """Check every intermediate map root against the unchanged leaf log and
    fold the roots into the MRL range."""
    if len(proof.deltas) != len(proof.roots):
        raise MalformedProof("one delta per intermediate root", stage="between-delta")
    leaf = map_leaf(leaflog_root, leaflog_size)
    prev = base
    for root, delta in zip(proof.roots, proof.deltas):
        cur = smt.apply_delta(prev, delta)
        if smt.root_from_proof(mk, leaf, cur) != root:
            raise VerificationFailed("leaf log differs in an intermediate version", stage="between-map")
        rng = merge(rng, CompactRange.leaf(rng.hi, leaf_hash(root)))
        prev = cur
    return rng


def check_between(
    start: Checkpoint,
    key: bytes | str,
    leaflog_root: Digest,
    leaflog_size: int,
    n: int,
    proof: BetweenProof,
    end: Checkpoint | None = None,
) -> CompactRange:
    """Stand-alone relation check for x = (start, leaf log, n).

    Returns the MRL range ``[0, start.size + n)``; when ``end`` is given its
    root must match the folded range.
    """
    if len(proof.roots) != n:
        raise GapInCoverage(f"expected {n} intermediate roots, got {len(proof.roots)}", stage="between-count")
    if n == 0:
        return proof.mrl_prefix or CompactRange.empty(0)
    prefix = proof.mrl_prefix
    if prefix is None or (prefix.lo, prefix.hi) != (0, start.size):
        raise MalformedProof("MRL prefix must cover the start checkpoint", stage="between-prefix")
    prefix.check_structure()
    if start.size and range_to_root(prefix) != start.root:
        raise VerificationFailed("MRL prefix does not match the start checkpoint", stage="between-prefix")
    rng = _fold_between(prefix, smt.map_key(_key_bytes(key)), leaflog_root, leaflog_size, proof, EMPTY_PROOF)
    if end is not None:
        if end.size != rng.hi or range_to_root(rng) != end.root:
            raise VerificationFailed("folded MRL does not reach the end checkpoint", stage="between-end")
    return rng


def check_audit(
    cp: Checkpoint,
    key: bytes | str,
    old: HistRep,
    values: Sequence[bytes],
    proof: AuditProof,
    public_key: bytes | None = None,
) -> HistRep:
    _check_signature(cp, public_key)
    mk = smt.map_key(_key_bytes(key))
    k = len(proof.changes)
    if len(values) != k or len(proof.segments) != k + 1:
        raise MalformedProof("one change per value and one segment more", stage="audit-shape")
    sizes = [old.checkpoint.size] + [c.checkpoint.size for c in proof.changes] + [cp.size]
    if cp.size < old.checkpoint.size:
        raise ShrinkingLog("audited checkpoint is older than the stored one", stage="audit-version")
    counts = [b - a for a, b in zip(sizes, sizes[1:])]
    if any(n < 1 for n in counts[:-1]) or counts[-1] < 0:
        raise GapInCoverage("change checkpoints are not strictly increasing", stage="audit-count")
    roots_seen = sum(len(s.roots) for s in proof.segments) + k
    if roots_seen != cp.size - old.checkpoint.size:
        raise GapInCoverage("intermediate roots do not tile the version interval", stage="audit-count")
    for j, seg in enumerate(proof.segments):
        want = counts[j] - 1 if j < k else counts[j]
        if len(seg.roots) != want:
            raise GapInCoverage(f"segment {j} has {len(seg.roots)} roots, expected {want}", stage="audit-count")
        if seg.mrl_prefix is not None:
            raise MalformedProof("audit segments carry no MRL prefix", stage="audit-shape")

    rng = proof.mrl_prefix
    if (rng.lo, rng.hi) != (0, old.checkpoint.size):
        raise MalformedProof("MRL prefix must cover the old checkpoint", stage="audit-prefix")
    rng.check_structure()
    if rng.hi and range_to_root(rng) != old.checkpoint.root:
        raise VerificationFailed("MRL prefix does not match the old checkpoint", stage="audit-prefix")
    if rng.hi == 0 and old.checkpoint.root != EMPTY_ROOT:
        raise VerificationFailed("empty MRL with non-empty root", stage="audit-prefix")

    leaf_rng, leaf_root, leaf_size = _extend_leaflog(proof.leaflog_prefix, old, ())
    base = EMPTY_PROOF
    for j in range(k + 1):
        if j > 0:
            change = proof.changes[j - 1]
            _check_signature(change.checkpoint, public_key)
            if change.hist.prefix is not None:
                raise MalformedProof("audit hist proofs carry no prefix", stage="audit-shape")
            leaf_rng = append_leaves(leaf_rng, [leaf_hash(value_entry(_key_bytes(values[j - 1])))])
            leaf_root, leaf_size = range_to_root(leaf_rng), leaf_rng.hi
            map_root = _check_hist_core(change.checkpoint, mk, leaf_root, leaf_size, change.hist)
            rng = merge(rng, CompactRange.leaf(rng.hi, leaf_hash(map_root)))
            if range_to_root(rng) != change.checkpoint.root:
                raise InconsistentCheckpoint("change checkpoint is not on the audited MRL", stage="audit-chain")
            base = change.hist.map
        rng = _fold_between(rng, mk, leaf_root, leaf_size, proof.segments[j], base)
    if rng.hi != cp.size:
        raise GapInCoverage("folded MRL does not reach the checkpoint", stage="audit-count")
    final = range_to_root(rng) if rng.hi else EMPTY_ROOT
    if final != cp.root:
        raise VerificationFailed("folded MRL root differs from the checkpoint", stage="audit-chain")
    return HistRep(cp, leaf_root, leaf_size)


def ver_lookup(cp, key, value, proof, public_key=None) -> bool:
    try:
        check_lookup(cp, key, value, proof, public_key)
    except VerificationFailed:
        return False
    return True


def ver_absence(cp, key, proof, public_key=None) -> bool:
    try:
        check_absence(cp, key, proof, public_key)
    except VerificationFailed:
        return False
    return True


def ver_hist(cp, key, old, entries, proof, public_key=None) -> tuple[bool, HistRep | None]:
    try:
        return True, check_hist(cp, key, old, entries, proof, public_key)
    except VerificationFailed:
        return False, None


def ver_audit(cp, key, old, values, proof, public_key=None) -> tuple[bool, HistRep | None]:
    try:
        return True, check_audit(cp, key, old, values, proof, public_key)
    except VerificationFailed:
        return False, None


def verify_between(start, key, leaflog_root, leaflog_size, n, proof, end=None) -> bool:
    try:
        check_between(start, key, leaflog_root, leaflog_size, n, proof, end)
    except VerificationFailed:
        return False
    return True
