"""Witness cosigning gossip for checkpoints.

Broadcast (server side): the server offers a new checkpoint to every
witness; a witness checks the server signature, answers with its freshest
stored checkpoint, receives a consistency proof from that checkpoint to the
new one, and stores the new checkpoint if the proof verifies.

Collection (client side): a client asks witnesses for their freshest
checkpoints, each countersigned, and accepts a checkpoint once at least Q
distinct witnesses vouch for the identical body.
"""

from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Iterable, Mapping, Sequence

from .compact import ConsistencyProof, check_consistency
from .errors import (
    BadSignature,
    DecodeError,
    InconsistentCheckpoint,
    InvalidParameters,
    ShrinkingLog,
    VerificationFailed,
)
from .log import CHECKPOINT_SIZE, SIGNATURE_SIZE, Checkpoint, Signer, verify_signature
from .merkle import EMPTY_ROOT

SIGNED_CHECKPOINT_SIZE = CHECKPOINT_SIZE + SIGNATURE_SIZE  # 176
DEFAULT_CAPACITY = 1024

_U16 = struct.Struct(">H")
_U32 = struct.Struct(">I")
_FRAME = struct.Struct(">BI")


# ---------------------------------------------------------------- quorum math


def _adversary_bound(n_w: int, v: int) -> int:
    if n_w < 2 or v < 1 or (n_w - 1) % v:
        raise InvalidParameters(f"N_W={n_w} is not V*F+1 for V={v}")
    return (n_w - 1) // v


def quorum_threshold(n_w: int, v: int) -> tuple[int, int]:
    """(F, Q) for N_W = V*F + 1 witnesses: Q = ceil((V+1)F/2) + 1."""
    f = _adversary_bound(n_w, v)
    return f, math.ceil((v + 1) * f / 2) + 1


def min_uptime(n_w: int, v: int) -> Fraction:
    """Lowest honest-witness uptime that still guarantees liveness."""
    f = _adversary_bound(n_w, v)
    return Fraction((v + 3) * f + 2, 2 * n_w)


@dataclass(frozen=True)
class QuorumPolicy:
    n_w: int
    f: int
    q: int
    required: frozenset = frozenset()
    v: int | None = None

    @classmethod
    def for_witnesses(cls, n_w: int, v: int, required: Iterable[int] = ()) -> "QuorumPolicy":
        f, q = quorum_threshold(n_w, v)
        return cls(n_w, f, q, frozenset(required), v)

    @classmethod
    def custom(cls, n_w: int, f: int, q: int, required: Iterable[int] = ()) -> "QuorumPolicy":
        """Arbitrary threshold, including unsafe ones (used to test the games)."""
        if not 1 <= q <= n_w or f < 0:
            raise InvalidParameters(f"Q={q} outside 1..{n_w}")
        return cls(n_w, f, q, frozenset(required))

    def is_safe(self) -> bool:
        """Any two accepted checkpoints share at least F+1 witnesses."""
        return 2 * self.q > self.n_w + self.f


# ---------------------------------------------------------------- messages


class MsgType(enum.IntEnum):
    OFFER = 1
    NEED_PROOF = 2
    PROOF = 3
    COLLECT_REQ = 4
    COLLECT_RESP = 5
    AUDIT_RECORD = 6


def encode_frame(kind: MsgType, body: bytes) -> bytes:
    return _FRAME.pack(int(kind), len(body)) + body


def decode_frame(data: bytes, offset: int = 0) -> tuple[MsgType, bytes, int]:
    try:
        kind, n = _FRAME.unpack_from(data, offset)
        kind = MsgType(kind)
    except (struct.error, ValueError) as exc:
        raise DecodeError(f"bad frame header: {exc}") from None
    start = offset + _FRAME.size
    if len(data) < start + n:
        raise DecodeError("truncated frame body")
    return kind, bytes(data[start : start + n]), start + n


def _opt_checkpoint(cp: Checkpoint | None) -> bytes:
    return b"\x00" if cp is None else b"\x01" + cp.to_bytes()


def _read_opt_checkpoint(data: bytes, off: int) -> tuple[Checkpoint | None, int]:
    if off >= len(data) or data[off] not in (0, 1):
        raise DecodeError("bad optional checkpoint")
    if data[off] == 0:
        return None, off + 1
    return Checkpoint.from_bytes(data[off + 1 : off + 1 + CHECKPOINT_SIZE]), off + 1 + CHECKPOINT_SIZE


def offer_msg(server_id: int, cp: Checkpoint) -> bytes:
    return encode_frame(MsgType.OFFER, _U32.pack(server_id) + cp.to_bytes())


def need_proof_msg(server_id: int, freshest: Checkpoint | None) -> bytes:
    return encode_frame(MsgType.NEED_PROOF, _U32.pack(server_id) + _opt_checkpoint(freshest))


def proof_msg(server_id: int, proof: ConsistencyProof) -> bytes:
    return encode_frame(MsgType.PROOF, _U32.pack(server_id) + proof.to_bytes())


def collect_req_msg(server_id: int, gamma: int) -> bytes:
    return encode_frame(MsgType.COLLECT_REQ, _U32.pack(server_id) + _U16.pack(gamma))


@dataclass(frozen=True)
class SignedCheckpoint:
    checkpoint: Checkpoint
    witness_id: int
    signature: bytes

    def to_bytes(self) -> bytes:
        """176 bytes: the checkpoint followed by the witness signature over it."""
        return self.checkpoint.to_bytes() + self.signature

    @classmethod
    def from_bytes(cls, data: bytes, witness_id: int) -> "SignedCheckpoint":
        if len(data) != SIGNED_CHECKPOINT_SIZE:
            raise DecodeError(f"signed checkpoint must be {SIGNED_CHECKPOINT_SIZE} bytes")
        return cls(Checkpoint.from_bytes(data[:CHECKPOINT_SIZE]), witness_id, bytes(data[CHECKPOINT_SIZE:]))

    def verify(self, witness_key: bytes) -> bool:
        return verify_signature(witness_key, self.checkpoint.to_bytes(), self.signature)


@dataclass(frozen=True)
class CollectResponse:
    witness_id: int
    server_id: int
    entries: tuple[SignedCheckpoint, ...]

    def to_bytes(self) -> bytes:
        body = _U32.pack(self.witness_id) + _U32.pack(self.server_id) + _U16.pack(len(self.entries))
        body += b"".join(e.to_bytes() for e in self.entries)
        return encode_frame(MsgType.COLLECT_RESP, body)

    @classmethod
    def from_bytes(cls, data: bytes) -> "CollectResponse":
        kind, body, end = decode_frame(data)
        if kind != MsgType.COLLECT_RESP or end != len(data):
            raise DecodeError("not a single collect response frame")
        if len(body) < 10:
            raise DecodeError("truncated collect response")
        wid, sid = _U32.unpack_from(body, 0)[0], _U32.unpack_from(body, 4)[0]
        (n,) = _U16.unpack_from(body, 8)
        if len(body) != 10 + n * SIGNED_CHECKPOINT_SIZE:
            raise DecodeError("collect response length mismatch")
        entries = tuple(
            SignedCheckpoint.from_bytes(body[10 + i * SIGNED_CHECKPOINT_SIZE : 10 + (i + 1) * SIGNED_CHECKPOINT_SIZE], wid)
            for i in range(n)
        )
        return cls(wid, sid, entries)


# Header bytes of a collect response beyond the 176-byte entries.
COLLECT_RESP_OVERHEAD = _FRAME.size + 10


@dataclass(frozen=True)
class AuditRecord:
    """Evidence of a server misbehaving: two checkpoints and the failed proof."""

    server_id: int
    old: Checkpoint | None
    new: Checkpoint
    proof: ConsistencyProof | None
    reason: str = ""

    def to_bytes(self) -> bytes:
        body = _U32.pack(self.server_id) + _opt_checkpoint(self.old) + self.new.to_bytes()
        body += b"\x00" if self.proof is None else b"\x01" + self.proof.to_bytes()
        return encode_frame(MsgType.AUDIT_RECORD, body)

    @classmethod
    def from_bytes(cls, data: bytes) -> "AuditRecord":
        kind, body, end = decode_frame(data)
        if kind != MsgType.AUDIT_RECORD or end != len(data):
            raise DecodeError("not a single audit record frame")
        (sid,) = _U32.unpack_from(body, 0)
        old, off = _read_opt_checkpoint(body, 4)
        new = Checkpoint.from_bytes(body[off : off + CHECKPOINT_SIZE])
        off += CHECKPOINT_SIZE
        proof = None
        if body[off : off + 1] == b"\x01":
            proof, off = ConsistencyProof.read(body, off + 1)
        else:
            off += 1
        if off != len(body):
            raise DecodeError("trailing bytes in audit record")
        return cls(sid, old, new, proof)


# ---------------------------------------------------------------- witness


class OfferStatus(enum.Enum):
    STORED = "stored"
    DUPLICATE = "duplicate"
    STALE = "stale"
    REJECTED = "rejected"


@dataclass
class OfferResult:
    status: OfferStatus
    error: VerificationFailed | None = None
    audit: AuditRecord | None = None

    @property
    def accepted(self) -> bool:
        return self.status in (OfferStatus.STORED, OfferStatus.DUPLICATE)


ProofChannel = Callable[[Checkpoint | None, Checkpoint], ConsistencyProof]


class WitnessState:
    """Checkpoints accepted per server, oldest first by (size, timestamp)."""

    def __init__(
        self,
        witness_id: int,
        signer: Signer,
        server_keys: Mapping[int, bytes],
        capacity: int = DEFAULT_CAPACITY,
    ):
        if capacity < 1:
            raise InvalidParameters("capacity must be positive")
        self.witness_id = witness_id
        self.signer = signer
        self.server_keys = dict(server_keys)
        self.capacity = capacity
        self.stored: dict[int, list[Checkpoint]] = {}
        self.audit_records: list[AuditRecord] = []
        self._sig_cache: dict[bytes, bytes] = {}

    @property
    def public_key(self) -> bytes:
        return self.signer.public_key

    def freshest(self, server_id: int) -> Checkpoint | None:
        lst = self.stored.get(server_id)
        return lst[-1] if lst else None

    def check_offer(self, server_id: int, new: Checkpoint) -> Checkpoint | None:
        """Step B2: verify the server signature; return the checkpoint to prove from."""
        key = self.server_keys.get(server_id)
        if key is None or not new.verify(key):
            raise BadSignature("server signature does not verify", stage="offer-signature")
        return self.freshest(server_id)

    def finish_offer(self, server_id: int, new: Checkpoint, old: Checkpoint | None, proof: ConsistencyProof) -> OfferResult:
        """Step B4: check consistency from ``old`` and store ``new``."""
        if old is not None and old != self.freshest(server_id):
            # the witness moved on in between; the proof no longer applies
            return OfferResult(OfferStatus.STALE)
        lst = self.stored.setdefault(server_id, [])
        if new in lst:
            return OfferResult(OfferStatus.DUPLICATE)
        if old is not None and new.freshness() < old.freshness():
            return OfferResult(OfferStatus.STALE, ShrinkingLog("offer older than stored", stage="offer-freshness"))
        old_root = old.root if old is not None else EMPTY_ROOT
        old_size = old.size if old is not None else 0
        try:
            check_consistency(old_root, old_size, new.root, new.size, proof)
        except VerificationFailed as exc:
            record = AuditRecord(server_id, old, new, proof, reason=exc.stage)
            self.audit_records.append(record)
            err = InconsistentCheckpoint(f"consistency check failed: {exc}", stage=exc.stage)
            return OfferResult(OfferStatus.REJECTED, err, record)
        lst.append(new)
        lst.sort(key=Checkpoint.freshness)
        while len(lst) > self.capacity:
            lst.pop(0)
        return OfferResult(OfferStatus.STORED)

    def process_offer(self, server_id: int, new: Checkpoint, proof_channel: ProofChannel) -> OfferResult:
        """Run steps B2 to B4 with ``proof_channel(old, new)`` standing in for the server."""
        try:
            old = self.check_offer(server_id, new)
        except BadSignature as exc:
            return OfferResult(OfferStatus.REJECTED, exc)
        return self.finish_offer(server_id, new, old, proof_channel(old, new))

    def countersign(self, cp: Checkpoint) -> SignedCheckpoint:
        raw = cp.to_bytes()
        sig = self._sig_cache.get(raw)
        if sig is None:
            sig = self._sig_cache[raw] = self.signer.sign(raw)
        return SignedCheckpoint(cp, self.witness_id, sig)

    def collect_response(self, server_id: int, gamma: int) -> CollectResponse:
        """Step C2: the min(gamma, stored) freshest checkpoints, countersigned."""
        if gamma < 1:
            raise InvalidParameters("gamma must be at least 1")
        lst = self.stored.get(server_id, [])
        chosen = lst[-gamma:][::-1]
        return CollectResponse(self.witness_id, server_id, tuple(self.countersign(c) for c in chosen))


# ---------------------------------------------------------------- client


def client_collect(
    responses: Iterable[CollectResponse],
    policy: QuorumPolicy,
    current: Checkpoint | None,
    server_key: bytes,
    witness_keys: Mapping[int, bytes],
) -> Checkpoint | None:
    """Step C3: freshest checkpoint vouched for by at least Q distinct witnesses.

    Returns None when no group qualifies or the winner does not advance
    ``current``.
    """
    groups: dict[bytes, tuple[Checkpoint, set[int]]] = {}
    server_ok: dict[bytes, bool] = {}
    for resp in responses:
        wkey = witness_keys.get(resp.witness_id)
        if wkey is None:
            continue
        for sc in resp.entries:
            if sc.witness_id != resp.witness_id or not sc.verify(wkey):
                continue
            body = sc.checkpoint.body()
            ok = server_ok.get(sc.checkpoint.to_bytes())
            if ok is None:
                ok = server_ok[sc.checkpoint.to_bytes()] = sc.checkpoint.verify(server_key)
            if not ok:
                continue
            groups.setdefault(body, (sc.checkpoint, set()))[1].add(resp.witness_id)
    best = None
    for cp, signers in groups.values():
        if len(signers) < policy.q or not policy.required <= signers:
            continue
        if best is None or cp.freshness() > best.freshness():
            best = cp
    if best is None:
        return None
    if current is not None and best.freshness() <= current.freshness():
        return None
    return best


def collect_bytes(gamma_counts: Sequence[int]) -> int:
    """Wire bytes of collect responses carrying the given entry counts."""
    return sum(COLLECT_RESP_OVERHEAD + SIGNED_CHECKPOINT_SIZE * n for n in gamma_counts)
