import random

import pytest
from hypothesis import given, settings, strategies as st

from mog.errors import DecodeError, DuplicateKey, MalformedProof, VerificationFailed
from mog.smt import (
    DEFAULT_LEAF,
    DEFAULTS,
    DEPTH,
    EMPTY_PROOF,
    MapInclusionProof,
    SparseMap,
    apply_delta,
    check_inclusion,
    default_hash,
    map_key,
    naive_root,
    proof_delta,
    root_from_proof,
    verify_inclusion,
)

from oracles import ref_leaf, ref_node, ref_smt_root, sha

keys32 = st.binary(min_size=32, max_size=32)


def rand32(rnd):
    return rnd.getrandbits(256).to_bytes(32, "big")


def test_default_chain():
    assert default_hash(0) == DEFAULT_LEAF == ref_leaf(b"")
    assert default_hash(1) == ref_node(ref_leaf(b""), ref_leaf(b""))
    for h in range(1, DEPTH + 1):
        assert DEFAULTS[h] == ref_node(DEFAULTS[h - 1], DEFAULTS[h - 1])
    assert len(DEFAULTS) == DEPTH + 1


def test_map_key_is_sha256():
    assert map_key("alice") == sha(b"alice") == map_key(b"alice")


def test_empty_map_root_is_top_default():
    m = SparseMap()
    assert m.version == 0 and m.size() == 0
    assert m.root() == DEFAULTS[DEPTH]
    assert m.get(b"\x01" * 32) == DEFAULT_LEAF
    assert m.prove_inclusion(b"\x01" * 32) == EMPTY_PROOF


@settings(max_examples=30, deadline=None)
@given(st.lists(st.dictionaries(keys32, keys32, max_size=6), min_size=1, max_size=4))
def test_roots_match_reference_across_versions(batches):
    m = SparseMap()
    state = {}
    for batch in batches:
        m.batch_update(list(batch.items()))
        state.update(batch)
        assert m.root() == ref_smt_root(state) == naive_root(state)
        assert m.size() == len(state)
    for k, v in state.items():
        assert m.get(k) == v


def test_close_keys_share_long_prefixes():
    base = bytearray(32)
    ks = []
    for flip in (255, 254, 200, 3, 0):
        k = bytearray(base)
        k[flip // 8] ^= 0x80 >> (flip % 8)
        ks.append(bytes(k))
    ks.append(bytes(base))
    items = {k: sha(k) for k in ks}
    m = SparseMap()
    m.batch_update(list(items.items()))
    assert m.root() == ref_smt_root(items)
    for k, v in items.items():
        assert verify_inclusion(m.root(), k, v, m.prove_inclusion(k))


@settings(max_examples=25, deadline=None)
@given(st.dictionaries(keys32, keys32, min_size=1, max_size=12), keys32)
def test_proofs_verify_and_absence_proves_default(items, probe):
    m = SparseMap()
    m.batch_update(list(items.items()))
    root = m.root()
    for k, v in items.items():
        p = m.prove_inclusion(k)
        check_inclusion(root, k, v, p)
        assert not verify_inclusion(root, k, sha(v), p)
    if probe not in items:
        p = m.prove_inclusion(probe)
        assert verify_inclusion(root, probe, DEFAULT_LEAF, p)
        assert root_from_proof(probe, DEFAULT_LEAF, p) == root


def test_old_versions_stay_provable():
    rnd = random.Random(1)
    m = SparseMap()
    history = []
    state = {}
    for _ in range(5):
        batch = {rand32(rnd): rand32(rnd) for _ in range(20)}
        if state:
            batch[next(iter(state))] = rand32(rnd)  # overwrite one key
        m.batch_update(list(batch.items()))
        state = {**state, **batch}
        history.append(dict(state))
    for v, snap in enumerate(history, 1):
        assert m.root(v) == ref_smt_root(snap)
        k = rnd.choice(list(snap))
        assert verify_inclusion(m.root(v), k, snap[k], m.prove_inclusion(k, v))
        assert sorted(m.items(v)) == sorted(snap.items())


def test_batch_rejections():
    m = SparseMap()
    k = b"\x05" * 32
    with pytest.raises(DuplicateKey):
        m.batch_update([(k, b"\x01" * 32), (k, b"\x02" * 32)])
    with pytest.raises(ValueError):
        m.batch_update([(b"short", b"\x01" * 32)])
    assert m.version == 0


def test_parallel_update_is_deterministic():
    rnd = random.Random(7)
    batches = [[(rand32(rnd), rand32(rnd)) for _ in range(300)] for _ in range(3)]
    serial, parallel = SparseMap(), SparseMap(workers=4)
    for b in batches:
        assert serial.batch_update(b) == parallel.batch_update(b)
    k = batches[1][17][0]
    assert serial.prove_inclusion(k) == parallel.prove_inclusion(k)


# ---------------------------------------------------------------- proof encoding


def test_proof_encoding_round_trip_and_size():
    rnd = random.Random(3)
    m = SparseMap()
    m.batch_update([(rand32(rnd), rand32(rnd)) for _ in range(64)])
    k = m.items()[10][0]
    p = m.prove_inclusion(k)
    raw = p.to_bytes()
    assert len(raw) == 32 + 32 * p.non_default_count()
    assert MapInclusionProof.from_bytes(raw) == p
    # about log2(64) + 1 non-default siblings for 64 random keys
    assert 3 <= p.non_default_count() <= 14
    with pytest.raises(DecodeError):
        MapInclusionProof.from_bytes(raw[:-1])
    with pytest.raises(DecodeError):
        MapInclusionProof.from_bytes(raw + b"\x00")


def test_non_canonical_proofs_are_rejected():
    explicit_default = MapInclusionProof(1, (DEFAULTS[0],))
    with pytest.raises(MalformedProof):
        explicit_default.expand()
    with pytest.raises(MalformedProof):
        MapInclusionProof(0b11, (b"\x01" * 32,)).expand()
    with pytest.raises(MalformedProof):
        MapInclusionProof(1 << DEPTH, ()).expand()
    with pytest.raises(MalformedProof):
        check_inclusion(b"\x00" * 32, b"\x00" * 31, DEFAULT_LEAF, EMPTY_PROOF)
    with pytest.raises(VerificationFailed):
        check_inclusion(b"\x00" * 32, b"\x00" * 32, DEFAULT_LEAF, EMPTY_PROOF)


def test_from_full_is_canonical():
    full = list(DEFAULTS[:DEPTH])
    full[3] = b"\x09" * 32
    full[200] = b"\x0a" * 32
    p = MapInclusionProof.from_full(full)
    assert p.bitmap == (1 << 3) | (1 << 200)
    assert p.expand() == full


# ---------------------------------------------------------------- deltas


def test_delta_round_trip_over_versions():
    rnd = random.Random(11)
    m = SparseMap()
    watched = rand32(rnd)
    m.batch_update([(watched, rand32(rnd))] + [(rand32(rnd), rand32(rnd)) for _ in range(50)])
    prev = m.prove_inclusion(watched)
    for _ in range(6):
        m.batch_update([(rand32(rnd), rand32(rnd)) for _ in range(40)])
        cur = m.prove_inclusion(watched)
        delta = proof_delta(prev, cur)
        # decompression gives exactly the independently generated proof
        assert apply_delta(prev, delta) == cur
        assert [h for h, _ in delta] == sorted(h for h, _ in delta)
        prev = cur


def test_bad_deltas():
    full = list(DEFAULTS[:DEPTH])
    full[5] = b"\x01" * 32
    p = MapInclusionProof.from_full(full)
    with pytest.raises(MalformedProof):
        apply_delta(p, [(7, b"\x02" * 32), (6, b"\x03" * 32)])
    with pytest.raises(MalformedProof):
        apply_delta(p, [(5, b"\x01" * 32)])  # no-op entry
    with pytest.raises(MalformedProof):
        apply_delta(p, [(256, b"\x01" * 32)])
    assert apply_delta(p, [(5, DEFAULTS[5])]) == EMPTY_PROOF
    assert proof_delta(p, p) == ()


def test_keys_are_read_most_significant_bit_first():
    hi = bytes([0x80]) + bytes(31)
    lo = bytes(31) + bytes([0x01])
    m = SparseMap()
    m.batch_update([(hi, b"\x01" * 32), (lo, b"\x02" * 32)])
    # the two keys split at the root, so each proof's top sibling is the other's subtree
    p_hi = m.prove_inclusion(hi).expand()
    assert p_hi[DEPTH - 1] != DEFAULTS[DEPTH - 1]
    assert all(p_hi[h] == DEFAULTS[h] for h in range(DEPTH - 1))
