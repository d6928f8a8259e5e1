import random

import pytest

from mog import smt
from mog.compact import CompactRange
from mog.errors import (
    DecodeError,
    DuplicateKey,
    GapInCoverage,
    KeyNotFound,
    StaleAhead,
    UnknownCheckpoint,
    VerificationFailed,
)
from mog.log import ManualClock, Signer
from mog.merkle import EMPTY_ROOT
from mog.registry import (
    AbsenceProof,
    AuditProof,
    BetweenProof,
    HistProof,
    HistRep,
    LookupProof,
    Registry,
    check_audit,
    check_between,
    check_hist,
    check_lookup,
    map_leaf,
    value_entry,
    ver_absence,
    ver_audit,
    ver_hist,
    ver_lookup,
    verify_between,
)

from mutations import mutations, random_registry
from oracles import ref_leaf, ref_mth, ref_smt_root, sha


def rejects(fn) -> bool:
    try:
        fn()
    except (VerificationFailed, DecodeError):
        return True
    return False


@pytest.fixture
def reg():
    r = Registry(Signer("registry-tests"), clock=ManualClock(500))
    r.append([("alice", "a1"), ("bob", "b1")])
    r.append([("carol", "c1")])
    r.append([("alice", "a2")])
    r.append([])
    r.append([("bob", "b2"), ("alice", "a3")])
    r.append([("dave", "d1")])
    return r


def test_commitments_match_reference(reg):
    # leaf logs hold H(value), map leaves commit to (root, size), the MRL holds map roots
    assert reg.version == 6
    alice = [sha(v) for v in (b"a1", b"a2", b"a3")]
    assert reg.leaflogs[smt.map_key(b"alice")].root == ref_mth(alice)
    assert value_entry(b"a1") == sha(b"a1")
    assert map_leaf(ref_mth(alice), 3) == ref_leaf(ref_mth(alice) + (3).to_bytes(8, "big"))
    assert map_leaf(EMPTY_ROOT, 0) == smt.DEFAULT_LEAF
    state = {}
    roots = []
    for batch in reg.batches[1:]:
        for k, _ in batch:
            mk = smt.map_key(k)
            state[mk] = map_leaf(reg.leaf_root_at(mk, len(roots) + 1), reg.leaf_size_at(mk, len(roots) + 1))
        roots.append(ref_smt_root(state))
    assert reg.mrl.entries == roots
    assert reg.checkpoint.root == ref_mth(roots)
    assert reg.genesis.root == EMPTY_ROOT and reg.genesis.size == 0


def test_lookup_verifies_and_binds_value(reg):
    cp, pk = reg.checkpoint, reg.public_key
    for key, want in ((b"alice", b"a3"), (b"bob", b"b2"), (b"carol", b"c1"), (b"dave", b"d1")):
        value, proof = reg.lookup(key)
        assert value == want
        check_lookup(cp, key, value, proof, pk)
        assert not ver_lookup(cp, key, b"a2", proof, pk)
        assert not ver_lookup(cp, b"mallory", value, proof, pk)
        assert LookupProof.from_bytes(proof.to_bytes()) == proof
    with pytest.raises(KeyNotFound):
        reg.lookup("nobody")


def test_lookup_against_other_key_or_signer(reg):
    value, proof = reg.lookup("alice")
    assert not ver_lookup(reg.checkpoint, "alice", value, proof, Signer("other").public_key)
    assert not ver_lookup(reg.checkpoints[5], "alice", value, proof, reg.public_key)


def test_absence(reg):
    p = reg.prove_absence("zed")
    assert ver_absence(reg.checkpoint, "zed", p, reg.public_key)
    assert AbsenceProof.from_bytes(p.to_bytes()) == p
    assert not ver_absence(reg.checkpoint, "alice", p, reg.public_key)
    with pytest.raises(DuplicateKey):
        reg.prove_absence("alice")
    empty = Registry(Signer("empty"), clock=ManualClock(1))
    assert ver_absence(empty.checkpoint, "x", empty.prove_absence("x"), empty.public_key)


@pytest.mark.parametrize("key", ["alice", "bob", "carol", "dave", "nobody"])
def test_hist_from_every_old_version(reg, key):
    cp, pk = reg.checkpoint, reg.public_key
    want_new = reg.hist_rep_at(key, reg.version)
    history = reg.table.get(key.encode(), [])
    for v in range(reg.version + 1):
        old = reg.hist_rep_at(key, v)
        values, proof = reg.hist(key, old)
        assert values == history[old.leaflog_size :]
        assert check_hist(cp, key, old, values, proof, pk) == want_new
        assert HistProof.from_bytes(proof.to_bytes()) == proof
        if values:
            ok, _ = ver_hist(cp, key, old, values[:-1], proof, pk)
            assert not ok


def test_hist_at_intermediate_version(reg):
    old = reg.empty_hist_rep()
    values, proof = reg.hist("alice", old, version=3)
    assert values == [b"a1", b"a2"]
    assert check_hist(reg.checkpoints[3], "alice", old, values, proof, reg.public_key) == reg.hist_rep_at("alice", 3)


@pytest.mark.parametrize("key", ["alice", "bob", "carol", "dave", "nobody"])
def test_audit_from_every_old_version(reg, key):
    cp, pk = reg.checkpoint, reg.public_key
    for v in range(reg.version + 1):
        old = reg.hist_rep_at(key, v)
        values, proof = reg.audit(key, old)
        assert check_audit(cp, key, old, values, proof, pk) == reg.hist_rep_at(key, reg.version)
        assert AuditProof.from_bytes(proof.to_bytes()) == proof
        # every version after the old checkpoint is accounted for exactly once
        assert sum(len(s.roots) for s in proof.segments) + len(proof.changes) == reg.version - v


def test_audit_detects_a_silently_changed_leaf_log(reg):
    """A server that rewrites alice's history at version 4 cannot hide it."""
    evil = Registry(reg.signer, clock=ManualClock(500))
    for v, batch in enumerate(reg.batches[1:], 1):
        evil.append(batch if v != 4 else [("alice", "sneaky")])
    old = reg.hist_rep_at("alice", 3)
    values, proof = evil.audit("alice", old)
    # the rewrite shows up as an extra value the client can see
    assert b"sneaky" in values
    # pretending it never happened fails verification
    hidden = [x for x in values if x != b"sneaky"]
    ok, _ = ver_audit(evil.checkpoint, "alice", old, hidden, proof, evil.public_key)
    assert not ok


def test_audit_detects_an_omitted_root(reg):
    old = reg.hist_rep_at("carol", 2)
    values, proof = reg.audit("carol", old)
    seg = proof.segments[-1]
    short = BetweenProof(seg.roots[:-1], seg.deltas[:-1])
    forged = AuditProof(proof.mrl_prefix, proof.leaflog_prefix, proof.changes, proof.segments[:-1] + (short,))
    with pytest.raises(GapInCoverage):
        check_audit(reg.checkpoint, "carol", old, values, forged, reg.public_key)


def test_audit_rejects_mismatched_old_state(reg):
    old = reg.hist_rep_at("alice", 2)
    bad = HistRep(old.checkpoint, old.leaflog_root, old.leaflog_size + 1)
    with pytest.raises((StaleAhead, UnknownCheckpoint)):
        reg.audit("alice", bad)
    foreign = Registry(Signer("foreign"), clock=ManualClock(1))
    foreign.append([("alice", "x")])
    with pytest.raises(UnknownCheckpoint):
        reg.hist("alice", foreign.hist_rep_at("alice", 1))
    future = HistRep(reg.checkpoint, old.leaflog_root, 9)
    with pytest.raises(StaleAhead):
        reg.hist("alice", future)


def test_between_proofs(reg):
    # carol is unchanged in versions 3..6
    mk = smt.map_key(b"carol")
    root, size = reg.leaf_root_at(mk, 2), reg.leaf_size_at(mk, 2)
    proof = reg.prove_between("carol", 2, 4)
    assert len(proof.roots) == 4
    rng = check_between(reg.checkpoints[2], "carol", root, size, 4, proof, end=reg.checkpoint)
    assert (rng.lo, rng.hi) == (0, 6)
    assert BetweenProof.from_bytes(proof.to_bytes()) == proof
    assert not verify_between(reg.checkpoints[2], "carol", root, size, 3, proof)
    assert not verify_between(reg.checkpoints[2], "carol", sha(b"x"), size, 4, proof)
    assert not verify_between(reg.checkpoints[2], "alice", root, size, 4, proof)
    assert not verify_between(reg.checkpoints[2], "carol", root, size, 4, proof, end=reg.checkpoints[5])
    with pytest.raises(UnknownCheckpoint):
        reg.prove_between("alice", 1, 3)
    with pytest.raises(UnknownCheckpoint):
        reg.prove_between("carol", 5, 3)
    assert reg.prove_between("carol", 3, 0) == BetweenProof()


def test_frames_reject_wrong_tag_and_length(reg):
    _, proof = reg.lookup("alice")
    raw = proof.to_bytes()
    with pytest.raises(DecodeError):
        HistProof.from_bytes(raw)
    with pytest.raises(DecodeError):
        LookupProof.from_bytes(raw[:-1])
    with pytest.raises(DecodeError):
        LookupProof.from_bytes(raw + b"\x00")
    with pytest.raises(DecodeError):
        LookupProof.from_bytes(raw[:3])


def test_hist_rep_codec(reg):
    rep = reg.hist_rep_at("alice", 5)
    raw = rep.to_bytes()
    assert len(raw) == 152
    assert HistRep.from_bytes(raw) == rep
    with pytest.raises(DecodeError):
        HistRep.from_bytes(raw[:-1])


def test_duplicate_key_in_batch():
    r = Registry(Signer("dup"), clock=ManualClock(1))
    with pytest.raises(DuplicateKey):
        r.append([("a", "1"), ("a", "2")])
    assert r.version == 0


def test_persistence_round_trip(reg, tmp_path):
    reg.save(str(tmp_path))
    back = Registry.load(str(tmp_path))
    assert back.checkpoints == reg.checkpoints
    assert back.public_key == reg.public_key
    # saving again is incremental and loading still agrees
    back.clock = ManualClock(900)
    back.append([("erin", "e1")])
    back.save(str(tmp_path))
    again = Registry.load(str(tmp_path))
    assert again.checkpoint == back.checkpoint
    value, proof = again.lookup("erin")
    check_lookup(back.checkpoint, "erin", value, proof, back.public_key)


def test_persistence_detects_tampering(reg, tmp_path):
    reg.save(str(tmp_path))
    leaf_files = sorted((tmp_path / "leaflogs").iterdir())
    data = leaf_files[0].read_bytes()
    leaf_files[0].write_bytes(data[:-1] + bytes([data[-1] ^ 1]))
    with pytest.raises(DecodeError):
        Registry.load(str(tmp_path))


def test_every_single_field_mutation_is_rejected():
    for case in range(12):
        rnd = random.Random(case)
        r = random_registry(rnd)
        cp, pk = r.checkpoint, r.public_key
        key = rnd.choice(sorted(r.table))
        value, lp = r.lookup(key)
        for path, m in mutations(lp):
            assert rejects(lambda: check_lookup(cp, key, value, m, pk)), path
        old = r.hist_rep_at(key, rnd.randint(0, r.version))
        values, hp = r.hist(key, old)
        for path, m in mutations(hp):
            assert rejects(lambda: check_hist(cp, key, old, values, m, pk)), path
        values, ap = r.audit(key, old)
        for path, m in mutations(ap):
            assert rejects(lambda: check_audit(cp, key, old, values, m, pk)), path
        for path, m in mutations(values):
            assert rejects(lambda: check_audit(cp, key, old, m, ap, pk)), path


def test_version_zero_hist():
    r = Registry(Signer("v0"), clock=ManualClock(1))
    old = r.empty_hist_rep()
    values, proof = r.hist("k", old)
    assert values == []
    assert check_hist(r.checkpoint, "k", old, values, proof, r.public_key) == old
    moved = HistProof(proof.map, CompactRange(1, 1, ()), proof.prefix)
    assert rejects(lambda: check_hist(r.checkpoint, "k", old, values, moved, r.public_key))
