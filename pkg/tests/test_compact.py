import hashlib
import random

import pytest
from hypothesis import given, settings, strategies as st

from mog.compact import (
    CompactRange,
    ConsistencyProof,
    InclusionProof,
    append_leaves,
    check_consistency,
    check_inclusion,
    check_multi_inclusion,
    compute_range,
    decompose,
    incremental_update,
    merge,
    range_to_root,
    verify_consistency,
    verify_inclusion,
)
from mog.errors import (
    DecodeError,
    EmptyRange,
    MalformedProof,
    NonContiguousRanges,
    NotPrefixRange,
    RangeOutOfBounds,
    ShrinkingLog,
    VerificationFailed,
)
from mog.log import LogState
from mog.merkle import EMPTY_ROOT, NodeId, leaf_hash, mth, node_hash

from oracles import ref_cover, ref_leaf, ref_mth, ref_node, ref_subtree


def entries(n):
    return [f"e{i}".encode() for i in range(n)]


# ---------------------------------------------------------------- hashing


def test_empty_root_is_hash_of_nothing():
    assert EMPTY_ROOT == hashlib.sha256(b"").digest()
    with pytest.raises(EmptyRange):
        mth([])


@given(st.binary(max_size=64), st.binary(min_size=32, max_size=32), st.binary(min_size=32, max_size=32))
def test_domain_separated_hashes_match_reference(x, l, r):
    assert leaf_hash(x) == ref_leaf(x)
    assert node_hash(l, r) == ref_node(l, r)
    # a leaf payload shaped like two digests never collides with the node hash
    assert leaf_hash(l + r) != node_hash(l, r)


def test_rfc6962_reference_tree():
    # the eight inputs from the certificate-transparency reference test suite
    inputs = [bytes.fromhex(h) for h in ["", "00", "10", "2021", "3031", "40414243", "5051525354555657", "606162636465666768696a6b6c6d6e6f"]]
    assert mth(inputs[:1]).hex() == "6e340b9cffb37a989ca544e6bb780a2c78901d3fb33738768511a30617afa01d"
    assert mth(inputs).hex() == "5dc9da79a70659a9ad559cb701ded9a2ab9d823aad2f4960cfe370eff4604328"


@given(st.lists(st.binary(max_size=8), min_size=1, max_size=40))
def test_mth_matches_oracle(es):
    assert mth(es) == ref_mth(es)


def test_node_id_geometry():
    n = NodeId(2, 3)
    assert (n.begin, n.end) == (12, 16)
    assert n.parent() == NodeId(3, 1)
    assert n.sibling() == NodeId(2, 2)
    assert n.children() == (NodeId(1, 6), NodeId(1, 7))
    assert not n.is_left()
    assert NodeId.from_bytes(n.to_bytes()) == n
    with pytest.raises(ValueError):
        NodeId(-1, 0)


# ---------------------------------------------------------------- decomposition


def test_worked_example_decompositions():
    as_pairs = lambda ids: [(n.height, n.index) for n in ids]  # noqa: E731
    assert as_pairs(decompose(3, 11)) == [(0, 3), (2, 1), (1, 4), (0, 10)]
    assert as_pairs(decompose(11, 16)) == [(0, 11), (2, 3)]
    assert decompose(5, 5) == []


@given(st.integers(0, 3000), st.integers(0, 3000))
def test_decompose_is_the_maximal_cover(a, b):
    lo, hi = min(a, b), max(a, b)
    ids = decompose(lo, hi)
    assert {(n.height, n.index) for n in ids} == ref_cover(lo, hi)
    # left to right, contiguous, tiling [lo, hi)
    cursor = lo
    for n in ids:
        assert n.begin == cursor
        cursor = n.end
    assert cursor == hi


@given(st.integers(0, 1 << 40), st.integers(1, 1 << 20))
def test_size_bound_and_two_per_height(lo, width):
    ids = decompose(lo, lo + width)
    assert len(ids) <= 2 * (width.bit_length())  # 2 (log2 w + 1) with floor
    heights = [n.height for n in ids]
    assert all(heights.count(h) <= 2 for h in set(heights))


# ---------------------------------------------------------------- range digests


@pytest.mark.parametrize("n", [1, 2, 3, 7, 16, 33])
def test_compute_range_digests_are_subtree_hashes(n):
    es = entries(n)
    log = LogState(es)
    for lo in range(n + 1):
        for hi in range(lo, n + 1):
            rng = compute_range(log, lo, hi)
            rng.check_structure()
            for node, d in rng.nodes:
                assert d == ref_subtree(es, node.height, node.index)


def test_compute_range_from_plain_entries_and_bounds():
    es = entries(9)
    assert compute_range(es, 2, 7) == compute_range(LogState(es), 2, 7)
    with pytest.raises(RangeOutOfBounds):
        compute_range(es, 3, 10)
    with pytest.raises(RangeOutOfBounds):
        compute_range(es, 5, 4)


def test_figure_one_merge_shares_nodes():
    log = LogState(entries(16))
    left, right = compute_range(log, 3, 11), compute_range(log, 11, 16)
    both = merge(left, right)
    ids = lambda r: [(n.height, n.index) for n in r.ids]  # noqa: E731
    assert ids(right) == [(0, 11), (2, 3)]
    assert ids(both) == [(0, 3), (2, 1), (3, 1)]
    assert {(0, 3), (2, 1)} <= set(ids(left)) & set(ids(both))
    assert both == compute_range(log, 3, 16)


@settings(max_examples=60)
@given(st.integers(1, 120), st.data())
def test_merge_of_any_split_equals_direct(n, data):
    log = LogState(entries(n))
    cuts = sorted(data.draw(st.lists(st.integers(0, n), max_size=5)))
    points = [0] + cuts + [n]
    parts = [compute_range(log, a, b) for a, b in zip(points, points[1:])]
    assert merge(*parts) == compute_range(log, 0, n)
    # associativity: fold from the right gives the same
    acc = parts[-1]
    for p in reversed(parts[:-1]):
        acc = merge(p, acc)
    assert acc == compute_range(log, 0, n)


def test_merge_errors():
    log = LogState(entries(8))
    with pytest.raises(NonContiguousRanges):
        merge(compute_range(log, 0, 3), compute_range(log, 4, 8))
    with pytest.raises(EmptyRange):
        merge()
    assert merge(at=5) == CompactRange.empty(5)


@pytest.mark.parametrize("n", range(1, 70))
def test_range_to_root_matches_oracle(n):
    es = entries(n)
    assert range_to_root(compute_range(LogState(es), 0, n)) == ref_mth(es)


def test_range_to_root_errors():
    log = LogState(entries(4))
    with pytest.raises(NotPrefixRange):
        range_to_root(compute_range(log, 1, 4))
    with pytest.raises(EmptyRange):
        range_to_root(CompactRange.empty(0))


def test_incremental_update_and_append_leaves():
    es = entries(21)
    log = LogState(es)
    stored = compute_range(log, 0, 8)
    assert incremental_update(stored, compute_range(log, 8, 21)) == compute_range(log, 0, 21)
    assert append_leaves(stored, [ref_leaf(e) for e in es[8:]]) == compute_range(log, 0, 21)
    with pytest.raises(NonContiguousRanges):
        incremental_update(stored, compute_range(log, 9, 21))
    with pytest.raises(NotPrefixRange):
        incremental_update(compute_range(log, 1, 8), compute_range(log, 8, 9))


# ---------------------------------------------------------------- structure and encoding


def test_check_structure_rejects_wrong_shapes():
    log = LogState(entries(16))
    good = compute_range(log, 3, 11)
    good.check_structure()
    shuffled = CompactRange(3, 11, good.nodes[::-1])
    with pytest.raises(MalformedProof):
        shuffled.check_structure()
    short = CompactRange(3, 11, good.nodes[:-1])
    with pytest.raises(MalformedProof):
        short.check_structure()
    bad_digest = good.with_digest(0, b"\x00" * 31)
    with pytest.raises(MalformedProof):
        bad_digest.check_structure()


@given(st.integers(0, 200), st.integers(0, 200))
def test_range_codecs_round_trip(a, b):
    lo, hi = min(a, b), max(a, b)
    rng = compute_range(LogState(entries(hi)), lo, hi)
    assert CompactRange.from_bytes(rng.to_bytes(), lo=lo) == rng
    assert CompactRange.from_text(rng.to_text(), lo=lo) == rng


def test_range_decode_errors():
    rng = compute_range(LogState(entries(10)), 2, 9)
    raw = rng.to_bytes()
    with pytest.raises(DecodeError):
        CompactRange.from_bytes(raw[:-1])
    with pytest.raises(DecodeError):
        CompactRange.from_bytes(raw + b"\x00")
    with pytest.raises(MalformedProof):
        CompactRange.from_bytes(raw, lo=3)
    with pytest.raises(DecodeError):
        CompactRange.from_text("0 1 zz")


# ---------------------------------------------------------------- inclusion and consistency


@settings(max_examples=80)
@given(st.integers(1, 200), st.data())
def test_inclusion_round_trip_and_wrong_leaf(n, data):
    es = entries(n)
    log = LogState(es)
    i = data.draw(st.integers(0, n - 1))
    proof = log.prove_incl_at(i)
    root = ref_mth(es)
    assert verify_inclusion(root, n, ref_leaf(es[i]), i, proof)
    assert not verify_inclusion(root, n, ref_leaf(b"other"), i, proof)
    assert InclusionProof.from_bytes(proof.to_bytes()) == proof


def test_inclusion_rejects_shifted_index_and_tampered_digest():
    es = entries(13)
    log = LogState(es)
    root = ref_mth(es)
    proof = log.prove_incl_at(6)
    with pytest.raises(MalformedProof):
        check_inclusion(root, 13, ref_leaf(es[6]), 7, proof)
    bad = InclusionProof(6, proof.left.with_digest(0, b"\x11" * 32), proof.right)
    with pytest.raises(VerificationFailed) as err:
        check_inclusion(root, 13, ref_leaf(es[6]), 6, bad)
    assert err.value.stage == "inclusion-root"
    with pytest.raises(MalformedProof):
        check_inclusion(root, 13, ref_leaf(es[6]), 13, proof)


def test_multi_inclusion():
    es = entries(20)
    log = LogState(es)
    idx = [2, 3, 9, 19]
    bounds = [-1] + idx + [20]
    gaps = [compute_range(log, a + 1, b) for a, b in zip(bounds, bounds[1:])]
    leaves = [(i, ref_leaf(es[i])) for i in idx]
    check_multi_inclusion(ref_mth(es), 20, leaves, gaps)
    with pytest.raises(VerificationFailed):
        check_multi_inclusion(ref_mth(es), 20, [(2, ref_leaf(b"x"))] + leaves[1:], gaps)
    with pytest.raises(MalformedProof):
        check_multi_inclusion(ref_mth(es), 20, leaves[::-1], gaps)


@settings(max_examples=80)
@given(st.integers(0, 150), st.integers(0, 150))
def test_consistency_round_trip(a, b):
    old, new = min(a, b), max(a, b)
    es = entries(new)
    log = LogState(es)
    proof = log.prove_range_append(old, new)
    full = check_consistency(ref_mth(es[:old]), old, ref_mth(es), new, proof)
    assert full == compute_range(log, 0, new) if new else full.is_empty()
    assert ConsistencyProof.from_bytes(proof.to_bytes()) == proof


def test_consistency_rejections():
    es = entries(12)
    log = LogState(es)
    proof = log.prove_range_append(5, 12)
    old_root, new_root = ref_mth(es[:5]), ref_mth(es)
    assert verify_consistency(old_root, 5, new_root, 12, proof)
    # a forked old view
    assert not verify_consistency(ref_mth(entries(4) + [b"fork"]), 5, new_root, 12, proof)
    # a forked new view
    assert not verify_consistency(old_root, 5, ref_mth(es[:11] + [b"fork"]), 12, proof)
    with pytest.raises(ShrinkingLog):
        check_consistency(new_root, 12, old_root, 5, proof)
    with pytest.raises(MalformedProof):
        check_consistency(old_root, 6, new_root, 12, proof)


def test_random_tampering_is_caught():
    rnd = random.Random(4)
    es = entries(40)
    log = LogState(es)
    root = ref_mth(es)
    for _ in range(200):
        i = rnd.randrange(40)
        p = log.prove_incl_at(i)
        side = p.left if p.left.nodes and (not p.right.nodes or rnd.random() < 0.5) else p.right
        pos = rnd.randrange(len(side.nodes))
        flipped = bytearray(side.digests[pos])
        flipped[rnd.randrange(32)] ^= 1 << rnd.randrange(8)
        new_side = side.with_digest(pos, bytes(flipped))
        bad = InclusionProof(i, new_side, p.right) if side is p.left else InclusionProof(i, p.left, new_side)
        assert not verify_inclusion(root, 40, ref_leaf(es[i]), i, bad)
