"""Scripted adversaries for the split-view and oscillation games.

Both games run against the real stack: honest witnesses are
:class:`WitnessState` objects checking real consistency proofs, clients
accept checkpoints only through :func:`client_collect`, and entries and
registry values are checked with the real verifiers.  The adversary runs
the server (so it can sign forked views), controls ``n_adv`` witnesses
(which countersign anything), and decides which honest witness hears
about which fork and in what order.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from ..compact import CompactRange, ConsistencyProof, verify_inclusion
from ..errors import KeyNotFound
from ..gossip import CollectResponse, QuorumPolicy, WitnessState, client_collect, quorum_threshold
from ..log import Checkpoint, LogState, ManualClock, Signer, ver_com
from ..merkle import leaf_hash
from ..registry import AuditChange, AuditProof, BetweenProof, HistProof, Registry, ver_audit, ver_lookup
from ..smt import map_key


@dataclass(frozen=True)
class GameConfig:
    n_w: int = 7
    v: int = 3
    q: int | None = None  # None: the safe threshold for (n_w, v)
    n_adv: int | None = None  # None: drawn from 0..F per seed
    uptime: float = 1.0
    gamma: int = 8
    gossip: bool = True

    @property
    def f(self) -> int:
        return quorum_threshold(self.n_w, self.v)[0]

    def policy(self) -> QuorumPolicy:
        f, q = quorum_threshold(self.n_w, self.v)
        return QuorumPolicy.custom(self.n_w, f, self.q if self.q is not None else q)


# Q = 4 with N_W = 7, F = 2 violates 2Q > N_W + F: two quorums can be disjoint in honest witnesses.
SANITY_SPLITVIEW = GameConfig(q=4, n_adv=2)
# Clients take whatever checkpoint the server hands them.
SANITY_OSCILLATION = GameConfig(gossip=False, n_adv=0)

_STALE_PROOF = ConsistencyProof(CompactRange.empty(0), CompactRange.empty(0))


@dataclass
class GameOutcome:
    won: bool
    accepted: dict[str, list[Checkpoint]] = field(default_factory=dict)
    audit_records: int = 0
    notes: list[str] = field(default_factory=list)


class _Network:
    """Witness pool: honest members verify, adversarial ones vouch for anything."""

    def __init__(self, cfg: GameConfig, rng: random.Random, server: Signer, server_id: int = 0):
        self.cfg = cfg
        self.rng = rng
        self.server_id = server_id
        self.server_key = server.public_key
        n_adv = cfg.n_adv if cfg.n_adv is not None else rng.randint(0, cfg.f)
        order = list(range(cfg.n_w))
        rng.shuffle(order)
        self.adversarial = set(order[:n_adv])
        self.witnesses = [
            WitnessState(w, Signer(f"game-witness-{w}"), {server_id: server.public_key}) for w in range(cfg.n_w)
        ]
        self.policy = cfg.policy()
        self.keys = {w.witness_id: w.public_key for w in self.witnesses}

    @property
    def honest(self) -> list[int]:
        return [w for w in range(self.cfg.n_w) if w not in self.adversarial]

    def offer(self, w: int, cp: Checkpoint, log: LogState) -> bool:
        """Offer ``cp`` to honest witness ``w``; the server proves from ``log``."""
        if self.rng.random() >= self.cfg.uptime:
            return False

        def prover(old, new):
            if old is None:
                return log.prove_range_append(0, new.size)
            if old.size > new.size:
                return _STALE_PROOF  # the witness drops the offer before checking it
            return log.prove_range_append(old.size, new.size)

        return self.witnesses[w].process_offer(self.server_id, cp, prover).accepted

    def collect(self, current: Checkpoint | None, pushed: list[Checkpoint]) -> Checkpoint | None:
        """One client request; adversarial witnesses return ``pushed``."""
        responses = []
        for w in range(self.cfg.n_w):
            wit = self.witnesses[w]
            if w in self.adversarial:
                chosen = pushed[-self.cfg.gamma :][::-1]
                responses.append(CollectResponse(w, self.server_id, tuple(wit.countersign(c) for c in chosen)))
            elif self.rng.random() < self.cfg.uptime:
                responses.append(wit.collect_response(self.server_id, self.cfg.gamma))
        return client_collect(responses, self.policy, current, self.server_key, self.keys)

    def audit_records(self) -> int:
        return sum(len(w.audit_records) for w in self.witnesses)


def _fork_orders(rng: random.Random, honest: list[int], names: tuple[str, str]) -> dict[int, tuple[str, ...]]:
    """Which fork(s) each honest witness is offered, in order."""
    a, b = names
    options = [(a,), (b,), (a, b), (b, a), ()]
    return {w: rng.choice(options) for w in honest}


# ---------------------------------------------------------------- split view


def _splitview_predicate(checked, accepted, candidate_entry_lists) -> bool:
    """Some client checked an entry at c0, and some accepted c1 no older
    than c0 commits to a mirror's entries that leave it out."""
    for entries in candidate_entry_lists:
        for c1 in accepted:
            if c1.size > len(entries) or not ver_com(c1, entries[: c1.size]):
                continue
            committed = set(entries[: c1.size])
            for c0, entry in checked:
                if c1.size >= c0.size and entry not in committed:
                    return True
    return False


def attack_splitview(cfg: GameConfig, seed: int, script: str = "fork") -> GameOutcome:
    """Play the split-view game once.

    ``fork``: the server forks its log after a common prefix; one fork
    carries an entry the other never gets, the victim is steered towards
    it and the other client towards the fork that keeps growing.
    ``honest``: one log, replayed faithfully.
    """
    if script not in ("fork", "honest"):
        raise ValueError(f"unknown script {script!r}")
    rng = random.Random(seed)
    server = Signer(f"game-server-{seed}")
    clock = ManualClock(1_000)
    net = _Network(cfg, rng, server)
    prefix = [f"common-{i}".encode() for i in range(rng.randint(1, 4))]
    forks = {"A": LogState(prefix), "B": LogState(prefix)}
    cp0 = Checkpoint.signed(forks["A"].root, len(prefix), clock(), server)
    chains = {"A": [cp0], "B": [cp0]}
    for w in net.honest:
        net.offer(w, cp0, forks["A"])

    if script == "fork":
        clock.advance()
        fresh_a = [f"a-{i}".encode() for i in range(rng.randint(1, 3))]
        fresh_b = [b"evil"] + [f"b-{i}".encode() for i in range(rng.randint(0, 2))]
        chains["A"].append(forks["A"].append(fresh_a, server, clock))
        chains["B"].append(forks["B"].append(fresh_b, server, clock))
        for w, order in _fork_orders(rng, net.honest, ("A", "B")).items():
            for name in order:
                net.offer(w, chains[name][-1], forks[name])

    accepted: list[Checkpoint] = []
    checked: list[tuple[Checkpoint, bytes]] = []
    current: dict[str, Checkpoint | None] = {"victim": None, "other": None}
    steer = {"victim": "B", "other": "A"}

    def update(client: str) -> None:
        chain = chains[steer[client]]
        got = net.collect(current[client], chain) if cfg.gossip else chain[-1]
        if got is None:
            return
        current[client] = got
        accepted.append(got)
        # the client then checks whichever entry the adversary names: the
        # newest one of the fork it landed on, or "evil" when that fork has it
        for log in forks.values():
            if got.size <= log.size and log.root_at(got.size) == got.root:
                entries = log.entries[: got.size]
                entry = b"evil" if b"evil" in entries else entries[-1]
                idx = entries.index(entry)
                proof = log.prove_incl_at(idx, got.size)
                if verify_inclusion(got.root, got.size, leaf_hash(entry), idx, proof):
                    checked.append((got, entry))
                break

    update("victim")
    update("other")
    for i in range(rng.randint(1, 3)):
        clock.advance()
        chains["A"].append(forks["A"].append([f"a-late-{i}".encode()], server, clock))
        for w in net.honest:
            net.offer(w, chains["A"][-1], forks["A"])
    update("other")
    update("victim")

    won = _splitview_predicate(checked, accepted, [forks["A"].entries, forks["B"].entries])
    return GameOutcome(won, {"accepted": accepted}, net.audit_records())


# ---------------------------------------------------------------- oscillation


class _History:
    """A registry run whose past versions can be re-materialised.

    Replays use the same signer seed and clock readings, so two histories
    sharing a prefix of batches produce byte-identical prefix checkpoints.
    """

    def __init__(self, batches: list, signer_seed: str):
        self.batches = batches
        self.signer_seed = signer_seed
        self._cache: dict[int, Registry] = {}
        self.full = self.at(len(batches))

    def at(self, version: int) -> Registry:
        reg = self._cache.get(version)
        if reg is None:
            stamps = iter(range(1_000, 1_000 + version + 1))
            reg = Registry(Signer(self.signer_seed), clock=lambda: next(stamps))
            for b in self.batches[:version]:
                reg.append(b)
            self._cache[version] = reg
        return reg

    def owns(self, cp: Checkpoint) -> bool:
        return cp.size <= self.full.version and self.full.checkpoints[cp.size] == cp


def _random_batch(rng: random.Random, keys: list[str], exclude: set[str], tag: str) -> list[tuple[str, bytes]]:
    pool = [k for k in keys if k not in exclude]
    chosen = rng.sample(pool, rng.randint(1, max(1, len(pool) // 2))) if pool else []
    return [(k, f"{tag}-{k}-{rng.randrange(1 << 30)}".encode()) for k in chosen]


def _oscillation_predicate(c0, c1, c2, val, hist_old, hist, lookup_ok, audit_ok, accepted) -> bool:
    """The six winning conditions, ``hist`` being the audited new values."""
    return (
        lookup_ok
        and audit_ok
        and c2.size >= c1.size >= c0.size
        and all(c in accepted for c in (c0, c1, c2))
        and (not hist_old or val != hist_old[-1])
        and val not in hist
    )


def attack_oscillation(cfg: GameConfig, seed: int, script: str = "fork") -> GameOutcome:
    """Play the oscillation game once on a small registry (at most 8 keys
    and 8 versions).

    ``fork``: two registries share a prefix; the lookup view then gives the
    target key a value X that the audit view never contains, and each
    client is steered to its view.  ``forge``: one honest registry with
    every checkpoint gossip-accepted; the adversary tries to pass audits
    whose history omits X.  ``honest``: no misbehaviour at all.
    """
    if script not in ("fork", "forge", "honest"):
        raise ValueError(f"unknown script {script!r}")
    rng = random.Random(seed)
    keys = [f"key{i}" for i in range(rng.randint(2, 8))]
    target = rng.choice(keys)
    x_value = f"X-{seed}".encode()
    n_prefix = rng.randint(1, 3)
    prefix = [_random_batch(rng, keys, set(), f"p{v}") for v in range(n_prefix)]
    n_after = rng.randint(1, 8 - n_prefix - 1)
    lookup_branch = [[(target, x_value)] + _random_batch(rng, keys, {target}, "l0")]
    lookup_branch += [_random_batch(rng, keys, {target}, f"l{v}") for v in range(1, n_after)]
    audit_branch = [
        _random_batch(rng, keys, {target} if rng.random() < 0.5 else set(), f"a{v}")
        for v in range(n_after + rng.randint(0, 1))
    ]
    if script == "honest":
        lookup_branch = audit_branch
    seed_tag = f"osc-server-{seed}"
    views = {"L": _History(prefix + lookup_branch, seed_tag), "A": _History(prefix + audit_branch, seed_tag)}
    if script == "forge":
        return _forge_audits(rng, views["L"], views["A"], target, n_prefix)

    server = Signer(seed_tag)
    net = _Network(cfg, rng, server)
    genesis = views["L"].full.genesis
    common = views["L"].full.checkpoints[1 : n_prefix + 1]
    for cp in common:
        for w in net.honest:
            net.offer(w, cp, views["L"].full.mrl)

    accepted: list[Checkpoint] = [genesis]  # every client is provisioned with genesis

    def update(current, chain):
        got = net.collect(current, chain) if cfg.gossip else chain[-1]
        if got is not None:
            accepted.append(got)
        return got

    # the auditing client syncs during the common prefix and keeps chkpt_0
    c0 = update(None, common) or genesis
    orders = _fork_orders(rng, net.honest, ("L", "A"))
    if script == "honest":
        orders = {w: ("L",) for w in net.honest}
    for w, order in orders.items():
        for name in order:
            reg = views[name].full
            for cp in reg.checkpoints[n_prefix + 1 :]:
                net.offer(w, cp, reg.mrl)
    c1 = update(None, views["L"].full.checkpoints[1:])
    c2 = update(c0, views["A"].full.checkpoints[1:])
    outcome = GameOutcome(False, {"accepted": accepted}, net.audit_records())
    if c1 is None or c2 is None:
        return outcome

    def view_of(cp):
        return next(h for h in views.values() if h.owns(cp))

    h1, h2 = view_of(c1), view_of(c2)
    rep0 = views["L"].full.hist_rep_at(target, c0.size)
    hist_old = views["L"].full.table.get(target.encode(), [])[: rep0.leaflog_size]
    try:
        val, lproof = h1.at(c1.size).lookup(target)
    except KeyNotFound:
        return outcome  # nothing to look up in that view
    lookup_ok = ver_lookup(c1, target, val, lproof, server.public_key)
    hist, aproof = h2.at(c2.size).audit(target, rep0)
    audit_ok, _ = ver_audit(c2, target, rep0, hist, aproof, server.public_key)
    if lookup_ok and val == x_value:
        outcome.notes.append("lookup accepted X")
    if audit_ok:
        outcome.notes.append("audit accepted")
    outcome.won = _oscillation_predicate(c0, c1, c2, val, hist_old, hist, lookup_ok, audit_ok, accepted)
    return outcome


def _forge_audits(rng: random.Random, real: _History, shadow: _History, target: str, n_prefix: int) -> GameOutcome:
    """Single honest MRL; X entered at version ``n_prefix + 1``."""
    reg = real.full
    pk = reg.public_key
    accepted = list(reg.checkpoints)
    x_version = n_prefix + 1
    c1 = reg.checkpoints[x_version]
    c2 = reg.checkpoint
    p0 = rng.randint(0, n_prefix)
    c0 = reg.checkpoints[p0]
    rep0 = reg.hist_rep_at(target, p0)
    hist_old = reg.table.get(target.encode(), [])[: rep0.leaflog_size]
    val, lproof = real.at(x_version).lookup(target)
    lookup_ok = ver_lookup(c1, target, val, lproof, pk)

    values, honest = reg.audit(target, rep0)
    j = next(i for i, ch in enumerate(honest.changes) if ch.checkpoint.size == x_version)
    segs = list(honest.segments)
    changes = list(honest.changes)
    without = values[:j] + values[j + 1 :]
    attempts: list[tuple[str, list[bytes], AuditProof]] = []

    def rebuilt(new_changes, new_segs):
        return AuditProof(honest.mrl_prefix, honest.leaflog_prefix, tuple(new_changes), tuple(new_segs))

    s_reg = shadow.full
    # the shadow registry's own audit, presented against the real checkpoint
    s_values, s_proof = s_reg.audit(target, rep0)
    attempts.append(("shadow-audit", s_values, s_proof))
    # drop the change carrying X and glue its neighbouring segments
    glued = BetweenProof(segs[j].roots + segs[j + 1].roots, segs[j].deltas + segs[j + 1].deltas)
    dropped = changes[:j] + changes[j + 1 :]
    attempts.append(("drop-version", without, rebuilt(dropped, segs[:j] + [glued] + segs[j + 2 :])))
    # same, but fill the hole with the shadow's root for that version
    if s_reg.version >= x_version:
        padded = BetweenProof(
            segs[j].roots + (s_reg.map_root_at(x_version),) + segs[j + 1].roots,
            segs[j].deltas + ((),) + segs[j + 1].deltas,
        )
        attempts.append(("substitute-root", without, rebuilt(dropped, segs[:j] + [padded] + segs[j + 2 :])))
    # keep the shape but claim a different value entered at that version
    swapped = list(values)
    swapped[j] = b"not-" + val
    attempts.append(("rewrite-value", swapped, honest))
    # the same claim, backed by the shadow's map proof at the change version
    if s_reg.version >= x_version:
        forged = HistProof(s_reg.map.prove_inclusion(map_key(target), x_version), changes[j].hist.mrl)
        spliced = changes[:j] + [AuditChange(changes[j].checkpoint, forged)] + changes[j + 1 :]
        attempts.append(("forge-map-proof", swapped, rebuilt(spliced, segs)))

    outcome = GameOutcome(False, {"accepted": accepted})
    for name, hist, proof in attempts:
        ok, _ = ver_audit(c2, target, rep0, hist, proof, pk)
        if ok:
            outcome.notes.append(f"{name} accepted")
        if _oscillation_predicate(c0, c1, c2, val, hist_old, list(hist), lookup_ok, ok, accepted):
            outcome.won = True
            outcome.notes.append(f"won with {name}")
    outcome.notes.append(f"{len(attempts)} forged audits tried")
    return outcome
