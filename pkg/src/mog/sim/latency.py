"""End-to-end time and bandwidth of the broadcast and collection phases.

A discrete-event run with a fixed one-way latency between every pair of
actors.  Processing costs are charged per cryptographic operation using the
microbenchmark figures below; every byte counted is the length of a real
serialised frame.
"""

from __future__ import annotations

import numpy as np

from ..gossip import (
    CollectResponse,
    QuorumPolicy,
    WitnessState,
    client_collect,
    collect_req_msg,
    need_proof_msg,
    offer_msg,
    proof_msg,
)
from ..log import LogState, ManualClock, Signer
from .config import SimConfig
from .liveness import adversary_mask, draw_server, run_rng
from .trace import EventQueue, EventTrace

# Per-operation processing cost in milliseconds.
SIGN_MS = 0.08989
VERIFY_MS = 0.18417
PROVE_APPEND_MS = 0.00604
VER_APPEND_MS = 0.00622

WINDOW = 24


def _hop(cfg: SimConfig, rng: np.random.Generator) -> float:
    if cfg.jitter_ms:
        return cfg.latency_ms + float(rng.uniform(0, cfg.jitter_ms))
    return cfg.latency_ms


class _World:
    """One server's log plus real witnesses, shared by both phases."""

    def __init__(self, cfg: SimConfig, rng: np.random.Generator, server_id: int = 0):
        self.cfg = cfg
        self.server_id = server_id
        self.server = Signer(f"server-{server_id}")
        self.clock = ManualClock(1_000_000)
        self.log = LogState()
        self.witnesses = [
            WitnessState(w, Signer(f"witness-{w}"), {server_id: self.server.public_key}) for w in range(cfg.N_W)
        ]
        self.adversarial = adversary_mask(cfg)

    def new_checkpoint(self):
        self.clock.advance(1)
        return self.log.append([f"entry-{self.log.size}".encode()], self.server, self.clock)

    def prove(self, old, new):
        return self.log.prove_range_append(old.size if old else 0, new.size)


def run_broadcast(cfg: SimConfig, seed: int, run: int, trace: EventTrace | None = None) -> dict:
    """Time until Q witnesses store a fresh checkpoint, with server retries."""
    rng = run_rng(cfg, seed, run)
    world = _World(cfg, rng)
    # warm-up: witnesses already hold an older checkpoint
    warm = world.new_checkpoint()
    for w in world.witnesses:
        w.process_offer(world.server_id, warm, world.prove)
    cp = world.new_checkpoint()
    q = EventQueue(trace)
    stored: set[int] = set()
    asked: set[int] = set()
    state = {"bytes": 0, "done": None, "attempts": 0}
    participates = ~world.adversarial if cfg.adversary == "silent" else np.ones(cfg.N_W, bool)

    def log_event(actor, what):
        if trace is not None:
            trace.record(q.now, actor, what)

    def attempt(targets):
        state["attempts"] += 1
        log_event("server", f"offer attempt {state['attempts']} to {len(targets)} witnesses")
        for w in targets:
            msg = offer_msg(world.server_id, cp)
            state["bytes"] += len(msg)
            if participates[w] and rng.random() < cfg.U:
                q.schedule(q.now + _hop(cfg, rng), lambda w=w: witness_offer(w))
        q.schedule(q.now + 2 * cfg.latency_ms + cfg.jitter_ms + VERIFY_MS + 1e-6, check_progress)

    def witness_offer(w):
        wit = world.witnesses[w]
        old = wit.check_offer(world.server_id, cp)
        asked.add(w)
        msg = need_proof_msg(world.server_id, old)
        state["bytes"] += len(msg)
        q.schedule(q.now + VERIFY_MS + _hop(cfg, rng), lambda: server_proof(w, old))

    def server_proof(w, old):
        proof = world.prove(old, cp)
        msg = proof_msg(world.server_id, proof)
        state["bytes"] += len(msg)
        q.schedule(q.now + PROVE_APPEND_MS + _hop(cfg, rng), lambda: witness_store(w, old, proof))

    def witness_store(w, old, proof):
        res = world.witnesses[w].finish_offer(world.server_id, cp, old, proof)
        if res.accepted:
            stored.add(w)
            log_event(f"witness-{w}", "stored")
            if len(stored) == cfg.Q and state["done"] is None:
                state["done"] = q.now + VER_APPEND_MS
                log_event("server", "quorum reached")

    def check_progress():
        if len(asked) >= cfg.Q or state["attempts"] >= cfg.max_attempts:
            return
        missing = [w for w in range(cfg.N_W) if w not in asked]
        attempt(missing)

    attempt(list(range(cfg.N_W)))
    q.run()
    return {"time_ms": state["done"], "bytes": state["bytes"], "attempts": state["attempts"]}


def run_collection(cfg: SimConfig, seed: int, run: int, gamma: int, trace: EventTrace | None = None) -> dict:
    """Time from a client's request until it accepts a fresh checkpoint.

    Witness state comes from the liveness model's broadcast draws.  Each
    response is verified as it arrives (witness and server signature per
    entry), responses in parallel.
    """
    rng = run_rng(cfg, seed, run)
    world = _World(cfg, rng)
    draws = draw_server(rng, cfg, max(gamma, 1) + WINDOW, 1)
    cps = [world.new_checkpoint() for _ in range(draws.stored.shape[1])]
    for k, cp in enumerate(cps):
        for w in np.flatnonzero(draws.stored[:, k]):
            world.witnesses[w].process_offer(world.server_id, cp, world.prove)
    q = EventQueue(trace)
    up_bytes = 0
    down_bytes = 0
    done_at: dict[int, float] = {}
    responses: dict[int, CollectResponse] = {}

    def witness_reply(w):
        nonlocal down_bytes
        resp = world.witnesses[w].collect_response(world.server_id, gamma)
        down_bytes += len(resp.to_bytes())
        arrive = q.now + SIGN_MS * len(resp.entries) + _hop(cfg, rng)
        q.schedule(arrive, lambda: client_receive(w, resp))

    def client_receive(w, resp):
        responses[w] = resp
        done_at[w] = q.now + 2 * VERIFY_MS * len(resp.entries)
        if trace is not None:
            trace.record(q.now, "client", f"response from witness-{w} ({len(resp.entries)} entries)")

    for w in range(cfg.N_W):
        msg = collect_req_msg(world.server_id, gamma)
        up_bytes += len(msg)
        if draws.online[0, w]:
            q.schedule(_hop(cfg, rng), lambda w=w: witness_reply(w))
    q.run()

    policy = QuorumPolicy.custom(cfg.N_W, cfg.F, cfg.Q)
    keys = {w.witness_id: w.public_key for w in world.witnesses}
    accepted = client_collect(responses.values(), policy, None, world.server.public_key, keys)
    time_ms = None
    if accepted is not None:
        vouching = sorted(done_at[w] for w, r in responses.items() if any(e.checkpoint == accepted for e in r.entries))
        time_ms = vouching[cfg.Q - 1]
    return {
        "time_ms": time_ms,
        "bytes_down": down_bytes,
        "bytes_up": up_bytes,
        "responders": len(responses),
    }


def run_latency(cfg: SimConfig, phase: str, gamma: int | None = None, seed: int | None = None, runs: int | None = None, trials: int = 20):
    """Mean end-to-end milliseconds and bytes over ``runs`` x ``trials``.

    Returns ``(mean_ms, mean_bytes, details)``; the mean time covers trials
    that succeeded without any retry (collection) or reached quorum
    (broadcast).
    """
    seed = cfg.seed if seed is None else seed
    runs = cfg.runs if runs is None else runs
    gamma = cfg.gamma if gamma is None else gamma
    times, sizes, results = [], [], []
    for run in range(runs):
        for t in range(trials):
            sub = run * 100_003 + t
            if phase == "broadcast":
                res = run_broadcast(cfg, seed, sub)
                size = res["bytes"]
            elif phase == "collection":
                res = run_collection(cfg, seed, sub, gamma)
                size = res["bytes_down"]
            else:
                raise ValueError(f"unknown phase {phase!r}")
            results.append(res)
            sizes.append(size)
            if res["time_ms"] is not None:
                times.append(res["time_ms"])
    mean_ms = sum(times) / len(times) if times else float("nan")
    return mean_ms, sum(sizes) / len(sizes), results
