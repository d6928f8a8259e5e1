"""Collection-phase liveness: how often one request round finds consensus.

Model, per server and run:

* The server has broadcast a window of recent checkpoints.  For each one,
  every witness is independently online with probability U on each attempt.
  The server re-offers to witnesses that have not stored it until Q
  witnesses hold it or the attempt cap is hit; the rest miss it for good.
* A client then asks every witness once.  Each witness is online with
  probability U and returns the gamma freshest checkpoints it stores.
* The client succeeds if some checkpoint is vouched for by Q witnesses.

Adversarial witnesses either ignore everything ("silent", the worst case
for liveness) or follow the protocol ("passive").

Two evaluators share the same random draws: a vectorised one used for the
experiments and one that drives real witnesses, signatures and
``client_collect`` to cross-check it at small scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..gossip import QuorumPolicy, WitnessState, client_collect
from ..log import LogState, ManualClock, Signer
from .config import SETTING_CODES, SimConfig
from .trace import EventTrace

# Checkpoints kept in the simulated window beyond the largest gamma; a
# witness would need to miss this many in a row for the window to matter.
WINDOW_SLACK = 24


@dataclass
class ServerDraws:
    stored: np.ndarray  # bool [N_W, K]: witness holds checkpoint k (k = K-1 newest)
    online: np.ndarray  # bool [N_C, N_W]: witness answers the client's request
    attempts: np.ndarray  # int [K]: broadcast attempts used per checkpoint


def run_rng(cfg: SimConfig, seed: int, run: int) -> np.random.Generator:
    code = SETTING_CODES.get(cfg.setting, 0)
    return np.random.default_rng(np.random.SeedSequence([seed, run, code]))


def adversary_mask(cfg: SimConfig) -> np.ndarray:
    """The last F witnesses are adversarial."""
    mask = np.zeros(cfg.N_W, dtype=bool)
    if cfg.F:
        mask[-cfg.F :] = True
    return mask


def draw_server(rng: np.random.Generator, cfg: SimConfig, window: int, n_clients: int) -> ServerDraws:
    participates = np.ones(cfg.N_W, dtype=bool)
    if cfg.adversary == "silent":
        participates &= ~adversary_mask(cfg)
    up = rng.random((cfg.max_attempts, cfg.N_W, window)) < cfg.U
    up &= participates[None, :, None]
    reached = np.logical_or.accumulate(up, axis=0)  # [attempt, W, K]
    counts = reached.sum(axis=1)  # [attempt, K]
    enough = counts >= cfg.Q
    last = np.where(enough.any(axis=0), enough.argmax(axis=0), cfg.max_attempts - 1)
    stored = reached[last, :, np.arange(window)].T  # [W, K]
    online = rng.random((n_clients, cfg.N_W)) < cfg.U
    online &= participates[None, :]
    return ServerDraws(stored, online, last + 1)


def top_gamma(stored: np.ndarray, gamma: int) -> np.ndarray:
    """Mask of each witness's gamma freshest stored checkpoints."""
    from_newest = np.cumsum(stored[:, ::-1], axis=1)[:, ::-1]
    return stored & (from_newest <= gamma)


def fast_success(draws: ServerDraws, gamma: int, q: int) -> np.ndarray:
    """bool [N_C]: client found a checkpoint held in the top-gamma of Q witnesses."""
    in_top = top_gamma(draws.stored, gamma).astype(np.float32)
    counts = draws.online.astype(np.float32) @ in_top
    return (counts >= q).any(axis=1)


def protocol_success(draws: ServerDraws, gamma: int, cfg: SimConfig, server_id: int = 0) -> np.ndarray:
    """Same outcome computed with real checkpoints, witnesses and clients."""
    n_w, window = draws.stored.shape
    server = Signer(f"server-{server_id}")
    clock = ManualClock(1_000_000)
    log = LogState()
    checkpoints = []
    for k in range(window):
        clock.advance(1)
        checkpoints.append(log.append([f"s{server_id}-entry-{k}".encode()], server, clock))
    witnesses = [WitnessState(w, Signer(f"witness-{w}"), {server_id: server.public_key}) for w in range(n_w)]
    for k, cp in enumerate(checkpoints):
        for w in np.flatnonzero(draws.stored[:, k]):
            res = witnesses[w].process_offer(server_id, cp, lambda old, new: log.prove_range_append(old.size if old else 0, new.size))
            assert res.accepted, res
    policy = QuorumPolicy.custom(cfg.N_W, cfg.F, cfg.Q)
    keys = {w.witness_id: w.public_key for w in witnesses}
    out = np.zeros(draws.online.shape[0], dtype=bool)
    for c, row in enumerate(draws.online):
        responses = [witnesses[w].collect_response(server_id, gamma) for w in np.flatnonzero(row)]
        out[c] = client_collect(responses, policy, None, server.public_key, keys) is not None
    return out


def run_liveness(
    cfg: SimConfig,
    gammas,
    seed: int | None = None,
    runs: int | None = None,
    n_servers: int | None = None,
    n_clients: int | None = None,
    trace: EventTrace | None = None,
) -> list[tuple[int, int, float]]:
    """Rows ``(run, gamma, fraction)``: mean over clients of the fraction of
    servers for which one request found consensus."""
    gammas = list(gammas)
    seed = cfg.seed if seed is None else seed
    runs = cfg.runs if runs is None else runs
    n_servers = cfg.N_S if n_servers is None else n_servers
    n_clients = cfg.N_C if n_clients is None else n_clients
    window = max(gammas) + WINDOW_SLACK
    rows = []
    for run in range(runs):
        rng = run_rng(cfg, seed, run)
        hits = {g: 0 for g in gammas}
        attempts = 0
        for _ in range(n_servers):
            draws = draw_server(rng, cfg, window, n_clients)
            attempts += int(draws.attempts.sum())
            for g in gammas:
                hits[g] += int(fast_success(draws, g, cfg.Q).sum())
        for g in gammas:
            frac = hits[g] / (n_servers * n_clients)
            rows.append((run, g, frac))
            if trace is not None:
                trace.record(float(run), "liveness", f"gamma={g} fraction={frac!r}")
        if trace is not None:
            trace.metrics[f"run{run}.broadcast_attempts_per_checkpoint"] = attempts / (n_servers * window)
    return rows


def mean_fraction(rows, gamma: int) -> float:
    vals = [f for _, g, f in rows if g == gamma]
    return sum(vals) / len(vals)
