"""``mog`` command line.

Exit codes: 0 success or accept, 1 verification reject, 2 usage or I/O
error.  Binary artifacts (checkpoints, proofs, ranges, hist_reps) travel
as base64 text; any artifact argument may be the text itself, a file
holding it, or ``-`` for stdin.
"""

from __future__ import annotations

import argparse
import base64
import binascii
import os
import sys

from . import registry as reg_mod
from .compact import (
    CompactRange,
    ConsistencyProof,
    InclusionProof,
    check_consistency,
    check_inclusion,
    compute_range,
    merge,
    range_to_root,
)
from .errors import BadSignature, DecodeError, MogError, VerificationFailed
from .gossip import QuorumPolicy, WitnessState, client_collect
from .log import Checkpoint, LogState, Signer, append_records, read_records, system_clock
from .merkle import EMPTY_ROOT, leaf_hash

EXIT_OK, EXIT_REJECT, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- helpers


def _b64(raw: bytes) -> str:
    return base64.b64encode(raw).decode()


def _artifact(value: str) -> bytes:
    """Decode base64 given inline, in a file, or on stdin ('-')."""
    if value == "-":
        text = sys.stdin.read()
    elif os.path.isfile(value):
        with open(value) as fh:
            text = fh.read()
    else:
        text = value
    try:
        return base64.b64decode("".join(text.split()), validate=True)
    except (binascii.Error, ValueError):
        raise DecodeError(f"not valid base64: {value[:40]!r}") from None


def _checkpoint(value: str) -> Checkpoint:
    return Checkpoint.from_bytes(_artifact(value))


def _pubkey(value: str | None) -> bytes | None:
    if value is None:
        return None
    raw = _artifact(value)
    if len(raw) != 32:
        raise DecodeError("public key must be 32 bytes")
    return raw


def _text(value: str) -> bytes:
    return value.encode()


def _reject(args, exc: VerificationFailed) -> int:
    if getattr(args, "explain", False):
        print(f"rejected at stage {exc.stage}: {exc}", file=sys.stderr)
    else:
        print("reject")
    return EXIT_REJECT


def _accept(extra: str | None = None) -> int:
    print("accept")
    if extra:
        print(extra)
    return EXIT_OK


def _signer_from_dir(directory: str, seed: str | None) -> Signer:
    path = os.path.join(directory, "signing.key")
    if os.path.exists(path):
        with open(path, "rb") as fh:
            return Signer.from_private_bytes(fh.read())
    signer = Signer(seed)
    os.makedirs(directory, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(signer.private_bytes())
    return signer


# ---------------------------------------------------------------- log


class _LogDir:
    """A log kept as record files: entries, checkpoints, signing key."""

    def __init__(self, directory: str, seed: str | None = None, create: bool = False):
        if not create and not os.path.exists(os.path.join(directory, "signing.key")):
            raise UsageError(f"{directory} is not a log directory")
        self.dir = directory
        self.signer = _signer_from_dir(directory, seed)
        self.entries_path = os.path.join(directory, "entries.log")
        self.cps_path = os.path.join(directory, "checkpoints.log")
        entries = read_records(self.entries_path) if os.path.exists(self.entries_path) else []
        self.log = LogState(entries)
        raw = read_records(self.cps_path) if os.path.exists(self.cps_path) else []
        self.checkpoints = [Checkpoint.from_bytes(r) for r in raw]

    @property
    def latest(self) -> Checkpoint:
        if not self.checkpoints:
            raise UsageError("log has no checkpoint yet")
        return self.checkpoints[-1]

    def append(self, entries: list[bytes], timestamp: int | None) -> Checkpoint:
        clock = (lambda: timestamp) if timestamp is not None else system_clock
        cp = self.log.append(entries, self.signer, clock)
        append_records(self.entries_path, entries)
        append_records(self.cps_path, [cp.to_bytes()])
        self.checkpoints.append(cp)
        return cp


def cmd_log_append(args) -> int:
    ld = _LogDir(args.dir, args.seed, create=True)
    entries = [_text(e) for e in args.entries]
    if args.file:
        with open(args.file) as fh:
            entries += [line.rstrip("\n").encode() for line in fh if line.strip()]
    if not entries:
        raise UsageError("nothing to append")
    cp = ld.append(entries, args.time)
    print(cp.to_text())
    return EXIT_OK


def cmd_log_checkpoint(args) -> int:
    ld = _LogDir(args.dir)
    print(ld.latest.to_text())
    return EXIT_OK


def cmd_log_pubkey(args) -> int:
    print(_b64(_LogDir(args.dir).signer.public_key))
    return EXIT_OK


def cmd_log_prove_incl(args) -> int:
    ld = _LogDir(args.dir)
    size = args.size if args.size is not None else ld.latest.size
    entry = _text(args.entry)
    if entry not in ld.log.entries[:size]:
        raise UsageError("entry is not in the log at that size")
    proof = ld.log.prove_incl(entry, size)
    print(_b64(proof.to_bytes()))
    return EXIT_OK


def cmd_log_prove_append(args) -> int:
    ld = _LogDir(args.dir)
    new = args.new if args.new is not None else ld.latest.size
    if not 0 <= args.old <= new <= ld.log.size:
        raise UsageError("need 0 <= old <= new <= log size")
    print(_b64(ld.log.prove_range_append(args.old, new).to_bytes()))
    return EXIT_OK


def cmd_log_verify_incl(args) -> int:
    cp = _checkpoint(args.checkpoint)
    proof = InclusionProof.from_bytes(_artifact(args.proof))
    try:
        _check_cp_signature(cp, _pubkey(args.pubkey))
        check_inclusion(cp.root, cp.size, leaf_hash(_text(args.entry)), proof.index, proof)
    except VerificationFailed as exc:
        return _reject(args, exc)
    return _accept()


def cmd_log_verify_append(args) -> int:
    old, new = _checkpoint(args.old), _checkpoint(args.new)
    proof = ConsistencyProof.from_bytes(_artifact(args.proof))
    try:
        pk = _pubkey(args.pubkey)
        _check_cp_signature(old, pk)
        _check_cp_signature(new, pk)
        check_consistency(old.root, old.size, new.root, new.size, proof)
    except VerificationFailed as exc:
        return _reject(args, exc)
    return _accept()


def _check_cp_signature(cp: Checkpoint, pk: bytes | None) -> None:
    if pk is not None and not cp.verify(pk):
        raise BadSignature("checkpoint signature does not verify", stage="checkpoint-signature")


# ---------------------------------------------------------------- range


def _range_tree(args):
    if args.dir:
        log = _LogDir(args.dir).log
    else:
        if args.size is None:
            raise UsageError("give --size or --dir")
        log = LogState(f"leaf-{i}".encode() for i in range(args.size))
    return log


def _print_range(rng: CompactRange, as_text: bool) -> None:
    if as_text:
        print(_b64(rng.to_bytes()))
    else:
        print(rng.to_text(), end="")


def cmd_range_compute(args) -> int:
    log = _range_tree(args)
    if not 0 <= args.lo <= args.hi <= log.size:
        raise UsageError("need 0 <= lo <= hi <= size")
    _print_range(compute_range(log, args.lo, args.hi), args.base64)
    return EXIT_OK


def cmd_range_merge(args) -> int:
    ranges = [CompactRange.from_bytes(_artifact(r)) for r in args.ranges]
    _print_range(merge(*ranges), args.base64)
    return EXIT_OK


def cmd_range_root(args) -> int:
    rng = CompactRange.from_bytes(_artifact(args.range))
    rng.check_structure()
    if rng.lo != 0:
        raise UsageError("a root needs a range starting at leaf 0")
    print((range_to_root(rng) if rng.hi > rng.lo else EMPTY_ROOT).hex())
    return EXIT_OK


# ---------------------------------------------------------------- registry


def _load_registry(directory: str) -> reg_mod.Registry:
    if not os.path.exists(os.path.join(directory, "signing.key")):
        raise UsageError(f"{directory} is not a registry directory")
    return reg_mod.Registry.load(directory)


def cmd_registry_init(args) -> int:
    if os.path.exists(os.path.join(args.dir, "signing.key")):
        raise UsageError(f"{args.dir} already holds a registry")
    signer = Signer(args.seed)
    clock = (lambda: args.time) if args.time is not None else system_clock
    reg = reg_mod.Registry(signer, clock)
    reg.save(args.dir)
    print(reg.genesis.to_text())
    return EXIT_OK


def _parse_pairs(pairs: list[str]) -> list[tuple[bytes, bytes]]:
    out = []
    for p in pairs:
        if "=" not in p:
            raise UsageError(f"expected key=value, got {p!r}")
        k, v = p.split("=", 1)
        out.append((k.encode(), v.encode()))
    return out


def cmd_registry_append(args) -> int:
    reg = _load_registry(args.dir)
    if args.time is not None:
        reg.clock = lambda: args.time
    cp = reg.append(_parse_pairs(args.pairs))
    reg.save(args.dir)
    print(cp.to_text())
    return EXIT_OK


def cmd_registry_info(args) -> int:
    reg = _load_registry(args.dir)
    print(f"version {reg.version}")
    print(f"pubkey {_b64(reg.public_key)}")
    print(f"genesis {reg.genesis.to_text()}")
    print(f"checkpoint {reg.checkpoint.to_text()}")
    print(f"empty-hist-rep {_b64(reg.empty_hist_rep().to_bytes())}")
    return EXIT_OK


def cmd_registry_lookup(args) -> int:
    reg = _load_registry(args.dir)
    value, proof = reg.lookup(args.key)
    print(f"value {_b64(value)}")
    print(f"checkpoint {reg.checkpoint.to_text()}")
    print(f"proof {_b64(proof.to_bytes())}")
    return EXIT_OK


def _old_rep(reg, value: str | None) -> reg_mod.HistRep:
    return reg.empty_hist_rep() if value is None else reg_mod.HistRep.from_bytes(_artifact(value))


def cmd_registry_hist(args) -> int:
    reg = _load_registry(args.dir)
    old = _old_rep(reg, args.old)
    values, proof = reg.hist(args.key, old)
    print(f"old {_b64(old.to_bytes())}")
    for v in values:
        print(f"value {_b64(v)}")
    print(f"checkpoint {reg.checkpoint.to_text()}")
    print(f"proof {_b64(proof.to_bytes())}")
    return EXIT_OK


def cmd_registry_audit(args) -> int:
    reg = _load_registry(args.dir)
    old = _old_rep(reg, args.old)
    values, proof = reg.audit(args.key, old)
    print(f"old {_b64(old.to_bytes())}")
    for v in values:
        print(f"value {_b64(v)}")
    print(f"checkpoint {reg.checkpoint.to_text()}")
    print(f"proof {_b64(proof.to_bytes())}")
    return EXIT_OK


def _values(args) -> list[bytes]:
    return [_artifact(v) for v in args.value_b64] + [_text(v) for v in args.value]


def cmd_registry_verify_lookup(args) -> int:
    cp = _checkpoint(args.checkpoint)
    proof = reg_mod.LookupProof.from_bytes(_artifact(args.proof))
    values = _values(args)
    if len(values) != 1:
        raise UsageError("give exactly one value")
    try:
        reg_mod.check_lookup(cp, args.key, values[0], proof, _pubkey(args.pubkey))
    except VerificationFailed as exc:
        return _reject(args, exc)
    return _accept()


def cmd_registry_verify_hist(args) -> int:
    cp = _checkpoint(args.checkpoint)
    old = reg_mod.HistRep.from_bytes(_artifact(args.old))
    proof = reg_mod.HistProof.from_bytes(_artifact(args.proof))
    try:
        rep = reg_mod.check_hist(cp, args.key, old, _values(args), proof, _pubkey(args.pubkey))
    except VerificationFailed as exc:
        return _reject(args, exc)
    return _accept(f"hist-rep {_b64(rep.to_bytes())}")


def cmd_registry_verify_audit(args) -> int:
    cp = _checkpoint(args.checkpoint)
    old = reg_mod.HistRep.from_bytes(_artifact(args.old))
    proof = reg_mod.AuditProof.from_bytes(_artifact(args.proof))
    try:
        rep = reg_mod.check_audit(cp, args.key, old, _values(args), proof, _pubkey(args.pubkey))
    except VerificationFailed as exc:
        return _reject(args, exc)
    return _accept(f"hist-rep {_b64(rep.to_bytes())}")


# ---------------------------------------------------------------- witness


def _witness_pool(state_dir: str, n: int, server_key: bytes) -> list[WitnessState]:
    os.makedirs(state_dir, exist_ok=True)
    pool = []
    for w in range(n):
        wit = WitnessState(w, Signer(f"witness-{w}"), {0: server_key})
        path = os.path.join(state_dir, f"witness-{w}.log")
        if os.path.exists(path):
            wit.stored[0] = [Checkpoint.from_bytes(r) for r in read_records(path)]
        pool.append(wit)
    return pool


def _save_pool(state_dir: str, pool: list[WitnessState]) -> None:
    for wit in pool:
        path = os.path.join(state_dir, f"witness-{wit.witness_id}.log")
        tmp = path + ".tmp"
        if os.path.exists(tmp):
            os.remove(tmp)
        append_records(tmp, [c.to_bytes() for c in wit.stored.get(0, [])])
        os.replace(tmp, path)


def cmd_witness_offer(args) -> int:
    ld = _LogDir(args.log)
    cp = _checkpoint(args.checkpoint) if args.checkpoint else ld.latest
    pool = _witness_pool(args.state, args.witnesses, ld.signer.public_key)

    def prover(old, new):
        return ld.log.prove_range_append(old.size if old else 0, new.size)

    stored = 0
    for wit in pool:
        res = wit.process_offer(0, cp, prover)
        stored += res.accepted
        line = f"witness-{wit.witness_id} {res.status.name.lower()}"
        if res.error is not None and args.explain:
            line += f" ({res.error})"
        print(line)
    _save_pool(args.state, pool)
    return EXIT_OK if stored else EXIT_REJECT


def cmd_witness_collect(args) -> int:
    server_key = _pubkey(args.server_key)
    pool = _witness_pool(args.state, args.witnesses, server_key)
    if args.quorum is not None:
        policy = QuorumPolicy.custom(args.witnesses, 0, args.quorum)
    else:
        policy = QuorumPolicy.for_witnesses(args.witnesses, args.v)
    responses = [w.collect_response(0, args.gamma) for w in pool]
    current = _checkpoint(args.current) if args.current else None
    keys = {w.witness_id: w.public_key for w in pool}
    got = client_collect(responses, policy, current, server_key, keys)
    if got is None:
        print("no checkpoint reached quorum")
        return EXIT_REJECT
    print(got.to_text())
    return EXIT_OK


# ---------------------------------------------------------------- sim


def _sim_config(args):
    from .sim.config import SETTINGS, load_config

    cfg = load_config(args.config) if args.config else SETTINGS[args.setting]
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.runs is not None:
        changes["runs"] = args.runs
    return cfg.replace(**changes) if changes else cfg


def _gammas(spec: str | None, default: int) -> list[int]:
    if spec is None:
        return [default]
    if ":" in spec:
        lo, hi = (int(p) for p in spec.split(":", 1))
        return list(range(lo, hi + 1))
    return [int(g) for g in spec.split(",")]


def cmd_sim(args) -> int:
    from .sim import report

    cfg = _sim_config(args)
    gammas = _gammas(args.gamma, cfg.gamma)
    if args.kind == "liveness":
        rows = report.liveness_rows(cfg, gammas, cfg.seed, cfg.runs)
        plot = report.plot_liveness
    elif args.kind == "latency":
        rows = []
        for g in gammas:
            rows += report.latency_rows(cfg, g, cfg.seed, cfg.runs, args.trials)
        plot = report.plot_latency
    elif args.kind == "attack":
        rows = report.attack_rows(cfg, cfg.seed, args.scenarios)
        plot = None
    else:
        ms = [int(m) for m in args.m.split(",")]
        rows = report.compression_rows(ms, args.versions, cfg.seed)
        plot = report.plot_compression
    report.write_csv(rows, args.out)
    if args.figure:
        if plot is None:
            raise UsageError("no figure for this experiment")
        plot(rows, args.figure)
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mog", description="Compact ranges, witness gossip and the Mog registry.")
    top = p.add_subparsers(dest="group", required=True)

    def sub(parent, name, fn, help_):
        sp = parent.add_parser(name, help=help_)
        sp.set_defaults(fn=fn)
        return sp

    def verify_flags(sp):
        sp.add_argument("--pubkey", help="server public key (base64); checks checkpoint signatures")
        sp.add_argument("--explain", action="store_true", help="print the verification stage that failed")

    # log
    lg = top.add_parser("log", help="append-only log").add_subparsers(dest="cmd", required=True)
    sp = sub(lg, "append", cmd_log_append, "append entries and sign a checkpoint")
    sp.add_argument("--dir", required=True)
    sp.add_argument("--file", help="one entry per line")
    sp.add_argument("--seed", help="signing-key seed for a new log")
    sp.add_argument("--time", type=int, help="checkpoint timestamp (default: now)")
    sp.add_argument("entries", nargs="*")
    sp = sub(lg, "checkpoint", cmd_log_checkpoint, "print the latest checkpoint")
    sp.add_argument("--dir", required=True)
    sp = sub(lg, "pubkey", cmd_log_pubkey, "print the log's public key")
    sp.add_argument("--dir", required=True)
    sp = sub(lg, "prove-incl", cmd_log_prove_incl, "inclusion proof for an entry")
    sp.add_argument("--dir", required=True)
    sp.add_argument("--entry", required=True)
    sp.add_argument("--size", type=int)
    sp = sub(lg, "prove-append", cmd_log_prove_append, "consistency proof between two sizes")
    sp.add_argument("--dir", required=True)
    sp.add_argument("--old", type=int, required=True)
    sp.add_argument("--new", type=int)
    sp = sub(lg, "verify-incl", cmd_log_verify_incl, "check an inclusion proof")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--entry", required=True)
    sp.add_argument("--proof", required=True)
    verify_flags(sp)
    sp = sub(lg, "verify-append", cmd_log_verify_append, "check a consistency proof")
    sp.add_argument("--old", required=True)
    sp.add_argument("--new", required=True)
    sp.add_argument("--proof", required=True)
    verify_flags(sp)

    # range
    rg = top.add_parser("range", help="compact ranges").add_subparsers(dest="cmd", required=True)
    sp = sub(rg, "compute", cmd_range_compute, "compact range [lo, hi) of a tree")
    sp.add_argument("--size", type=int, help="synthetic tree of this many leaves")
    sp.add_argument("--dir", help="use a log directory instead")
    sp.add_argument("--lo", type=int, required=True)
    sp.add_argument("--hi", type=int, required=True)
    sp.add_argument("--base64", action="store_true", help="print the encoded range instead of node lines")
    sp = sub(rg, "merge", cmd_range_merge, "merge adjacent ranges")
    sp.add_argument("ranges", nargs="+")
    sp.add_argument("--base64", action="store_true")
    sp = sub(rg, "root", cmd_range_root, "root hash of a range starting at 0")
    sp.add_argument("range")

    # registry
    rr = top.add_parser("registry", help="verifiable registry").add_subparsers(dest="cmd", required=True)
    sp = sub(rr, "init", cmd_registry_init, "create an empty registry")
    sp.add_argument("--dir", required=True)
    sp.add_argument("--seed")
    sp.add_argument("--time", type=int)
    sp = sub(rr, "append", cmd_registry_append, "append a batch of key=value pairs")
    sp.add_argument("--dir", required=True)
    sp.add_argument("--time", type=int)
    sp.add_argument("pairs", nargs="+")
    sp = sub(rr, "info", cmd_registry_info, "version, keys and checkpoints")
    sp.add_argument("--dir", required=True)
    for name, fn in (("lookup", cmd_registry_lookup), ("hist", cmd_registry_hist), ("audit", cmd_registry_audit)):
        sp = sub(rr, name, fn, f"{name} proof for a key")
        sp.add_argument("--dir", required=True)
        sp.add_argument("--key", required=True)
        if name != "lookup":
            sp.add_argument("--old", help="stored hist_rep (default: empty, at genesis)")
    for name, fn in (
        ("verify-lookup", cmd_registry_verify_lookup),
        ("verify-hist", cmd_registry_verify_hist),
        ("verify-audit", cmd_registry_verify_audit),
    ):
        sp = sub(rr, name, fn, f"check {'an' if name.endswith('audit') else 'a'} {name.split('-')[1]} proof")
        sp.add_argument("--checkpoint", required=True)
        sp.add_argument("--key", required=True)
        sp.add_argument("--proof", required=True)
        sp.add_argument("--value", action="append", default=[], help="value as text (repeatable, in order)")
        sp.add_argument("--value-b64", action="append", default=[], help="value as base64 (repeatable)")
        if name != "verify-lookup":
            sp.add_argument("--old", required=True, help="stored hist_rep (base64)")
        verify_flags(sp)

    # witness
    wt = top.add_parser("witness", help="in-process witness pool").add_subparsers(dest="cmd", required=True)
    sp = sub(wt, "offer", cmd_witness_offer, "offer a log checkpoint to every witness")
    sp.add_argument("--log", required=True, help="log directory acting as the server")
    sp.add_argument("--state", required=True, help="witness state directory")
    sp.add_argument("--witnesses", type=int, default=7)
    sp.add_argument("--checkpoint", help="checkpoint to offer (default: latest)")
    sp.add_argument("--explain", action="store_true")
    sp = sub(wt, "collect", cmd_witness_collect, "collect a quorum-backed checkpoint")
    sp.add_argument("--state", required=True)
    sp.add_argument("--server-key", required=True)
    sp.add_argument("--witnesses", type=int, default=7)
    sp.add_argument("--v", type=int, default=3, help="V in F = (N_W - 1) / V")
    sp.add_argument("--quorum", type=int, help="override Q")
    sp.add_argument("--gamma", type=int, default=10)
    sp.add_argument("--current", help="checkpoint the client already holds")

    # sim
    sm = top.add_parser("sim", help="simulations").add_subparsers(dest="kind", required=True)
    for kind in ("liveness", "latency", "attack", "compression"):
        sp = sm.add_parser(kind, help=f"{kind} experiment")
        sp.set_defaults(fn=cmd_sim)
        sp.add_argument("--setting", choices=("aggressive", "kt", "ct"), default="ct")
        sp.add_argument("--config", help="key = value config file")
        sp.add_argument("--gamma", help="N, N,M,... or LO:HI")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--runs", type=int)
        sp.add_argument("--out", default="-", help="CSV path ('-' for stdout)")
        sp.add_argument("--figure", help="PNG path")
        if kind == "latency":
            sp.add_argument("--trials", type=int, default=5)
        if kind == "attack":
            sp.add_argument("--scenarios", type=int, default=100)
        if kind == "compression":
            sp.add_argument("--m", default="256,1024,4096")
            sp.add_argument("--versions", type=int, default=8)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.fn(args)
    except DecodeError as exc:
        print(f"mog: malformed input: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except VerificationFailed as exc:
        return _reject(args, exc)
    except (UsageError, MogError, OSError, KeyError, ValueError) as exc:
        print(f"mog: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
