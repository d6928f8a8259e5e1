"""Single-field proof mutations and random registries for soundness sweeps."""

import dataclasses
import random

from mog.log import ManualClock, Signer
from mog.registry import Registry


def _flip(b: bytes) -> bytes:
    return bytes([b[0] ^ 0x01]) + b[1:]


def mutations(obj):
    """Yield (path, mutant) for every single-field change of ``obj``.

    Byte strings get a flipped bit, integers move by one, tuples lose or
    duplicate one element, and dataclasses and tuples are walked recursively.
    """
    if obj is None:
        return
    if isinstance(obj, bool):
        yield "", (not obj)
    elif isinstance(obj, int):
        yield "+1", obj + 1
        if obj > 0:
            yield "-1", obj - 1
    elif isinstance(obj, bytes):
        if obj:
            yield "flip", _flip(obj)
        yield "extend", obj + b"\x00"
    elif isinstance(obj, tuple):
        # a tuple of mixed types is a record, like (node, digest): never resize it
        is_list = len({type(item) for item in obj}) <= 1
        for i, item in enumerate(obj):
            if is_list:
                yield f"[{i}].drop", obj[:i] + obj[i + 1 :]
            for path, sub in mutations(item):
                yield f"[{i}]{path}", obj[:i] + (sub,) + obj[i + 1 :]
        if obj and is_list:
            yield "dup", obj + obj[-1:]
    elif isinstance(obj, list):
        for path, sub in mutations(tuple(obj)):
            yield path, list(sub)
    elif dataclasses.is_dataclass(obj):
        for f in dataclasses.fields(obj):
            value = getattr(obj, f.name)
            for path, sub in mutations(value):
                try:
                    mutant = dataclasses.replace(obj, **{f.name: sub})
                except ValueError:
                    continue  # constructor refused it (e.g. negative node index)
                yield f".{f.name}{path}", mutant
    else:
        raise TypeError(f"cannot mutate {type(obj).__name__}")


def random_registry(rnd: random.Random, max_keys=32, max_versions=16, max_values=4):
    """A registry with at most ``max_values`` values per key, built from ``rnd``."""
    n_keys = rnd.randint(1, max_keys)
    keys = [f"k{i}-{rnd.getrandbits(24):06x}".encode() for i in range(n_keys)]
    budget = {k: rnd.randint(1, max_values) for k in keys}
    reg = Registry(Signer(f"reg-{rnd.getrandbits(32)}"), clock=ManualClock(1000))
    for version in range(rnd.randint(1, max_versions)):
        open_keys = [k for k in keys if budget[k]]
        if not open_keys:
            reg.append([])
            continue
        least = 1 if version == 0 else 0
        batch = rnd.sample(open_keys, rnd.randint(least, min(len(open_keys), 6)))
        for k in batch:
            budget[k] -= 1
        reg.append([(k, rnd.getrandbits(64).to_bytes(8, "big")) for k in batch])
        reg.clock.advance(1)
    return reg
