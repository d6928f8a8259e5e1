"""How much a key's map proof changes from one version to the next.

For a key that is not updated, version-to-version proof deltas only carry
the siblings on its path that some updated key shares.  With M uniformly
random updates per version, the deepest such sibling sits at depth about
``log2 M`` and the number of changed siblings is about the same.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass

from ..smt import DEPTH, SparseMap, proof_delta

AUDITED_KEYS = 25
EULER_GAMMA = 0.5772156649015329


@dataclass(frozen=True)
class DeltaSample:
    m: int
    version: int
    changed: int  # C_M: siblings that differ from the previous version's proof
    deepest: int  # D_M: depth of the deepest changed sibling (0 if none)


def harmonic(m: int) -> float:
    return math.fsum(1.0 / k for k in range(1, m + 1))


def depth_band(m: int) -> tuple[float, float]:
    """Bounds on the expected deepest changed depth with m random updates."""
    lo = harmonic(m) / math.log(2)
    return lo, lo + 1.0


def changed_bound(m: int) -> float:
    return 1.1 * (math.log2(m) + 1)


def _rand32(rng: random.Random) -> bytes:
    return rng.getrandbits(256).to_bytes(32, "big")


def delta_samples(m: int, versions: int, seed: int = 0, audited: int = AUDITED_KEYS) -> list[DeltaSample]:
    """Samples over ``versions`` batches of ``m`` fresh random updates.

    The map starts with ``m`` random keys plus the audited keys, which are
    never updated afterwards.
    """
    rng = random.Random(seed)
    smap = SparseMap()
    watched = [_rand32(rng) for _ in range(audited)]
    smap.batch_update([(k, _rand32(rng)) for k in watched] + [(_rand32(rng), _rand32(rng)) for _ in range(m)])
    prev = {k: smap.prove_inclusion(k) for k in watched}
    out = []
    for _ in range(versions):
        smap.batch_update([(_rand32(rng), _rand32(rng)) for _ in range(m)])
        for k in watched:
            cur = smap.prove_inclusion(k)
            delta = proof_delta(prev[k], cur)
            deepest = DEPTH - min(h for h, _ in delta) if delta else 0
            out.append(DeltaSample(m, smap.version, len(delta), deepest))
            prev[k] = cur
    return out


def summarize(samples: list[DeltaSample]) -> dict[str, float]:
    n = len(samples)
    return {
        "trials": n,
        "mean_changed": sum(s.changed for s in samples) / n,
        "max_changed": max(s.changed for s in samples),
        "mean_deepest": sum(s.deepest for s in samples) / n,
    }
