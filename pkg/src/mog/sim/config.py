"""Scenario parameters and their key=value text form."""

from __future__ import annotations

import dataclasses
import re
from dataclasses import dataclass, field

from ..errors import DecodeError, InvalidParameters
from ..gossip import min_uptime, quorum_threshold

_UNITS = {"s": 1, "sec": 1, "min": 60, "h": 3600, "hour": 3600, "day": 86400, "mo": 30 * 86400, "month": 30 * 86400}


def parse_rate(text: str) -> float:
    """Events per second from forms like ``1/s``, ``1/h``, ``1/day``, ``0.5``."""
    text = text.strip()
    m = re.fullmatch(r"([0-9.]+)\s*/\s*([a-z]+)", text)
    if m:
        if m.group(2) not in _UNITS:
            raise DecodeError(f"unknown rate unit {m.group(2)!r}")
        return float(m.group(1)) / _UNITS[m.group(2)]
    try:
        return float(text)
    except ValueError:
        raise DecodeError(f"bad rate {text!r}") from None


def parse_size(text: str) -> int:
    text = text.strip()
    m = re.fullmatch(r"2\s*\^\s*([0-9]+)", text)
    if m:
        return 1 << int(m.group(1))
    try:
        return int(text)
    except ValueError:
        raise DecodeError(f"bad size {text!r}") from None


@dataclass(frozen=True)
class SimConfig:
    setting: str
    N_S: int
    N_W: int
    N_C: int
    U: float
    V: int
    Q: int
    r_MRL: str = "1/s"
    r_key: str = "1/h"
    N: str = "2^30"
    N_MRL: str = "2^26"
    N_key: str = "2^15"
    gamma: int = 10
    latency_ms: float = 100.0
    jitter_ms: float = 0.0
    seed: int = 1
    runs: int = 5
    adversary: str = "silent"  # silent: adversarial witnesses ignore everyone; passive: they follow the protocol
    max_attempts: int = 10
    liveness_violation: bool = False

    def __post_init__(self):
        f, q = quorum_threshold(self.N_W, self.V)
        if self.Q < 1 or self.Q > self.N_W:
            raise InvalidParameters(f"Q={self.Q} outside 1..{self.N_W}")
        if self.U < float(min_uptime(self.N_W, self.V)) and not self.liveness_violation:
            raise InvalidParameters(
                f"U={self.U} below the liveness bound {float(min_uptime(self.N_W, self.V)):.4f}; "
                "set liveness_violation to run anyway"
            )
        if self.adversary not in ("silent", "passive"):
            raise InvalidParameters("adversary must be 'silent' or 'passive'")
        if not 0 <= self.U <= 1:
            raise InvalidParameters("U is a probability")

    @property
    def F(self) -> int:
        return quorum_threshold(self.N_W, self.V)[0]

    @property
    def rate_mrl(self) -> float:
        return parse_rate(self.r_MRL)

    @property
    def rate_key(self) -> float:
        return parse_rate(self.r_key)

    def replace(self, **changes) -> "SimConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        return "".join(f"{f.name} = {getattr(self, f.name)}\n" for f in dataclasses.fields(self))


SETTINGS: dict[str, SimConfig] = {
    "aggressive": SimConfig("aggressive", 1000, 25, 1000, 0.9, 4, 16, "1/s", "1/h", "2^30", "2^26", "2^15", gamma=16),
    "kt": SimConfig("kt", 100, 97, 1000, 0.85, 8, 55, "1/s", "1/mo", "2^30", "2^26", "2^5", gamma=10),
    "ct": SimConfig("ct", 100, 25, 10, 0.99, 8, 15, "1/day", "1/h", "2^30", "2^10", "2^15", gamma=10),
}

SETTING_CODES = {"aggressive": 1, "kt": 2, "ct": 3}

_INT = {"N_S", "N_W", "N_C", "V", "Q", "gamma", "seed", "runs", "max_attempts"}
_FLOAT = {"U", "latency_ms", "jitter_ms"}
_BOOL = {"liveness_violation"}


def parse_config(text: str) -> SimConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment.

    A ``setting`` line naming a built-in setting supplies defaults for every
    key not given explicitly.
    """
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DecodeError(f"line {lineno}: expected key = value")
        k, v = (p.strip() for p in line.split("=", 1))
        values[k] = v
    names = {f.name for f in dataclasses.fields(SimConfig)}
    unknown = set(values) - names
    if unknown:
        raise DecodeError(f"unknown config keys: {sorted(unknown)}")
    base = SETTINGS.get(values.get("setting", "").lower())
    kwargs = dataclasses.asdict(base) if base else {}
    for k, v in values.items():
        try:
            if k in _INT:
                kwargs[k] = parse_size(v)
            elif k in _FLOAT:
                kwargs[k] = float(v)
            elif k in _BOOL:
                kwargs[k] = v.lower() in ("1", "true", "yes")
            else:
                kwargs[k] = v
        except ValueError:
            raise DecodeError(f"bad value for {k}: {v!r}") from None
    missing = [f.name for f in dataclasses.fields(SimConfig) if f.name not in kwargs and f.default is dataclasses.MISSING]
    if missing:
        raise DecodeError(f"missing config keys: {missing}")
    if "r_MRL" in values:
        parse_rate(values["r_MRL"])
    return SimConfig(**kwargs)


def load_config(path: str) -> SimConfig:
    with open(path) as fh:
        return parse_config(fh.read())
