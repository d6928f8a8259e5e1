"""Discrete-event simulator: liveness, latency, security games, statistics."""

from .attacks import (
    SANITY_OSCILLATION,
    SANITY_SPLITVIEW,
    GameConfig,
    GameOutcome,
    attack_oscillation,
    attack_splitview,
)
from .config import SETTINGS, SimConfig, load_config, parse_config
from .latency import run_broadcast, run_collection, run_latency
from .liveness import run_liveness
from .trace import EventQueue, EventTrace
