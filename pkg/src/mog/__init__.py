"""Compact ranges, witness gossip, and the Mog verifiable registry."""

from .errors import *  # noqa: F401,F403
from .merkle import EMPTY_ROOT, NodeId, leaf_hash, mth, node_hash
from .compact import CompactRange, compute_range, decompose, merge, range_to_root
from .log import Checkpoint, LogState, ManualClock, Signer

__version__ = "0.1.0"
