"""
Deterministic random substreams

Every episode owns one RngManager; subsystems draw from named child
streams so that, for example, changing the policy never shifts the
graph samples of the same seed.
"""
import hashlib
from dataclasses import dataclass, field
from typing import Dict

import numpy as np

GRAPH_STREAM = "graph"
REWARD_STREAM = "reward"
ALGORITHM_STREAM = "algorithm"
DETECTION_STREAM = "detection"


def _hash_to_u64(text: str) -> int:
    digest = hashlib.sha256(text.encode("ascii")).digest()
    return int.from_bytes(digest[:8], "big", signed=False)


def derive_repetition_seed(base_seed: int, repetition: int) -> int:
    """Derive a stable per-run seed from one master seed"""
    if repetition < 0:
        raise ValueError("repetition must be non-negative")
    return _hash_to_u64(f"{base_seed}:rep:{repetition}")


@dataclass
class RngManager:
    """Provides deterministic, named numpy generators from one base seed"""

    base_seed: int
    _streams: Dict[str, np.random.Generator] = field(default_factory=dict, init=False, repr=False)

    def child_seed(self, name: str) -> int:
        """Map a stream name to its child seed"""
        if not name:
            raise ValueError("stream name must be non-empty")
        return _hash_to_u64(f"{self.base_seed}:{name}")

    def stream(self, name: str) -> np.random.Generator:
        """Return the persistent generator for a subsystem"""
        if name not in self._streams:
            self._streams[name] = np.random.default_rng(self.child_seed(name))
        return self._streams[name]

    def reset(self) -> None:
        """Drop all streams; the same names replay identically afterwards"""
        self._streams.clear()
