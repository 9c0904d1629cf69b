"""Counter-based random streams: path i always sees the same Brownian increments."""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

SEED_ENV = "SDS_SEED"


def default_seed(fallback: int = 0) -> int:
    """Seed from the ``SDS_SEED`` environment variable, else ``fallback``."""
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw.strip() == "":
        return fallback
    try:
        return int(raw)
    except ValueError:
        raise ValueError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


@dataclass(frozen=True)
class RngConfig:
    """Master seed; stream ``i`` is Philox keyed by SeedSequence(seed, spawn_key=(i,)).

    Streams depend only on (seed, i), so an ensemble is bit-identical whatever
    order or batch size its paths are generated in.
    """

    seed: int = 0

    def __post_init__(self):
        if int(self.seed) < 0:
            raise ValueError("seed must be non-negative")

    def generator(self, stream: int) -> np.random.Generator:
        if stream < 0:
            raise ValueError("stream index must be non-negative")
        return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(self.seed), spawn_key=(int(stream),))))

    def derive(self, tag: int) -> "RngConfig":
        """An independent configuration (e.g. for a second ensemble compared against the first)."""
        ss = np.random.SeedSequence(int(self.seed), spawn_key=(2**31 + int(tag),))
        return RngConfig(int(ss.generate_state(1, dtype=np.uint32)[0]))

    def to_dict(self) -> dict:
        return {"seed": int(self.seed), "streams": "philox(SeedSequence(seed, spawn_key=(i,)))"}
