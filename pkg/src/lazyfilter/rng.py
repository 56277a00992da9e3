"""Named, order-independent random substreams.

Every consumer of randomness asks for a generator keyed by
``(master_seed, role, round, *ids)``. Streams never share state, so the
order in which participants are processed cannot change any draw.
"""

from __future__ import annotations

import numpy as np

ROLES = {
    "data": 0,
    "warmup_split": 1,
    "partition": 2,
    "corrupt": 3,
    "warmup_train": 4,
    "contributor": 5,
    "tester": 6,
    "final": 7,
    "holdout": 8,
    "oracle": 9,
}


def substream(master_seed: int, role: str, round_index: int = 0, *ids: int) -> np.random.Generator:
    if role not in ROLES:
        raise KeyError(f"unknown stream role {role!r}")
    key = (ROLES[role], int(round_index), *(int(i) for i in ids))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(master_seed), spawn_key=key)))
