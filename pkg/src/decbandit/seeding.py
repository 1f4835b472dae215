"""Stream derivation: every random stream is keyed by
(master_seed, run_index, agent_id, purpose[, arm])."""
from __future__ import annotations

import numpy as np

PURPOSES = {"arm_rewards": 0, "tiebreak": 1, "graph": 2, "config": 3}

MAX_SEED = 2**64 - 1


def check_seed(seed) -> int:
    seed = int(seed)
    if not 0 <= seed <= MAX_SEED:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return seed


def stream_key(master_seed: int, run_index: int, agent_id: int, purpose: str, *extra: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(
        entropy=check_seed(master_seed),
        spawn_key=(int(run_index), int(agent_id), PURPOSES[purpose], *map(int, extra)),
    )


def graph_stream(master_seed: int) -> np.random.SeedSequence:
    # graph generation is shared by every run of a config
    return np.random.SeedSequence(entropy=check_seed(master_seed), spawn_key=(PURPOSES["graph"],))


def derived_seed(master_seed: int, index: int) -> int:
    """Independent master seed for the ``index``-th member of a family of configs."""
    ss = np.random.SeedSequence(entropy=check_seed(master_seed), spawn_key=(PURPOSES["config"], int(index)))
    return int(ss.generate_state(1, dtype=np.uint64)[0])
