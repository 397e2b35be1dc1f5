"""
Per-purpose random streams.

Every stream is derived from the master seed through ``SeedSequence`` with a
spawn key of ``(purpose id, index)``, so a stream's output never depends on
how many draws another stream made or in which order runs are evaluated.
"""
import numpy as np

PURPOSES = {
    'data': 0,
    'availability': 1,
    'noise': 2,
    'dynamics': 3,
    'montecarlo': 4,
}


def stream(seed: int, purpose: str, index: int = 0) -> np.random.Generator:
    """Dedicated generator for (seed, purpose, index)"""
    if purpose not in PURPOSES:
        raise KeyError(f"Unknown random stream purpose: {purpose}")
    seq = np.random.SeedSequence(int(seed), spawn_key=(PURPOSES[purpose], int(index)))
    return np.random.Generator(np.random.PCG64(seq))


def client_streams(seed: int, m: int, purpose: str = 'noise') -> list:
    """One stream per client, indexed by client id"""
    return [stream(seed, purpose, i) for i in range(m)]
